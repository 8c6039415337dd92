#include "udoc/sequence.hpp"

#include <stdexcept>

namespace udoc {

MaskPlan sample_mask_plan(int n, Scalar p_s, Scalar p_v, Rng& rng) {
  if (n < 1) throw std::runtime_error("sample_mask_plan: n must be >= 1");
  MaskPlan plan;
  for (int i = 1; i <= n; ++i) {
    if (rng.bernoulli(p_s)) {
      const Scalar u = rng.uniform();
      SentenceMask m;
      m.slot = i;
      m.category = u < 0.8 ? MaskCategory::Mask80
                           : (u < 0.9 ? MaskCategory::Random10 : MaskCategory::Keep10);
      plan.sentence_masks.push_back(std::move(m));
    }
    if (rng.bernoulli(p_v)) plan.visual_masks.push_back(i);
  }
  return plan;
}

EmbedParams init_embed(Rng& rng, int d, int d_v, int d_s) {
  EmbedParams p;
  p.visual = init_linear(rng, d, d_v);
  p.textual = init_linear(rng, d, d_s);
  p.position = init_linear(rng, d, 6);
  const Scalar bound = 1.0 / std::sqrt(static_cast<Scalar>(d));
  p.seg_visual.resize(d);
  p.seg_textual.resize(d);
  for (int i = 0; i < d; ++i) p.seg_visual(i) = rng.uniform(-bound, bound);
  for (int i = 0; i < d; ++i) p.seg_textual(i) = rng.uniform(-bound, bound);
  return p;
}

Vec embed_position(const NormalizedBox& box, const Linear& position) {
  return position.W * box.p + position.b;
}

MultimodalSequence build_sequence(const DocumentRecord& doc, const std::vector<Vec>& roi,
                                  const Vec& v_page, const Mat& sentences, const MaskPlan& plan,
                                  const EmbedParams& params, const Vec& cls_embedding,
                                  const Vec& sep_embedding, const Vec& mask_embedding) {
  const int n = static_cast<int>(doc.regions.size());
  if (static_cast<int>(roi.size()) != n || static_cast<int>(sentences.rows()) != n)
    throw std::runtime_error("build_sequence: |V| and |S| must equal N");
  const auto d_v = v_page.size();
  const auto d_s = sentences.cols();

  for (const auto& m : plan.sentence_masks)
    if (m.slot < 1 || m.slot > n)
      throw std::runtime_error("build_sequence: mask plan touches a special slot");
  for (int slot : plan.visual_masks)
    if (slot < 1 || slot > n)
      throw std::runtime_error("build_sequence: mask plan touches a special slot");

  MultimodalSequence seq;
  seq.plan = plan;
  seq.kinds.assign(static_cast<std::size_t>(n) + 2, SlotKind::Region);
  seq.kinds.front() = SlotKind::Cls;
  seq.kinds.back() = SlotKind::Sep;
  seq.visual_masked.assign(static_cast<std::size_t>(n) + 2, false);

  seq.roi_targets.resize(n, d_v);
  for (int i = 0; i < n; ++i) seq.roi_targets.row(i) = roi[static_cast<std::size_t>(i)].transpose();
  seq.sentence_targets = sentences;

  // Pre-projection streams with specials in place.
  seq.masked_roi.resize(n + 2, d_v);
  seq.masked_sentences.resize(n + 2, d_s);
  seq.positions.resize(n + 2, 6);

  seq.masked_roi.row(0) = v_page.transpose();
  seq.masked_roi.row(n + 1) = v_page.transpose();
  seq.masked_sentences.row(0) = cls_embedding.transpose();
  seq.masked_sentences.row(n + 1) = sep_embedding.transpose();
  const Box6 page = whole_page_box().p;
  seq.positions.row(0) = page.transpose();
  seq.positions.row(n + 1) = page.transpose();

  for (int i = 0; i < n; ++i) {
    seq.masked_roi.row(i + 1) = roi[static_cast<std::size_t>(i)].transpose();
    seq.masked_sentences.row(i + 1) = sentences.row(i);
    seq.positions.row(i + 1) =
        normalize_box(doc.regions[static_cast<std::size_t>(i)].box, doc.width, doc.height)
            .p.transpose();
  }

  for (int slot : plan.visual_masks) {
    seq.masked_roi.row(slot).setZero();  // "masked RoI features are filled with zeros"
    seq.visual_masked[static_cast<std::size_t>(slot)] = true;
  }
  for (const auto& m : plan.sentence_masks) {
    switch (m.category) {
      case MaskCategory::Mask80:
        seq.masked_sentences.row(m.slot) = mask_embedding.transpose();
        break;
      case MaskCategory::Random10:
        if (m.replacement.size() != d_s)
          throw std::runtime_error("build_sequence: Random10 mask without replacement sentence");
        seq.masked_sentences.row(m.slot) = m.replacement.transpose();
        break;
      case MaskCategory::Keep10:
        break;  // original sentence stays
    }
  }

  seq.visual_in = linear_forward(seq.masked_roi, params.visual);
  seq.visual_in += linear_forward(seq.positions, params.position);
  seq.visual_in.rowwise() += params.seg_visual.transpose();

  seq.textual_in = linear_forward(seq.masked_sentences, params.textual);
  seq.textual_in += linear_forward(seq.positions, params.position);
  seq.textual_in.rowwise() += params.seg_textual.transpose();
  return seq;
}

SequenceGrads sequence_backward(const MultimodalSequence& seq, const Mat& dVisualIn,
                                const Mat& dTextualIn, const EmbedParams& params,
                                EmbedParams& grads) {
  const int n = seq.num_regions();

  grads.seg_visual.noalias() += dVisualIn.colwise().sum().transpose();
  grads.seg_textual.noalias() += dTextualIn.colwise().sum().transpose();

  // Both streams add the same position embedding.
  const Mat dPosIn = dVisualIn + dTextualIn;
  grads.position.W.noalias() += dPosIn.transpose() * seq.positions;
  grads.position.b.noalias() += dPosIn.colwise().sum().transpose();

  // Textual projection; the sentence embeddings themselves are frozen.
  grads.textual.W.noalias() += dTextualIn.transpose() * seq.masked_sentences;
  grads.textual.b.noalias() += dTextualIn.colwise().sum().transpose();

  const Mat dMaskedRoi = linear_backward(seq.masked_roi, dVisualIn, params.visual, grads.visual);

  SequenceGrads out;
  out.d_page = dMaskedRoi.row(0).transpose() + dMaskedRoi.row(n + 1).transpose();
  out.d_roi = Mat::Zero(n, dMaskedRoi.cols());
  for (int i = 0; i < n; ++i) {
    // Masked slots fed zeros forward, so the original feature gets nothing.
    if (!seq.visual_masked[static_cast<std::size_t>(i + 1)])
      out.d_roi.row(i) = dMaskedRoi.row(i + 1);
  }
  return out;
}

}  // namespace udoc

#include <doctest.h>

#include <cmath>

#include "fd_helpers.hpp"
#include "udoc/sequence.hpp"
#include "udoc/text_encoder.hpp"

using namespace udoc;

namespace {

struct Fixture {
  DocumentRecord doc;
  std::vector<Vec> roi;
  Vec v_page;
  Mat sentences;
  EmbedParams params;
  TextEncoder text{7771, 64, 12};
  int d = 16, d_v = 10, d_s = 12, n = 3;

  Fixture() {
    doc.id = "t";
    doc.width = 100;
    doc.height = 100;
    Rng rng(11);
    for (int i = 0; i < n; ++i) {
      Region r;
      r.box = BoundingBox{i * 30, 10, i * 30 + 20, 40};
      r.tokens = {1, 2};
      doc.regions.push_back(r);
    }
    for (int i = 0; i < n; ++i) {
      Vec v(d_v);
      for (int j = 0; j < d_v; ++j) v(j) = rng.normal();
      roi.push_back(v);
    }
    v_page.resize(d_v);
    for (int j = 0; j < d_v; ++j) v_page(j) = rng.normal();
    sentences.resize(n, d_s);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < d_s; ++j) sentences(i, j) = rng.normal();
    params = init_embed(rng, d, d_v, d_s);
  }

  std::uint64_t seed = 11;

  MultimodalSequence build(const MaskPlan& plan) const {
    return build_sequence(doc, roi, v_page, sentences, plan, params,
                          text.special_embedding(SpecialSentence::Cls),
                          text.special_embedding(SpecialSentence::Sep),
                          text.special_embedding(SpecialSentence::Mask));
  }
};

}  // namespace

TEST_CASE("position embedding is the linear map of the 6-d box") {
  Rng rng(1);
  Linear position = init_linear(rng, 8, 6);
  position.W.setZero();
  position.b.setConstant(0.75);
  const NormalizedBox box = normalize_box(BoundingBox{1, 2, 5, 9}, 10, 10);
  const Vec e = embed_position(box, position);
  for (int i = 0; i < 8; ++i) CHECK(e(i) == doctest::Approx(0.75));

  // Affine identity: embed(p1) + embed(p2) - embed(0) == embed(p1 + p2) for a
  // pure linear map once the bias is removed.
  Linear lin = init_linear(rng, 8, 6);
  const NormalizedBox b1 = normalize_box(BoundingBox{1, 1, 4, 4}, 10, 10);
  const NormalizedBox b2 = normalize_box(BoundingBox{2, 3, 6, 8}, 10, 10);
  NormalizedBox sum;
  sum.p = b1.p + b2.p;
  const Vec lhs = (embed_position(b1, lin) - lin.b) + (embed_position(b2, lin) - lin.b);
  const Vec rhs = embed_position(sum, lin) - lin.b;
  CHECK((lhs - rhs).norm() < 1e-12);
}

TEST_CASE("empty plan reproduces the unmasked streams") {
  Fixture fx;
  const MultimodalSequence seq = fx.build(MaskPlan{});
  CHECK(seq.kinds.front() == SlotKind::Cls);
  CHECK(seq.kinds.back() == SlotKind::Sep);
  CHECK(seq.num_regions() == fx.n);
  for (int i = 0; i < fx.n; ++i) {
    CHECK((seq.masked_roi.row(i + 1).transpose() - fx.roi[static_cast<std::size_t>(i)]).norm() == 0.0);
    CHECK((seq.masked_sentences.row(i + 1) - fx.sentences.row(i)).norm() == 0.0);
  }
}

TEST_CASE("visual masking zeroes the pre-projection feature") {
  Fixture fx;
  MaskPlan plan;
  plan.visual_masks = {1};
  const MultimodalSequence seq = fx.build(plan);
  CHECK(seq.masked_roi.row(1).isZero(0.0));
  CHECK_FALSE(seq.masked_roi.row(2).isZero(0.0));
  // The zeroed slot still feeds the projection bias + position + segment.
  const Vec expected = fx.params.visual.b + fx.params.position.W * seq.positions.row(1).transpose() +
                       fx.params.position.b + fx.params.seg_visual;
  CHECK((seq.visual_in.row(1).transpose() - expected).norm() < 1e-12);
}

TEST_CASE("sentence mask categories behave per contract") {
  Fixture fx;
  MaskPlan plan;
  SentenceMask m80;
  m80.slot = 1;
  m80.category = MaskCategory::Mask80;
  SentenceMask keep;
  keep.slot = 2;
  keep.category = MaskCategory::Keep10;
  SentenceMask rnd;
  rnd.slot = 3;
  rnd.category = MaskCategory::Random10;
  rnd.replacement = fx.text.encode_sentence(std::vector<int>{5, 6, 7});
  plan.sentence_masks = {m80, keep, rnd};

  const MultimodalSequence masked = fx.build(plan);
  const MultimodalSequence clean = fx.build(MaskPlan{});

  const Vec mask_vec = fx.text.special_embedding(SpecialSentence::Mask);
  CHECK((masked.masked_sentences.row(1).transpose() - mask_vec).norm() == 0.0);
  CHECK((masked.textual_in.row(2) - clean.textual_in.row(2)).norm() == 0.0);  // KEEP10
  CHECK((masked.masked_sentences.row(3).transpose() - rnd.replacement).norm() == 0.0);
  // Unmasked ground truth retained for loss targets.
  CHECK((masked.sentence_targets - fx.sentences).norm() == 0.0);

  MaskPlan bad;
  SentenceMask m;
  m.slot = 0;
  bad.sentence_masks = {m};
  CHECK_THROWS_WITH_AS(fx.build(bad), doctest::Contains("special slot"), std::runtime_error);
  MaskPlan bad2;
  bad2.visual_masks = {fx.n + 1};
  CHECK_THROWS_AS(fx.build(bad2), std::runtime_error);
}

TEST_CASE("special slots use the page feature and whole-page box") {
  Fixture fx;
  const MultimodalSequence seq = fx.build(MaskPlan{});
  CHECK((seq.masked_roi.row(0).transpose() - fx.v_page).norm() == 0.0);
  CHECK((seq.masked_roi.row(fx.n + 1).transpose() - fx.v_page).norm() == 0.0);
  const Box6 page = whole_page_box().p;
  CHECK((seq.positions.row(0).transpose() - page).norm() == 0.0);
  CHECK((seq.positions.row(fx.n + 1).transpose() - page).norm() == 0.0);
}

TEST_CASE("mask plan sampling hits the configured rates and split") {
  Rng rng(42);
  long masked = 0, visual = 0, total = 0;
  long cat[3] = {0, 0, 0};
  const int draws = 10000, n = 10;
  for (int t = 0; t < draws; ++t) {
    const MaskPlan plan = sample_mask_plan(n, 0.15, 0.075, rng);
    total += n;
    masked += static_cast<long>(plan.sentence_masks.size());
    visual += static_cast<long>(plan.visual_masks.size());
    for (const auto& m : plan.sentence_masks) cat[static_cast<int>(m.category)]++;
  }
  CHECK(std::abs(masked / static_cast<Scalar>(total) - 0.15) < 0.01);
  CHECK(std::abs(visual / static_cast<Scalar>(total) - 0.075) < 0.01);
  const Scalar m = static_cast<Scalar>(masked);
  CHECK(std::abs(cat[0] / m - 0.8) < 0.02);
  CHECK(std::abs(cat[1] / m - 0.1) < 0.02);
  CHECK(std::abs(cat[2] / m - 0.1) < 0.02);

  // p = 1 masks everything; p = 0 masks nothing.
  const MaskPlan all = sample_mask_plan(5, 1.0, 0.0, rng);
  CHECK(all.sentence_masks.size() == 5);
  CHECK(all.visual_masks.empty());
}

TEST_CASE("sentence and visual masks are independent") {
  Rng rng(7);
  const int draws = 100000;
  long both = 0, s_only = 0, v_only = 0;
  for (int t = 0; t < draws; ++t) {
    const MaskPlan plan = sample_mask_plan(1, 0.15, 0.075, rng);
    const bool s = !plan.sentence_masks.empty();
    const bool v = !plan.visual_masks.empty();
    both += s && v;
    s_only += s;
    v_only += v;
  }
  const Scalar ps = s_only / static_cast<Scalar>(draws);
  const Scalar pv = v_only / static_cast<Scalar>(draws);
  const Scalar pboth = both / static_cast<Scalar>(draws);
  const Scalar rho = (pboth - ps * pv) / std::sqrt(ps * (1 - ps) * pv * (1 - pv));
  CHECK(std::abs(rho) < 0.02);
}

TEST_CASE("sequence backward matches finite differences") {
  Fixture fx;
  MaskPlan plan;
  plan.visual_masks = {2};
  SentenceMask m;
  m.slot = 1;
  m.category = MaskCategory::Mask80;
  plan.sentence_masks = {m};

  const Mat wv = udoc::testing::weight_pattern(fx.n + 2, fx.d);
  const Mat ws = udoc::testing::weight_pattern(fx.n + 2, fx.d) * 0.7;

  auto loss = [&]() {
    const MultimodalSequence seq = fx.build(plan);
    return (seq.visual_in.array() * wv.array()).sum() +
           (seq.textual_in.array() * ws.array()).sum();
  };

  const MultimodalSequence seq = fx.build(plan);
  EmbedParams grads = fx.params;
  grads.visual.W.setZero();
  grads.visual.b.setZero();
  grads.textual.W.setZero();
  grads.textual.b.setZero();
  grads.position.W.setZero();
  grads.position.b.setZero();
  grads.seg_visual.setZero();
  grads.seg_textual.setZero();
  const SequenceGrads sg = sequence_backward(seq, wv, ws, fx.params, grads);

  CHECK(udoc::testing::max_rel_error(fx.params.visual.W, grads.visual.W, loss) < 1e-6);
  CHECK(udoc::testing::max_rel_error_vec(fx.params.visual.b, grads.visual.b, loss) < 1e-6);
  CHECK(udoc::testing::max_rel_error(fx.params.textual.W, grads.textual.W, loss) < 1e-6);
  CHECK(udoc::testing::max_rel_error(fx.params.position.W, grads.position.W, loss) < 1e-6);
  CHECK(udoc::testing::max_rel_error_vec(fx.params.seg_visual, grads.seg_visual, loss) < 1e-6);
  CHECK(udoc::testing::max_rel_error_vec(fx.params.seg_textual, grads.seg_textual, loss) < 1e-6);

  // Gradients on the original RoI features: zero on the masked region.
  CHECK(sg.d_roi.row(1).isZero(0.0));
  for (int i : {0, 2}) {
    for (int j = 0; j < fx.d_v; ++j) {
      const Scalar fd = udoc::testing::central_diff(fx.roi[static_cast<std::size_t>(i)](j), loss);
      CHECK(fd == doctest::Approx(sg.d_roi(i, j)).epsilon(1e-5));
    }
  }
  for (int j = 0; j < fx.d_v; ++j) {
    const Scalar fd = udoc::testing::central_diff(fx.v_page(j), loss);
    CHECK(fd == doctest::Approx(sg.d_page(j)).epsilon(1e-5));
  }
}

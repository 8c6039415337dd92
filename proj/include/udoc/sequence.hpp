#pragma once

#include <vector>

#include "udoc/corpus.hpp"
#include "udoc/nn.hpp"
#include "udoc/types.hpp"

namespace udoc {

enum class SlotKind { Cls, Region, Sep };
enum class MaskCategory { Mask80, Random10, Keep10 };

struct SentenceMask {
  int slot = 0;  // region slot index, 1..N
  MaskCategory category = MaskCategory::Mask80;
  Vec replacement;  // filled by the caller for Random10
};

struct MaskPlan {
  std::vector<SentenceMask> sentence_masks;
  std::vector<int> visual_masks;  // region slot indices, 1..N
};

// Each region is independently sentence-masked with probability p_s (then
// assigned a category with ratios 0.8/0.1/0.1) and independently
// visual-masked with probability p_v. Indices are region slots 1..n.
MaskPlan sample_mask_plan(int n, Scalar p_s, Scalar p_v, Rng& rng);

struct EmbedParams {
  Linear visual;    // d <- d_v
  Linear textual;   // d <- d_s
  Linear position;  // d <- 6
  Vec seg_visual;   // d
  Vec seg_textual;  // d
};

EmbedParams init_embed(Rng& rng, int d, int d_v, int d_s);

// Position embedding of one normalized box (the linear map applied to p).
Vec embed_position(const NormalizedBox& box, const Linear& position);

struct MultimodalSequence {
  // Slot 0 = CLS, slots 1..N = regions, slot N+1 = SEP.
  Mat visual_in;   // (N+2) x d
  Mat textual_in;  // (N+2) x d
  Mat positions;   // (N+2) x 6
  std::vector<SlotKind> kinds;

  // Pre-projection streams kept for losses and backward:
  Mat masked_roi;        // (N+2) x d_v rows: page / masked regions / page
  Mat masked_sentences;  // (N+2) x d_s rows: specials / masked sentences
  Mat roi_targets;       // N x d_v, original unmasked V
  Mat sentence_targets;  // N x d_s, original unmasked S
  MaskPlan plan;
  std::vector<bool> visual_masked;  // per slot

  int num_regions() const { return static_cast<int>(kinds.size()) - 2; }
};

// v_page fills the CLS and SEP visual slots with the whole-page position box.
// Sentence replacements for Random10 must already be present in the plan.
MultimodalSequence build_sequence(const DocumentRecord& doc, const std::vector<Vec>& roi,
                                  const Vec& v_page, const Mat& sentences, const MaskPlan& plan,
                                  const EmbedParams& params, const Vec& cls_embedding,
                                  const Vec& sep_embedding, const Vec& mask_embedding);

struct SequenceGrads {
  Mat d_roi;      // N x d_v gradient on ORIGINAL RoI features (masked rows zero)
  Vec d_page;     // d_v
};

// Backward through the input embeddings. Accumulates parameter grads and
// returns gradients on the pre-projection visual features.
SequenceGrads sequence_backward(const MultimodalSequence& seq, const Mat& dVisualIn,
                                const Mat& dTextualIn, const EmbedParams& params,
                                EmbedParams& grads);

}  // namespace udoc

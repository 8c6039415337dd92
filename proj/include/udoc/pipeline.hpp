#pragma once

#include <optional>
#include <vector>

#include "udoc/corpus.hpp"
#include "udoc/losses.hpp"
#include "udoc/model.hpp"
#include "udoc/text_encoder.hpp"

namespace udoc {

// Frozen per-document randomness for one training step: mask plan (with
// Random10 replacements resolved), Gumbel draws per region, and optionally
// the straight-through residuals captured at a linearization point.
struct DocPlan {
  int doc_index = 0;
  MaskPlan plan;
  std::vector<Mat> gumbel;    // per region, C x E
  std::vector<Mat> residual;  // per region, C x E; filled by capture passes
};

struct StepPlan {
  std::vector<DocPlan> docs;
};

// Deterministic function of (corpus, cfg, seed, step). Batch documents are
// drawn uniformly with replacement; Random10 replacement sentences come from
// other documents of the same batch (another region of the same document
// when the batch has a single member).
StepPlan make_step_plan(const Corpus& corpus, const RunConfig& cfg, const TextEncoder& text,
                        std::uint64_t seed, long step);

// Shared per-document forward state (pretraining and fine-tuning).
struct DocForward {
  RegionFeatures feats;
  Mat sentences;  // N x d_s, unmasked
  MultimodalSequence seq;
  EncodeCache enc_cache;
  EncodeResult enc;
  std::vector<QuantizedFeature> quantized;  // pretraining targets
  std::vector<QuantizeCache> quant_caches;
  Mat vq_all;  // N x d_q
};

DocForward doc_forward(const DocumentRecord& doc, const MaskPlan& plan, const ModelParams& params,
                       const RunConfig& cfg, const TextEncoder& text, bool with_quant, Scalar tau,
                       const std::vector<Mat>* gumbel, const std::vector<Mat>* residuals,
                       bool with_mvm, bool need_caches);

// Backward from encoder-output gradients down to the conv parameters.
// extra_droi (N x d_v, may be empty) is added to the sequence's gradient on
// the original RoI features (quantizer target and MVM target paths).
void doc_backward(const DocForward& fwd, const DocumentRecord& doc, const ModelParams& params,
                  const RunConfig& cfg, const Mat& dShat, const Mat& dVhat, const Mat& dZvla,
                  const Mat& dMhat, const Mat& dHvExtra, const Mat& dHsExtra,
                  const Mat& extra_droi, ModelParams& grads);

// One full pretraining batch. When `grads` is non-null, `scratch` must hold
// one ModelParams buffer per batch slot; gradients are reduced into `grads`
// in batch order regardless of UDOC_THREADS, so results are thread-count
// invariant. With use_residuals the quantizer runs the straight-through
// surrogate against plan.docs[*].residual; with capture_residuals the plan
// records one-hot-minus-probs residuals from this evaluation.
LossReport pretrain_batch(const Corpus& corpus, StepPlan& plan, const ModelParams& params,
                          const RunConfig& cfg, Scalar tau, const TextEncoder& text,
                          ModelParams* grads, std::vector<ModelParams>* scratch,
                          bool use_residuals, bool capture_residuals);

}  // namespace udoc

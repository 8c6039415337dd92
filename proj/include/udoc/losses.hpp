#pragma once

#include <vector>

#include "udoc/config.hpp"
#include "udoc/quantizer.hpp"
#include "udoc/types.hpp"

namespace udoc {

struct LossReport {
  Scalar msm = 0.0;
  Scalar vcl = 0.0;
  Scalar vla = 0.0;
  Scalar mvm = 0.0;
  Scalar total = 0.0;
  Vec perplexity;  // per codebook, from the step's diversity stats

  bool finite() const;
};

// Mean over rows of the mean over dims of smooth-L1 residuals; 0 for empty
// input. dPred (if non-null) receives the gradient, same shape as pred.
Scalar smooth_l1_mean(const Mat& pred, const Mat& target, Mat* dPred);

// MSM: predictions and targets restricted to masked-sentence rows.
inline Scalar msm_loss(const Mat& pred_masked, const Mat& target_masked, Mat* dPred) {
  return smooth_l1_mean(pred_masked, target_masked, dPred);
}

// MVM ablation: smooth-L1 regression of the masked RoI features. dTarget
// carries the target-side gradient (the backbone is trainable when VCL is
// also enabled, e.g. under gradcheck).
Scalar mvm_loss(const Mat& pred_masked, const Mat& target_masked, Mat* dPred, Mat* dTarget);

// InfoNCE over same-document candidates with cosine similarity.
// v_hat: N x d_q predictions; vq_all: N x d_q quantized candidates;
// masked_idx: 0-based region indices with a visual mask. Mean over masked
// regions; 0 if none. Gradients accumulate into dVhat / dVqAll when non-null.
Scalar vcl_first_term(const Mat& v_hat, const Mat& vq_all, const std::vector<int>& masked_idx,
                      Scalar kappa, Mat* dVhat, Mat* dVqAll);

// Spec-shaped convenience: first term plus lambda * diversity penalty.
Scalar vcl_loss(const Mat& v_hat, const Mat& vq_all, const std::vector<int>& masked_idx,
                Scalar kappa, const std::vector<Mat>& probs_batch, Scalar lambda);

// Similarity-structure alignment: (1/N^2) ||G_s - G_v||_F^2 where each Gram
// matrix is normalized by its diagonal (pairwise cosines), i.e. the feature
// rows are L2-normalized before the product. Invariant to positive per-row
// rescaling of Z.
Scalar vla_loss(const Mat& S, const Mat& Z, Mat* dZ);

// Unweighted sum of the enabled tasks.
LossReport total_loss(Scalar msm, Scalar vcl, Scalar vla, Scalar mvm, const LossConfig& cfg);

}  // namespace udoc

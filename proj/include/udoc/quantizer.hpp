#pragma once

#include <vector>

#include "udoc/config.hpp"
#include "udoc/nn.hpp"
#include "udoc/types.hpp"

namespace udoc {

// Product quantizer: C codebooks of E entries each. A RoI feature maps to
// C*E logits; per codebook one entry is picked by Gumbel argmax in the
// forward pass while gradients flow through the softmax relaxation
// (straight-through).
struct Codebooks {
  Mat entries;  // (C*E) x d_e, row c*E + e
  Linear logit; // (C*E) <- d_v
  Linear out;   // d_q <- (C*d_e)
  int num_codebooks = 0;  // C
  int num_entries = 0;    // E
  int entry_dim = 0;      // d_e
};

Codebooks init_codebooks(Rng& rng, const QuantConfig& qc, int d_v, int d_q);

struct QuantizerState {
  Scalar tau = 2.0;
  long step = 0;
};

Scalar tau_at(long step, const QuantConfig& qc);
QuantizerState anneal(const QuantizerState& state, const QuantConfig& qc);

struct QuantizedFeature {
  Vec v_q;                      // d_q
  std::vector<int> selections;  // C, argmax over perturbed logits
  Mat probs;                    // C x E, Gumbel-softmax probabilities
  Mat probs_nf;                 // C x E, noise-free softmax (diversity term)
};

struct QuantizeCache {
  Vec input;    // d_v
  Mat probs;    // C x E (noisy)
  Mat probs_nf; // C x E
  Mat mix;      // C x E forward mixing weights (one-hot, or residual+probs)
  Vec concat;   // C*d_e concatenated chosen entries
  Scalar tau = 1.0;
};

// `gumbel` is a C x E noise matrix supplied by the caller so draws can be
// frozen and replayed. When `frozen_residual` is null the forward pass uses
// the hard one-hot selection; otherwise it evaluates the straight-through
// surrogate residual + probs (used by the finite-difference harness, where
// the residual one-hot minus base probs is captured at the linearization
// point).
QuantizedFeature quantize(const Vec& v, const Codebooks& cb, Scalar tau, const Mat& gumbel,
                          QuantizeCache* cache, const Mat* frozen_residual = nullptr);

// Backward for one quantized feature. dVq is the gradient on v_q; dProbsNf
// is the gradient on the noise-free probabilities (zero-size if unused).
// Accumulates into `grads`, returns the gradient on the input feature.
Vec quantize_backward(const QuantizeCache& cache, const Codebooks& cb, const Vec& dVq,
                      const Mat& dProbsNf, Codebooks& grads);

struct DiversityStats {
  Scalar penalty = 0.0;  // (1/(C*E)) sum p̄ log p̄  (non-positive)
  Vec perplexity;        // per codebook, exp(entropy of p̄)
};

// probs_batch holds the noise-free C x E probabilities of every quantized
// region in the batch.
DiversityStats diversity_stats(const std::vector<Mat>& probs_batch);
// Gradient of `penalty` with respect to each member of probs_batch (the same
// matrix for every member since only the batch mean enters).
Mat diversity_penalty_backward(const std::vector<Mat>& probs_batch);

}  // namespace udoc

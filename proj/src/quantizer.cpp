#include "udoc/quantizer.hpp"

#include <stdexcept>

namespace udoc {

Codebooks init_codebooks(Rng& rng, const QuantConfig& qc, int d_v, int d_q) {
  Codebooks cb;
  cb.num_codebooks = qc.codebooks;
  cb.num_entries = qc.entries;
  cb.entry_dim = qc.entry_dim;
  const Index rows = static_cast<Index>(qc.codebooks) * qc.entries;
  const Scalar bound = 1.0 / std::sqrt(static_cast<Scalar>(qc.entry_dim));
  cb.entries.resize(rows, qc.entry_dim);
  for (Index j = 0; j < qc.entry_dim; ++j)
    for (Index i = 0; i < rows; ++i) cb.entries(i, j) = rng.uniform(-bound, bound);
  cb.logit = init_linear(rng, rows, d_v);
  cb.out = init_linear(rng, d_q, static_cast<Index>(qc.codebooks) * qc.entry_dim);
  return cb;
}

Scalar tau_at(long step, const QuantConfig& qc) {
  return std::max(qc.tau_min, qc.tau0 * std::pow(qc.tau_decay, static_cast<Scalar>(step)));
}

QuantizerState anneal(const QuantizerState& state, const QuantConfig& qc) {
  QuantizerState next;
  next.step = state.step + 1;
  next.tau = tau_at(next.step, qc);
  return next;
}

QuantizedFeature quantize(const Vec& v, const Codebooks& cb, Scalar tau, const Mat& gumbel,
                          QuantizeCache* cache, const Mat* frozen_residual) {
  const int C = cb.num_codebooks;
  const int E = cb.num_entries;
  if (gumbel.rows() != C || gumbel.cols() != E)
    throw std::runtime_error("quantize: gumbel noise must be C x E");
  if (!v.allFinite()) throw std::runtime_error("quantize: non-finite input feature");

  const Vec logits_flat = cb.logit.W * v + cb.logit.b;
  if (!logits_flat.allFinite()) throw std::runtime_error("quantize: non-finite logits");

  // Row c of `logits` is the E-way distribution of codebook c.
  Mat logits(C, E);
  for (int c = 0; c < C; ++c)
    for (int e = 0; e < E; ++e) logits(c, e) = logits_flat(static_cast<Index>(c) * E + e);

  QuantizedFeature qf;
  qf.probs = softmax_rows((((logits + gumbel) / tau)).eval());
  qf.probs_nf = softmax_rows((logits / tau).eval());
  qf.selections.resize(static_cast<std::size_t>(C));
  Mat perturbed = logits + gumbel;
  for (int c = 0; c < C; ++c) {
    Index arg = 0;
    perturbed.row(c).maxCoeff(&arg);
    qf.selections[static_cast<std::size_t>(c)] = static_cast<int>(arg);
  }

  // Forward mixing weights over entries: hard one-hot in training; in the
  // surrogate mode the frozen residual keeps the value anchored at the
  // linearization point while the probs carry the derivative.
  Mat mix = Mat::Zero(C, E);
  if (frozen_residual != nullptr) {
    mix = *frozen_residual + qf.probs;
  } else {
    for (int c = 0; c < C; ++c) mix(c, qf.selections[static_cast<std::size_t>(c)]) = 1.0;
  }

  Vec concat(static_cast<Index>(C) * cb.entry_dim);
  for (int c = 0; c < C; ++c) {
    const auto block = cb.entries.middleRows(static_cast<Index>(c) * E, E);  // E x d_e
    concat.segment(static_cast<Index>(c) * cb.entry_dim, cb.entry_dim) =
        block.transpose() * mix.row(c).transpose();
  }
  qf.v_q = cb.out.W * concat + cb.out.b;

  if (cache != nullptr) {
    cache->input = v;
    cache->probs = qf.probs;
    cache->probs_nf = qf.probs_nf;
    cache->mix = std::move(mix);
    cache->concat = std::move(concat);
    cache->tau = tau;
  }
  return qf;
}

Vec quantize_backward(const QuantizeCache& cache, const Codebooks& cb, const Vec& dVq,
                      const Mat& dProbsNf, Codebooks& grads) {
  const int C = cb.num_codebooks;
  const int E = cb.num_entries;
  Mat dLogits = Mat::Zero(C, E);

  if (dVq.size() > 0) {
    grads.out.W.noalias() += dVq * cache.concat.transpose();
    grads.out.b.noalias() += dVq;
    const Vec dConcat = cb.out.W.transpose() * dVq;
    for (int c = 0; c < C; ++c) {
      const auto dz = dConcat.segment(static_cast<Index>(c) * cb.entry_dim, cb.entry_dim);
      const auto block = cb.entries.middleRows(static_cast<Index>(c) * E, E);
      // entries: d concat_c / d entries_c = mix weights (outer product).
      grads.entries.middleRows(static_cast<Index>(c) * E, E).noalias() +=
          cache.mix.row(c).transpose() * dz.transpose();
      // straight-through: the one-hot path is treated as d mix / d probs = I.
      const Vec dMix = block * dz;  // E
      dLogits.row(c) +=
          softmax_rows_backward(cache.probs.row(c), dMix.transpose()).row(0) / cache.tau;
    }
  }

  if (dProbsNf.size() > 0) {
    for (int c = 0; c < C; ++c)
      dLogits.row(c) +=
          softmax_rows_backward(cache.probs_nf.row(c), dProbsNf.row(c)).row(0) / cache.tau;
  }

  Vec dLogitsFlat(static_cast<Index>(C) * E);
  for (int c = 0; c < C; ++c)
    for (int e = 0; e < E; ++e) dLogitsFlat(static_cast<Index>(c) * E + e) = dLogits(c, e);

  grads.logit.W.noalias() += dLogitsFlat * cache.input.transpose();
  grads.logit.b.noalias() += dLogitsFlat;
  return cb.logit.W.transpose() * dLogitsFlat;
}

DiversityStats diversity_stats(const std::vector<Mat>& probs_batch) {
  if (probs_batch.empty()) throw std::runtime_error("diversity_stats: empty batch");
  Mat mean = Mat::Zero(probs_batch.front().rows(), probs_batch.front().cols());
  for (const auto& p : probs_batch) mean += p;
  mean /= static_cast<Scalar>(probs_batch.size());

  const int C = static_cast<int>(mean.rows());
  const int E = static_cast<int>(mean.cols());
  DiversityStats stats;
  stats.perplexity = Vec::Zero(C);
  Scalar total = 0.0;
  for (int c = 0; c < C; ++c) {
    Scalar plogp = 0.0;
    for (int e = 0; e < E; ++e) {
      const Scalar p = mean(c, e);
      if (p > 0.0) plogp += p * std::log(p);
    }
    total += plogp;
    stats.perplexity(c) = std::exp(-plogp);
  }
  stats.penalty = total / static_cast<Scalar>(C * E);
  return stats;
}

Mat diversity_penalty_backward(const std::vector<Mat>& probs_batch) {
  if (probs_batch.empty()) throw std::runtime_error("diversity_stats: empty batch");
  Mat mean = Mat::Zero(probs_batch.front().rows(), probs_batch.front().cols());
  for (const auto& p : probs_batch) mean += p;
  mean /= static_cast<Scalar>(probs_batch.size());

  const auto C = mean.rows();
  const auto E = mean.cols();
  const Scalar scale = 1.0 / (static_cast<Scalar>(C * E) * static_cast<Scalar>(probs_batch.size()));
  Mat d(C, E);
  for (Index c = 0; c < C; ++c)
    for (Index e = 0; e < E; ++e) {
      const Scalar p = mean(c, e);
      // d/dp of p log p, with the limit 0 at p -> 0 handled by the guard.
      d(c, e) = p > 0.0 ? scale * (std::log(p) + 1.0) : 0.0;
    }
  return d;
}

}  // namespace udoc

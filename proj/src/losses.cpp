#include "udoc/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "udoc/nn.hpp"

namespace udoc {

namespace {

constexpr Scalar kCosineEps = 1e-8;

Scalar safe_cosine(const Vec& a, const Vec& b, Scalar* na_out, Scalar* nb_out) {
  const Scalar na = a.norm();
  const Scalar nb = b.norm();
  if (na_out != nullptr) *na_out = na;
  if (nb_out != nullptr) *nb_out = nb;
  return a.dot(b) / ((na + kCosineEps) * (nb + kCosineEps));
}

// d cos(a,b) / d a given the upstream scalar g.
void cosine_backward_into(const Vec& a, const Vec& b, Scalar na, Scalar nb, Scalar sim, Scalar g,
                          Vec& dA) {
  const Scalar inva = 1.0 / (na + kCosineEps);
  const Scalar invb = 1.0 / (nb + kCosineEps);
  dA += g * inva * invb * b;
  if (na > 1e-300) dA -= g * sim * inva / na * a;
}

// L2-normalizes feature rows (zero rows stay zero), so the Gram of the
// result is the pairwise-cosine matrix. This makes the alignment loss
// invariant to any positive per-row rescaling of the features.
Mat normalize_feature_rows(const Mat& Z, std::vector<Scalar>* norms) {
  Mat out = Z;
  if (norms != nullptr) norms->assign(static_cast<std::size_t>(Z.rows()), 0.0);
  for (Index r = 0; r < Z.rows(); ++r) {
    const Scalar n = Z.row(r).norm();
    if (norms != nullptr) (*norms)[static_cast<std::size_t>(r)] = n;
    if (n >= 1e-12) out.row(r) /= n;
  }
  return out;
}

}  // namespace

bool LossReport::finite() const {
  return std::isfinite(msm) && std::isfinite(vcl) && std::isfinite(vla) && std::isfinite(mvm) &&
         std::isfinite(total);
}

Scalar smooth_l1_mean(const Mat& pred, const Mat& target, Mat* dPred) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols())
    throw std::runtime_error("smooth_l1_mean: misaligned prediction/target shapes");
  if (pred.rows() == 0) {
    if (dPred != nullptr) dPred->resize(0, 0);
    return 0.0;
  }
  const Scalar inv = 1.0 / static_cast<Scalar>(pred.rows() * pred.cols());
  Scalar loss = 0.0;
  if (dPred != nullptr) dPred->resize(pred.rows(), pred.cols());
  for (Index i = 0; i < pred.rows(); ++i) {
    for (Index j = 0; j < pred.cols(); ++j) {
      const Scalar x = pred(i, j) - target(i, j);
      loss += smooth_l1(x);
      if (dPred != nullptr) (*dPred)(i, j) = inv * smooth_l1_grad(x);
    }
  }
  return loss * inv;
}

Scalar mvm_loss(const Mat& pred_masked, const Mat& target_masked, Mat* dPred, Mat* dTarget) {
  const Scalar loss = smooth_l1_mean(pred_masked, target_masked, dPred);
  if (dTarget != nullptr) {
    if (dPred != nullptr && dPred->size() > 0)
      *dTarget = -*dPred;
    else
      dTarget->resize(0, 0);
  }
  return loss;
}

Scalar vcl_first_term(const Mat& v_hat, const Mat& vq_all, const std::vector<int>& masked_idx,
                      Scalar kappa, Mat* dVhat, Mat* dVqAll) {
  if (v_hat.rows() != vq_all.rows() || v_hat.cols() != vq_all.cols())
    throw std::runtime_error("vcl: prediction/candidate shape mismatch");
  if (kappa <= 0) throw std::runtime_error("vcl: kappa must be positive");
  const Index n = vq_all.rows();
  if (masked_idx.empty()) return 0.0;

  const Scalar inv_m = 1.0 / static_cast<Scalar>(masked_idx.size());
  Scalar loss = 0.0;
  std::vector<Scalar> cand_norm(static_cast<std::size_t>(n));
  for (int i : masked_idx) {
    if (i < 0 || i >= n) throw std::runtime_error("vcl: masked index out of range");
    const Vec pred = v_hat.row(i).transpose();
    Scalar pred_norm = 0.0;
    Vec sims(n);
    for (Index j = 0; j < n; ++j) {
      const Vec cand = vq_all.row(j).transpose();
      sims(j) = safe_cosine(pred, cand, &pred_norm, &cand_norm[static_cast<std::size_t>(j)]);
    }
    const Mat probs = softmax_rows((sims.transpose() / kappa).eval());
    const Scalar p_true = probs(0, i);
    loss += -std::log(p_true);

    if (dVhat != nullptr && dVqAll != nullptr) {
      // d(-log softmax_i)/d logits = p - e_i; logits = sims / kappa.
      Vec dSims = probs.row(0).transpose();
      dSims(i) -= 1.0;
      dSims *= inv_m / kappa;
      Vec dPred = Vec::Zero(v_hat.cols());
      for (Index j = 0; j < n; ++j) {
        const Vec cand = vq_all.row(j).transpose();
        const Scalar nj = cand_norm[static_cast<std::size_t>(j)];
        cosine_backward_into(pred, cand, pred_norm, nj, sims(j), dSims(j), dPred);
        Vec dCand = Vec::Zero(v_hat.cols());
        cosine_backward_into(cand, pred, nj, pred_norm, sims(j), dSims(j), dCand);
        dVqAll->row(j) += dCand.transpose();
      }
      dVhat->row(i) += dPred.transpose();
    }
  }
  return loss * inv_m;
}

Scalar vcl_loss(const Mat& v_hat, const Mat& vq_all, const std::vector<int>& masked_idx,
                Scalar kappa, const std::vector<Mat>& probs_batch, Scalar lambda) {
  const Scalar first = vcl_first_term(v_hat, vq_all, masked_idx, kappa, nullptr, nullptr);
  return first + lambda * diversity_stats(probs_batch).penalty;
}

Scalar vla_loss(const Mat& S, const Mat& Z, Mat* dZ) {
  if (S.rows() == 0) throw std::runtime_error("vla: empty region set");
  if (S.rows() != Z.rows()) throw std::runtime_error("vla: row count mismatch");
  const Index n = S.rows();
  const Scalar inv_n2 = 1.0 / static_cast<Scalar>(n * n);

  const Mat Shat = normalize_feature_rows(S, nullptr);
  std::vector<Scalar> z_norms;
  const Mat Zhat = normalize_feature_rows(Z, &z_norms);
  const Mat diff = Shat * Shat.transpose() - Zhat * Zhat.transpose();
  const Scalar loss = inv_n2 * diff.squaredNorm();

  if (dZ != nullptr) {
    // dL/dG_v = -(2/N^2) diff (symmetric), so dL/dZhat = 2 dG_v * Zhat.
    const Mat dZhat = (-4.0 * inv_n2) * (diff * Zhat);
    for (Index r = 0; r < n; ++r) {
      const Scalar norm = z_norms[static_cast<std::size_t>(r)];
      if (norm < 1e-12) continue;  // zero rows carry no gradient
      const Vec zh = Zhat.row(r).transpose();
      const Vec dzh = dZhat.row(r).transpose();
      dZ->row(r) += ((dzh - zh * zh.dot(dzh)) / norm).transpose();
    }
  }
  return loss;
}

LossReport total_loss(Scalar msm, Scalar vcl, Scalar vla, Scalar mvm, const LossConfig& cfg) {
  if (!cfg.any()) throw std::runtime_error("total_loss: no tasks enabled");
  LossReport r;
  r.msm = cfg.msm ? msm : 0.0;
  r.vcl = cfg.vcl ? vcl : 0.0;
  r.vla = cfg.vla ? vla : 0.0;
  r.mvm = cfg.mvm ? mvm : 0.0;
  r.total = r.msm + r.vcl + r.vla + r.mvm;
  return r;
}

}  // namespace udoc

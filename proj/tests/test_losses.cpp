#include <doctest.h>

#include <cmath>

#include "fd_helpers.hpp"
#include "udoc/losses.hpp"

using namespace udoc;

namespace {

// Orthonormal-ish construction giving prescribed cosine similarities between
// a prediction and each candidate.
void build_with_sims(const std::vector<Scalar>& sims, Mat& v_hat, Mat& vq_all) {
  const int n = static_cast<int>(sims.size());
  const int d = n + 1;
  v_hat = Mat::Zero(n, d);
  vq_all = Mat::Zero(n, d);
  for (int i = 0; i < n; ++i) {
    v_hat(i, 0) = 1.0;
    vq_all(i, 0) = sims[static_cast<std::size_t>(i)];
    vq_all(i, i + 1) = std::sqrt(1.0 - sims[static_cast<std::size_t>(i)] *
                                           sims[static_cast<std::size_t>(i)]);
  }
}

}  // namespace

TEST_CASE("msm smooth L1: zero residual, quadratic and linear branches") {
  Mat pred(1, 1), target(1, 1);
  pred << 0.5;
  target << 0.0;
  CHECK(msm_loss(pred, target, nullptr) == doctest::Approx(0.125));
  pred << 2.0;
  CHECK(msm_loss(pred, target, nullptr) == doctest::Approx(1.5));
  target << 2.0;
  CHECK(msm_loss(pred, target, nullptr) == 0.0);

  // Empty masked set contributes exactly zero.
  CHECK(msm_loss(Mat(0, 4), Mat(0, 4), nullptr) == 0.0);
}

TEST_CASE("msm gradient matches finite differences") {
  Rng rng(1);
  Mat pred(3, 5), target(3, 5);
  for (Index j = 0; j < pred.size(); ++j) {
    pred.data()[j] = 2.5 * rng.normal();
    target.data()[j] = rng.normal();
  }
  Mat dPred;
  msm_loss(pred, target, &dPred);
  auto loss = [&]() { return msm_loss(pred, target, nullptr); };
  CHECK(udoc::testing::max_rel_error(pred, dPred, loss, 1e-7) < 1e-5);
}

TEST_CASE("vcl: single candidate gives zero, equal pair gives log 2") {
  {
    Mat v_hat, vq;
    build_with_sims({0.4}, v_hat, vq);
    CHECK(vcl_first_term(v_hat, vq, {0}, 0.1, nullptr, nullptr) == doctest::Approx(0.0));
  }
  {
    Mat v_hat, vq;
    build_with_sims({0.3, 0.3}, v_hat, vq);
    // Both candidates have cosine 0.3 with the prediction for region 0.
    const Scalar loss = vcl_first_term(v_hat, vq, {0}, 0.1, nullptr, nullptr);
    CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  }
}

TEST_CASE("vcl: three candidates with sims (0.9, 0.1, -0.2) at kappa 0.1") {
  Mat v_hat, vq;
  build_with_sims({0.9, 0.1, -0.2}, v_hat, vq);
  const Scalar loss = vcl_first_term(v_hat, vq, {0}, 0.1, nullptr, nullptr);

  // Independent oracle: direct evaluation with the same epsilon guard.
  auto guarded_cos = [&](int j) {
    const Vec a = v_hat.row(0).transpose();
    const Vec b = vq.row(j).transpose();
    return a.dot(b) / ((a.norm() + 1e-8) * (b.norm() + 1e-8));
  };
  Scalar denom = 0.0;
  for (int j = 0; j < 3; ++j) denom += std::exp(guarded_cos(j) / 0.1);
  const Scalar expected = -std::log(std::exp(guarded_cos(0) / 0.1) / denom);
  CHECK(loss == doctest::Approx(expected).epsilon(1e-12));
  CHECK(loss == doctest::Approx(3.52e-4).epsilon(0.02));
  CHECK(loss >= 0.0);
}

TEST_CASE("vcl gradient matches finite differences") {
  Rng rng(2);
  const int n = 4, d = 6;
  Mat v_hat(n, d), vq(n, d);
  for (Index j = 0; j < v_hat.size(); ++j) {
    v_hat.data()[j] = rng.normal();
    vq.data()[j] = rng.normal();
  }
  const std::vector<int> masked{0, 2};
  Mat dVhat = Mat::Zero(n, d), dVq = Mat::Zero(n, d);
  vcl_first_term(v_hat, vq, masked, 0.1, &dVhat, &dVq);
  auto loss = [&]() { return vcl_first_term(v_hat, vq, masked, 0.1, nullptr, nullptr); };
  CHECK(udoc::testing::max_rel_error(v_hat, dVhat, loss, 1e-6) < 1e-5);
  CHECK(udoc::testing::max_rel_error(vq, dVq, loss, 1e-6) < 1e-5);
}

TEST_CASE("vcl_loss adds the weighted diversity penalty") {
  Mat v_hat, vq;
  build_with_sims({0.5}, v_hat, vq);
  std::vector<Mat> probs{Mat::Constant(1, 4, 0.25)};
  const Scalar loss = vcl_loss(v_hat, vq, {0}, 0.1, probs, 0.1);
  CHECK(loss == doctest::Approx(0.1 * 0.25 * std::log(0.25)).epsilon(1e-12));
}

TEST_CASE("vla identities: zero at equality, invariant under row rescaling") {
  Rng rng(3);
  const int n = 4, d = 7;
  Mat S(n, d);
  for (Index j = 0; j < S.size(); ++j) S.data()[j] = rng.normal();

  CHECK(vla_loss(S, S, nullptr) == 0.0);

  Mat Z = S;
  for (int i = 0; i < n; ++i) Z.row(i) *= (0.5 + i);  // positive per-row scales
  CHECK(vla_loss(S, Z, nullptr) == doctest::Approx(0.0).epsilon(1e-12));

  CHECK_THROWS_AS(vla_loss(Mat(0, d), Mat(0, d), nullptr), std::runtime_error);
}

TEST_CASE("vla N=2 hand-evaluated case") {
  // S rows orthonormal -> G_s = I; Z rows identical unit vectors -> every
  // pairwise cosine is 1, so G_v is all-ones. Hand value: (0+1+1+0)/4 = 1/2.
  Mat S = Mat::Zero(2, 3);
  S(0, 0) = 1.0;
  S(1, 1) = 1.0;
  Mat Z = Mat::Zero(2, 3);
  Z(0, 2) = 1.0;
  Z(1, 2) = 1.0;

  // Independent brute-force oracle over the 2x2 cosine matrices.
  auto cosine_gram = [](const Mat& X) {
    Mat G(X.rows(), X.rows());
    for (Index i = 0; i < X.rows(); ++i)
      for (Index j = 0; j < X.rows(); ++j)
        G(i, j) = X.row(i).dot(X.row(j)) / (X.row(i).norm() * X.row(j).norm());
    return G;
  };
  const Scalar expected = (cosine_gram(S) - cosine_gram(Z)).squaredNorm() / 4.0;

  CHECK(vla_loss(S, Z, nullptr) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(vla_loss(S, Z, nullptr) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("vla stays within [0, 4] and its gradient matches finite differences") {
  Rng rng(4);
  const int n = 5, d = 6;
  Mat S(n, d), Z(n, d);
  for (Index j = 0; j < S.size(); ++j) {
    S.data()[j] = rng.normal();
    Z.data()[j] = rng.normal();
  }
  const Scalar loss = vla_loss(S, Z, nullptr);
  CHECK(loss >= 0.0);
  CHECK(loss <= 4.0);

  Mat dZ = Mat::Zero(n, d);
  vla_loss(S, Z, &dZ);
  auto f = [&]() { return vla_loss(S, Z, nullptr); };
  CHECK(udoc::testing::max_rel_error(Z, dZ, f, 1e-6) < 1e-5);
}

TEST_CASE("mvm mirrors msm and exposes the target-side gradient") {
  Mat pred(1, 1), target(1, 1);
  pred << 0.5;
  target << 0.0;
  Mat dPred, dTarget;
  CHECK(mvm_loss(pred, target, &dPred, &dTarget) == doctest::Approx(0.125));
  CHECK(dTarget(0, 0) == doctest::Approx(-dPred(0, 0)));
  pred << 7.0;
  CHECK(mvm_loss(pred, target, nullptr, nullptr) == doctest::Approx(6.5));
}

TEST_CASE("total_loss sums exactly the enabled tasks") {
  LossConfig cfg;  // msm+vcl+vla
  LossReport r = total_loss(0.5, 0.25, 0.125, 99.0, cfg);
  CHECK(r.total == doctest::Approx(0.875));
  CHECK(r.mvm == 0.0);

  cfg.set_tasks("msm");
  r = total_loss(0.5, 0.25, 0.125, 99.0, cfg);
  CHECK(r.total == doctest::Approx(0.5));
  CHECK(r.vcl == 0.0);

  cfg.set_tasks("msm,mvm");
  r = total_loss(0.5, 0.25, 0.125, 2.0, cfg);
  CHECK(r.total == doctest::Approx(2.5));
  CHECK(r.vcl == 0.0);
  CHECK(r.vla == 0.0);

  LossConfig none;
  none.msm = none.vcl = none.vla = none.mvm = false;
  CHECK_THROWS_AS(total_loss(1, 1, 1, 1, none), std::runtime_error);
}

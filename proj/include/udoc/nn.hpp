#pragma once

#include "udoc/rng.hpp"
#include "udoc/types.hpp"

namespace udoc {

// Row convention everywhere: x is (items x in), y is (items x out).
struct Linear {
  Mat W;  // out x in
  Vec b;  // out

  static Linear zeros(Index out, Index in) { return {Mat::Zero(out, in), Vec::Zero(out)}; }
};

// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero bias.
Linear init_linear(Rng& rng, Index out, Index in);

inline Mat linear_forward(const Mat& x, const Linear& p) {
  Mat y = x * p.W.transpose();
  y.rowwise() += p.b.transpose();
  return y;
}

// Accumulates parameter grads, returns dX.
inline Mat linear_backward(const Mat& x, const Mat& dY, const Linear& p, Linear& g) {
  g.W.noalias() += dY.transpose() * x;
  g.b.noalias() += dY.colwise().sum().transpose();
  return dY * p.W;
}

struct LayerNorm {
  Vec gain;  // d
  Vec bias;  // d

  static LayerNorm identity(Index d) { return {Vec::Ones(d), Vec::Zero(d)}; }
};

constexpr Scalar kLayerNormEps = 1e-5;

struct LayerNormCache {
  Mat xhat;     // normalized input
  Vec inv_std;  // per row
};

Mat layernorm_forward(const Mat& x, const LayerNorm& p, LayerNormCache* cache);
Mat layernorm_backward(const Mat& dY, const LayerNorm& p, const LayerNormCache& cache,
                       LayerNorm& g);

// Numerically-stable row softmax.
template <class D>
Mat softmax_rows(const Eigen::MatrixBase<D>& z) {
  Mat p = (z.colwise() - z.rowwise().maxCoeff()).array().exp().matrix();
  const Vec sums = p.rowwise().sum();
  p.array().colwise() /= sums.array();
  return p;
}

// dZ given probs and dP: p .* (dP - rowwise dot(p, dP)).
inline Mat softmax_rows_backward(const Mat& probs, const Mat& dP) {
  const Vec dot = (probs.array() * dP.array()).rowwise().sum().matrix();
  Mat dZ = dP;
  dZ.colwise() -= dot;
  dZ.array() *= probs.array();
  return dZ;
}

// Exact (erf) GELU; smooth, so finite differences stay well behaved.
inline Mat gelu(const Mat& x) {
  return x.unaryExpr([](Scalar v) { return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)); });
}

inline Mat gelu_backward(const Mat& x, const Mat& dY) {
  Mat dX(x.rows(), x.cols());
  const Scalar inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * M_PI);
  for (Index j = 0; j < x.size(); ++j) {
    const Scalar v = x.data()[j];
    const Scalar cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
    dX.data()[j] = dY.data()[j] * (cdf + v * std::exp(-0.5 * v * v) * inv_sqrt_2pi);
  }
  return dX;
}

inline Mat sigmoid(const Mat& x) { return (1.0 / (1.0 + (-x.array()).exp())).matrix(); }

inline Mat tanh_mat(const Mat& x) { return x.array().tanh().matrix(); }

// Elementwise smooth L1 with beta = 1: 0.5 x^2 inside, |x| - 0.5 outside.
inline Scalar smooth_l1(Scalar x) {
  const Scalar a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

inline Scalar smooth_l1_grad(Scalar x) {
  if (x > 1.0) return 1.0;
  if (x < -1.0) return -1.0;
  return x;
}

}  // namespace udoc

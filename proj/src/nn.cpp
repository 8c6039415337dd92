#include "udoc/nn.hpp"

namespace udoc {

Linear init_linear(Rng& rng, Index out, Index in) {
  Linear p;
  const Scalar bound = 1.0 / std::sqrt(static_cast<Scalar>(in));
  p.W.resize(out, in);
  // Column-major fill so the draw order matches storage order.
  for (Index j = 0; j < in; ++j)
    for (Index i = 0; i < out; ++i) p.W(i, j) = rng.uniform(-bound, bound);
  p.b = Vec::Zero(out);
  return p;
}

Mat layernorm_forward(const Mat& x, const LayerNorm& p, LayerNormCache* cache) {
  const Vec mean = x.rowwise().mean();
  Mat centered = x;
  centered.colwise() -= mean;
  const Vec var = centered.array().square().rowwise().mean().matrix();
  const Vec inv_std = (var.array() + kLayerNormEps).rsqrt().matrix();
  Mat xhat = centered;
  xhat.array().colwise() *= inv_std.array();
  Mat y = xhat;
  y.array().rowwise() *= p.gain.transpose().array();
  y.rowwise() += p.bias.transpose();
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->inv_std = inv_std;
  }
  return y;
}

Mat layernorm_backward(const Mat& dY, const LayerNorm& p, const LayerNormCache& cache,
                       LayerNorm& g) {
  const auto d = static_cast<Scalar>(dY.cols());
  g.gain.noalias() += (dY.array() * cache.xhat.array()).colwise().sum().matrix().transpose();
  g.bias.noalias() += dY.colwise().sum().transpose();

  // dxhat = dY .* gain; dx = inv_std/d * (d*dxhat - sum(dxhat) - xhat .* sum(dxhat .* xhat))
  Mat dxhat = dY;
  dxhat.array().rowwise() *= p.gain.transpose().array();
  const Vec sum_dxhat = dxhat.rowwise().sum();
  const Vec sum_dxhat_xhat = (dxhat.array() * cache.xhat.array()).rowwise().sum().matrix();
  Mat dx = d * dxhat;
  dx.colwise() -= sum_dxhat;
  dx.array() -= cache.xhat.array().colwise() * sum_dxhat_xhat.array();
  dx.array().colwise() *= cache.inv_std.array() / d;
  return dx;
}

}  // namespace udoc

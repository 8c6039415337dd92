#include <doctest.h>

#include "fd_helpers.hpp"
#include "udoc/nn.hpp"

using namespace udoc;
using udoc::testing::max_rel_error;
using udoc::testing::max_rel_error_vec;
using udoc::testing::weight_pattern;

namespace {

Mat random_mat(Rng& rng, Index r, Index c, Scalar scale = 1.0) {
  Mat m(r, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < r; ++i) m(i, j) = scale * rng.normal();
  return m;
}

}  // namespace

TEST_CASE("linear forward/backward against finite differences") {
  Rng rng(1);
  Linear p = init_linear(rng, 5, 4);
  Mat x = random_mat(rng, 3, 4);
  const Mat w = weight_pattern(3, 5);

  auto loss = [&]() { return (linear_forward(x, p).array() * w.array()).sum(); };

  Linear g = Linear::zeros(5, 4);
  Mat dX = linear_backward(x, (w).eval(), p, g);

  CHECK(max_rel_error(p.W, g.W, loss) < 1e-6);
  CHECK(max_rel_error_vec(p.b, g.b, loss) < 1e-6);
  CHECK(max_rel_error(x, dX, loss) < 1e-6);
}

TEST_CASE("layernorm normalizes rows and matches finite differences") {
  Rng rng(2);
  Mat x = random_mat(rng, 4, 6, 2.0);
  LayerNorm p = LayerNorm::identity(6);
  p.gain = random_mat(rng, 6, 1).col(0).array() + 1.5;
  p.bias = random_mat(rng, 6, 1).col(0);

  LayerNormCache cache;
  const Mat y = layernorm_forward(x, p, &cache);
  // Normalized rows have mean 0 and variance ~1 before gain/bias.
  for (Index i = 0; i < x.rows(); ++i) {
    CHECK(cache.xhat.row(i).mean() == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(cache.xhat.row(i).squaredNorm() / 6.0 == doctest::Approx(1.0).epsilon(1e-3));
  }

  const Mat w = weight_pattern(4, 6);
  auto loss = [&]() {
    LayerNormCache c;
    return (layernorm_forward(x, p, &c).array() * w.array()).sum();
  };
  LayerNorm g{Vec::Zero(6), Vec::Zero(6)};
  Mat dX = layernorm_backward(w, p, cache, g);
  CHECK(max_rel_error(x, dX, loss) < 1e-6);
  CHECK(max_rel_error_vec(p.gain, g.gain, loss) < 1e-6);
  CHECK(max_rel_error_vec(p.bias, g.bias, loss) < 1e-6);
}

TEST_CASE("softmax rows sum to one and backward matches finite differences") {
  Rng rng(3);
  Mat z = random_mat(rng, 5, 7);
  const Mat p = softmax_rows(z);
  for (Index i = 0; i < p.rows(); ++i) {
    CHECK(p.row(i).sum() == doctest::Approx(1.0).epsilon(1e-12));
    for (Index j = 0; j < p.cols(); ++j) CHECK(p(i, j) >= 0.0);
  }

  const Mat w = weight_pattern(5, 7);
  auto loss = [&]() { return (softmax_rows(z).array() * w.array()).sum(); };
  const Mat dZ = softmax_rows_backward(p, w);
  Mat z_copy = z;
  CHECK(max_rel_error(z, dZ, loss) < 1e-6);
}

TEST_CASE("gelu backward matches finite differences") {
  Rng rng(4);
  Mat x = random_mat(rng, 3, 5, 1.5);
  const Mat w = weight_pattern(3, 5);
  auto loss = [&]() { return (gelu(x).array() * w.array()).sum(); };
  const Mat dX = gelu_backward(x, w);
  CHECK(max_rel_error(x, dX, loss) < 1e-6);
}

TEST_CASE("smooth L1 values and slopes") {
  CHECK(smooth_l1(0.0) == 0.0);
  CHECK(smooth_l1(0.5) == doctest::Approx(0.125));
  CHECK(smooth_l1(2.0) == doctest::Approx(1.5));
  CHECK(smooth_l1(-2.0) == doctest::Approx(1.5));
  CHECK(smooth_l1_grad(0.5) == doctest::Approx(0.5));
  CHECK(smooth_l1_grad(2.0) == 1.0);
  CHECK(smooth_l1_grad(-2.0) == -1.0);
}

TEST_CASE("init_linear respects the fan-in bound") {
  Rng rng(5);
  const Linear p = init_linear(rng, 20, 16);
  const Scalar bound = 1.0 / 4.0;
  CHECK(p.W.maxCoeff() <= bound);
  CHECK(p.W.minCoeff() >= -bound);
  CHECK(p.b.isZero(0.0));
}

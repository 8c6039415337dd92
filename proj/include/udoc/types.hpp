#pragma once

#include <Eigen/Dense>

#include <cstdint>

namespace udoc {

using Scalar = double;

template <class S>
using MatT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <class S>
using VecT = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using Mat = MatT<Scalar>;
using Vec = VecT<Scalar>;
using Index = Eigen::Index;

using Box6 = Eigen::Matrix<Scalar, 6, 1>;

}  // namespace udoc

#pragma once

#include <Eigen/Dense>

namespace evo {

// Dense types used throughout; everything numerical is templated on the
// scalar so the same code runs in float (training) and double (oracles,
// gradient checks).
template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

using Matd = Mat<double>;
using Vecd = Vec<double>;
using Matf = Mat<float>;
using Vecf = Vec<float>;
using VecXi = Eigen::VectorXi;
using MatXi = Eigen::MatrixXi;

using Index = Eigen::Index;

}  // namespace evo

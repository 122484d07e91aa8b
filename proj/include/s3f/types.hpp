#pragma once

#include <Eigen/Core>

namespace s3f {

/// Dense row-major matrix used for every feature table and parameter.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
/// n x 3 coordinate array (Angstrom).
using Points = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;
using Vec3 = Eigen::RowVector3d;
using Mat3 = Eigen::Matrix3d;
using Index = Eigen::Index;

}  // namespace s3f

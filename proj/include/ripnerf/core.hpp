#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace ripnerf {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat32 = Eigen::Matrix<double, 3, 2>;

// Error categories mapped to CLI exit codes: usage 2, data 3, numeric abort 4.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct NumericAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline double sqr(double x) { return x * x; }

}  // namespace ripnerf

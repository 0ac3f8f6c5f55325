#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <vector>

namespace estkit {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Time-major series: one row per time step.
using Series = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Index = Eigen::Index;

}  // namespace estkit

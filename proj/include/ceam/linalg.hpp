#pragma once

#include <Eigen/Dense>

namespace ceam {

// Row-major so that row i is the vector of node i.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

}  // namespace ceam

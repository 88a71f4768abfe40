#pragma once

#include <Eigen/Core>

namespace rankedit {

// Row-major so that tensor payloads serialize in [rows, cols] order without
// a transpose.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

}  // namespace rankedit

#pragma once

#include <Eigen/Dense>

namespace bsvie {

/// Per-path data: one row per sample path, one column per component.
using PathMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

}  // namespace bsvie

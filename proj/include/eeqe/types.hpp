#pragma once

#include <Eigen/Core>

namespace eeqe {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using IndexVector = Eigen::Matrix<Index, Eigen::Dynamic, 1>;

}  // namespace eeqe

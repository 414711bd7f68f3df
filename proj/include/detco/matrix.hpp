#pragma once

#include <Eigen/Dense>

#include "detco/tensor.hpp"

namespace detco {

/// Row-major double matrix used for embeddings, queues and losses.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixRef = Eigen::Ref<const Matrix>;

Matrix tensor_to_matrix(const Tensor& t);  // N x D tensor
Tensor matrix_to_tensor(const Matrix& m);

}  // namespace detco

#pragma once

#include <vector>

#include "detco/nn/tape.hpp"

namespace detco::nn {

struct Conv2dSpec {
  int stride = 1;
  int padding = 0;
};

/// x: N x Cin x H x W, weight: Cout x Cin x k x k, bias: Cout or null.
Var conv2d(Tape& tape, const Var& x, const Var& weight, const Var& bias, Conv2dSpec spec);

/// Group normalization over (C/groups) x H x W blocks with per-channel affine.
Var group_norm(Tape& tape, const Var& x, const Var& gamma, const Var& beta, int groups,
               float eps = 1e-5f);

Var relu(Tape& tape, const Var& x);
Var add(Tape& tape, const Var& a, const Var& b);

/// Max pooling with -inf padding.
Var max_pool2d(Tape& tape, const Var& x, int kernel, int stride, int padding);

/// N x C x H x W -> N x C spatial mean.
Var global_avg_pool(Tape& tape, const Var& x);

/// x: N x Din, weight: Dout x Din, bias: Dout or null.
Var linear(Tape& tape, const Var& x, const Var& weight, const Var& bias);

Var reshape(Tape& tape, const Var& x, std::vector<int> shape);

/// Row-wise L2 normalization of an N x D matrix. Throws
/// DegenerateEmbeddingError when a row is exactly zero.
Var l2_normalize_rows(Tape& tape, const Var& x);

/// Output spatial size of a strided window.
int conv_out_size(int in, int kernel, int stride, int padding);

}  // namespace detco::nn

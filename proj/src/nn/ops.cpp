#include "detco/nn/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>

#include "detco/errors.hpp"

namespace detco::nn {
namespace {

using ColMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor>;
using RowMatrix = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

void require_rank(const Tensor& t, int rank, const char* what) {
  if (t.rank() != rank) {
    throw InputError(std::string(what) + " expects a rank-" + std::to_string(rank) +
                     " tensor, got " + shape_string(t.shape()));
  }
}

struct ConvGeometry {
  int n, cin, h, w, cout, k, stride, pad, ho, wo;
  int patch() const { return cin * k * k; }
  long pixels() const { return static_cast<long>(n) * ho * wo; }
};

// cols(r, p) with r = (c, ky, kx) and p = (n, oy, ox); column-major so each
// output pixel's receptive field is contiguous.
void im2col(const float* x, const ConvGeometry& g, ColMatrix& cols) {
  cols.resize(g.patch(), g.pixels());
  float* out = cols.data();
  for (int n = 0; n < g.n; ++n) {
    const float* xn = x + static_cast<std::size_t>(n) * g.cin * g.h * g.w;
    for (int oy = 0; oy < g.ho; ++oy) {
      for (int ox = 0; ox < g.wo; ++ox) {
        const int iy0 = oy * g.stride - g.pad;
        const int ix0 = ox * g.stride - g.pad;
        for (int c = 0; c < g.cin; ++c) {
          const float* xc = xn + static_cast<std::size_t>(c) * g.h * g.w;
          for (int ky = 0; ky < g.k; ++ky) {
            const int iy = iy0 + ky;
            if (iy < 0 || iy >= g.h) {
              for (int kx = 0; kx < g.k; ++kx) *out++ = 0.0f;
              continue;
            }
            const float* row = xc + static_cast<std::size_t>(iy) * g.w;
            for (int kx = 0; kx < g.k; ++kx) {
              const int ix = ix0 + kx;
              *out++ = (ix >= 0 && ix < g.w) ? row[ix] : 0.0f;
            }
          }
        }
      }
    }
  }
}

void col2im_add(const ColMatrix& cols, const ConvGeometry& g, float* dx) {
  const float* in = cols.data();
  for (int n = 0; n < g.n; ++n) {
    float* dn = dx + static_cast<std::size_t>(n) * g.cin * g.h * g.w;
    for (int oy = 0; oy < g.ho; ++oy) {
      for (int ox = 0; ox < g.wo; ++ox) {
        const int iy0 = oy * g.stride - g.pad;
        const int ix0 = ox * g.stride - g.pad;
        for (int c = 0; c < g.cin; ++c) {
          float* dc = dn + static_cast<std::size_t>(c) * g.h * g.w;
          for (int ky = 0; ky < g.k; ++ky) {
            const int iy = iy0 + ky;
            if (iy < 0 || iy >= g.h) {
              in += g.k;
              continue;
            }
            float* row = dc + static_cast<std::size_t>(iy) * g.w;
            for (int kx = 0; kx < g.k; ++kx, ++in) {
              const int ix = ix0 + kx;
              if (ix >= 0 && ix < g.w) row[ix] += *in;
            }
          }
        }
      }
    }
  }
}

}  // namespace

int conv_out_size(int in, int kernel, int stride, int padding) {
  return (in + 2 * padding - kernel) / stride + 1;
}

Var conv2d(Tape& tape, const Var& x, const Var& weight, const Var& bias, Conv2dSpec spec) {
  require_rank(x->value, 4, "conv2d input");
  require_rank(weight->value, 4, "conv2d weight");
  const auto& xs = x->value.shape();
  const auto& ws = weight->value.shape();
  if (ws[1] != xs[1] || ws[2] != ws[3]) {
    throw InputError("conv2d weight " + shape_string(ws) + " incompatible with input " +
                     shape_string(xs));
  }
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], spec.stride, spec.padding, 0, 0};
  g.ho = conv_out_size(g.h, g.k, g.stride, g.pad);
  g.wo = conv_out_size(g.w, g.k, g.stride, g.pad);
  if (g.ho <= 0 || g.wo <= 0) throw InputError("conv2d output would be empty for " + shape_string(xs));

  ColMatrix cols;
  im2col(x->value.data(), g, cols);
  ConstRowMap wmat(weight->value.data(), g.cout, g.patch());
  ColMatrix out_mat = wmat * cols;  // Cout x (N*Ho*Wo)

  const int plane = g.ho * g.wo;
  Tensor out({g.n, g.cout, g.ho, g.wo});
  float* o = out.data();
  const float* b = bias ? bias->value.data() : nullptr;
  for (int n = 0; n < g.n; ++n) {
    for (int p = 0; p < plane; ++p) {
      const float* src = out_mat.data() + (static_cast<std::size_t>(n) * plane + p) * g.cout;
      for (int co = 0; co < g.cout; ++co) {
        o[(static_cast<std::size_t>(n) * g.cout + co) * plane + p] = src[co] + (b ? b[co] : 0.0f);
      }
    }
  }

  auto result = tape.constant(std::move(out));
  if (!tape.tracks({&x, &weight, &bias})) return result;
  result->requires_grad = true;
  tape.push([x, weight, bias, result, g, plane]() {
    if (!result->has_grad()) return;
    const float* dy = result->grad.data();
    ColMatrix dout(g.cout, g.pixels());
    for (int n = 0; n < g.n; ++n) {
      for (int p = 0; p < plane; ++p) {
        float* dst = dout.data() + (static_cast<std::size_t>(n) * plane + p) * g.cout;
        for (int co = 0; co < g.cout; ++co) {
          dst[co] = dy[(static_cast<std::size_t>(n) * g.cout + co) * plane + p];
        }
      }
    }
    if (bias && bias->requires_grad) {
      Tensor& db = bias->grad_buffer();
      Eigen::VectorXf sums = dout.rowwise().sum();
      for (int co = 0; co < g.cout; ++co) db[co] += sums[co];
    }
    const bool need_w = weight->requires_grad;
    const bool need_x = x->requires_grad;
    if (!need_w && !need_x) return;
    ColMatrix cols;
    if (need_w) {
      im2col(x->value.data(), g, cols);
      RowMap dw(weight->grad_buffer().data(), g.cout, g.patch());
      dw.noalias() += dout * cols.transpose();
    }
    if (need_x) {
      ConstRowMap wmat(weight->value.data(), g.cout, g.patch());
      ColMatrix dcols = wmat.transpose() * dout;
      col2im_add(dcols, g, x->grad_buffer().data());
    }
  });
  return result;
}

Var group_norm(Tape& tape, const Var& x, const Var& gamma, const Var& beta, int groups, float eps) {
  require_rank(x->value, 4, "group_norm input");
  const auto& s = x->value.shape();
  const int n = s[0], c = s[1], plane = s[2] * s[3];
  if (groups <= 0 || c % groups != 0) {
    throw InputError("group_norm: " + std::to_string(c) + " channels not divisible into " +
                     std::to_string(groups) + " groups");
  }
  const int cpg = c / groups;
  const std::size_t group_size = static_cast<std::size_t>(cpg) * plane;

  Tensor out(s);
  std::vector<float> xhat(x->value.size());
  std::vector<float> inv_std(static_cast<std::size_t>(n) * groups);
  const float* xv = x->value.data();
  const float* gv = gamma->value.data();
  const float* bv = beta->value.data();
  for (int i = 0; i < n; ++i) {
    for (int gi = 0; gi < groups; ++gi) {
      const std::size_t base = (static_cast<std::size_t>(i) * c + gi * cpg) * plane;
      double mean = 0.0;
      for (std::size_t j = 0; j < group_size; ++j) mean += xv[base + j];
      mean /= static_cast<double>(group_size);
      double var = 0.0;
      for (std::size_t j = 0; j < group_size; ++j) {
        const double d = xv[base + j] - mean;
        var += d * d;
      }
      var /= static_cast<double>(group_size);
      const float istd = static_cast<float>(1.0 / std::sqrt(var + eps));
      inv_std[static_cast<std::size_t>(i) * groups + gi] = istd;
      for (int cc = 0; cc < cpg; ++cc) {
        const int ch = gi * cpg + cc;
        for (int p = 0; p < plane; ++p) {
          const std::size_t idx = base + static_cast<std::size_t>(cc) * plane + p;
          const float xh = static_cast<float>(xv[idx] - mean) * istd;
          xhat[idx] = xh;
          out[idx] = gv[ch] * xh + bv[ch];
        }
      }
    }
  }

  auto result = tape.constant(std::move(out));
  if (!tape.tracks({&x, &gamma, &beta})) return result;
  result->requires_grad = true;
  tape.push([x, gamma, beta, result, xhat = std::move(xhat), inv_std = std::move(inv_std), n, c,
             plane, groups, cpg, group_size]() {
    if (!result->has_grad()) return;
    const float* dy = result->grad.data();
    if (gamma->requires_grad || beta->requires_grad) {
      Tensor& dg = gamma->grad_buffer();
      Tensor& db = beta->grad_buffer();
      for (int i = 0; i < n; ++i) {
        for (int ch = 0; ch < c; ++ch) {
          const std::size_t base = (static_cast<std::size_t>(i) * c + ch) * plane;
          float sg = 0.0f, sb = 0.0f;
          for (int p = 0; p < plane; ++p) {
            sg += dy[base + p] * xhat[base + p];
            sb += dy[base + p];
          }
          dg[ch] += sg;
          db[ch] += sb;
        }
      }
    }
    if (!x->requires_grad) return;
    float* dx = x->grad_buffer().data();
    const float* gv = gamma->value.data();
    for (int i = 0; i < n; ++i) {
      for (int gi = 0; gi < groups; ++gi) {
        const std::size_t base = (static_cast<std::size_t>(i) * c + gi * cpg) * plane;
        double mean_d = 0.0, mean_dx = 0.0;
        for (int cc = 0; cc < cpg; ++cc) {
          const float gch = gv[gi * cpg + cc];
          for (int p = 0; p < plane; ++p) {
            const std::size_t idx = base + static_cast<std::size_t>(cc) * plane + p;
            const double d = static_cast<double>(dy[idx]) * gch;
            mean_d += d;
            mean_dx += d * xhat[idx];
          }
        }
        mean_d /= static_cast<double>(group_size);
        mean_dx /= static_cast<double>(group_size);
        const float istd = inv_std[static_cast<std::size_t>(i) * groups + gi];
        for (int cc = 0; cc < cpg; ++cc) {
          const float gch = gv[gi * cpg + cc];
          for (int p = 0; p < plane; ++p) {
            const std::size_t idx = base + static_cast<std::size_t>(cc) * plane + p;
            const double d = static_cast<double>(dy[idx]) * gch;
            dx[idx] += static_cast<float>(istd * (d - mean_d - xhat[idx] * mean_dx));
          }
        }
      }
    }
  });
  return result;
}

Var relu(Tape& tape, const Var& x) {
  Tensor out = x->value;
  for (float& v : out.values()) v = v > 0.0f ? v : 0.0f;
  auto result = tape.constant(std::move(out));
  if (!tape.tracks({&x})) return result;
  result->requires_grad = true;
  tape.push([x, result]() {
    if (!result->has_grad()) return;
    float* dx = x->grad_buffer().data();
    const float* dy = result->grad.data();
    const float* xv = x->value.data();
    for (std::size_t i = 0; i < x->value.size(); ++i) {
      if (xv[i] > 0.0f) dx[i] += dy[i];
    }
  });
  return result;
}

Var add(Tape& tape, const Var& a, const Var& b) {
  if (!a->value.same_shape(b->value)) {
    throw InputError("add: shape mismatch " + shape_string(a->value.shape()) + " vs " +
                     shape_string(b->value.shape()));
  }
  Tensor out = a->value;
  const float* bv = b->value.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  auto result = tape.constant(std::move(out));
  if (!tape.tracks({&a, &b})) return result;
  result->requires_grad = true;
  tape.push([a, b, result]() {
    if (!result->has_grad()) return;
    if (a->requires_grad) a->accumulate_grad(result->grad);
    if (b->requires_grad) b->accumulate_grad(result->grad);
  });
  return result;
}

Var max_pool2d(Tape& tape, const Var& x, int kernel, int stride, int padding) {
  require_rank(x->value, 4, "max_pool2d input");
  const auto& s = x->value.shape();
  const int n = s[0], c = s[1], h = s[2], w = s[3];
  const int ho = conv_out_size(h, kernel, stride, padding);
  const int wo = conv_out_size(w, kernel, stride, padding);
  Tensor out({n, c, ho, wo});
  std::vector<int> argmax(out.size(), -1);
  const float* xv = x->value.data();
  for (int nc = 0; nc < n * c; ++nc) {
    const float* plane = xv + static_cast<std::size_t>(nc) * h * w;
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        float best = -std::numeric_limits<float>::infinity();
        int best_idx = -1;
        for (int ky = 0; ky < kernel; ++ky) {
          const int iy = oy * stride - padding + ky;
          if (iy < 0 || iy >= h) continue;
          for (int kx = 0; kx < kernel; ++kx) {
            const int ix = ox * stride - padding + kx;
            if (ix < 0 || ix >= w) continue;
            const float v = plane[iy * w + ix];
            if (best_idx < 0 || v > best) {
              best = v;
              best_idx = iy * w + ix;
            }
          }
        }
        const std::size_t o = (static_cast<std::size_t>(nc) * ho + oy) * wo + ox;
        out[o] = best;
        argmax[o] = best_idx;
      }
    }
  }
  auto result = tape.constant(std::move(out));
  if (!tape.tracks({&x})) return result;
  result->requires_grad = true;
  tape.push([x, result, argmax = std::move(argmax), h, w, ho, wo]() {
    if (!result->has_grad()) return;
    float* dx = x->grad_buffer().data();
    const float* dy = result->grad.data();
    for (std::size_t o = 0; o < argmax.size(); ++o) {
      const std::size_t nc = o / (static_cast<std::size_t>(ho) * wo);
      dx[nc * h * w + argmax[o]] += dy[o];
    }
  });
  return result;
}

Var global_avg_pool(Tape& tape, const Var& x) {
  require_rank(x->value, 4, "global_avg_pool input");
  const auto& s = x->value.shape();
  const int n = s[0], c = s[1], plane = s[2] * s[3];
  Tensor out({n, c});
  const float* xv = x->value.data();
  for (int i = 0; i < n * c; ++i) {
    double acc = 0.0;
    for (int p = 0; p < plane; ++p) acc += xv[static_cast<std::size_t>(i) * plane + p];
    out[i] = static_cast<float>(acc / plane);
  }
  auto result = tape.constant(std::move(out));
  if (!tape.tracks({&x})) return result;
  result->requires_grad = true;
  tape.push([x, result, n, c, plane]() {
    if (!result->has_grad()) return;
    float* dx = x->grad_buffer().data();
    const float* dy = result->grad.data();
    const float scale = 1.0f / static_cast<float>(plane);
    for (int i = 0; i < n * c; ++i) {
      const float g = dy[i] * scale;
      for (int p = 0; p < plane; ++p) dx[static_cast<std::size_t>(i) * plane + p] += g;
    }
  });
  return result;
}

Var linear(Tape& tape, const Var& x, const Var& weight, const Var& bias) {
  require_rank(x->value, 2, "linear input");
  require_rank(weight->value, 2, "linear weight");
  const int n = x->value.dim(0), din = x->value.dim(1), dout = weight->value.dim(0);
  if (weight->value.dim(1) != din) {
    throw InputError("linear weight " + shape_string(weight->value.shape()) +
                     " incompatible with input " + shape_string(x->value.shape()));
  }
  Tensor out({n, dout});
  ConstRowMap xm(x->value.data(), n, din);
  ConstRowMap wm(weight->value.data(), dout, din);
  RowMap om(out.data(), n, dout);
  om.noalias() = xm * wm.transpose();
  if (bias) {
    Eigen::Map<const Eigen::RowVectorXf> bv(bias->value.data(), dout);
    om.rowwise() += bv;
  }
  auto result = tape.constant(std::move(out));
  if (!tape.tracks({&x, &weight, &bias})) return result;
  result->requires_grad = true;
  tape.push([x, weight, bias, result, n, din, dout]() {
    if (!result->has_grad()) return;
    ConstRowMap dy(result->grad.data(), n, dout);
    if (weight->requires_grad) {
      ConstRowMap xm(x->value.data(), n, din);
      RowMap dw(weight->grad_buffer().data(), dout, din);
      dw.noalias() += dy.transpose() * xm;
    }
    if (bias && bias->requires_grad) {
      Eigen::Map<Eigen::RowVectorXf> db(bias->grad_buffer().data(), dout);
      db += dy.colwise().sum();
    }
    if (x->requires_grad) {
      ConstRowMap wm(weight->value.data(), dout, din);
      RowMap dx(x->grad_buffer().data(), n, din);
      dx.noalias() += dy * wm;
    }
  });
  return result;
}

Var reshape(Tape& tape, const Var& x, std::vector<int> shape) {
  auto result = tape.constant(x->value.reshaped(std::move(shape)));
  if (!tape.tracks({&x})) return result;
  result->requires_grad = true;
  tape.push([x, result]() {
    if (!result->has_grad()) return;
    x->accumulate_grad(result->grad.reshaped(x->value.shape()));
  });
  return result;
}

Var l2_normalize_rows(Tape& tape, const Var& x) {
  require_rank(x->value, 2, "l2_normalize_rows input");
  const int n = x->value.dim(0), d = x->value.dim(1);
  Tensor out(x->value.shape());
  std::vector<float> norms(static_cast<std::size_t>(n));
  const float* xv = x->value.data();
  for (int i = 0; i < n; ++i) {
    double sq = 0.0;
    for (int j = 0; j < d; ++j) sq += static_cast<double>(xv[i * d + j]) * xv[i * d + j];
    const double norm = std::sqrt(sq);
    if (!(norm > 0.0) || !std::isfinite(norm)) {
      throw DegenerateEmbeddingError("embedding row " + std::to_string(i) +
                                     " has zero or non-finite norm before normalization");
    }
    norms[static_cast<std::size_t>(i)] = static_cast<float>(norm);
    for (int j = 0; j < d; ++j) out[i * d + j] = static_cast<float>(xv[i * d + j] / norm);
  }
  auto result = tape.constant(std::move(out));
  if (!tape.tracks({&x})) return result;
  result->requires_grad = true;
  tape.push([x, result, norms = std::move(norms), n, d]() {
    if (!result->has_grad()) return;
    // d(x/|x|) = (g - y (y.g)) / |x|
    float* dx = x->grad_buffer().data();
    const float* dy = result->grad.data();
    const float* y = result->value.data();
    for (int i = 0; i < n; ++i) {
      double dot = 0.0;
      for (int j = 0; j < d; ++j) dot += static_cast<double>(y[i * d + j]) * dy[i * d + j];
      const float inv = 1.0f / norms[static_cast<std::size_t>(i)];
      for (int j = 0; j < d; ++j) {
        dx[i * d + j] += static_cast<float>((dy[i * d + j] - y[i * d + j] * dot) * inv);
      }
    }
  });
  return result;
}

}  // namespace detco::nn

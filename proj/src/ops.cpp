// SPDX-License-Identifier: Apache-2.0
#include "dwf/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "dwf/kernels.hpp"

namespace dwf::ops {
namespace {

using kernels::active;

[[noreturn]] void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

bool is_scalar_operand(const Var& a, const Var& b) { return b.value().size() == 1 && a.value().size() != 1; }

void check_binary(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape() && !is_scalar_operand(a, b)) shape_error(op, a.shape(), b.shape());
}

// Sum of g into a size-1 slot, for a broadcast scalar operand.
void accumulate_scalar(Tensor& slot, double value) { slot[0] += value; }

}  // namespace

Var add(const Var& a, const Var& b) {
  check_binary("add", a, b);
  const std::size_t n = a.value().size();
  Tensor out(a.shape());
  if (is_scalar_operand(a, b)) {
    const double s = b.value()[0];
    for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i] + s;
  } else {
    active().add(n, a.value().raw(), b.value().raw(), out.raw());
  }
  const bool bscalar = is_scalar_operand(a, b);
  return make_node(OpKind::add, std::move(out), {a, b}, [n, bscalar](const Tensor& g, std::span<Tensor* const> s) {
    if (s[0]) active().axpy(n, 1.0, g.raw(), s[0]->raw());
    if (s[1]) {
      if (bscalar) accumulate_scalar(*s[1], active().sum(n, g.raw()));
      else active().axpy(n, 1.0, g.raw(), s[1]->raw());
    }
  });
}

Var sub(const Var& a, const Var& b) {
  check_binary("sub", a, b);
  const std::size_t n = a.value().size();
  Tensor out(a.shape());
  const bool bscalar = is_scalar_operand(a, b);
  if (bscalar) {
    const double s = b.value()[0];
    for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i] - s;
  } else {
    active().sub(n, a.value().raw(), b.value().raw(), out.raw());
  }
  return make_node(OpKind::sub, std::move(out), {a, b}, [n, bscalar](const Tensor& g, std::span<Tensor* const> s) {
    if (s[0]) active().axpy(n, 1.0, g.raw(), s[0]->raw());
    if (s[1]) {
      if (bscalar) accumulate_scalar(*s[1], -active().sum(n, g.raw()));
      else active().axpy(n, -1.0, g.raw(), s[1]->raw());
    }
  });
}

Var mul(const Var& a, const Var& b) {
  check_binary("mul", a, b);
  const std::size_t n = a.value().size();
  const bool bscalar = is_scalar_operand(a, b);
  Tensor out(a.shape());
  if (bscalar) active().scale(n, b.value()[0], a.value().raw(), out.raw());
  else active().mul(n, a.value().raw(), b.value().raw(), out.raw());
  return make_node(OpKind::mul, std::move(out), {a, b}, [a, b, n, bscalar](const Tensor& g, std::span<Tensor* const> s) {
    if (s[0]) {
      if (bscalar) {
        active().axpy(n, b.value()[0], g.raw(), s[0]->raw());
      } else {
        std::vector<double> tmp(n);
        active().mul(n, g.raw(), b.value().raw(), tmp.data());
        active().axpy(n, 1.0, tmp.data(), s[0]->raw());
      }
    }
    if (s[1]) {
      std::vector<double> tmp(n);
      active().mul(n, g.raw(), a.value().raw(), tmp.data());
      if (bscalar) accumulate_scalar(*s[1], active().sum(n, tmp.data()));
      else active().axpy(n, 1.0, tmp.data(), s[1]->raw());
    }
  });
}

Var scale(const Var& a, double factor) {
  const std::size_t n = a.value().size();
  Tensor out(a.shape());
  active().scale(n, factor, a.value().raw(), out.raw());
  return make_node(OpKind::scale, std::move(out), {a}, [n, factor](const Tensor& g, std::span<Tensor* const> s) {
    active().axpy(n, factor, g.raw(), s[0]->raw());
  });
}

Var add_scalar(const Var& a, double offset) {
  const std::size_t n = a.value().size();
  Tensor out(a.shape());
  for (std::size_t i = 0; i < n; ++i) out[i] = a.value()[i] + offset;
  return make_node(OpKind::add_scalar, std::move(out), {a}, [n](const Tensor& g, std::span<Tensor* const> s) {
    active().axpy(n, 1.0, g.raw(), s[0]->raw());
  });
}

Var clamp(const Var& a, double lo, double hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo must not exceed hi");
  const std::size_t n = a.value().size();
  Tensor out(a.shape());
  active().clamp(n, a.value().raw(), lo, hi, out.raw());
  return make_node(OpKind::clamp, std::move(out), {a}, [a, n, lo, hi](const Tensor& g, std::span<Tensor* const> s) {
    const double* x = a.value().raw();
    double* d = s[0]->raw();
    for (std::size_t i = 0; i < n; ++i) {
      if (x[i] > lo && x[i] < hi) d[i] += g[i];
    }
  });
}

Var sign(const Var& a) {
  Tensor out(a.shape());
  active().sign(a.value().size(), a.value().raw(), out.raw());
  return make_node(OpKind::sign, std::move(out), {a}, [](const Tensor&, std::span<Tensor* const>) {});
}

Var relu(const Var& a) {
  const std::size_t n = a.value().size();
  Tensor out(a.shape());
  active().relu(n, a.value().raw(), out.raw());
  return make_node(OpKind::relu, std::move(out), {a}, [a, n](const Tensor& g, std::span<Tensor* const> s) {
    std::vector<double> tmp(n);
    active().relu_backward(n, a.value().raw(), g.raw(), tmp.data());
    active().axpy(n, 1.0, tmp.data(), s[0]->raw());
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.shape()[1] != b.shape()[0]) {
    shape_error("matmul", a.shape(), b.shape());
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out(Shape{m, n});
  active().gemm(m, n, k, a.value().raw(), b.value().raw(), out.raw(), false);
  return make_node(OpKind::matmul, std::move(out), {a, b}, [a, b, m, k, n](const Tensor& g, std::span<Tensor* const> s) {
    if (s[0]) {
      // dA = g·Bᵀ, with B [k,n] read as the row-major Bᵀ operand of gemm_nt.
      active().gemm_nt(m, k, n, g.raw(), b.value().raw(), s[0]->raw(), true);
    }
    if (s[1]) {
      // dB = Aᵀ·g
      std::vector<double> at(k * m);
      kernels::transpose(m, k, a.value().raw(), at.data());
      active().gemm(k, n, m, at.data(), g.raw(), s[1]->raw(), true);
    }
  });
}

namespace {

struct ConvGeometry {
  std::size_t n, c, h, w, f, kh, kw, stride, pad, oh, ow;
  std::size_t patch() const { return c * kh * kw; }
  std::size_t pixels() const { return oh * ow; }
  std::size_t columns() const { return n * oh * ow; }
};

// cols[(ci·kh + i)·kw + j][b·P + oy·ow + ox] = x[b, ci, oy·s + i − p, ox·s + j − p]
void im2col(const ConvGeometry& g, const double* x, double* cols) {
  const std::size_t ncols = g.columns();
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* row = cols + ((ci * g.kh + i) * g.kw + j) * ncols;
        for (std::size_t b = 0; b < g.n; ++b) {
          const double* plane = x + (b * g.c + ci) * g.h * g.w;
          double* dst = row + b * g.pixels();
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
            double* drow = dst + oy * g.ow;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) {
              std::fill(drow, drow + g.ow, 0.0);
              continue;
            }
            const double* srow = plane + static_cast<std::size_t>(iy) * g.w;
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
              drow[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.w)) ? 0.0 : srow[ix];
            }
          }
        }
      }
    }
  }
}

void col2im_add(const ConvGeometry& g, const double* cols, double* dx) {
  const std::size_t ncols = g.columns();
  for (std::size_t ci = 0; ci < g.c; ++ci) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* row = cols + ((ci * g.kh + i) * g.kw + j) * ncols;
        for (std::size_t b = 0; b < g.n; ++b) {
          double* plane = dx + (b * g.c + ci) * g.h * g.w;
          const double* src = row + b * g.pixels();
          for (std::size_t oy = 0; oy < g.oh; ++oy) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.h)) continue;
            double* drow = plane + static_cast<std::size_t>(iy) * g.w;
            const double* srow = src + oy * g.ow;
            for (std::size_t ox = 0; ox < g.ow; ++ox) {
              const std::ptrdiff_t ix =
                  static_cast<std::ptrdiff_t>(ox * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
              if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.w)) drow[ix] += srow[ox];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& input, const Var& kernel, std::size_t stride, std::size_t padding) {
  const Shape& xs = input.shape();
  const Shape& ks = kernel.shape();
  if (xs.size() != 4 || ks.size() != 4 || xs[1] != ks[1]) shape_error("conv2d", xs, ks);
  if (stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  if (ks[2] > xs[2] + 2 * padding || ks[3] > xs[3] + 2 * padding) {
    throw std::invalid_argument("conv2d: kernel " + to_string(ks) + " larger than padded input " + to_string(xs));
  }
  ConvGeometry geo{xs[0], xs[1], xs[2], xs[3], ks[0], ks[2], ks[3], stride, padding, 0, 0};
  geo.oh = (geo.h + 2 * padding - geo.kh) / stride + 1;
  geo.ow = (geo.w + 2 * padding - geo.kw) / stride + 1;

  std::vector<double> cols(geo.patch() * geo.columns());
  im2col(geo, input.value().raw(), cols.data());
  std::vector<double> fmajor(geo.f * geo.columns());
  active().gemm(geo.f, geo.columns(), geo.patch(), kernel.value().raw(), cols.data(), fmajor.data(), false);

  Tensor out(Shape{geo.n, geo.f, geo.oh, geo.ow});
  const std::size_t p = geo.pixels();
  for (std::size_t fi = 0; fi < geo.f; ++fi) {
    for (std::size_t b = 0; b < geo.n; ++b) {
      std::copy_n(fmajor.data() + fi * geo.columns() + b * p, p, out.raw() + (b * geo.f + fi) * p);
    }
  }
  if (!kernel.requires_grad()) cols.clear();

  return make_node(OpKind::conv2d, std::move(out), {input, kernel},
                   [kernel, geo, cols = std::move(cols)](const Tensor& g, std::span<Tensor* const> s) {
                     const std::size_t p = geo.pixels();
                     const std::size_t ncols = geo.columns();
                     std::vector<double> gt(geo.f * ncols);
                     for (std::size_t fi = 0; fi < geo.f; ++fi) {
                       for (std::size_t b = 0; b < geo.n; ++b) {
                         std::copy_n(g.raw() + (b * geo.f + fi) * p, p, gt.data() + fi * ncols + b * p);
                       }
                     }
                     if (s[1]) {
                       active().gemm_nt(geo.f, geo.patch(), ncols, gt.data(), cols.data(), s[1]->raw(), true);
                     }
                     if (s[0]) {
                       std::vector<double> kt(geo.patch() * geo.f);
                       kernels::transpose(geo.f, geo.patch(), kernel.value().raw(), kt.data());
                       std::vector<double> dcols(geo.patch() * ncols);
                       active().gemm(geo.patch(), ncols, geo.f, kt.data(), gt.data(), dcols.data(), false);
                       col2im_add(geo, dcols.data(), s[0]->raw());
                     }
                   });
}

Var bias_add(const Var& x, const Var& bias) {
  const Shape& xs = x.shape();
  if (xs.size() < 2 || bias.value().rank() != 1 || bias.shape()[0] != xs[1]) shape_error("bias_add", xs, bias.shape());
  const std::size_t n = xs[0], c = xs[1], inner = x.value().size() / (n * c);
  Tensor out = x.value();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      double* dst = out.raw() + (b * c + ci) * inner;
      const double v = bias.value()[ci];
      for (std::size_t q = 0; q < inner; ++q) dst[q] += v;
    }
  }
  return make_node(OpKind::bias_add, std::move(out), {x, bias}, [n, c, inner](const Tensor& g, std::span<Tensor* const> s) {
    if (s[0]) active().axpy(g.size(), 1.0, g.raw(), s[0]->raw());
    if (s[1]) {
      for (std::size_t b = 0; b < n; ++b) {
        for (std::size_t ci = 0; ci < c; ++ci) (*s[1])[ci] += active().sum(inner, g.raw() + (b * c + ci) * inner);
      }
    }
  });
}

Var normalize_channels(const Var& x, std::span<const double> mean, std::span<const double> std) {
  const Shape& xs = x.shape();
  if (xs.size() < 2 || mean.size() != xs[1] || std.size() != xs[1]) {
    throw std::invalid_argument("normalize: input " + to_string(xs) + " has " +
                                (xs.size() < 2 ? std::string("no channel axis") : std::to_string(xs[1]) + " channels") +
                                ", statistics have " + std::to_string(mean.size()) + "/" + std::to_string(std.size()));
  }
  for (double s : std) {
    if (!(s > 0.0)) throw std::invalid_argument("normalize: channel std must be positive");
  }
  const std::size_t n = xs[0], c = xs[1], inner = x.value().size() / (n * c);
  Tensor out(xs);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t ci = 0; ci < c; ++ci) {
      const double* src = x.value().raw() + (b * c + ci) * inner;
      double* dst = out.raw() + (b * c + ci) * inner;
      for (std::size_t q = 0; q < inner; ++q) dst[q] = (src[q] - mean[ci]) / std[ci];
    }
  }
  std::vector<double> sd(std.begin(), std.end());
  return make_node(OpKind::normalize, std::move(out), {x}, [n, c, inner, sd](const Tensor& g, std::span<Tensor* const> s) {
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t ci = 0; ci < c; ++ci) {
        active().axpy(inner, 1.0 / sd[ci], g.raw() + (b * c + ci) * inner, s[0]->raw() + (b * c + ci) * inner);
      }
    }
  });
}

Var sum(const Var& a) {
  const std::size_t n = a.value().size();
  Tensor out = Tensor::scalar(active().sum(n, a.value().raw()));
  return make_node(OpKind::sum, std::move(out), {a}, [n](const Tensor& g, std::span<Tensor* const> s) {
    const double v = g[0];
    double* d = s[0]->raw();
    for (std::size_t i = 0; i < n; ++i) d[i] += v;
  });
}

namespace {

struct AxisSplit {
  std::size_t outer, dim, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis, const char* op) {
  if (axis >= shape.size()) {
    throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) + " out of range for shape " +
                                to_string(shape));
  }
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  return out;
}

Var reduce_axis(const Var& a, std::size_t axis, bool average, OpKind kind, const char* op) {
  const AxisSplit sp = split_axis(a.shape(), axis, op);
  const double factor = average ? 1.0 / static_cast<double>(sp.dim) : 1.0;
  Tensor out(drop_axis(a.shape(), axis), 0.0);
  const double* x = a.value().raw();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t d = 0; d < sp.dim; ++d) {
      const double* src = x + (o * sp.dim + d) * sp.inner;
      double* dst = out.raw() + o * sp.inner;
      for (std::size_t q = 0; q < sp.inner; ++q) dst[q] += src[q];
    }
  }
  if (average) {
    for (double& v : out.data()) v *= factor;
  }
  return make_node(kind, std::move(out), {a}, [sp, factor](const Tensor& g, std::span<Tensor* const> s) {
    double* d = s[0]->raw();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t dd = 0; dd < sp.dim; ++dd) {
        active().axpy(sp.inner, factor, g.raw() + o * sp.inner, d + (o * sp.dim + dd) * sp.inner);
      }
    }
  });
}

}  // namespace

Var sum(const Var& a, std::size_t axis) { return reduce_axis(a, axis, false, OpKind::sum, "sum"); }

Var mean(const Var& a) {
  const std::size_t n = a.value().size();
  const double factor = 1.0 / static_cast<double>(n);
  Tensor out = Tensor::scalar(active().sum(n, a.value().raw()) * factor);
  return make_node(OpKind::mean, std::move(out), {a}, [n, factor](const Tensor& g, std::span<Tensor* const> s) {
    const double v = g[0] * factor;
    double* d = s[0]->raw();
    for (std::size_t i = 0; i < n; ++i) d[i] += v;
  });
}

Var mean(const Var& a, std::size_t axis) { return reduce_axis(a, axis, true, OpKind::mean, "mean"); }

Tensor argmax(const Tensor& a, std::size_t axis) {
  const AxisSplit sp = split_axis(a.shape(), axis, "argmax");
  Shape shape = drop_axis(a.shape(), axis);
  Tensor out(shape, 0.0);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t q = 0; q < sp.inner; ++q) {
      std::size_t best = 0;
      double best_v = a[o * sp.dim * sp.inner + q];
      for (std::size_t d = 1; d < sp.dim; ++d) {
        const double v = a[(o * sp.dim + d) * sp.inner + q];
        if (v > best_v) {
          best_v = v;
          best = d;
        }
      }
      out[o * sp.inner + q] = static_cast<double>(best);
    }
  }
  return out;
}

std::vector<std::size_t> argmax_rows(const Tensor& a) {
  if (a.rank() != 2) throw std::invalid_argument("argmax_rows: expected [N,K], got " + to_string(a.shape()));
  const Tensor idx = argmax(a, 1);
  std::vector<std::size_t> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = static_cast<std::size_t>(idx[i]);
  return out;
}

Var reshape(const Var& a, Shape shape) {
  const Shape original = a.shape();
  Tensor out = a.value().reshaped(std::move(shape));
  return make_node(OpKind::reshape, std::move(out), {a}, [](const Tensor& g, std::span<Tensor* const> s) {
    active().axpy(g.size(), 1.0, g.raw(), s[0]->raw());
  });
}

Var avg_pool2d(const Var& x, std::size_t window) {
  const Shape& xs = x.shape();
  if (xs.size() != 4) throw std::invalid_argument("avg_pool2d: expected [N,C,H,W], got " + to_string(xs));
  const std::size_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const std::size_t wy = window == 0 ? h : window;
  const std::size_t wx = window == 0 ? w : window;
  if (wy > h || wx > w) {
    throw std::invalid_argument("avg_pool2d: window " + std::to_string(window) + " exceeds input " + to_string(xs));
  }
  const std::size_t oh = h / wy, ow = w / wx;
  const double factor = 1.0 / static_cast<double>(wy * wx);
  Tensor out(Shape{n, c, oh, ow}, 0.0);
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* src = x.value().raw() + plane * h * w;
    double* dst = out.raw() + plane * oh * ow;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (std::size_t i = 0; i < wy; ++i) {
          for (std::size_t j = 0; j < wx; ++j) acc += src[(oy * wy + i) * w + ox * wx + j];
        }
        dst[oy * ow + ox] = acc * factor;
      }
    }
  }
  return make_node(OpKind::avg_pool, std::move(out), {x},
                   [n, c, h, w, wy, wx, oh, ow, factor](const Tensor& g, std::span<Tensor* const> s) {
                     for (std::size_t plane = 0; plane < n * c; ++plane) {
                       const double* src = g.raw() + plane * oh * ow;
                       double* dst = s[0]->raw() + plane * h * w;
                       for (std::size_t oy = 0; oy < oh; ++oy) {
                         for (std::size_t ox = 0; ox < ow; ++ox) {
                           const double v = src[oy * ow + ox] * factor;
                           for (std::size_t i = 0; i < wy; ++i) {
                             for (std::size_t j = 0; j < wx; ++j) dst[(oy * wy + i) * w + ox * wx + j] += v;
                           }
                         }
                       }
                     }
                   });
}

namespace {

// Permutation-invariant sum: terms added in ascending order.
double sorted_sum(std::span<double> terms) {
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += t;
  return s;
}

}  // namespace

Var softmax_rows(const Var& logits) {
  if (logits.value().rank() != 2) {
    throw std::invalid_argument("softmax_rows: expected [N,K], got " + to_string(logits.shape()));
  }
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  Tensor out(logits.shape());
  std::vector<double> terms(k);
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = logits.value().raw() + i * k;
    double* y = out.raw() + i * k;
    const double zmax = *std::max_element(z, z + k);
    for (std::size_t j = 0; j < k; ++j) y[j] = std::exp(z[j] - zmax);
    std::copy_n(y, k, terms.begin());
    const double total = sorted_sum(terms);
    for (std::size_t j = 0; j < k; ++j) y[j] /= total;
  }
  Tensor probs = out;
  return make_node(OpKind::softmax, std::move(out), {logits},
                   [probs = std::move(probs), n, k](const Tensor& g, std::span<Tensor* const> s) {
                     for (std::size_t i = 0; i < n; ++i) {
                       const double* y = probs.raw() + i * k;
                       const double* gi = g.raw() + i * k;
                       double dot = 0.0;
                       for (std::size_t j = 0; j < k; ++j) dot += gi[j] * y[j];
                       double* d = s[0]->raw() + i * k;
                       for (std::size_t j = 0; j < k; ++j) d[j] += y[j] * (gi[j] - dot);
                     }
                   });
}

Var softmax_cross_entropy(const Var& logits, std::span<const int> labels) {
  if (logits.value().rank() != 2 || logits.shape()[0] != labels.size()) {
    throw std::invalid_argument("softmax_cross_entropy: logits " + to_string(logits.shape()) + " vs " +
                                std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(labels[i]) + " at index " +
                                  std::to_string(i) + " outside [0," + std::to_string(k) + ")");
    }
  }
  Tensor probs(logits.shape());
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = logits.value().raw() + i * k;
    double* p = probs.raw() + i * k;
    const double zmax = *std::max_element(z, z + k);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      p[j] = std::exp(z[j] - zmax);
      denom += p[j];
    }
    for (std::size_t j = 0; j < k; ++j) p[j] /= denom;
    total += std::log(denom) - (z[labels[i]] - zmax);
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  std::vector<int> y(labels.begin(), labels.end());
  return make_node(OpKind::cross_entropy, Tensor::scalar(total * inv_n), {logits},
                   [probs = std::move(probs), y = std::move(y), n, k, inv_n](const Tensor& g,
                                                                             std::span<Tensor* const> s) {
                     const double f = g[0] * inv_n;
                     double* d = s[0]->raw();
                     for (std::size_t i = 0; i < n; ++i) {
                       for (std::size_t j = 0; j < k; ++j) {
                         const double onehot = static_cast<std::size_t>(y[i]) == j ? 1.0 : 0.0;
                         d[i * k + j] += f * (probs[i * k + j] - onehot);
                       }
                     }
                   });
}

Var weighted_sum(std::span<const Var> experts, const Var& weights) {
  if (experts.empty()) throw std::invalid_argument("weighted_sum: no experts");
  const Shape& es = experts[0].shape();
  if (es.size() != 2) throw std::invalid_argument("weighted_sum: expert output must be [N,K], got " + to_string(es));
  const std::size_t n = es[0], k = es[1], e = experts.size();
  for (const Var& x : experts) {
    if (x.shape() != es) shape_error("weighted_sum", es, x.shape());
  }
  if (weights.shape() != Shape{n, e}) shape_error("weighted_sum", Shape{n, e}, weights.shape());

  Tensor out(es);
  std::vector<double> terms(e);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (std::size_t x = 0; x < e; ++x) {
        const double v = experts[x].value()[i * k + j];
        terms[x] = weights.value()[i * e + x] * v;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
      // Rounding may push the convex combination just outside the hull.
      out[i * k + j] = std::clamp(sorted_sum(terms), lo, hi);
    }
  }
  std::vector<Var> inputs(experts.begin(), experts.end());
  inputs.push_back(weights);
  return make_node(OpKind::weighted_sum, std::move(out), inputs,
                   [inputs, n, k, e](const Tensor& g, std::span<Tensor* const> s) {
                     const Tensor& w = inputs[e].value();
                     for (std::size_t x = 0; x < e; ++x) {
                       if (s[x]) {
                         double* d = s[x]->raw();
                         for (std::size_t i = 0; i < n; ++i) {
                           const double wi = w[i * e + x];
                           for (std::size_t j = 0; j < k; ++j) d[i * k + j] += g[i * k + j] * wi;
                         }
                       }
                       if (s[e]) {
                         const Tensor& ev = inputs[x].value();
                         for (std::size_t i = 0; i < n; ++i) {
                           double acc = 0.0;
                           for (std::size_t j = 0; j < k; ++j) acc += g[i * k + j] * ev[i * k + j];
                           (*s[e])[i * e + x] += acc;
                         }
                       }
                     }
                   });
}

}  // namespace dwf::ops

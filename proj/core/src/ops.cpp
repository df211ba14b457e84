#include "ghnsearch/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace ghn {

namespace {

bool taped(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::current()) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// Output positions y with 0 <= y*stride + off < in_extent, clipped to
// [0, out_extent).
struct OutRange {
  int64_t lo, hi;
};

OutRange valid_out_range(int64_t out_extent, int64_t in_extent, int stride, int64_t off) {
  int64_t lo = 0;
  if (off < 0) lo = (-off + stride - 1) / stride;
  int64_t hi = (in_extent - 1 - off >= 0) ? (in_extent - 1 - off) / stride + 1 : 0;
  hi = std::min(hi, out_extent);
  lo = std::min(lo, hi);
  return {lo, hi};
}

struct Nchw {
  int64_t b, c, h, w;
  bool was_3d;
};

Nchw as_nchw(const Tensor& x, const char* op) {
  if (x.rank() == 3) return {1, x.dim(0), x.dim(1), x.dim(2), true};
  if (x.rank() == 4) return {x.dim(0), x.dim(1), x.dim(2), x.dim(3), false};
  throw DimensionError(std::string(op) + ": expected rank-3 or rank-4 input, got " +
                       shape_str(x.shape()));
}

Shape spatial_shape(const Nchw& n, int64_t c, int64_t h, int64_t w) {
  if (n.was_3d) return Shape{c, h, w};
  return Shape{n.b, c, h, w};
}

}  // namespace

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (taped({&a, &b})) {
    out.set_requires_grad(true);
    Tape::current()->record([a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (taped({&a, &b})) {
    out.set_requires_grad(true);
    Tape::current()->record([a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (taped({&a, &b})) {
    out.set_requires_grad(true);
    Tape::current()->record([a, b, out]() mutable {
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.data()[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
  if (taped({&a})) {
    out.set_requires_grad(true);
    Tape::current()->record([a, out, c]() mutable {
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
  }
  return out;
}

Tensor add_scalar(const Tensor& a, double c) {
  Tensor out(a.shape());
  const int64_t n = a.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + c;
  if (taped({&a})) {
    out.set_requires_grad(true);
    Tape::current()->record([a, out]() mutable {
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out(x.shape());
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  if (taped({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record([x, out]() mutable {
      const auto& g = out.grad();
      auto& gx = x.grad();
      for (size_t i = 0; i < g.size(); ++i) {
        if (x.data()[i] > 0.0) gx[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out(x.shape());
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = 1.0 / (1.0 + std::exp(-x.data()[i]));
  if (taped({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record([x, out]() mutable {
      const auto& g = out.grad();
      auto& gx = x.grad();
      for (size_t i = 0; i < g.size(); ++i) {
        double y = out.data()[i];
        gx[i] += g[i] * y * (1.0 - y);
      }
    });
  }
  return out;
}

Tensor tanh_act(const Tensor& x) {
  Tensor out(x.shape());
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) out.data()[i] = std::tanh(x.data()[i]);
  if (taped({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record([x, out]() mutable {
      const auto& g = out.grad();
      auto& gx = x.grad();
      for (size_t i = 0; i < g.size(); ++i) {
        double y = out.data()[i];
        gx[i] += g[i] * (1.0 - y * y);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// linear algebra
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  const int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out(Shape{m, n});
  {
    const double* __restrict pa = a.data();
    const double* __restrict pb = b.data();
    double* __restrict po = out.data();
    for (int64_t i = 0; i < m; ++i) {
      for (int64_t kk = 0; kk < k; ++kk) {
        const double av = pa[i * k + kk];
        const double* brow = pb + kk * n;
        double* orow = po + i * n;
        for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  }
  if (taped({&a, &b})) {
    out.set_requires_grad(true);
    Tape::current()->record([a, b, out, m, k, n]() mutable {
      const double* g = out.grad().data();
      if (a.requires_grad()) {
        double* ga = a.grad().data();
        const double* pb = b.data();
        for (int64_t i = 0; i < m; ++i) {
          for (int64_t kk = 0; kk < k; ++kk) {
            const double* brow = pb + kk * n;
            const double* grow = g + i * n;
            double acc = 0.0;
            for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            ga[i * k + kk] += acc;
          }
        }
      }
      if (b.requires_grad()) {
        double* gb = b.grad().data();
        const double* pa = a.data();
        for (int64_t i = 0; i < m; ++i) {
          for (int64_t kk = 0; kk < k; ++kk) {
            const double av = pa[i * k + kk];
            const double* grow = g + i * n;
            double* gbrow = gb + kk * n;
            for (int64_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
          }
        }
      }
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw DimensionError("add_bias: incompatible shapes " + shape_str(x.shape()) + " + " +
                         shape_str(bias.shape()));
  }
  const int64_t rows = x.dim(0), cols = x.dim(1);
  Tensor out(x.shape());
  for (int64_t i = 0; i < rows; ++i) {
    for (int64_t j = 0; j < cols; ++j) out.data()[i * cols + j] = x.data()[i * cols + j] + bias.data()[j];
  }
  if (taped({&x, &bias})) {
    out.set_requires_grad(true);
    Tape::current()->record([x, bias, out, rows, cols]() mutable {
      const auto& g = out.grad();
      if (x.requires_grad()) {
        auto& gx = x.grad();
        for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
      }
      if (bias.requires_grad()) {
        auto& gb = bias.grad();
        for (int64_t i = 0; i < rows; ++i) {
          for (int64_t j = 0; j < cols; ++j) gb[j] += g[i * cols + j];
        }
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  return add_bias(matmul(x, w), bias);
}

// ---------------------------------------------------------------------------
// structural ops
// ---------------------------------------------------------------------------

Tensor concat(const std::vector<Tensor>& parts, size_t axis) {
  if (parts.empty()) throw InputError("concat: no inputs");
  const size_t rank = parts[0].rank();
  if (axis >= rank) throw DimensionError("concat: axis out of range");
  Shape out_shape = parts[0].shape();
  int64_t axis_total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != rank) throw DimensionError("concat: rank mismatch");
    for (size_t d = 0; d < rank; ++d) {
      if (d != axis && p.dim(d) != out_shape[d]) {
        throw DimensionError("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                             shape_str(out_shape));
      }
    }
    axis_total += p.dim(axis);
  }
  out_shape[axis] = axis_total;

  int64_t outer = 1, inner = 1;
  for (size_t d = 0; d < axis; ++d) outer *= out_shape[d];
  for (size_t d = axis + 1; d < rank; ++d) inner *= out_shape[d];

  Tensor out(out_shape);
  int64_t offset = 0;
  for (const Tensor& p : parts) {
    const int64_t span = p.dim(axis) * inner;
    for (int64_t o = 0; o < outer; ++o) {
      std::memcpy(out.data() + (o * axis_total + offset) * inner, p.data() + o * span,
                  static_cast<size_t>(span) * sizeof(double));
    }
    offset += p.dim(axis);
  }

  bool needs = false;
  for (const Tensor& p : parts) needs = needs || p.requires_grad();
  if (Tape::current() && needs) {
    out.set_requires_grad(true);
    Tape::current()->record([parts, out, outer, inner, axis_total, axis]() mutable {
      const auto& g = out.grad();
      int64_t offset = 0;
      for (const Tensor& p : parts) {
        const int64_t span = p.dim(axis) * inner;
        if (p.requires_grad()) {
          auto& gp = p.grad();
          for (int64_t o = 0; o < outer; ++o) {
            const double* src = g.data() + (o * axis_total + offset) * inner;
            double* dst = gp.data() + o * span;
            for (int64_t i = 0; i < span; ++i) dst[i] += src[i];
          }
        }
        offset += p.dim(axis);
      }
    });
  }
  return out;
}

Tensor slice(const Tensor& x, size_t axis, int64_t start, int64_t len) {
  if (axis >= x.rank()) throw DimensionError("slice: axis out of range");
  if (start < 0 || len < 1 || start + len > x.dim(axis)) {
    throw DimensionError("slice: range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of bounds for " +
                         shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  int64_t outer = 1, inner = 1;
  for (size_t d = 0; d < axis; ++d) outer *= x.dim(d);
  for (size_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  const int64_t in_axis = x.dim(axis);

  Tensor out(out_shape);
  for (int64_t o = 0; o < outer; ++o) {
    std::memcpy(out.data() + o * len * inner, x.data() + (o * in_axis + start) * inner,
                static_cast<size_t>(len * inner) * sizeof(double));
  }
  if (taped({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record([x, out, outer, inner, in_axis, start, len]() mutable {
      const auto& g = out.grad();
      auto& gx = x.grad();
      for (int64_t o = 0; o < outer; ++o) {
        const double* src = g.data() + o * len * inner;
        double* dst = gx.data() + (o * in_axis + start) * inner;
        for (int64_t i = 0; i < len * inner; ++i) dst[i] += src[i];
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  Tensor out(std::move(shape), std::vector<double>(x.data(), x.data() + x.numel()));
  if (taped({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record([x, out]() mutable {
      const auto& g = out.grad();
      auto& gx = x.grad();
      for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return out;
}

Tensor reduce_sum_all(const Tensor& x) {
  double acc = 0.0;
  for (int64_t i = 0; i < x.numel(); ++i) acc += x.data()[i];
  Tensor out = Tensor::scalar(acc);
  if (taped({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record([x, out]() mutable {
      const double g = out.grad()[0];
      auto& gx = x.grad();
      for (size_t i = 0; i < gx.size(); ++i) gx[i] += g;
    });
  }
  return out;
}

Tensor reduce_mean_all(const Tensor& x) {
  return scale(reduce_sum_all(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor reduce_sum(const Tensor& x, size_t axis) {
  if (axis >= x.rank()) throw DimensionError("reduce_sum: axis out of range");
  int64_t outer = 1, inner = 1;
  for (size_t d = 0; d < axis; ++d) outer *= x.dim(d);
  for (size_t d = axis + 1; d < x.rank(); ++d) inner *= x.dim(d);
  const int64_t mid = x.dim(axis);

  Shape out_shape;
  for (size_t d = 0; d < x.rank(); ++d) {
    if (d != axis) out_shape.push_back(x.dim(d));
  }
  if (out_shape.empty()) out_shape = Shape{1};

  Tensor out(out_shape);
  for (int64_t o = 0; o < outer; ++o) {
    for (int64_t m = 0; m < mid; ++m) {
      const double* src = x.data() + (o * mid + m) * inner;
      double* dst = out.data() + o * inner;
      for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  if (taped({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record([x, out, outer, inner, mid]() mutable {
      const auto& g = out.grad();
      auto& gx = x.grad();
      for (int64_t o = 0; o < outer; ++o) {
        for (int64_t m = 0; m < mid; ++m) {
          const double* src = g.data() + o * inner;
          double* dst = gx.data() + (o * mid + m) * inner;
          for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
      }
    });
  }
  return out;
}

Tensor reduce_mean(const Tensor& x, size_t axis) {
  return scale(reduce_sum(x, axis), 1.0 / static_cast<double>(x.dim(axis)));
}

// ---------------------------------------------------------------------------
// spatial ops
// ---------------------------------------------------------------------------

int64_t conv_out_extent(int64_t in, int64_t k, int stride, int padding, int dilation) {
  const int64_t eff = dilation * (k - 1) + 1;
  const int64_t out = (in + 2 * padding - eff) / stride + 1;
  if (in + 2 * padding < eff || out < 1) {
    throw DimensionError("conv/pool output extent < 1 (input " + std::to_string(in) +
                         ", kernel " + std::to_string(k) + ", stride " + std::to_string(stride) +
                         ", padding " + std::to_string(padding) + ", dilation " +
                         std::to_string(dilation) + ")");
  }
  return out;
}

namespace {

// Shared loop skeleton for dense convolution: forward, input-grad and
// weight-grad all walk identical (kernel offset -> output range) bounds.
struct ConvDims {
  int64_t batch, cin, h, w, cout, kh, kw, ho, wo;
  int stride, pad_y, pad_x, dilation;
};

void conv_forward(const ConvDims& d, const double* __restrict x, const double* __restrict wgt,
                  double* __restrict out) {
  for (int64_t b = 0; b < d.batch; ++b) {
    for (int64_t co = 0; co < d.cout; ++co) {
      double* out_plane = out + (b * d.cout + co) * d.ho * d.wo;
      for (int64_t ci = 0; ci < d.cin; ++ci) {
        const double* in_plane = x + (b * d.cin + ci) * d.h * d.w;
        for (int64_t i = 0; i < d.kh; ++i) {
          const int64_t off_y = i * d.dilation - d.pad_y;
          const OutRange ry = valid_out_range(d.ho, d.h, d.stride, off_y);
          for (int64_t j = 0; j < d.kw; ++j) {
            const int64_t off_x = j * d.dilation - d.pad_x;
            const OutRange rx = valid_out_range(d.wo, d.w, d.stride, off_x);
            const double wv = wgt[((co * d.cin + ci) * d.kh + i) * d.kw + j];
            for (int64_t y = ry.lo; y < ry.hi; ++y) {
              const double* src = in_plane + (y * d.stride + off_y) * d.w + off_x;
              double* dst = out_plane + y * d.wo;
              if (d.stride == 1) {
                for (int64_t xo = rx.lo; xo < rx.hi; ++xo) dst[xo] += wv * src[xo];
              } else {
                for (int64_t xo = rx.lo; xo < rx.hi; ++xo) dst[xo] += wv * src[xo * d.stride];
              }
            }
          }
        }
      }
    }
  }
}

void conv_backward_input(const ConvDims& d, const double* __restrict gout,
                         const double* __restrict wgt, double* __restrict gx) {
  for (int64_t b = 0; b < d.batch; ++b) {
    for (int64_t co = 0; co < d.cout; ++co) {
      const double* g_plane = gout + (b * d.cout + co) * d.ho * d.wo;
      for (int64_t ci = 0; ci < d.cin; ++ci) {
        double* gx_plane = gx + (b * d.cin + ci) * d.h * d.w;
        for (int64_t i = 0; i < d.kh; ++i) {
          const int64_t off_y = i * d.dilation - d.pad_y;
          const OutRange ry = valid_out_range(d.ho, d.h, d.stride, off_y);
          for (int64_t j = 0; j < d.kw; ++j) {
            const int64_t off_x = j * d.dilation - d.pad_x;
            const OutRange rx = valid_out_range(d.wo, d.w, d.stride, off_x);
            const double wv = wgt[((co * d.cin + ci) * d.kh + i) * d.kw + j];
            for (int64_t y = ry.lo; y < ry.hi; ++y) {
              double* dst = gx_plane + (y * d.stride + off_y) * d.w + off_x;
              const double* src = g_plane + y * d.wo;
              for (int64_t xo = rx.lo; xo < rx.hi; ++xo) dst[xo * d.stride] += wv * src[xo];
            }
          }
        }
      }
    }
  }
}

void conv_backward_weight(const ConvDims& d, const double* __restrict gout,
                          const double* __restrict x, double* __restrict gw) {
  for (int64_t b = 0; b < d.batch; ++b) {
    for (int64_t co = 0; co < d.cout; ++co) {
      const double* g_plane = gout + (b * d.cout + co) * d.ho * d.wo;
      for (int64_t ci = 0; ci < d.cin; ++ci) {
        const double* in_plane = x + (b * d.cin + ci) * d.h * d.w;
        for (int64_t i = 0; i < d.kh; ++i) {
          const int64_t off_y = i * d.dilation - d.pad_y;
          const OutRange ry = valid_out_range(d.ho, d.h, d.stride, off_y);
          for (int64_t j = 0; j < d.kw; ++j) {
            const int64_t off_x = j * d.dilation - d.pad_x;
            const OutRange rx = valid_out_range(d.wo, d.w, d.stride, off_x);
            double acc = 0.0;
            for (int64_t y = ry.lo; y < ry.hi; ++y) {
              const double* src = in_plane + (y * d.stride + off_y) * d.w + off_x;
              const double* grow = g_plane + y * d.wo;
              for (int64_t xo = rx.lo; xo < rx.hi; ++xo) acc += grow[xo] * src[xo * d.stride];
            }
            gw[((co * d.cin + ci) * d.kh + i) * d.kw + j] += acc;
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Conv2dOpts& opts) {
  const Nchw n = as_nchw(x, "conv2d");
  if (w.rank() != 4) {
    throw DimensionError("conv2d: weight must be rank 4 [Cout,Cin,kh,kw], got " +
                         shape_str(w.shape()));
  }
  if (w.dim(1) != n.c) {
    throw DimensionError("conv2d: input channels mismatch, input " + shape_str(x.shape()) +
                         " vs weight " + shape_str(w.shape()));
  }
  if (opts.stride < 1 || opts.pad_h() < 0 || opts.pad_w() < 0 || opts.dilation < 1) {
    throw InputError("conv2d: stride/dilation must be >= 1 and padding >= 0");
  }
  ConvDims d{n.b,       n.c,         n.h,          n.w,          w.dim(0), w.dim(2), w.dim(3), 0, 0,
             opts.stride, opts.pad_h(), opts.pad_w(), opts.dilation};
  d.ho = conv_out_extent(n.h, d.kh, d.stride, d.pad_y, d.dilation);
  d.wo = conv_out_extent(n.w, d.kw, d.stride, d.pad_x, d.dilation);

  Tensor out(spatial_shape(n, d.cout, d.ho, d.wo));
  conv_forward(d, x.data(), w.data(), out.data());

  if (taped({&x, &w})) {
    out.set_requires_grad(true);
    Tape::current()->record([x, w, out, d]() mutable {
      const double* g = out.grad().data();
      if (x.requires_grad()) conv_backward_input(d, g, w.data(), x.grad().data());
      if (w.requires_grad()) conv_backward_weight(d, g, x.data(), w.grad().data());
    });
  }
  return out;
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const Conv2dOpts& opts) {
  const Nchw n = as_nchw(x, "depthwise_conv2d");
  if (w.rank() != 4 || w.dim(1) != 1) {
    throw DimensionError("depthwise_conv2d: weight must be [C,1,kh,kw], got " +
                         shape_str(w.shape()));
  }
  if (w.dim(0) != n.c) {
    throw DimensionError("depthwise_conv2d: channel mismatch, input " + shape_str(x.shape()) +
                         " vs weight " + shape_str(w.shape()));
  }
  if (opts.stride < 1 || opts.pad_h() < 0 || opts.pad_w() < 0 || opts.dilation < 1) {
    throw InputError("depthwise_conv2d: stride/dilation must be >= 1 and padding >= 0");
  }
  const int64_t kh = w.dim(2), kw = w.dim(3);
  const int64_t ho = conv_out_extent(n.h, kh, opts.stride, opts.pad_h(), opts.dilation);
  const int64_t wo = conv_out_extent(n.w, kw, opts.stride, opts.pad_w(), opts.dilation);

  // Per-channel convolution shares the dense kernels with cin = cout = 1.
  ConvDims d{1, 1, n.h, n.w, 1, kh, kw, ho, wo, opts.stride, opts.pad_h(), opts.pad_w(), opts.dilation};

  Tensor out(spatial_shape(n, n.c, ho, wo));
  for (int64_t b = 0; b < n.b; ++b) {
    for (int64_t c = 0; c < n.c; ++c) {
      conv_forward(d, x.data() + (b * n.c + c) * n.h * n.w, w.data() + c * kh * kw,
                   out.data() + (b * n.c + c) * ho * wo);
    }
  }
  if (taped({&x, &w})) {
    out.set_requires_grad(true);
    const Nchw nn = n;
    Tape::current()->record([x, w, out, d, nn, kh, kw, ho, wo]() mutable {
      const double* g = out.grad().data();
      for (int64_t b = 0; b < nn.b; ++b) {
        for (int64_t c = 0; c < nn.c; ++c) {
          const double* gp = g + (b * nn.c + c) * ho * wo;
          if (x.requires_grad()) {
            conv_backward_input(d, gp, w.data() + c * kh * kw,
                                x.grad().data() + (b * nn.c + c) * nn.h * nn.w);
          }
          if (w.requires_grad()) {
            conv_backward_weight(d, gp, x.data() + (b * nn.c + c) * nn.h * nn.w,
                                 w.grad().data() + c * kh * kw);
          }
        }
      }
    });
  }
  return out;
}

Tensor separable_conv2d(const Tensor& x, const Tensor& depthwise_w, const Tensor& pointwise_w,
                        int stride, int dilation) {
  if (pointwise_w.rank() != 4 || pointwise_w.dim(2) != 1 || pointwise_w.dim(3) != 1) {
    throw DimensionError("separable_conv2d: pointwise weight must be [Cout,Cin,1,1], got " +
                         shape_str(pointwise_w.shape()));
  }
  const int64_t k = depthwise_w.dim(2);
  Conv2dOpts dw_opts;
  dw_opts.stride = stride;
  dw_opts.dilation = dilation;
  dw_opts.padding = static_cast<int>(dilation * (k - 1) / 2);  // "same" for odd k
  Tensor mid = depthwise_conv2d(x, depthwise_w, dw_opts);
  return conv2d(mid, pointwise_w, Conv2dOpts{});
}

Tensor pool2d(const Tensor& x, PoolKind kind, int k, int stride, int padding) {
  const Nchw n = as_nchw(x, "pool2d");
  if (k < 1 || stride < 1 || padding < 0) throw InputError("pool2d: bad window parameters");
  if (padding >= k) throw InputError("pool2d: padding must be < window size");
  const int64_t ho = conv_out_extent(n.h, k, stride, padding, 1);
  const int64_t wo = conv_out_extent(n.w, k, stride, padding, 1);
  const int64_t planes = n.b * n.c;

  Tensor out(spatial_shape(n, n.c, ho, wo));
  std::vector<int64_t> argmax;
  if (kind == PoolKind::kMax) argmax.assign(static_cast<size_t>(planes * ho * wo), -1);

  for (int64_t p = 0; p < planes; ++p) {
    const double* in_plane = x.data() + p * n.h * n.w;
    double* out_plane = out.data() + p * ho * wo;
    for (int64_t y = 0; y < ho; ++y) {
      for (int64_t xo = 0; xo < wo; ++xo) {
        double best = 0.0;
        int64_t best_idx = -1;
        double sum = 0.0;
        int64_t count = 0;
        for (int64_t i = 0; i < k; ++i) {
          const int64_t iy = y * stride - padding + i;
          if (iy < 0 || iy >= n.h) continue;
          for (int64_t j = 0; j < k; ++j) {
            const int64_t ix = xo * stride - padding + j;
            if (ix < 0 || ix >= n.w) continue;
            const double v = in_plane[iy * n.w + ix];
            if (best_idx < 0 || v > best) {
              best = v;
              best_idx = iy * n.w + ix;
            }
            sum += v;
            ++count;
          }
        }
        if (count == 0) throw DimensionError("pool2d: empty window");
        if (kind == PoolKind::kMax) {
          out_plane[y * wo + xo] = best;
          argmax[static_cast<size_t>(p * ho * wo + y * wo + xo)] = best_idx;
        } else {
          out_plane[y * wo + xo] = sum / static_cast<double>(count);
        }
      }
    }
  }

  if (taped({&x})) {
    out.set_requires_grad(true);
    if (kind == PoolKind::kMax) {
      Tape::current()->record([x, out, argmax = std::move(argmax), planes, ho, wo, n]() mutable {
        const auto& g = out.grad();
        auto& gx = x.grad();
        for (int64_t p = 0; p < planes; ++p) {
          for (int64_t i = 0; i < ho * wo; ++i) {
            gx[p * n.h * n.w + argmax[static_cast<size_t>(p * ho * wo + i)]] += g[p * ho * wo + i];
          }
        }
      });
    } else {
      Tape::current()->record([x, out, planes, ho, wo, n, k, stride, padding]() mutable {
        const auto& g = out.grad();
        auto& gx = x.grad();
        for (int64_t p = 0; p < planes; ++p) {
          for (int64_t y = 0; y < ho; ++y) {
            for (int64_t xo = 0; xo < wo; ++xo) {
              // Recompute the window membership; cheaper than storing it.
              int64_t count = 0;
              for (int64_t i = 0; i < k; ++i) {
                const int64_t iy = y * stride - padding + i;
                if (iy < 0 || iy >= n.h) continue;
                for (int64_t j = 0; j < k; ++j) {
                  const int64_t ix = xo * stride - padding + j;
                  if (ix >= 0 && ix < n.w) ++count;
                }
              }
              const double share = g[p * ho * wo + y * wo + xo] / static_cast<double>(count);
              for (int64_t i = 0; i < k; ++i) {
                const int64_t iy = y * stride - padding + i;
                if (iy < 0 || iy >= n.h) continue;
                for (int64_t j = 0; j < k; ++j) {
                  const int64_t ix = xo * stride - padding + j;
                  if (ix >= 0 && ix < n.w) gx[p * n.h * n.w + iy * n.w + ix] += share;
                }
              }
            }
          }
        }
      });
    }
  }
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) {
    throw DimensionError("global_avg_pool: expected [B,C,H,W], got " + shape_str(x.shape()));
  }
  const int64_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out(Shape{b, c});
  for (int64_t p = 0; p < b * c; ++p) {
    double acc = 0.0;
    const double* src = x.data() + p * hw;
    for (int64_t i = 0; i < hw; ++i) acc += src[i];
    out.data()[p] = acc / static_cast<double>(hw);
  }
  if (taped({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record([x, out, b, c, hw]() mutable {
      const auto& g = out.grad();
      auto& gx = x.grad();
      for (int64_t p = 0; p < b * c; ++p) {
        const double share = g[p] / static_cast<double>(hw);
        double* dst = gx.data() + p * hw;
        for (int64_t i = 0; i < hw; ++i) dst[i] += share;
      }
    });
  }
  return out;
}

Tensor upsample_nearest(const Tensor& x, int factor) {
  if (factor < 1) throw InputError("upsample_nearest: factor must be >= 1");
  const Nchw n = as_nchw(x, "upsample_nearest");
  const int64_t ho = n.h * factor, wo = n.w * factor;
  Tensor out(spatial_shape(n, n.c, ho, wo));
  const int64_t planes = n.b * n.c;
  for (int64_t p = 0; p < planes; ++p) {
    const double* src = x.data() + p * n.h * n.w;
    double* dst = out.data() + p * ho * wo;
    for (int64_t y = 0; y < ho; ++y) {
      const double* srow = src + (y / factor) * n.w;
      double* drow = dst + y * wo;
      for (int64_t xo = 0; xo < wo; ++xo) drow[xo] = srow[xo / factor];
    }
  }
  if (taped({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record([x, out, n, factor, ho, wo, planes]() mutable {
      const auto& g = out.grad();
      auto& gx = x.grad();
      for (int64_t p = 0; p < planes; ++p) {
        const double* grow = g.data() + p * ho * wo;
        double* dst = gx.data() + p * n.h * n.w;
        for (int64_t y = 0; y < ho; ++y) {
          for (int64_t xo = 0; xo < wo; ++xo) {
            dst[(y / factor) * n.w + xo / factor] += grow[y * wo + xo];
          }
        }
      }
    });
  }
  return out;
}

Tensor downsample_avg(const Tensor& x, int factor) {
  if (factor < 1) throw InputError("downsample_avg: factor must be >= 1");
  if (factor == 1) return x;
  return pool2d(x, PoolKind::kAvg, factor, factor, 0);
}

Tensor channel_affine(const Tensor& x, const Tensor& scale_c, const Tensor& bias_c) {
  const Nchw n = as_nchw(x, "channel_affine");
  if (scale_c.numel() != n.c || bias_c.numel() != n.c) {
    throw DimensionError("channel_affine: scale/bias " + shape_str(scale_c.shape()) + "/" +
                         shape_str(bias_c.shape()) + " do not match channels of " +
                         shape_str(x.shape()));
  }
  const int64_t hw = n.h * n.w;
  Tensor out(x.shape());
  for (int64_t b = 0; b < n.b; ++b) {
    for (int64_t c = 0; c < n.c; ++c) {
      const double s = scale_c.data()[c], a = bias_c.data()[c];
      const double* src = x.data() + (b * n.c + c) * hw;
      double* dst = out.data() + (b * n.c + c) * hw;
      for (int64_t i = 0; i < hw; ++i) dst[i] = src[i] * s + a;
    }
  }
  if (taped({&x, &scale_c, &bias_c})) {
    out.set_requires_grad(true);
    Tape::current()->record([x, scale_c, bias_c, out, n, hw]() mutable {
      const auto& g = out.grad();
      for (int64_t b = 0; b < n.b; ++b) {
        for (int64_t c = 0; c < n.c; ++c) {
          const double* grow = g.data() + (b * n.c + c) * hw;
          if (x.requires_grad()) {
            const double s = scale_c.data()[c];
            double* dst = x.grad().data() + (b * n.c + c) * hw;
            for (int64_t i = 0; i < hw; ++i) dst[i] += grow[i] * s;
          }
          if (scale_c.requires_grad()) {
            const double* src = x.data() + (b * n.c + c) * hw;
            double acc = 0.0;
            for (int64_t i = 0; i < hw; ++i) acc += grow[i] * src[i];
            scale_c.grad()[c] += acc;
          }
          if (bias_c.requires_grad()) {
            double acc = 0.0;
            for (int64_t i = 0; i < hw; ++i) acc += grow[i];
            bias_c.grad()[c] += acc;
          }
        }
      }
    });
  }
  return out;
}

Tensor rms_scale(const Tensor& x, double target) {
  const int64_t n = x.numel();
  double q = 0.0;
  for (int64_t i = 0; i < n; ++i) q += x.data()[i] * x.data()[i];
  q /= static_cast<double>(n);
  const double r = std::sqrt(q + 1e-12);
  const double s = target / r;
  Tensor out(x.shape());
  for (int64_t i = 0; i < n; ++i) out.data()[i] = s * x.data()[i];
  if (taped({&x})) {
    out.set_requires_grad(true);
    Tape::current()->record([x, out, n, r, s]() mutable {
      const auto& g = out.grad();
      auto& gx = x.grad();
      double dot = 0.0;
      for (int64_t i = 0; i < n; ++i) dot += g[i] * x.data()[i];
      const double coef = s * dot / (static_cast<double>(n) * r * r);
      for (int64_t i = 0; i < n; ++i) gx[i] += s * g[i] - coef * x.data()[i];
    });
  }
  return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) {
    throw DimensionError("softmax_cross_entropy: logits must be [B,C], got " +
                         shape_str(logits.shape()));
  }
  const int64_t batch = logits.dim(0), classes = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != batch) {
    throw InputError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for batch " + std::to_string(batch));
  }
  for (int lab : labels) {
    if (lab < 0 || lab >= classes) {
      throw InputError("softmax_cross_entropy: label " + std::to_string(lab) +
                       " out of range [0," + std::to_string(classes) + ")");
    }
  }
  double total = 0.0;
  for (int64_t b = 0; b < batch; ++b) {
    const double* row = logits.data() + b * classes;
    double m = row[0];
    for (int64_t c = 1; c < classes; ++c) m = std::max(m, row[c]);
    double sum = 0.0;
    for (int64_t c = 0; c < classes; ++c) sum += std::exp(row[c] - m);
    total += m + std::log(sum) - row[labels[static_cast<size_t>(b)]];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(batch));
  if (taped({&logits})) {
    out.set_requires_grad(true);
    Tape::current()->record([logits, out, labels, batch, classes]() mutable {
      const double g = out.grad()[0] / static_cast<double>(batch);
      auto& gl = logits.grad();
      for (int64_t b = 0; b < batch; ++b) {
        const double* row = logits.data() + b * classes;
        double m = row[0];
        for (int64_t c = 1; c < classes; ++c) m = std::max(m, row[c]);
        double sum = 0.0;
        for (int64_t c = 0; c < classes; ++c) sum += std::exp(row[c] - m);
        for (int64_t c = 0; c < classes; ++c) {
          const double p = std::exp(row[c] - m) / sum;
          gl[b * classes + c] += g * (p - (labels[static_cast<size_t>(b)] == c ? 1.0 : 0.0));
        }
      }
    });
  }
  return out;
}

}  // namespace ghn

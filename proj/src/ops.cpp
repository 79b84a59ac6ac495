// SPDX-License-Identifier: Apache-2.0
#include "gim/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "gim/errors.hpp"
#include "gim/kernels.hpp"

namespace gim::ops {
namespace {

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) + " and " +
                   to_string(b));
}

[[noreturn]] void shape_fail(const char* op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) shape_fail(op, a.shape(), b.shape());
}

void require_rank(const char* op, const Tensor& x, std::size_t rank) {
  if (x.rank() != rank)
    shape_fail(op, "expected rank " + std::to_string(rank) + ", got shape " + to_string(x.shape()));
}

std::size_t product(const Shape& s, std::size_t begin, std::size_t end) {
  std::size_t n = 1;
  for (std::size_t i = begin; i < end; ++i) n *= s[i];
  return n;
}

Shape strides_of(const Shape& s) {
  Shape st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

}  // namespace

std::size_t conv_out_len(std::size_t length, std::size_t kernel, std::size_t stride,
                         std::size_t pad) {
  if (kernel == 0 || stride == 0 || length == 0)
    shape_fail("conv_out_len", "length, kernel and stride must be positive");
  if (length + 2 * pad < kernel)
    shape_fail("conv_out_len", "padded length " + std::to_string(length + 2 * pad) +
                                   " is shorter than kernel " + std::to_string(kernel));
  return (length + 2 * pad - kernel) / stride + 1;
}

Tensor grad_block(Graph& g, const Tensor& x) {
  Tensor out(x.shape(), std::vector<double>(x.values().begin(), x.values().end()));
  // The recorded rule contributes nothing: the blocked path has zero gradient.
  g.record("grad_block", {x}, out, [] {}, 0, /*blocks_gradient=*/true);
  return out;
}

Tensor add(Graph& g, const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  Tensor out(a.shape());
  double* o = out.mutable_data();
  for (std::size_t i = 0; i < a.numel(); ++i) o[i] = a[i] + b[i];
  TensorImpl *ai = a.impl(), *bi = b.impl(), *oi = out.impl();
  g.record("add", {a, b}, out, [ai, bi, oi] {
    for (TensorImpl* t : {ai, bi}) {
      if (!t->requires_grad) continue;
      auto& gt = t->ensure_grad();
      for (std::size_t i = 0; i < gt.size(); ++i) gt[i] += oi->grad[i];
    }
  });
  return out;
}

Tensor sub(Graph& g, const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  Tensor out(a.shape());
  double* o = out.mutable_data();
  for (std::size_t i = 0; i < a.numel(); ++i) o[i] = a[i] - b[i];
  TensorImpl *ai = a.impl(), *bi = b.impl(), *oi = out.impl();
  g.record("sub", {a, b}, out, [ai, bi, oi] {
    if (ai->requires_grad) {
      auto& ga = ai->ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += oi->grad[i];
    }
    if (bi->requires_grad) {
      auto& gb = bi->ensure_grad();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= oi->grad[i];
    }
  });
  return out;
}

Tensor mul(Graph& g, const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  Tensor out(a.shape());
  double* o = out.mutable_data();
  for (std::size_t i = 0; i < a.numel(); ++i) o[i] = a[i] * b[i];
  TensorImpl *ai = a.impl(), *bi = b.impl(), *oi = out.impl();
  g.record("mul", {a, b}, out, [ai, bi, oi] {
    if (ai->requires_grad) {
      auto& ga = ai->ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += oi->grad[i] * bi->data[i];
    }
    if (bi->requires_grad) {
      auto& gb = bi->ensure_grad();
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += oi->grad[i] * ai->data[i];
    }
  });
  return out;
}

Tensor scale(Graph& g, const Tensor& x, double alpha) {
  Tensor out(x.shape());
  double* o = out.mutable_data();
  for (std::size_t i = 0; i < x.numel(); ++i) o[i] = alpha * x[i];
  TensorImpl *xi = x.impl(), *oi = out.impl();
  g.record("scale", {x}, out, [xi, oi, alpha] {
    auto& gx = xi->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += alpha * oi->grad[i];
  });
  return out;
}

Tensor one_minus(Graph& g, const Tensor& x) {
  Tensor out(x.shape());
  double* o = out.mutable_data();
  for (std::size_t i = 0; i < x.numel(); ++i) o[i] = 1.0 - x[i];
  TensorImpl *xi = x.impl(), *oi = out.impl();
  g.record("one_minus", {x}, out, [xi, oi] {
    auto& gx = xi->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] -= oi->grad[i];
  });
  return out;
}

Tensor add_bias(Graph& g, const Tensor& x, const Tensor& bias) {
  if (bias.rank() != 1 || x.rank() == 0 || x.shape().back() != bias.dim(0))
    shape_fail("add_bias", x.shape(), bias.shape());
  const std::size_t c = bias.dim(0);
  const std::size_t rows = x.numel() / c;
  Tensor out(x.shape());
  double* o = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) o[r * c + j] = x[r * c + j] + bias[j];
  TensorImpl *xi = x.impl(), *bi = bias.impl(), *oi = out.impl();
  g.record("add_bias", {x, bias}, out, [xi, bi, oi, rows, c] {
    if (xi->requires_grad) {
      auto& gx = xi->ensure_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += oi->grad[i];
    }
    if (bi->requires_grad) {
      auto& gb = bi->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < c; ++j) gb[j] += oi->grad[r * c + j];
    }
  });
  return out;
}

Tensor sum(Graph& g, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  Tensor out = Tensor::scalar(acc);
  TensorImpl *xi = x.impl(), *oi = out.impl();
  g.record("sum", {x}, out, [xi, oi] {
    auto& gx = xi->ensure_grad();
    const double go = oi->grad[0];
    for (double& v : gx) v += go;
  });
  return out;
}

Tensor mean(Graph& g, const Tensor& x) {
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  const double inv = 1.0 / static_cast<double>(x.numel());
  Tensor out = Tensor::scalar(acc * inv);
  TensorImpl *xi = x.impl(), *oi = out.impl();
  g.record("mean", {x}, out, [xi, oi, inv] {
    auto& gx = xi->ensure_grad();
    const double go = oi->grad[0] * inv;
    for (double& v : gx) v += go;
  });
  return out;
}

Tensor matmul(Graph& g, const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) shape_fail("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out(Shape{m, n});
  kernels::gemm_nn(m, n, k, a.data(), b.data(), out.mutable_data());
  TensorImpl *ai = a.impl(), *bi = b.impl(), *oi = out.impl();
  g.record("matmul", {a, b}, out, [ai, bi, oi, m, n, k] {
    if (ai->requires_grad)
      kernels::gemm_nt(m, k, n, oi->grad.data(), bi->data.data(), ai->ensure_grad().data());
    if (bi->requires_grad)
      kernels::gemm_tn(k, n, m, ai->data.data(), oi->grad.data(), bi->ensure_grad().data());
  });
  return out;
}

Tensor transpose(Graph& g, const Tensor& x) {
  require_rank("transpose", x, 2);
  const std::array<std::size_t, 2> perm{1, 0};
  return permute(g, x, perm);
}

Tensor relu(Graph& g, const Tensor& x) {
  Tensor out(x.shape());
  kernels::active().relu(x.data(), out.mutable_data(), x.numel());
  TensorImpl *xi = x.impl(), *oi = out.impl();
  g.record("relu", {x}, out, [xi, oi] {
    kernels::active().relu_backward(xi->data.data(), oi->grad.data(), xi->ensure_grad().data(),
                                    xi->data.size());
  });
  return out;
}

Tensor sigmoid(Graph& g, const Tensor& x) {
  Tensor out(x.shape());
  double* o = out.mutable_data();
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double v = x[i];
    // Branch keeps exp() argument non-positive.
    if (v >= 0.0) {
      o[i] = 1.0 / (1.0 + std::exp(-v));
    } else {
      const double e = std::exp(v);
      o[i] = e / (1.0 + e);
    }
  }
  TensorImpl *xi = x.impl(), *oi = out.impl();
  g.record("sigmoid", {x}, out, [xi, oi] {
    auto& gx = xi->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double s = oi->data[i];
      gx[i] += oi->grad[i] * s * (1.0 - s);
    }
  });
  return out;
}

Tensor tanh(Graph& g, const Tensor& x) {
  Tensor out(x.shape());
  double* o = out.mutable_data();
  for (std::size_t i = 0; i < x.numel(); ++i) o[i] = std::tanh(x[i]);
  TensorImpl *xi = x.impl(), *oi = out.impl();
  g.record("tanh", {x}, out, [xi, oi] {
    auto& gx = xi->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) {
      const double t = oi->data[i];
      gx[i] += oi->grad[i] * (1.0 - t * t);
    }
  });
  return out;
}

namespace {

// Shared im2col machinery for 1D and 2D convolution. A 1D conv is the 2D case
// with H = 1, Kh = 1, no vertical padding.
struct ConvGeometry {
  std::size_t batch, cin, h, w, cout, kh, kw, sh, sw, ph, pw, oh, ow;
  std::size_t rows() const { return batch * oh * ow; }
  std::size_t cols() const { return cin * kh * kw; }
};

std::vector<double> im2col(const ConvGeometry& c, const double* x) {
  std::vector<double> cols(c.rows() * c.cols(), 0.0);
  for (std::size_t b = 0; b < c.batch; ++b)
    for (std::size_t oy = 0; oy < c.oh; ++oy)
      for (std::size_t ox = 0; ox < c.ow; ++ox) {
        double* row = cols.data() + ((b * c.oh + oy) * c.ow + ox) * c.cols();
        for (std::size_t ci = 0; ci < c.cin; ++ci)
          for (std::size_t ky = 0; ky < c.kh; ++ky) {
            const long iy = static_cast<long>(oy * c.sh + ky) - static_cast<long>(c.ph);
            if (iy < 0 || iy >= static_cast<long>(c.h)) continue;
            const double* src = x + ((b * c.cin + ci) * c.h + static_cast<std::size_t>(iy)) * c.w;
            double* dst = row + (ci * c.kh + ky) * c.kw;
            for (std::size_t kx = 0; kx < c.kw; ++kx) {
              const long ix = static_cast<long>(ox * c.sw + kx) - static_cast<long>(c.pw);
              if (ix >= 0 && ix < static_cast<long>(c.w)) dst[kx] = src[ix];
            }
          }
      }
  return cols;
}

void col2im_add(const ConvGeometry& c, const double* cols, double* gx) {
  for (std::size_t b = 0; b < c.batch; ++b)
    for (std::size_t oy = 0; oy < c.oh; ++oy)
      for (std::size_t ox = 0; ox < c.ow; ++ox) {
        const double* row = cols + ((b * c.oh + oy) * c.ow + ox) * c.cols();
        for (std::size_t ci = 0; ci < c.cin; ++ci)
          for (std::size_t ky = 0; ky < c.kh; ++ky) {
            const long iy = static_cast<long>(oy * c.sh + ky) - static_cast<long>(c.ph);
            if (iy < 0 || iy >= static_cast<long>(c.h)) continue;
            double* dst = gx + ((b * c.cin + ci) * c.h + static_cast<std::size_t>(iy)) * c.w;
            const double* src = row + (ci * c.kh + ky) * c.kw;
            for (std::size_t kx = 0; kx < c.kw; ++kx) {
              const long ix = static_cast<long>(ox * c.sw + kx) - static_cast<long>(c.pw);
              if (ix >= 0 && ix < static_cast<long>(c.w)) dst[ix] += src[kx];
            }
          }
      }
}

Tensor conv_impl(Graph& g, const char* op, const ConvGeometry& geo, const Tensor& x,
                 const Tensor& w, const Tensor& b, Shape out_shape) {
  auto cols = std::make_shared<std::vector<double>>(im2col(geo, x.data()));
  const std::size_t rows = geo.rows(), ck = geo.cols(), cout = geo.cout;
  const std::size_t spatial = geo.oh * geo.ow;
  std::vector<double> y(rows * cout, 0.0);
  kernels::gemm_nt(rows, cout, ck, cols->data(), w.data(), y.data());

  Tensor out(std::move(out_shape));
  double* o = out.mutable_data();
  for (std::size_t bb = 0; bb < geo.batch; ++bb)
    for (std::size_t co = 0; co < cout; ++co) {
      const double bias = b.defined() ? b[co] : 0.0;
      for (std::size_t s = 0; s < spatial; ++s)
        o[(bb * cout + co) * spatial + s] = y[(bb * spatial + s) * cout + co] + bias;
    }

  TensorImpl *xi = x.impl(), *wi = w.impl(), *bi = b.defined() ? b.impl() : nullptr,
             *oi = out.impl();
  const std::size_t saved = xi->requires_grad || wi->requires_grad ? cols->size() * sizeof(double) : 0;
  g.record(op, {x, w, b}, out, [geo, cols, xi, wi, bi, oi, rows, ck, cout, spatial] {
    std::vector<double> gy(rows * cout);
    for (std::size_t bb = 0; bb < geo.batch; ++bb)
      for (std::size_t co = 0; co < cout; ++co)
        for (std::size_t s = 0; s < spatial; ++s)
          gy[(bb * spatial + s) * cout + co] = oi->grad[(bb * cout + co) * spatial + s];
    if (wi->requires_grad)
      kernels::gemm_tn(cout, ck, rows, gy.data(), cols->data(), wi->ensure_grad().data());
    if (bi && bi->requires_grad) {
      auto& gb = bi->ensure_grad();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t co = 0; co < cout; ++co) gb[co] += gy[r * cout + co];
    }
    if (xi->requires_grad) {
      std::vector<double> gcols(rows * ck, 0.0);
      kernels::gemm_nn(rows, ck, cout, gy.data(), wi->data.data(), gcols.data());
      col2im_add(geo, gcols.data(), xi->ensure_grad().data());
    }
  }, saved);
  return out;
}

}  // namespace

Tensor conv1d(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t pad) {
  if (x.rank() != 3 || w.rank() != 3 || x.dim(1) != w.dim(1)) shape_fail("conv1d", x.shape(), w.shape());
  if (b.defined() && (b.rank() != 1 || b.dim(0) != w.dim(0))) shape_fail("conv1d", w.shape(), b.shape());
  if (stride == 0) shape_fail("conv1d", "stride must be at least 1");
  ConvGeometry geo{x.dim(0), x.dim(1), 1, x.dim(2), w.dim(0), 1, w.dim(2), 1, stride, 0, pad, 1, 0};
  geo.ow = conv_out_len(geo.w, geo.kw, stride, pad);
  return conv_impl(g, "conv1d", geo, x, w, b, Shape{geo.batch, geo.cout, geo.ow});
}

Tensor conv2d(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b,
              std::array<std::size_t, 2> stride, std::array<std::size_t, 2> pad) {
  if (x.rank() != 4 || w.rank() != 4 || x.dim(1) != w.dim(1)) shape_fail("conv2d", x.shape(), w.shape());
  if (b.defined() && (b.rank() != 1 || b.dim(0) != w.dim(0))) shape_fail("conv2d", w.shape(), b.shape());
  if (stride[0] == 0 || stride[1] == 0) shape_fail("conv2d", "stride must be at least 1");
  ConvGeometry geo{x.dim(0), x.dim(1), x.dim(2), x.dim(3), w.dim(0), w.dim(2), w.dim(3),
                   stride[0], stride[1], pad[0], pad[1], 0, 0};
  geo.oh = conv_out_len(geo.h, geo.kh, geo.sh, geo.ph);
  geo.ow = conv_out_len(geo.w, geo.kw, geo.sw, geo.pw);
  return conv_impl(g, "conv2d", geo, x, w, b, Shape{geo.batch, geo.cout, geo.oh, geo.ow});
}

Tensor avg_pool(Graph& g, const Tensor& x, std::span<const std::size_t> window) {
  const std::size_t nw = window.size();
  if (nw == 0 || nw > 2 || x.rank() < nw + 1) shape_fail("avg_pool", "needs 1 or 2 pooled axes below rank");
  const std::size_t lead = x.rank() - nw;
  const std::size_t outer = product(x.shape(), 0, lead);
  const std::size_t h = nw == 2 ? x.dim(lead) : 1, w = x.dim(x.rank() - 1);
  const std::size_t wh = nw == 2 ? window[0] : 1, ww = window[nw - 1];
  if (wh == 0 || ww == 0 || h % wh != 0 || w % ww != 0)
    shape_fail("avg_pool", "window does not tile input " + to_string(x.shape()));
  const std::size_t oh = h / wh, ow = w / ww;
  Shape out_shape(x.shape().begin(), x.shape().begin() + static_cast<long>(lead));
  if (nw == 2) out_shape.push_back(oh);
  out_shape.push_back(ow);
  Tensor out(out_shape);
  const double inv = 1.0 / static_cast<double>(wh * ww);
  double* o = out.mutable_data();
  for (std::size_t q = 0; q < outer; ++q)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx)
        o[(q * oh + y / wh) * ow + xx / ww] += x[(q * h + y) * w + xx] * inv;
  TensorImpl *xi = x.impl(), *oi = out.impl();
  g.record("avg_pool", {x}, out, [xi, oi, outer, h, w, wh, ww, oh, ow, inv] {
    auto& gx = xi->ensure_grad();
    for (std::size_t q = 0; q < outer; ++q)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t xx = 0; xx < w; ++xx)
          gx[(q * h + y) * w + xx] += oi->grad[(q * oh + y / wh) * ow + xx / ww] * inv;
  });
  return out;
}

Tensor mean_pool(Graph& g, const Tensor& x, std::span<const std::size_t> axes) {
  std::vector<bool> pooled(x.rank(), false);
  for (std::size_t a : axes) {
    if (a >= x.rank() || pooled[a]) shape_fail("mean_pool", "bad axis list for shape " + to_string(x.shape()));
    pooled[a] = true;
  }
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (!pooled[i]) out_shape.push_back(x.dim(i));
  // Map every input offset to its output offset once.
  const Shape in_strides = strides_of(x.shape());
  const Shape out_strides = strides_of(out_shape);
  std::vector<std::size_t> target(x.numel());
  std::size_t count = 1;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (pooled[i]) count *= x.dim(i);
  for (std::size_t off = 0; off < x.numel(); ++off) {
    std::size_t rem = off, o = 0, oa = 0;
    for (std::size_t i = 0; i < x.rank(); ++i) {
      const std::size_t idx = rem / in_strides[i];
      rem %= in_strides[i];
      if (!pooled[i]) o += idx * out_strides[oa++];
    }
    target[off] = o;
  }
  Tensor out(out_shape);
  const double inv = 1.0 / static_cast<double>(count);
  double* o = out.mutable_data();
  for (std::size_t off = 0; off < x.numel(); ++off) o[target[off]] += x[off];
  for (std::size_t i = 0; i < out.numel(); ++i) o[i] *= inv;
  TensorImpl *xi = x.impl(), *oi = out.impl();
  g.record("mean_pool", {x}, out, [xi, oi, target = std::move(target), inv] {
    auto& gx = xi->ensure_grad();
    for (std::size_t off = 0; off < gx.size(); ++off) gx[off] += oi->grad[target[off]] * inv;
  });
  return out;
}

Tensor log_softmax(Graph& g, const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) shape_fail("log_softmax", "axis out of range for " + to_string(x.shape()));
  const std::size_t outer = product(x.shape(), 0, axis), n = x.dim(axis),
                    inner = product(x.shape(), axis + 1, x.rank());
  Tensor out(x.shape());
  double* o = out.mutable_data();
  for (std::size_t a = 0; a < outer; ++a)
    for (std::size_t c = 0; c < inner; ++c) {
      const std::size_t base = a * n * inner + c;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, x[base + j * inner]);
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += std::exp(x[base + j * inner] - mx);
      const double lse = mx + std::log(s);
      for (std::size_t j = 0; j < n; ++j) o[base + j * inner] = x[base + j * inner] - lse;
    }
  TensorImpl *xi = x.impl(), *oi = out.impl();
  g.record("log_softmax", {x}, out, [xi, oi, outer, n, inner] {
    auto& gx = xi->ensure_grad();
    for (std::size_t a = 0; a < outer; ++a)
      for (std::size_t c = 0; c < inner; ++c) {
        const std::size_t base = a * n * inner + c;
        double gs = 0.0;
        for (std::size_t j = 0; j < n; ++j) gs += oi->grad[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t i = base + j * inner;
          gx[i] += oi->grad[i] - std::exp(oi->data[i]) * gs;
        }
      }
  });
  return out;
}

Tensor gather_cross_entropy(Graph& g, const Tensor& logp, std::span<const std::size_t> index) {
  if (logp.rank() != 1 && logp.rank() != 2) shape_fail("gather_cross_entropy", "logp must be rank 1 or 2");
  const std::size_t rows = logp.rank() == 2 ? logp.dim(0) : 1;
  const std::size_t classes = logp.shape().back();
  if (index.size() != rows)
    shape_fail("gather_cross_entropy", logp.shape(), Shape{index.size()});
  double acc = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (index[r] >= classes) shape_fail("gather_cross_entropy", "index out of range");
    acc -= logp[r * classes + index[r]];
  }
  const double inv = 1.0 / static_cast<double>(rows);
  Tensor out = Tensor::scalar(acc * inv);
  TensorImpl *li = logp.impl(), *oi = out.impl();
  std::vector<std::size_t> idx(index.begin(), index.end());
  g.record("gather_cross_entropy", {logp}, out, [li, oi, idx = std::move(idx), classes, inv] {
    auto& gl = li->ensure_grad();
    const double go = oi->grad[0] * inv;
    for (std::size_t r = 0; r < idx.size(); ++r) gl[r * classes + idx[r]] -= go;
  });
  return out;
}

Tensor gather_rows(Graph& g, const Tensor& x, std::span<const std::size_t> index) {
  require_rank("gather_rows", x, 2);
  const std::size_t rows = x.dim(0), d = x.dim(1);
  Tensor out(Shape{index.size(), d});
  double* o = out.mutable_data();
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= rows) shape_fail("gather_rows", "row index out of range for " + to_string(x.shape()));
    std::copy_n(x.data() + index[i] * d, d, o + i * d);
  }
  TensorImpl *xi = x.impl(), *oi = out.impl();
  std::vector<std::size_t> idx(index.begin(), index.end());
  g.record("gather_rows", {x}, out, [xi, oi, idx = std::move(idx), d] {
    auto& gx = xi->ensure_grad();
    const auto& k = kernels::active();
    for (std::size_t i = 0; i < idx.size(); ++i) k.axpy(1.0, oi->grad.data() + i * d, gx.data() + idx[i] * d, d);
  }, idx.size() * sizeof(std::size_t));
  return out;
}

Tensor gather_dot(Graph& g, const Tensor& pred, std::span<const std::size_t> anchor_rows, const Tensor& pool,
                  std::span<const std::size_t> bag, std::size_t bag_size) {
  if (pred.rank() != 2 || pool.rank() != 2 || pred.dim(1) != pool.dim(1))
    shape_fail("gather_dot", pred.shape(), pool.shape());
  const std::size_t anchors = anchor_rows.size(), d = pred.dim(1), pool_rows = pool.dim(0);
  if (bag_size == 0 || bag.size() != anchors * bag_size)
    shape_fail("gather_dot", "bag index count must equal anchors * bag_size");
  for (std::size_t r : anchor_rows)
    if (r >= pred.dim(0)) shape_fail("gather_dot", "anchor row out of range");
  for (std::size_t r : bag)
    if (r >= pool_rows) shape_fail("gather_dot", "bag index out of range");
  const auto& k = kernels::active();
  Tensor out(Shape{anchors, bag_size});
  double* o = out.mutable_data();
  for (std::size_t a = 0; a < anchors; ++a) {
    const double* pa = pred.data() + anchor_rows[a] * d;
    for (std::size_t j = 0; j < bag_size; ++j)
      o[a * bag_size + j] = k.dot(pa, pool.data() + bag[a * bag_size + j] * d, d);
  }
  TensorImpl *pi = pred.impl(), *qi = pool.impl(), *oi = out.impl();
  std::vector<std::size_t> rows(anchor_rows.begin(), anchor_rows.end());
  std::vector<std::size_t> idx(bag.begin(), bag.end());
  const std::size_t saved = (rows.size() + idx.size()) * sizeof(std::size_t);
  g.record("gather_dot", {pred, pool}, out,
           [pi, qi, oi, rows = std::move(rows), idx = std::move(idx), anchors, bag_size, d] {
    const auto& kt = kernels::active();
    double* gp = pi->requires_grad ? pi->ensure_grad().data() : nullptr;
    double* gq = qi->requires_grad ? qi->ensure_grad().data() : nullptr;
    for (std::size_t a = 0; a < anchors; ++a) {
      const std::size_t ra = rows[a];
      for (std::size_t j = 0; j < bag_size; ++j) {
        const double go = oi->grad[a * bag_size + j];
        const std::size_t r = idx[a * bag_size + j];
        if (gp) kt.axpy(go, qi->data.data() + r * d, gp + ra * d, d);
        if (gq) kt.axpy(go, pi->data.data() + ra * d, gq + r * d, d);
      }
    }
  }, saved);
  return out;
}

Tensor gather_dot(Graph& g, const Tensor& pred, const Tensor& pool,
                  std::span<const std::size_t> bag, std::size_t bag_size) {
  if (pred.rank() != 2) shape_fail("gather_dot", pred.shape(), pool.shape());
  std::vector<std::size_t> rows(pred.dim(0));
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return gather_dot(g, pred, rows, pool, bag, bag_size);
}

Tensor permute(Graph& g, const Tensor& x, std::span<const std::size_t> perm) {
  if (perm.size() != x.rank()) shape_fail("permute", "permutation length does not match rank");
  std::vector<bool> seen(perm.size(), false);
  Shape out_shape(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    if (perm[i] >= perm.size() || seen[perm[i]]) shape_fail("permute", "not a permutation");
    seen[perm[i]] = true;
    out_shape[i] = x.dim(perm[i]);
  }
  const Shape in_strides = strides_of(x.shape());
  const Shape out_strides = strides_of(out_shape);
  // source[o] = input offset feeding output offset o
  std::vector<std::size_t> source(x.numel());
  for (std::size_t off = 0; off < x.numel(); ++off) {
    std::size_t rem = off, src = 0;
    for (std::size_t i = 0; i < perm.size(); ++i) {
      const std::size_t idx = rem / out_strides[i];
      rem %= out_strides[i];
      src += idx * in_strides[perm[i]];
    }
    source[off] = src;
  }
  Tensor out(out_shape);
  double* o = out.mutable_data();
  for (std::size_t off = 0; off < x.numel(); ++off) o[off] = x[source[off]];
  TensorImpl *xi = x.impl(), *oi = out.impl();
  g.record("permute", {x}, out, [xi, oi, source = std::move(source)] {
    auto& gx = xi->ensure_grad();
    for (std::size_t off = 0; off < source.size(); ++off) gx[source[off]] += oi->grad[off];
  });
  return out;
}

Tensor reshape(Graph& g, const Tensor& x, Shape shape) {
  if (gim::numel(shape) != x.numel()) shape_fail("reshape", x.shape(), shape);
  Tensor out(std::move(shape), std::vector<double>(x.values().begin(), x.values().end()));
  TensorImpl *xi = x.impl(), *oi = out.impl();
  g.record("reshape", {x}, out, [xi, oi] {
    auto& gx = xi->ensure_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += oi->grad[i];
  });
  return out;
}

Tensor slice(Graph& g, const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank() || length == 0 || start + length > x.dim(axis))
    shape_fail("slice", "range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                            ") on axis " + std::to_string(axis) + " of " + to_string(x.shape()));
  const std::size_t outer = product(x.shape(), 0, axis), n = x.dim(axis),
                    inner = product(x.shape(), axis + 1, x.rank());
  Shape out_shape = x.shape();
  out_shape[axis] = length;
  Tensor out(out_shape);
  double* o = out.mutable_data();
  for (std::size_t a = 0; a < outer; ++a)
    std::copy_n(x.data() + (a * n + start) * inner, length * inner, o + a * length * inner);
  TensorImpl *xi = x.impl(), *oi = out.impl();
  g.record("slice", {x}, out, [xi, oi, outer, n, inner, start, length] {
    auto& gx = xi->ensure_grad();
    for (std::size_t a = 0; a < outer; ++a)
      for (std::size_t i = 0; i < length * inner; ++i)
        gx[(a * n + start) * inner + i] += oi->grad[a * length * inner + i];
  });
  return out;
}

Tensor stack(Graph& g, const std::vector<Tensor>& xs, std::size_t axis) {
  if (xs.empty()) shape_fail("stack", "no inputs");
  const Shape& s0 = xs.front().shape();
  if (axis > s0.size()) shape_fail("stack", "axis out of range");
  for (const Tensor& t : xs)
    if (t.shape() != s0) shape_fail("stack", s0, t.shape());
  const std::size_t outer = product(s0, 0, axis), inner = product(s0, axis, s0.size()),
                    n = xs.size();
  Shape out_shape = s0;
  out_shape.insert(out_shape.begin() + static_cast<long>(axis), n);
  Tensor out(out_shape);
  double* o = out.mutable_data();
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t a = 0; a < outer; ++a)
      std::copy_n(xs[j].data() + a * inner, inner, o + (a * n + j) * inner);
  std::vector<TensorImpl*> ins;
  for (const Tensor& t : xs) ins.push_back(t.impl());
  TensorImpl* oi = out.impl();
  g.record("stack", xs, out, [ins = std::move(ins), oi, outer, inner, n] {
    for (std::size_t j = 0; j < n; ++j) {
      if (!ins[j]->requires_grad) continue;
      auto& gx = ins[j]->ensure_grad();
      for (std::size_t a = 0; a < outer; ++a)
        for (std::size_t i = 0; i < inner; ++i) gx[a * inner + i] += oi->grad[(a * n + j) * inner + i];
    }
  });
  return out;
}

}  // namespace gim::ops

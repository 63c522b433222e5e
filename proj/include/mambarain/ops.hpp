#pragma once

// Differentiable tensor operations. Each op computes its forward value and,
// when a tape is active and an input requires gradients, records a closure
// that accumulates input gradients from the output gradient.

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>

#include "mambarain/tensor.hpp"

namespace mambarain {

enum class PadMode { zeros, circular };

namespace detail {

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

inline void require_rank(const Tensor& t, std::size_t r, const char* op) {
  if (t.rank() != r)
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(r) + ", got shape " +
                         shape_str(t.shape()));
}

// Elementwise unary op with derivative expressed through input x and output y.
template <class F, class DF>
Tensor unary(const Tensor& a, F f, DF df) {
  Tensor out(a.shape());
  auto x = a.data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  if (Tape* tape = recording_tape({&a})) {
    out.set_requires_grad();
    tape->record(out, [a, out, df]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto ga = a.grad();
      auto x = a.data();
      auto y = out.data();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(x[i], y[i]);
    });
  }
  return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  if (Tape* tape = detail::recording_tape({&a, &b})) {
    out.set_requires_grad();
    tape->record(out, [a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  if (Tape* tape = detail::recording_tape({&a, &b})) {
    out.set_requires_grad();
    tape->record(out, [a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  if (Tape* tape = detail::recording_tape({&a, &b})) {
    out.set_requires_grad();
    tape->record(out, [a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      }
    });
  }
  return out;
}

inline Tensor scale(const Tensor& a, double s) {
  return detail::unary(a, [s](double x) { return s * x; }, [s](double, double) { return s; });
}

inline Tensor exp(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus_scalar(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(a, sigmoid_scalar, [](double, double y) { return y * (1.0 - y); });
}

inline Tensor silu(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return x * sigmoid_scalar(x); },
      [](double x, double) {
        const double s = sigmoid_scalar(x);
        return s * (1.0 + x * (1.0 - s));
      });
}

inline Tensor softplus(const Tensor& a) {
  return detail::unary(a, softplus_scalar, [](double x, double) { return sigmoid_scalar(x); });
}

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out = Tensor::scalar(s);
  if (Tape* tape = detail::recording_tape({&a})) {
    out.set_requires_grad();
    tape->record(out, [a, out]() mutable {
      if (!out.has_grad()) return;
      const double g = out.grad()[0];
      for (double& v : a.grad()) v += g;
    });
  }
  return out;
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

inline Tensor square(const Tensor& a) {
  return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// Copy into a new shape with the same element count.
inline Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.size())
    throw DimensionError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
  Tensor out(std::move(shape));
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  if (Tape* tape = detail::recording_tape({&a})) {
    out.set_requires_grad();
    tape->record(out, [a, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
  }
  return out;
}

// x: rows x in, weight: in x out, bias: out. Returns rows x out.
inline Tensor linear(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias = std::nullopt) {
  detail::require_rank(x, 2, "linear");
  detail::require_rank(weight, 2, "linear");
  const std::size_t rows = x.dim(0), in = x.dim(1), outd = weight.dim(1);
  if (weight.dim(0) != in)
    throw DimensionError("linear: input width " + std::to_string(in) + " vs weight " + shape_str(weight.shape()));
  if (bias && (bias->rank() != 1 || bias->dim(0) != outd))
    throw DimensionError("linear: bias shape " + shape_str(bias->shape()));
  Tensor out({rows, outd});
  const double* xp = x.ptr();
  const double* wp = weight.ptr();
  double* op = out.ptr();
  for (std::size_t r = 0; r < rows; ++r) {
    double* orow = op + r * outd;
    if (bias) std::copy(bias->ptr(), bias->ptr() + outd, orow);
    for (std::size_t i = 0; i < in; ++i) {
      const double xv = xp[r * in + i];
      const double* wrow = wp + i * outd;
      for (std::size_t o = 0; o < outd; ++o) orow[o] += xv * wrow[o];
    }
  }
  const Tensor* bp = bias ? &*bias : nullptr;
  if (Tape* tape = detail::recording_tape({&x, &weight, bp})) {
    out.set_requires_grad();
    tape->record(out, [x, weight, bias, out, rows, in, outd]() mutable {
      if (!out.has_grad()) return;
      const double* g = out.grad().data();
      if (x.requires_grad()) {
        double* gx = x.grad().data();
        const double* wp = weight.ptr();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < in; ++i) {
            double s = 0.0;
            const double* wrow = wp + i * outd;
            const double* grow = g + r * outd;
            for (std::size_t o = 0; o < outd; ++o) s += grow[o] * wrow[o];
            gx[r * in + i] += s;
          }
      }
      if (weight.requires_grad()) {
        double* gw = weight.grad().data();
        const double* xp = x.ptr();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t i = 0; i < in; ++i) {
            const double xv = xp[r * in + i];
            double* gwrow = gw + i * outd;
            const double* grow = g + r * outd;
            for (std::size_t o = 0; o < outd; ++o) gwrow[o] += xv * grow[o];
          }
      }
      if (bias && bias->requires_grad()) {
        double* gb = bias->grad().data();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t o = 0; o < outd; ++o) gb[o] += g[r * outd + o];
      }
    });
  }
  return out;
}

namespace detail {

// Pads C x H x W into C x (H+2p) x (W+2p).
inline std::vector<double> pad_planes(const double* x, std::size_t c, std::size_t h, std::size_t w,
                                      std::size_t p, PadMode mode) {
  const std::size_t ph = h + 2 * p, pw = w + 2 * p;
  std::vector<double> out(c * ph * pw, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < ph; ++y) {
      const long sy = static_cast<long>(y) - static_cast<long>(p);
      long ry = sy;
      if (mode == PadMode::circular) ry = ((sy % long(h)) + long(h)) % long(h);
      else if (sy < 0 || sy >= long(h)) continue;
      for (std::size_t xx = 0; xx < pw; ++xx) {
        const long sx = static_cast<long>(xx) - static_cast<long>(p);
        long rx = sx;
        if (mode == PadMode::circular) rx = ((sx % long(w)) + long(w)) % long(w);
        else if (sx < 0 || sx >= long(w)) continue;
        out[(ch * ph + y) * pw + xx] = x[(ch * h + ry) * w + rx];
      }
    }
  return out;
}

// Adjoint of pad_planes: folds padded gradients back onto the source planes.
inline void unpad_accumulate(const std::vector<double>& gpad, double* gx, std::size_t c, std::size_t h,
                             std::size_t w, std::size_t p, PadMode mode) {
  const std::size_t ph = h + 2 * p, pw = w + 2 * p;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < ph; ++y) {
      const long sy = static_cast<long>(y) - static_cast<long>(p);
      long ry = sy;
      if (mode == PadMode::circular) ry = ((sy % long(h)) + long(h)) % long(h);
      else if (sy < 0 || sy >= long(h)) continue;
      for (std::size_t xx = 0; xx < pw; ++xx) {
        const long sx = static_cast<long>(xx) - static_cast<long>(p);
        long rx = sx;
        if (mode == PadMode::circular) rx = ((sx % long(w)) + long(w)) % long(w);
        else if (sx < 0 || sx >= long(w)) continue;
        gx[(ch * h + ry) * w + rx] += gpad[(ch * ph + y) * pw + xx];
      }
    }
}

}  // namespace detail

// x: Cin x H x W, weight: Cout x Cin x k x k, bias: Cout.
// Output extent: (H + 2*pad - k) / stride + 1.
inline Tensor conv2d(const Tensor& x, const Tensor& weight, const std::optional<Tensor>& bias, std::size_t stride,
                     std::size_t pad, PadMode mode = PadMode::zeros) {
  detail::require_rank(x, 3, "conv2d");
  detail::require_rank(weight, 4, "conv2d");
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin || weight.dim(3) != k)
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " vs weight " + shape_str(weight.shape()));
  if (bias && (bias->rank() != 1 || bias->dim(0) != cout))
    throw DimensionError("conv2d: bias shape " + shape_str(bias->shape()));
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  if (h + 2 * pad < k || w + 2 * pad < k) throw DimensionError("conv2d: kernel larger than padded input");
  if (mode == PadMode::circular && (pad > h || pad > w))
    throw DimensionError("conv2d: circular padding wider than input");
  const std::size_t ph = h + 2 * pad, pw = w + 2 * pad;
  const std::size_t ho = (ph - k) / stride + 1, wo = (pw - k) / stride + 1;

  auto padded = std::make_shared<std::vector<double>>(detail::pad_planes(x.ptr(), cin, h, w, pad, mode));
  Tensor out({cout, ho, wo});
  double* op = out.ptr();
  const double* wp = weight.ptr();
  const double* pp = padded->data();
  for (std::size_t co = 0; co < cout; ++co) {
    double* oplane = op + co * ho * wo;
    if (bias) std::fill(oplane, oplane + ho * wo, (*bias)[co]);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double* iplane = pp + ci * ph * pw;
      for (std::size_t ky = 0; ky < k; ++ky)
        for (std::size_t kx = 0; kx < k; ++kx) {
          const double wv = wp[((co * cin + ci) * k + ky) * k + kx];
          for (std::size_t y = 0; y < ho; ++y) {
            const double* irow = iplane + (y * stride + ky) * pw + kx;
            double* orow = oplane + y * wo;
            if (stride == 1)
              for (std::size_t xx = 0; xx < wo; ++xx) orow[xx] += wv * irow[xx];
            else
              for (std::size_t xx = 0; xx < wo; ++xx) orow[xx] += wv * irow[xx * stride];
          }
        }
    }
  }

  const Tensor* bp = bias ? &*bias : nullptr;
  if (Tape* tape = detail::recording_tape({&x, &weight, bp})) {
    out.set_requires_grad();
    tape->record(out, [=]() mutable {
      if (!out.has_grad()) return;
      const double* g = out.grad().data();
      const double* pp = padded->data();
      if (weight.requires_grad()) {
        double* gw = weight.grad().data();
        for (std::size_t co = 0; co < cout; ++co) {
          const double* gplane = g + co * ho * wo;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const double* iplane = pp + ci * ph * pw;
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                double s = 0.0;
                for (std::size_t y = 0; y < ho; ++y) {
                  const double* irow = iplane + (y * stride + ky) * pw + kx;
                  const double* grow = gplane + y * wo;
                  if (stride == 1)
                    for (std::size_t xx = 0; xx < wo; ++xx) s += grow[xx] * irow[xx];
                  else
                    for (std::size_t xx = 0; xx < wo; ++xx) s += grow[xx] * irow[xx * stride];
                }
                gw[((co * cin + ci) * k + ky) * k + kx] += s;
              }
          }
        }
      }
      if (bias && bias->requires_grad()) {
        double* gb = bias->grad().data();
        for (std::size_t co = 0; co < cout; ++co) {
          double s = 0.0;
          for (std::size_t i = 0; i < ho * wo; ++i) s += g[co * ho * wo + i];
          gb[co] += s;
        }
      }
      if (x.requires_grad()) {
        std::vector<double> gpad(cin * ph * pw, 0.0);
        const double* wp = weight.ptr();
        for (std::size_t co = 0; co < cout; ++co) {
          const double* gplane = g + co * ho * wo;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            double* gi = gpad.data() + ci * ph * pw;
            for (std::size_t ky = 0; ky < k; ++ky)
              for (std::size_t kx = 0; kx < k; ++kx) {
                const double wv = wp[((co * cin + ci) * k + ky) * k + kx];
                for (std::size_t y = 0; y < ho; ++y) {
                  double* irow = gi + (y * stride + ky) * pw + kx;
                  const double* grow = gplane + y * wo;
                  if (stride == 1)
                    for (std::size_t xx = 0; xx < wo; ++xx) irow[xx] += wv * grow[xx];
                  else
                    for (std::size_t xx = 0; xx < wo; ++xx) irow[xx * stride] += wv * grow[xx];
                }
              }
          }
        }
        detail::unpad_accumulate(gpad, x.grad().data(), cin, h, w, pad, mode);
      }
    });
  }
  return out;
}

// Nearest-neighbour x2 upsampling of C x H x W.
inline Tensor upsample_nearest2x(const Tensor& x) {
  detail::require_rank(x, 3, "upsample");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx)
        out[(ch * 2 * h + y) * 2 * w + xx] = x[(ch * h + y / 2) * w + xx / 2];
  if (Tape* tape = detail::recording_tape({&x})) {
    out.set_requires_grad();
    tape->record(out, [x, out, c, h, w]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < 2 * h; ++y)
          for (std::size_t xx = 0; xx < 2 * w; ++xx)
            gx[(ch * h + y / 2) * w + xx / 2] += g[(ch * 2 * h + y) * 2 * w + xx];
    });
  }
  return out;
}

// Channel concatenation of Ca x H x W and Cb x H x W.
inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 3, "concat");
  detail::require_rank(b, 3, "concat");
  if (a.dim(1) != b.dim(1) || a.dim(2) != b.dim(2))
    throw DimensionError("concat: spatial mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out({a.dim(0) + b.dim(0), a.dim(1), a.dim(2)});
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  std::copy(b.data().begin(), b.data().end(), out.data().begin() + a.size());
  if (Tape* tape = detail::recording_tape({&a, &b})) {
    out.set_requires_grad();
    tape->record(out, [a, b, out]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < b.size(); ++i) gb[i] += g[a.size() + i];
      }
    });
  }
  return out;
}

// Normalizes each row of rows x D, then applies gain and bias (length D).
inline Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  detail::require_rank(x, 2, "layernorm");
  const std::size_t rows = x.dim(0), d = x.dim(1);
  if (gain.size() != d || bias.size() != d) throw DimensionError("layernorm: parameter width mismatch");
  Tensor out({rows, d});
  auto xhat = std::make_shared<std::vector<double>>(rows * d);
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += x[r * d + j];
    mu /= double(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (x[r * d + j] - mu) * (x[r * d + j] - mu);
    var /= double(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double xh = (x[r * d + j] - mu) * is;
      (*xhat)[r * d + j] = xh;
      out[r * d + j] = xh * gain[j] + bias[j];
    }
  }
  if (Tape* tape = detail::recording_tape({&x, &gain, &bias})) {
    out.set_requires_grad();
    tape->record(out, [=]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      if (gain.requires_grad()) {
        auto gg = gain.grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * (*xhat)[r * d + j];
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
      }
      if (x.requires_grad()) {
        auto gx = x.grad();
        for (std::size_t r = 0; r < rows; ++r) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t j = 0; j < d; ++j) {
            const double gh = g[r * d + j] * gain[j];
            m1 += gh;
            m2 += gh * (*xhat)[r * d + j];
          }
          m1 /= double(d);
          m2 /= double(d);
          for (std::size_t j = 0; j < d; ++j) {
            const double gh = g[r * d + j] * gain[j];
            gx[r * d + j] += (*inv_std)[r] * (gh - m1 - (*xhat)[r * d + j] * m2);
          }
        }
      }
    });
  }
  return out;
}

// Softmax along the last axis.
inline Tensor softmax(const Tensor& x) {
  if (x.rank() == 0 || x.shape().back() == 0) throw DomainError("softmax over empty axis");
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.ptr() + r * d;
    double* yr = out.ptr() + r * d;
    const double mx = *std::max_element(xr, xr + d);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += (yr[j] = std::exp(xr[j] - mx));
    for (std::size_t j = 0; j < d; ++j) yr[j] /= s;
  }
  if (Tape* tape = detail::recording_tape({&x})) {
    out.set_requires_grad();
    tape->record(out, [x, out, rows, d]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += g[r * d + j] * out[r * d + j];
        for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += out[r * d + j] * (g[r * d + j] - dot);
      }
    });
  }
  return out;
}

// Feature map (T_tok*D) x h x w  ->  tokens (T_tok*h*w) x D, time-major then
// raster order. Channel t*D + j of the map becomes feature j of time slot t.
inline Tensor to_tokens(const Tensor& x, std::size_t time_tokens) {
  detail::require_rank(x, 3, "to_tokens");
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (time_tokens == 0 || c % time_tokens != 0)
    throw DimensionError("to_tokens: " + std::to_string(c) + " channels not divisible by " +
                         std::to_string(time_tokens) + " time slots");
  const std::size_t d = c / time_tokens, hw = h * w;
  Tensor out({time_tokens * hw, d});
  for (std::size_t t = 0; t < time_tokens; ++t)
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t j = 0; j < d; ++j) out[(t * hw + p) * d + j] = x[(t * d + j) * hw + p];
  if (Tape* tape = detail::recording_tape({&x})) {
    out.set_requires_grad();
    tape->record(out, [x, out, time_tokens, hw, d]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t t = 0; t < time_tokens; ++t)
        for (std::size_t p = 0; p < hw; ++p)
          for (std::size_t j = 0; j < d; ++j) gx[(t * d + j) * hw + p] += g[(t * hw + p) * d + j];
    });
  }
  return out;
}

// Inverse of to_tokens.
inline Tensor from_tokens(const Tensor& tokens, std::size_t time_tokens, std::size_t h, std::size_t w) {
  detail::require_rank(tokens, 2, "from_tokens");
  const std::size_t hw = h * w, d = tokens.dim(1);
  if (tokens.dim(0) != time_tokens * hw)
    throw DimensionError("from_tokens: " + std::to_string(tokens.dim(0)) + " tokens vs layout " +
                         std::to_string(time_tokens) + "x" + std::to_string(h) + "x" + std::to_string(w));
  Tensor out({time_tokens * d, h, w});
  for (std::size_t t = 0; t < time_tokens; ++t)
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t j = 0; j < d; ++j) out[(t * d + j) * hw + p] = tokens[(t * hw + p) * d + j];
  if (Tape* tape = detail::recording_tape({&tokens})) {
    out.set_requires_grad();
    tape->record(out, [tokens, out, time_tokens, hw, d]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gt = tokens.grad();
      for (std::size_t t = 0; t < time_tokens; ++t)
        for (std::size_t p = 0; p < hw; ++p)
          for (std::size_t j = 0; j < d; ++j) gt[(t * hw + p) * d + j] += g[(t * d + j) * hw + p];
    });
  }
  return out;
}

// Feature map D x h x w -> tokens (T_tok*h*w) x D, repeating the same
// spatial tokens in every time slot.
inline Tensor broadcast_time_tokens(const Tensor& x, std::size_t time_tokens) {
  detail::require_rank(x, 3, "broadcast_time_tokens");
  const std::size_t d = x.dim(0), hw = x.dim(1) * x.dim(2);
  Tensor out({time_tokens * hw, d});
  for (std::size_t t = 0; t < time_tokens; ++t)
    for (std::size_t p = 0; p < hw; ++p)
      for (std::size_t j = 0; j < d; ++j) out[(t * hw + p) * d + j] = x[j * hw + p];
  if (Tape* tape = detail::recording_tape({&x})) {
    out.set_requires_grad();
    tape->record(out, [x, out, time_tokens, hw, d]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      auto gx = x.grad();
      for (std::size_t t = 0; t < time_tokens; ++t)
        for (std::size_t p = 0; p < hw; ++p)
          for (std::size_t j = 0; j < d; ++j) gx[j * hw + p] += g[(t * hw + p) * d + j];
    });
  }
  return out;
}

}  // namespace mambarain

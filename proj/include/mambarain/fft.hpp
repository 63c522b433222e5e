#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "mambarain/errors.hpp"

namespace mambarain {

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

struct ComplexGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> real;
  std::vector<double> imag;

  ComplexGrid() = default;
  ComplexGrid(std::size_t h, std::size_t w) : height(h), width(w), real(h * w, 0.0), imag(h * w, 0.0) {}

  std::complex<double> at(std::size_t r, std::size_t c) const {
    return {real[r * width + c], imag[r * width + c]};
  }
};

namespace detail {

// In-place iterative radix-2 Cooley-Tukey on a strided complex sequence.
// sign = -1 forward, +1 inverse (unnormalized both ways).
inline void fft1d(std::complex<double>* x, std::size_t n, int sign) {
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[i], x[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * std::numbers::pi / static_cast<double>(len);
    const std::size_t half = len / 2;
    for (std::size_t k = 0; k < half; ++k) {
      // Direct twiddles; the recurrence w *= wn drifts by ~1e-15 per step.
      const std::complex<double> w(std::cos(ang * k), std::sin(ang * k));
      for (std::size_t i = 0; i < n; i += len) {
        const auto u = x[i + k];
        const auto v = x[i + k + half] * w;
        x[i + k] = u + v;
        x[i + k + half] = u - v;
      }
    }
  }
}

inline void check_fft_extents(std::size_t h, std::size_t w) {
  if (!is_power_of_two(h))
    throw DimensionError("fft2: height " + std::to_string(h) + " is not a power of two");
  if (!is_power_of_two(w))
    throw DimensionError("fft2: width " + std::to_string(w) + " is not a power of two");
}

inline void fft2_inplace(std::vector<std::complex<double>>& buf, std::size_t h, std::size_t w, int sign) {
  for (std::size_t r = 0; r < h; ++r) fft1d(buf.data() + r * w, w, sign);
  std::vector<std::complex<double>> col(h);
  for (std::size_t c = 0; c < w; ++c) {
    for (std::size_t r = 0; r < h; ++r) col[r] = buf[r * w + c];
    fft1d(col.data(), h, sign);
    for (std::size_t r = 0; r < h; ++r) buf[r * w + c] = col[r];
  }
}

}  // namespace detail

// Unnormalized forward 2D DFT of a real row-major h x w field.
inline ComplexGrid fft2(std::span<const double> field, std::size_t h, std::size_t w) {
  detail::check_fft_extents(h, w);
  if (field.size() != h * w) throw DimensionError("fft2: field length does not match h*w");
  std::vector<std::complex<double>> buf(field.begin(), field.end());
  detail::fft2_inplace(buf, h, w, -1);
  ComplexGrid out(h, w);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    out.real[i] = buf[i].real();
    out.imag[i] = buf[i].imag();
  }
  return out;
}

// Forward 2D DFT of a complex grid (unnormalized).
inline ComplexGrid fft2(const ComplexGrid& g) {
  detail::check_fft_extents(g.height, g.width);
  std::vector<std::complex<double>> buf(g.real.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = {g.real[i], g.imag[i]};
  detail::fft2_inplace(buf, g.height, g.width, -1);
  ComplexGrid out(g.height, g.width);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    out.real[i] = buf[i].real();
    out.imag[i] = buf[i].imag();
  }
  return out;
}

// Inverse 2D DFT with 1/(h*w) normalization.
inline ComplexGrid ifft2(const ComplexGrid& g) {
  detail::check_fft_extents(g.height, g.width);
  std::vector<std::complex<double>> buf(g.real.size());
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = {g.real[i], g.imag[i]};
  detail::fft2_inplace(buf, g.height, g.width, +1);
  const double scale = 1.0 / static_cast<double>(g.height * g.width);
  ComplexGrid out(g.height, g.width);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    out.real[i] = buf[i].real() * scale;
    out.imag[i] = buf[i].imag() * scale;
  }
  return out;
}

}  // namespace mambarain

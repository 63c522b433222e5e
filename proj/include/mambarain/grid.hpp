#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mambarain/errors.hpp"

namespace mambarain {

// Row-major 2D field of doubles (reflectivity, elevation, velocity).
struct Grid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  Grid() = default;
  Grid(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), values(h * w, fill) {}

  double& at(std::size_t r, std::size_t c) { return values[r * width + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * width + c]; }
  std::size_t size() const { return values.size(); }

  // Periodic bilinear sample at fractional (row, col).
  double sample(double r, double c) const {
    const double fr = std::floor(r), fc = std::floor(c);
    const double tr = r - fr, tc = c - fc;
    const long h = long(height), w = long(width);
    const long r0 = ((long(fr) % h) + h) % h, c0 = ((long(fc) % w) + w) % w;
    const long r1 = (r0 + 1) % h, c1 = (c0 + 1) % w;
    const double v00 = values[r0 * w + c0];
    if (tr == 0.0 && tc == 0.0) return v00;
    const double v01 = values[r0 * w + c1], v10 = values[r1 * w + c0], v11 = values[r1 * w + c1];
    return (1 - tr) * ((1 - tc) * v00 + tc * v01) + tr * ((1 - tc) * v10 + tc * v11);
  }

  double total() const {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
};

inline void require_same_extents(const Grid& a, const Grid& b, const char* what) {
  if (a.height != b.height || a.width != b.width)
    throw DimensionError(std::string(what) + ": extents " + std::to_string(a.height) + "x" +
                         std::to_string(a.width) + " vs " + std::to_string(b.height) + "x" + std::to_string(b.width));
}

// One semi-Lagrangian step: trace each cell back along (u, v) (columns and
// rows per step) and interpolate bilinearly on the periodic grid.
inline Grid advect_semi_lagrangian(const Grid& field, const Grid& u, const Grid& v) {
  require_same_extents(field, u, "advect");
  require_same_extents(field, v, "advect");
  Grid out(field.height, field.width);
  for (std::size_t r = 0; r < field.height; ++r)
    for (std::size_t c = 0; c < field.width; ++c)
      out.at(r, c) = field.sample(double(r) - v.at(r, c), double(c) - u.at(r, c));
  return out;
}

// Periodic separable Gaussian blur with standard deviation sigma (cells).
inline Grid gaussian_blur_periodic(const Grid& field, double sigma) {
  if (sigma <= 0.0) return field;
  const long radius = std::max(1L, long(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double norm = 0.0;
  for (long i = -radius; i <= radius; ++i) norm += (kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma)));
  for (double& k : kernel) k /= norm;
  const long h = long(field.height), w = long(field.width);
  Grid tmp(field.height, field.width), out(field.height, field.width);
  for (long r = 0; r < h; ++r)
    for (long c = 0; c < w; ++c) {
      double s = 0.0;
      for (long i = -radius; i <= radius; ++i) s += kernel[i + radius] * field.values[r * w + (((c + i) % w) + w) % w];
      tmp.values[r * w + c] = s;
    }
  for (long r = 0; r < h; ++r)
    for (long c = 0; c < w; ++c) {
      double s = 0.0;
      for (long i = -radius; i <= radius; ++i) s += kernel[i + radius] * tmp.values[((((r + i) % h) + h) % h) * w + c];
      out.values[r * w + c] = s;
    }
  return out;
}

}  // namespace mambarain

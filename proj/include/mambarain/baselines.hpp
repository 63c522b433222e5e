#pragma once

// Extrapolation baselines: persistence and block-matching optical flow with
// semi-Lagrangian advection.

#include <cmath>
#include <vector>

#include "mambarain/grid.hpp"

namespace mambarain {

// Per-cell displacement in cells per frame interval (u: columns, v: rows).
struct FlowField {
  Grid u;
  Grid v;
  bool low_confidence = false;
};

struct BlockMatchOptions {
  std::size_t block = 8;
  int search_radius = 4;
  double min_block_variance = 1e-6;
};

// Zero-mean normalized cross-correlation of each block of `a` against `b`
// displaced by (dx, dy) within the search radius. Textureless blocks take the
// mean displacement of textured ones; block-centre vectors are then
// interpolated bilinearly (periodically) to every cell.
inline FlowField estimate_motion(const Grid& a, const Grid& b, const BlockMatchOptions& opt = {}) {
  require_same_extents(a, b, "estimate_motion");
  const std::size_t h = a.height, w = a.width, bs = opt.block;
  FlowField flow{Grid(h, w), Grid(h, w), false};
  if (bs == 0 || h % bs || w % bs) throw DimensionError("estimate_motion: extents must be multiples of the block size");
  const std::size_t by = h / bs, bx = w / bs;
  std::vector<double> du(by * bx, 0.0), dv(by * bx, 0.0);
  std::vector<bool> textured(by * bx, false);
  const long H = long(h), W = long(w);
  auto wrapped = [&](const Grid& g, long r, long c) { return g.values[(((r % H) + H) % H) * W + ((c % W) + W) % W]; };

  for (std::size_t br = 0; br < by; ++br)
    for (std::size_t bc = 0; bc < bx; ++bc) {
      const long r0 = long(br * bs), c0 = long(bc * bs);
      const double n = double(bs * bs);
      double ma = 0.0;
      for (long r = 0; r < long(bs); ++r)
        for (long c = 0; c < long(bs); ++c) ma += a.at(r0 + r, c0 + c);
      ma /= n;
      double va = 0.0;
      for (long r = 0; r < long(bs); ++r)
        for (long c = 0; c < long(bs); ++c) va += (a.at(r0 + r, c0 + c) - ma) * (a.at(r0 + r, c0 + c) - ma);
      if (va / n < opt.min_block_variance) continue;
      double best = -2.0;
      int best_dx = 0, best_dy = 0, best_norm = 0;
      for (int dy = -opt.search_radius; dy <= opt.search_radius; ++dy)
        for (int dx = -opt.search_radius; dx <= opt.search_radius; ++dx) {
          double mb = 0.0;
          for (long r = 0; r < long(bs); ++r)
            for (long c = 0; c < long(bs); ++c) mb += wrapped(b, r0 + r + dy, c0 + c + dx);
          mb /= n;
          double cov = 0.0, vb = 0.0;
          for (long r = 0; r < long(bs); ++r)
            for (long c = 0; c < long(bs); ++c) {
              const double xb = wrapped(b, r0 + r + dy, c0 + c + dx) - mb;
              cov += (a.at(r0 + r, c0 + c) - ma) * xb;
              vb += xb * xb;
            }
          if (vb / n < opt.min_block_variance) continue;
          const double score = cov / std::sqrt(va * vb);
          const int norm = dx * dx + dy * dy;
          // Ties go to the smaller displacement.
          if (score > best + 1e-12 || (std::abs(score - best) <= 1e-12 && norm < best_norm)) {
            best = score;
            best_dx = dx;
            best_dy = dy;
            best_norm = norm;
          }
        }
      if (best <= -2.0) continue;
      du[br * bx + bc] = best_dx;
      dv[br * bx + bc] = best_dy;
      textured[br * bx + bc] = true;
    }

  std::size_t n_textured = 0;
  double mu = 0.0, mv = 0.0;
  for (std::size_t i = 0; i < textured.size(); ++i)
    if (textured[i]) {
      ++n_textured;
      mu += du[i];
      mv += dv[i];
    }
  if (n_textured == 0) {
    flow.low_confidence = true;
    return flow;
  }
  mu /= double(n_textured);
  mv /= double(n_textured);
  Grid bu(by, bx), bv(by, bx);
  for (std::size_t i = 0; i < textured.size(); ++i) {
    bu.values[i] = textured[i] ? du[i] : mu;
    bv.values[i] = textured[i] ? dv[i] : mv;
  }
  // Block centres sit at (k + 0.5) * bs - 0.5 in cell coordinates.
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double rr = (double(r) + 0.5) / double(bs) - 0.5;
      const double cc = (double(c) + 0.5) / double(bs) - 0.5;
      flow.u.at(r, c) = bu.sample(rr, cc);
      flow.v.at(r, c) = bv.sample(rr, cc);
    }
  return flow;
}

// Lead k is the last frame advected k times; intensities are carried
// unchanged.
inline std::vector<Grid> extrapolate(const Grid& last_frame, const FlowField& flow, std::size_t k) {
  if (k == 0) throw DomainError("extrapolate: K must be at least 1");
  std::vector<Grid> out;
  out.reserve(k);
  Grid cur = last_frame;
  for (std::size_t i = 0; i < k; ++i) {
    cur = advect_semi_lagrangian(cur, flow.u, flow.v);
    out.push_back(cur);
  }
  return out;
}

inline std::vector<Grid> persistence(const Grid& last_frame, std::size_t k) {
  if (k == 0) throw DomainError("persistence: K must be at least 1");
  return std::vector<Grid>(k, last_frame);
}

}  // namespace mambarain

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "mambarain/baselines.hpp"
#include "mambarain/synthdata.hpp"
#include "mambarain/verify.hpp"

using namespace mambarain;

namespace {

Grid textured(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 60.0);
  Grid g(h, w);
  for (double& v : g.values) v = u(rng);
  return gaussian_blur_periodic(g, 1.2);
}

// out(r, c) = g(r - dr, c - dc) on the periodic grid.
Grid roll(const Grid& g, long dr, long dc) {
  Grid out(g.height, g.width);
  const long h = long(g.height), w = long(g.width);
  for (long r = 0; r < h; ++r)
    for (long c = 0; c < w; ++c) out.at(r, c) = g.at(((r - dr) % h + h) % h, ((c - dc) % w + w) % w);
  return out;
}

double mean(const Grid& g) { return g.total() / double(g.size()); }

}  // namespace

TEST(Motion, RecoversEastwardShift) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Grid a = textured(32, 32, seed);
    const FlowField f = estimate_motion(a, roll(a, 0, 2));
    EXPECT_FALSE(f.low_confidence);
    for (std::size_t i = 0; i < f.u.size(); ++i) {
      EXPECT_NEAR(f.u.values[i], 2.0, 0.5);
      EXPECT_NEAR(f.v.values[i], 0.0, 0.5);
    }
  }
}

TEST(Motion, RecoversDiagonalShift) {
  const Grid a = textured(32, 32, 9);
  const FlowField f = estimate_motion(a, roll(a, -3, 1));
  EXPECT_NEAR(mean(f.u), 1.0, 0.5);
  EXPECT_NEAR(mean(f.v), -3.0, 0.5);
}

TEST(Motion, IdenticalFramesGiveZeroFlow) {
  const Grid a = textured(32, 32, 1);
  const FlowField f = estimate_motion(a, a);
  EXPECT_FALSE(f.low_confidence);
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    EXPECT_EQ(f.u.values[i], 0.0);
    EXPECT_EQ(f.v.values[i], 0.0);
  }
}

TEST(Motion, UniformFramesAreLowConfidence) {
  const FlowField f = estimate_motion(Grid(32, 32, 25.0), Grid(32, 32, 25.0));
  EXPECT_TRUE(f.low_confidence);
  for (double v : f.u.values) EXPECT_EQ(v, 0.0);
  const FlowField z = estimate_motion(Grid(16, 16), Grid(16, 16));
  EXPECT_TRUE(z.low_confidence);
}

TEST(Motion, ApproximatelyAntisymmetric) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Grid a = textured(32, 32, 20 + seed);
    const Grid b = roll(a, 1, -2);
    const FlowField ab = estimate_motion(a, b), ba = estimate_motion(b, a);
    for (std::size_t i = 0; i < ab.u.size(); ++i) {
      EXPECT_NEAR(ab.u.values[i], -ba.u.values[i], 1.0);
      EXPECT_NEAR(ab.v.values[i], -ba.v.values[i], 1.0);
    }
  }
}

TEST(Motion, Errors) {
  EXPECT_THROW(estimate_motion(Grid(8, 8), Grid(8, 16)), DimensionError);
  EXPECT_THROW(estimate_motion(Grid(12, 12), Grid(12, 12)), DimensionError);
}

TEST(Extrapolate, ZeroFlowEqualsPersistence) {
  const Grid a = textured(16, 16, 2);
  const FlowField zero{Grid(16, 16), Grid(16, 16), false};
  const auto e = extrapolate(a, zero, 5), p = persistence(a, 5);
  ASSERT_EQ(e.size(), 5u);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(e[k].values, p[k].values);
}

TEST(Extrapolate, UniformFlowMatchesRollOracle) {
  const Grid a = textured(16, 32, 3);
  const FlowField f{Grid(16, 32, 1.0), Grid(16, 32, 0.0), false};
  const auto e = extrapolate(a, f, 6);
  for (std::size_t k = 0; k < 6; ++k) {
    const Grid want = roll(a, 0, long(k + 1));
    for (std::size_t i = 0; i < want.size(); ++i) EXPECT_NEAR(e[k].values[i], want.values[i], 1e-6);
  }
}

TEST(Extrapolate, DivergenceFreeFlowConservesMass) {
  const std::size_t n = 32;
  const Grid a = textured(n, n, 4);
  FlowField f{Grid(n, n), Grid(n, n), false};
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      f.u.at(r, c) = 0.7 + 0.3 * std::sin(2 * std::numbers::pi * double(r) / double(n));
      f.v.at(r, c) = -0.4 + 0.3 * std::sin(2 * std::numbers::pi * double(c) / double(n));
    }
  double prev = a.total();
  for (const Grid& g : extrapolate(a, f, 8)) {
    EXPECT_LT(std::abs(g.total() - prev) / prev, 0.01);
    prev = g.total();
  }
}

TEST(Extrapolate, IntensitiesStayWithinInputRange) {
  const Grid a = textured(32, 32, 5);
  const FlowField f = estimate_motion(a, roll(a, 1, 1));
  const auto [lo, hi] = std::minmax_element(a.values.begin(), a.values.end());
  for (const Grid& g : extrapolate(a, f, 4))
    for (double v : g.values) {
      EXPECT_GE(v, *lo - 1e-9);
      EXPECT_LE(v, *hi + 1e-9);
    }
}

TEST(Baselines, ZeroLeadRejected) {
  const FlowField zero{Grid(8, 8), Grid(8, 8), false};
  EXPECT_THROW(extrapolate(Grid(8, 8), zero, 0), DomainError);
  EXPECT_THROW(persistence(Grid(8, 8), 0), DomainError);
}

TEST(Persistence, RepeatsLastFrame) {
  const Grid a = textured(16, 16, 6);
  for (const Grid& g : persistence(a, 4)) EXPECT_EQ(g.values, a.values);
}

TEST(Persistence, PerfectOnStaticScene) {
  SynthConfig c;
  c.speed_min = c.speed_max = 0.0;
  c.swirl = c.diffusion = c.birth_rate = c.growth_tau = c.decay_tau = 0.0;
  const RadarSequence s = generate_sample(c, 1);
  std::vector<Grid> obs(s.frames.begin() + 4, s.frames.end());
  const SkillReport r = evaluate(ForecastBundle::make(persistence(s.frames[3], 8), obs, 6));
  for (double t : kDefaultThresholds) {
    const auto csi = r.at_threshold(t).scores.csi;
    if (csi) EXPECT_EQ(*csi, 1.0);
    for (unsigned k = 1; k <= 8; ++k)
      if (auto v = r.lead_csi_at(6 * k, t)) EXPECT_EQ(*v, 1.0);
  }
}

TEST(Persistence, SkillDecaysWithLeadOnAdvectingScenes) {
  SkillAccumulator acc;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const RadarSequence s = generate_sample(SynthConfig{}, seed);
    std::vector<Grid> obs(s.frames.begin() + 4, s.frames.end());
    acc.add(ForecastBundle::make(persistence(s.frames[3], 8), obs, 6));
  }
  const SkillReport r = acc.report();
  EXPECT_GT(*r.lead_csi_at(6, 20), *r.lead_csi_at(24, 20));
  EXPECT_GT(*r.lead_csi_at(24, 20), *r.lead_csi_at(48, 20));
}

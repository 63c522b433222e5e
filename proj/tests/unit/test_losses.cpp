#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>
#include <random>

#include "mambarain/gradcheck.hpp"
#include "mambarain/losses.hpp"

using namespace mambarain;

namespace {

Tensor uniform(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(s));
  for (double& x : v) x = u(rng);
  return Tensor(std::move(s), std::move(v));
}

// Direct O(N^2) DFT of one H x W frame.
std::vector<std::complex<double>> dft2(const std::vector<double>& x, std::size_t h, std::size_t w) {
  std::vector<std::complex<double>> out(h * w);
  for (std::size_t u = 0; u < h; ++u)
    for (std::size_t v = 0; v < w; ++v) {
      std::complex<double> s = 0;
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c) {
          const double ang = -2.0 * std::numbers::pi * (double(u * r) / double(h) + double(v * c) / double(w));
          s += x[r * w + c] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
      out[u * w + v] = s;
    }
  return out;
}

double oracle_weighted(const Tensor& p, const Tensor& t, const std::vector<double>* weight) {
  const std::size_t k = p.rank() == 3 ? p.dim(0) : 1, h = p.dim(p.rank() - 2), w = p.dim(p.rank() - 1);
  double total = 0.0;
  for (std::size_t f = 0; f < k; ++f) {
    std::vector<double> r(h * w);
    for (std::size_t i = 0; i < h * w; ++i) r[i] = p[f * h * w + i] - t[f * h * w + i];
    const auto z = dft2(r, h, w);
    for (std::size_t i = 0; i < h * w; ++i) total += (weight ? (*weight)[i] : 1.0) * std::norm(z[i]);
  }
  return total / double(k);
}

double pixel_mse(const Tensor& p, const Tensor& t) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - t[i]) * (p[i] - t[i]);
  return s / double(p.size());
}

}  // namespace

TEST(SpectralLoss, ZeroForIdenticalInputs) {
  std::mt19937_64 rng(1);
  Tensor a = uniform({3, 8, 8}, rng);
  EXPECT_EQ(spectral_loss(a, a.clone()).item(), 0.0);
}

TEST(SpectralLoss, SinglePixelDelta) {
  const double delta = 0.7;
  for (auto [h, w] : {std::pair<std::size_t, std::size_t>{8, 8}, {16, 4}, {32, 32}}) {
    Tensor p({h, w}, 0.0), t({h, w}, 0.0);
    p[3 * w + 1] = delta;
    EXPECT_NEAR(spectral_loss(p, t).item(), double(h * w) * delta * delta, 1e-9);
    EXPECT_NEAR(oracle_weighted(p, t, nullptr), double(h * w) * delta * delta, 1e-9);
  }
}

TEST(SpectralLoss, MatchesDirectDftOracle) {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 5; ++rep) {
    Tensor p = uniform({2, 8, 16}, rng), t = uniform({2, 8, 16}, rng);
    const double want = oracle_weighted(p, t, nullptr);
    EXPECT_NEAR(spectral_loss(p, t).item(), want, 1e-9 * want);
  }
}

// H*W times the frame-averaged sum of squared pixel residuals.
double parseval_rhs(const Tensor& p, const Tensor& t) {
  const std::size_t hw = p.dim(1) * p.dim(2);
  return double(hw) * pixel_mse(p, t) * double(hw);
}

TEST(SpectralLoss, ParsevalIdentity) {
  std::mt19937_64 rng(3);
  for (std::size_t n : {2u, 4u, 8u, 16u, 32u, 64u}) {
    Tensor p = uniform({3, n, n}, rng), t = uniform({3, n, n}, rng);
    const double want = parseval_rhs(p, t);
    EXPECT_NEAR(spectral_loss(p, t).item() / want, 1.0, 1e-8) << n;
  }
}

TEST(SpectralLoss, ShapeErrors) {
  EXPECT_THROW(spectral_loss(Tensor({8, 8}), Tensor({8, 4})), DimensionError);
  EXPECT_THROW(spectral_loss(Tensor({2, 2, 8, 8}), Tensor({2, 2, 8, 8})), DimensionError);
  EXPECT_THROW(spectral_loss(Tensor({6, 8}), Tensor({6, 8})), DimensionError);
}

TEST(SpectralLoss, NonnegativeAndGradientSymmetric) {
  std::mt19937_64 rng(4);
  Tensor p = uniform({2, 8, 8}, rng), t = uniform({2, 8, 8}, rng);
  p.set_requires_grad();
  t.set_requires_grad();
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor l = spectral_loss(p, t);
    EXPECT_GT(l.item(), 0.0);
    tape.backward(l);
  }
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p.grad()[i], -t.grad()[i], 1e-12);
}

TEST(SpectralLoss, GradientEqualsScaledMseGradient) {
  // Parseval makes the gradient 2*H*W/K * residual.
  std::mt19937_64 rng(5);
  Tensor p = uniform({2, 8, 8}, rng), t = uniform({2, 8, 8}, rng);
  p.set_requires_grad();
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(spectral_loss(p, t));
  }
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p.grad()[i], 2.0 * 64.0 / 2.0 * (p[i] - t[i]), 1e-9);
}

TEST(WeightedSpectralLoss, UnitWeightsEqualPlain) {
  std::mt19937_64 rng(6);
  Tensor p = uniform({2, 16, 16}, rng), t = uniform({2, 16, 16}, rng);
  const double a = spectral_loss(p, t).item();
  const double b = frequency_weighted_spectral_loss(p, t, Tensor({16, 16}, 1.0)).item();
  EXPECT_NEAR(a, b, 1e-12 * a);
}

TEST(WeightedSpectralLoss, DcOnlyWeightOnConstantOffset) {
  const std::size_t h = 8, w = 16;
  const double c = 0.3;
  std::mt19937_64 rng(7);
  Tensor t = uniform({3, h, w}, rng);
  Tensor p = t.clone();
  for (double& v : p.data()) v += c;
  Tensor dc({h, w}, 0.0);
  dc[0] = 1.0;
  const double want = std::pow(double(h * w) * c, 2);
  std::vector<double> wv(dc.data().begin(), dc.data().end());
  EXPECT_NEAR(frequency_weighted_spectral_loss(p, t, dc).item(), want, 1e-9 * want);
  EXPECT_NEAR(oracle_weighted(p, t, &wv), want, 1e-9 * want);
}

TEST(WeightedSpectralLoss, ZeroAtDcIgnoresConstantOffset) {
  std::mt19937_64 rng(8);
  Tensor t = uniform({2, 8, 8}, rng);
  Tensor p = t.clone();
  for (double& v : p.data()) v += 0.25;
  Tensor m = radial_weight_map(8, 8);
  m[0] = 0.0;
  EXPECT_NEAR(frequency_weighted_spectral_loss(p, t, m).item(), 0.0, 1e-18);
}

TEST(WeightedSpectralLoss, RadialMapMatchesOracle) {
  std::mt19937_64 rng(9);
  Tensor p = uniform({2, 8, 8}, rng), t = uniform({2, 8, 8}, rng);
  Tensor m = radial_weight_map(8, 8);
  EXPECT_DOUBLE_EQ(m[0], 1.0);
  EXPECT_DOUBLE_EQ(m[4 * 8 + 4], 2.0);
  std::vector<double> wv(m.data().begin(), m.data().end());
  const double want = oracle_weighted(p, t, &wv);
  EXPECT_NEAR(frequency_weighted_spectral_loss(p, t, m).item(), want, 1e-9 * want);
  EXPECT_GT(want, spectral_loss(p, t).item());
}

TEST(WeightedSpectralLoss, Errors) {
  Tensor a({8, 8}), b({8, 8});
  Tensor neg({8, 8}, 1.0);
  neg[5] = -0.1;
  EXPECT_THROW(frequency_weighted_spectral_loss(a, b, neg), DomainError);
  EXPECT_THROW(frequency_weighted_spectral_loss(a, b, Tensor({4, 4}, 1.0)), DimensionError);
}

TEST(WeightedSpectralLoss, GradCheck) {
  std::mt19937_64 rng(10);
  Tensor p = uniform({2, 8, 8}, rng), t = uniform({2, 8, 8}, rng);
  Tensor m = radial_weight_map(8, 8);
  EXPECT_LT(grad_check([&] { return frequency_weighted_spectral_loss(p, t, m); }, {p, t}, 1e-4), 1e-6);
}

TEST(CombinedLoss, ReproducesComponents) {
  std::mt19937_64 rng(11);
  Tensor p = uniform({2, 8, 8}, rng), t = uniform({2, 8, 8}, rng);
  const double spec = spectral_loss(p, t).item(), mse = mse_loss(p, t).item();
  EXPECT_NEAR(mse, pixel_mse(p, t), 1e-15);
  EXPECT_EQ(combined_loss(p, t, 1, 0).total.item(), spec);
  EXPECT_EQ(combined_loss(p, t, 0, 1).total.item(), mse);
  const LossReport r = combined_loss(p, t, 0.3, 2.5);
  EXPECT_NEAR(r.total.item(), 0.3 * r.components.at("spectral") + 2.5 * r.components.at("mse"), 1e-12);
  EXPECT_EQ(r.components.at("spectral"), spec);
  EXPECT_EQ(r.components.at("mse"), mse);
  EXPECT_EQ(r.weights.at("spectral"), 0.3);
  EXPECT_EQ(r.weights.at("mse"), 2.5);
}

TEST(CombinedLoss, Errors) {
  Tensor a({8, 8}), b({8, 8});
  EXPECT_THROW(combined_loss(a, b, 0, 0), ConfigError);
  EXPECT_THROW(combined_loss(a, b, -1, 1), DomainError);
}

TEST(CombinedLoss, GradientIsWeightedSum) {
  std::mt19937_64 rng(12);
  Tensor p = uniform({2, 8, 8}, rng), t = uniform({2, 8, 8}, rng);
  EXPECT_LT(grad_check([&] { return combined_loss(p, t, 0.5, 3.0).total; }, {p}, 1e-4), 1e-6);
  auto grad_of = [&](double ls, double lm) {
    Tensor q = p.clone();
    q.set_requires_grad();
    Tape tape;
    {
      TapeScope scope(tape);
      tape.backward(combined_loss(q, t, ls, lm).total);
    }
    return std::vector<double>(q.grad().begin(), q.grad().end());
  };
  const auto gs = grad_of(1, 0), gm = grad_of(0, 1), gc = grad_of(0.5, 3.0);
  for (std::size_t i = 0; i < gc.size(); ++i) EXPECT_NEAR(gc[i], 0.5 * gs[i] + 3.0 * gm[i], 1e-10);
}

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mambarain/gradcheck.hpp"
#include "mambarain/ssm.hpp"

using namespace mambarain;

namespace {

Tensor uniform(Shape s, std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape_numel(s));
  for (double& x : v) x = u(rng);
  return Tensor(std::move(s), std::move(v));
}

ScanParams random_params(std::size_t L, std::size_t E, std::size_t N, std::mt19937_64& rng) {
  ScanParams p;
  p.A = uniform({E, N}, rng, -2.0, -0.05);
  p.B = uniform({L, N}, rng, -1, 1);
  p.C = uniform({L, N}, rng, -1, 1);
  p.D = uniform({E}, rng, -1, 1);
  p.delta = uniform({L, E}, rng, 0.01, 0.5);
  return p;
}

// Unrolled recurrence with its own state layout.
std::vector<double> naive_scan(const Tensor& x, const ScanParams& p) {
  const std::size_t L = x.dim(0), E = x.dim(1), N = p.A.dim(1);
  std::vector<double> y(L * E);
  for (std::size_t e = 0; e < E; ++e) {
    std::vector<double> h(N, 0.0);
    for (std::size_t k = 0; k < L; ++k) {
      double out = p.D[e] * x[k * E + e];
      for (std::size_t n = 0; n < N; ++n) {
        const double dt = p.delta[k * E + e];
        const double abar = std::exp(p.A[e * N + n] * dt);
        const double bbar = dt * p.B[k * N + n];
        h[n] = abar * h[n] + bbar * x[k * E + e];
        out += p.C[k * N + n] * h[n];
      }
      y[k * E + e] = out;
    }
  }
  return y;
}

}  // namespace

TEST(Discretize, ScalarClosedForm) {
  const std::vector<double> a{-1.0}, b{2.0};
  const Discretized d = discretize(a, b, 0.1);
  EXPECT_NEAR(d.a_bar[0], 0.9048374180359595, 1e-12);
  EXPECT_NEAR(d.b_bar[0], 0.2, 1e-15);
}

TEST(Discretize, SmallStepLimit) {
  const std::vector<double> a{-3.0, -0.5}, b{1.0, -4.0};
  const Discretized d = discretize(a, b, 1e-12);
  for (double v : d.a_bar) EXPECT_NEAR(v, 1.0, 1e-10);
  for (double v : d.b_bar) EXPECT_NEAR(v, 0.0, 1e-10);
}

TEST(Discretize, ApproximationGapIsSecondOrder) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> ua(-2.0, -0.1), ub(-2.0, 2.0), ud(0.01, 0.1);
  for (int i = 0; i < 20; ++i) {
    const double a = ua(rng), b = ub(rng), dt = ud(rng);
    auto gap = [&](double step) {
      const double zoh = std::expm1(a * step) / a * b;
      return std::abs(zoh - discretize(std::vector<double>{a}, std::vector<double>{b}, step).b_bar[0]);
    };
    const double ratio = gap(dt) / gap(dt / 2);
    EXPECT_GE(ratio, 3.5);
    EXPECT_LE(ratio, 4.5);
  }
}

TEST(Discretize, NonPositiveDeltaRejected) {
  const std::vector<double> a{-1.0}, b{1.0};
  EXPECT_THROW(discretize(a, b, 0.0), DomainError);
  EXPECT_THROW(discretize(a, b, -0.1), DomainError);
}

TEST(SelectiveScan, SingleStepClosedForm) {
  std::mt19937_64 rng(2);
  const std::size_t E = 3, N = 4;
  ScanParams p = random_params(1, E, N, rng);
  Tensor x = uniform({1, E}, rng, -1, 1);
  Tensor y = selective_scan(x, p);
  for (std::size_t e = 0; e < E; ++e) {
    double expect = p.D[e] * x[e];
    for (std::size_t n = 0; n < N; ++n) expect += p.C[n] * (p.delta[e] * p.B[n] * x[e]);
    EXPECT_NEAR(y[e], expect, 1e-14);
  }
}

TEST(SelectiveScan, ZeroInputGivesZero) {
  std::mt19937_64 rng(3);
  ScanParams p = random_params(20, 4, 3, rng);
  Tensor y = selective_scan(Tensor({20, 4}, 0.0), p);
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(SelectiveScan, MatchesNaiveOracle) {
  std::mt19937_64 rng(4);
  ScanParams p = random_params(64, 5, 8, rng);
  Tensor x = uniform({64, 5}, rng, -2, 2);
  Tensor y = selective_scan(x, p);
  const auto ref = naive_scan(x, p);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y[i], ref[i], 1e-12);
}

TEST(SelectiveScan, ShapeMismatchIsDimensionError) {
  std::mt19937_64 rng(5);
  ScanParams p = random_params(8, 3, 2, rng);
  EXPECT_THROW(selective_scan(Tensor({8, 4}), p), DimensionError);
  EXPECT_THROW(selective_scan(Tensor({7, 3}), p), DimensionError);
}

TEST(SelectiveScan, InvalidParamsRejected) {
  std::mt19937_64 rng(6);
  ScanParams p = random_params(4, 2, 2, rng);
  p.A[0] = 0.0;
  EXPECT_THROW(selective_scan(Tensor({4, 2}), p), DomainError);
  p = random_params(4, 2, 2, rng);
  p.delta[3] = -0.1;
  EXPECT_THROW(selective_scan(Tensor({4, 2}), p), DomainError);
}

TEST(SelectiveScan, Causality) {
  std::mt19937_64 rng(7);
  ScanParams p = random_params(32, 3, 4, rng);
  Tensor x = uniform({32, 3}, rng, -1, 1);
  Tensor y = selective_scan(x, p);
  Tensor x2 = x.clone();
  for (std::size_t i = 20 * 3; i < x2.size(); ++i) x2[i] += 5.0;
  Tensor y2 = selective_scan(x2, p);
  for (std::size_t i = 0; i < 20 * 3; ++i) EXPECT_EQ(y[i], y2[i]);
}

TEST(SelectiveScan, StateBoundedForFixedStep) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t L = 200, E = 3, N = 4;
    ScanParams p = random_params(L, E, N, rng);
    const double dt = 0.05 + 0.1 * trial;
    for (double& d : p.delta.data()) d = dt;
    Tensor x = uniform({L, E}, rng, -3, 3);
    std::vector<double> states;
    selective_scan(x, p, &states);
    double max_bx = 0.0, max_abar = 0.0;
    for (std::size_t k = 0; k < L; ++k)
      for (std::size_t e = 0; e < E; ++e)
        for (std::size_t n = 0; n < N; ++n) max_bx = std::max(max_bx, std::abs(dt * p.B[k * N + n] * x[k * E + e]));
    for (double a : p.A.data()) max_abar = std::max(max_abar, std::exp(a * dt));
    const double bound = max_bx / (1.0 - max_abar);
    for (double h : states) EXPECT_LE(std::abs(h), bound * (1 + 1e-12));
  }
}

TEST(ParallelScan, UnitDecayIsPrefixSum) {
  std::mt19937_64 rng(9);
  const std::size_t L = 150, E = 2, N = 3;
  ScanParams p = random_params(L, E, N, rng);
  // exp(A * delta) rounds to exactly 1 for |A * delta| below half an ulp.
  for (double& a : p.A.data()) a = -1e-300;
  Tensor x = uniform({L, E}, rng, -1, 1);
  Tensor y = parallel_scan(x, p);
  for (std::size_t e = 0; e < E; ++e) {
    std::vector<double> acc(N, 0.0);
    for (std::size_t k = 0; k < L; ++k) {
      double expect = p.D[e] * x[k * E + e];
      for (std::size_t n = 0; n < N; ++n) {
        acc[n] += p.delta[k * E + e] * p.B[k * N + n] * x[k * E + e];
        expect += p.C[k * N + n] * acc[n];
      }
      EXPECT_NEAR(y[k * E + e], expect, 1e-10);
    }
  }
}

TEST(ParallelScan, MatchesSequential) {
  std::mt19937_64 rng(10);
  for (std::size_t L : {1u, 2u, 63u, 64u, 65u, 128u, 300u}) {
    ScanParams p = random_params(L, 4, 6, rng);
    Tensor x = uniform({L, 4}, rng, -2, 2);
    Tensor a = selective_scan(x, p), b = parallel_scan(x, p);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-10) << "L=" << L;
  }
}

TEST(ParallelScan, TwoStepCombineByHand) {
  const double a1 = 0.8, b1 = 0.3, a2 = 0.5, b2 = -0.2;
  const AffinePair c = combine({a2, b2}, {a1, b1});
  EXPECT_DOUBLE_EQ(c.a, a2 * a1);
  EXPECT_DOUBLE_EQ(c.b, a2 * b1 + b2);
  // Two sequential steps from h0 = 0: h1 = b1, h2 = a2*b1 + b2.
  double h = 0.0;
  h = a1 * h + b1;
  h = a2 * h + b2;
  EXPECT_DOUBLE_EQ(c.a * 0.0 + c.b, h);

  std::mt19937_64 rng(11);
  ScanParams p = random_params(2, 1, 1, rng);
  Tensor x = uniform({2, 1}, rng, -1, 1);
  const double abar1 = std::exp(p.A[0] * p.delta[0]), abar2 = std::exp(p.A[0] * p.delta[1]);
  const AffinePair s1{abar1, p.delta[0] * p.B[0] * x[0]}, s2{abar2, p.delta[1] * p.B[1] * x[1]};
  const double h2 = combine(s2, s1).b;
  EXPECT_NEAR(parallel_scan(x, p)[1], p.C[1] * h2 + p.D[0] * x[1], 1e-14);
}

TEST(ParallelScan, IndependentOfWorkerCount) {
  std::mt19937_64 rng(12);
  ScanParams p = random_params(500, 3, 5, rng);
  Tensor x = uniform({500, 3}, rng, -1, 1);
  Tensor one = parallel_scan(x, p, 1);
  for (unsigned w : {2u, 3u, 8u}) {
    Tensor many = parallel_scan(x, p, w);
    for (std::size_t i = 0; i < one.size(); ++i) EXPECT_EQ(one[i], many[i]) << "workers=" << w;
  }
}

TEST(SelectiveScanOp, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(13);
  ScanParams p = random_params(6, 3, 2, rng);
  Tensor x = uniform({6, 3}, rng, -1, 1);
  Tensor r = uniform({6, 3}, rng, -1, 1);
  const double err = grad_check([&] { return sum(mul(selective_scan_op(x, p), r)); },
                                {x, p.A, p.B, p.C, p.D, p.delta});
  EXPECT_LT(err, 1e-6);
}

TEST(SelectiveScanOp, ForwardMatchesReference) {
  std::mt19937_64 rng(14);
  ScanParams p = random_params(40, 3, 4, rng);
  Tensor x = uniform({40, 3}, rng, -1, 1);
  Tensor a = selective_scan(x, p), b = selective_scan_op(x, p);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(SelectiveProjections, ZeroInputGivesBiasStep) {
  ParameterStore store;
  Rng rng(15);
  SelectiveWeights w = SelectiveWeights::make(store, "s", 4, 3, rng);
  for (Tensor* t : {&w.w_b, &w.w_c, &w.w_delta}) std::fill(t->data().begin(), t->data().end(), 0.0);
  const double beta = 0.37;
  std::fill(w.b_delta.data().begin(), w.b_delta.data().end(), beta);
  ScanParams p = selective_projections(Tensor({5, 4}, 0.0), w);
  for (double d : p.delta.data()) EXPECT_NEAR(d, std::log1p(std::exp(beta)), 1e-15);
}

TEST(SelectiveProjections, InitialStepAndStateMatrix) {
  ParameterStore store;
  Rng rng(16);
  SelectiveWeights w = SelectiveWeights::make(store, "s", 4, 3, rng);
  for (double b : w.b_delta.data()) EXPECT_NEAR(std::log1p(std::exp(b)), 0.05, 1e-12);
  ScanParams p = selective_projections(Tensor({2, 4}, 0.0), w);
  for (std::size_t e = 0; e < 4; ++e)
    for (std::size_t n = 0; n < 3; ++n) EXPECT_NEAR(p.A[e * 3 + n], -double(n + 1), 1e-12);
}

TEST(SelectiveProjections, DeltaPositiveOnRandomInputs) {
  ParameterStore store;
  Rng wrng(17);
  SelectiveWeights w = SelectiveWeights::make(store, "s", 8, 4, wrng);
  std::mt19937_64 rng(18);
  Tensor x = uniform({10000 / 8, 8}, rng, -50, 50);
  ScanParams p = selective_projections(x, w);
  for (double d : p.delta.data()) EXPECT_GT(d, 0.0);
  Tensor x8 = uniform({1250, 8}, rng, -1e3, 1e3);
  const ScanParams p8 = selective_projections(x8, w);
  for (double d : p8.delta.data()) EXPECT_GT(d, 0.0);
}

TEST(SelectiveProjections, RowLocality) {
  ParameterStore store;
  Rng wrng(19);
  SelectiveWeights w = SelectiveWeights::make(store, "s", 4, 3, wrng);
  std::mt19937_64 rng(20);
  Tensor x = uniform({6, 4}, rng, -1, 1);
  ScanParams a = selective_projections(x, w);
  Tensor x2 = x.clone();
  for (std::size_t j = 0; j < 4; ++j) x2[2 * 4 + j] += 0.5;
  ScanParams b = selective_projections(x2, w);
  for (std::size_t k = 0; k < 6; ++k) {
    bool same_b = true, same_d = true;
    for (std::size_t n = 0; n < 3; ++n) same_b &= a.B[k * 3 + n] == b.B[k * 3 + n] && a.C[k * 3 + n] == b.C[k * 3 + n];
    for (std::size_t e = 0; e < 4; ++e) same_d &= a.delta[k * 4 + e] == b.delta[k * 4 + e];
    EXPECT_EQ(same_b, k != 2);
    EXPECT_EQ(same_d, k != 2);
  }
}

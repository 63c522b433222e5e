#pragma once

// Selective state-space scan: h_k = exp(delta_k A) h_{k-1} + delta_k B_k x_k,
// y_k = C_k h_k + D x_k, one diagonal state of size N per feature channel.

#include <algorithm>
#include <cmath>
#include <span>
#include <thread>
#include <vector>

#include "mambarain/layers.hpp"

namespace mambarain {

// Shapes: A E x N (strictly negative), B and C L x N, D length E,
// delta L x E (strictly positive). E is the feature width D_feat.
struct ScanParams {
  Tensor A;
  Tensor B;
  Tensor C;
  Tensor D;
  Tensor delta;

  std::size_t length() const { return B.dim(0); }
  std::size_t width() const { return A.dim(0); }
  std::size_t state_size() const { return A.dim(1); }

  void validate() const {
    if (A.rank() != 2 || B.rank() != 2 || C.rank() != 2 || D.rank() != 1 || delta.rank() != 2)
      throw DimensionError("scan params: unexpected ranks");
    const std::size_t e = A.dim(0), n = A.dim(1), l = B.dim(0);
    if (B.dim(1) != n || C.dim(0) != l || C.dim(1) != n)
      throw DimensionError("scan params: B/C must be L x N, got " + shape_str(B.shape()) + ", " +
                           shape_str(C.shape()));
    if (D.dim(0) != e) throw DimensionError("scan params: D has length " + std::to_string(D.dim(0)));
    if (delta.dim(0) != l || delta.dim(1) != e)
      throw DimensionError("scan params: delta must be L x E, got " + shape_str(delta.shape()));
    for (double a : A.data())
      if (!(a < 0.0)) throw DomainError("scan params: A entries must be strictly negative");
    for (double d : delta.data())
      if (!(d > 0.0)) throw DomainError("scan params: delta entries must be strictly positive");
  }

  void check_input(const Tensor& x) const {
    validate();
    if (x.rank() != 2 || x.dim(0) != length() || x.dim(1) != width())
      throw DimensionError("scan: input " + shape_str(x.shape()) + " vs params L=" + std::to_string(length()) +
                           ", E=" + std::to_string(width()));
  }
};

struct Discretized {
  std::vector<double> a_bar;
  std::vector<double> b_bar;
};

// A_bar = exp(A * delta) (exact for diagonal A), B_bar = delta * B.
inline Discretized discretize(std::span<const double> a, std::span<const double> b, double delta) {
  if (!(delta > 0.0)) throw DomainError("discretize: delta must be positive");
  Discretized out;
  out.a_bar.reserve(a.size());
  out.b_bar.reserve(b.size());
  for (double v : a) {
    if (!std::isfinite(v)) throw DomainError("discretize: non-finite A entry");
    out.a_bar.push_back(std::exp(v * delta));
  }
  for (double v : b) out.b_bar.push_back(delta * v);
  return out;
}

// Reference sequential recurrence, O(L * E * N). Optionally records the
// hidden states (L x E x N).
inline Tensor selective_scan(const Tensor& x, const ScanParams& p, std::vector<double>* states = nullptr) {
  p.check_input(x);
  const std::size_t L = p.length(), E = p.width(), N = p.state_size();
  Tensor y({L, E});
  std::vector<double> h(E * N, 0.0);
  if (states) states->assign(L * E * N, 0.0);
  for (std::size_t k = 0; k < L; ++k) {
    for (std::size_t e = 0; e < E; ++e) {
      const double dt = p.delta[k * E + e];
      const double xv = x[k * E + e];
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        double& hv = h[e * N + n];
        hv = std::exp(dt * p.A[e * N + n]) * hv + dt * p.B[k * N + n] * xv;
        acc += p.C[k * N + n] * hv;
      }
      y[k * E + e] = acc + p.D[e] * xv;
    }
    if (states) std::copy(h.begin(), h.end(), states->begin() + k * E * N);
  }
  return y;
}

// Element of the associative scan: the affine map h -> a*h + b.
struct AffinePair {
  double a = 1.0;
  double b = 0.0;
};

// (a2,b2) o (a1,b1) = (a2*a1, a2*b1 + b2): apply step 1, then step 2.
inline AffinePair combine(const AffinePair& later, const AffinePair& earlier) {
  return {later.a * earlier.a, later.a * earlier.b + later.b};
}

// Blocked associative scan. The sequence is cut into fixed-size blocks; each
// block is reduced and prefix-scanned locally, block carries are combined in
// order, then applied. Block size is fixed, so the result does not depend on
// the number of worker threads.
inline Tensor parallel_scan(const Tensor& x, const ScanParams& p, unsigned workers = 1,
                            std::size_t block = 64) {
  p.check_input(x);
  const std::size_t L = p.length(), E = p.width(), N = p.state_size();
  const std::size_t blocks = (L + block - 1) / block;
  const std::size_t chains = E * N;

  // prefix[k][chain]: composition of steps from block start to k.
  std::vector<AffinePair> prefix(L * chains);
  auto local_scan = [&](std::size_t bi) {
    const std::size_t k0 = bi * block, k1 = std::min(L, k0 + block);
    for (std::size_t k = k0; k < k1; ++k)
      for (std::size_t e = 0; e < E; ++e) {
        const double dt = p.delta[k * E + e];
        const double xv = x[k * E + e];
        for (std::size_t n = 0; n < N; ++n) {
          const AffinePair step{std::exp(dt * p.A[e * N + n]), dt * p.B[k * N + n] * xv};
          const std::size_t c = e * N + n;
          prefix[k * chains + c] = (k == k0) ? step : combine(step, prefix[(k - 1) * chains + c]);
        }
      }
  };
  auto run_blocks = [&](auto&& fn) {
    const unsigned nw = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(blocks)));
    if (nw == 1) {
      for (std::size_t bi = 0; bi < blocks; ++bi) fn(bi);
      return;
    }
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < nw; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t bi = w; bi < blocks; bi += nw) fn(bi);
      });
    for (auto& t : pool) t.join();
  };
  run_blocks(local_scan);

  // Carry into block bi = composition of all earlier block totals.
  std::vector<AffinePair> carry(blocks * chains);
  for (std::size_t bi = 1; bi < blocks; ++bi) {
    const std::size_t last = std::min(L, bi * block) - 1;
    for (std::size_t c = 0; c < chains; ++c)
      carry[bi * chains + c] = combine(prefix[last * chains + c], carry[(bi - 1) * chains + c]);
  }

  Tensor y({L, E});
  auto finish = [&](std::size_t bi) {
    const std::size_t k0 = bi * block, k1 = std::min(L, k0 + block);
    for (std::size_t k = k0; k < k1; ++k)
      for (std::size_t e = 0; e < E; ++e) {
        double acc = 0.0;
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t c = e * N + n;
          // h0 = 0, so only the offset part of the composed map survives.
          const AffinePair full = combine(prefix[k * chains + c], carry[bi * chains + c]);
          acc += p.C[k * N + n] * full.b;
        }
        y[k * E + e] = acc + p.D[e] * x[k * E + e];
      }
  };
  run_blocks(finish);
  return y;
}

// Differentiable scan over tensors that may live on the tape. Same semantics
// as selective_scan.
inline Tensor selective_scan_op(const Tensor& x, const ScanParams& p) {
  p.check_input(x);
  const std::size_t L = p.length(), E = p.width(), N = p.state_size();
  auto states = std::make_shared<std::vector<double>>();
  Tensor y = selective_scan(x, p, states.get());
  if (Tape* tape = detail::recording_tape({&x, &p.A, &p.B, &p.C, &p.D, &p.delta})) {
    y.set_requires_grad();
    tape->record(y, [x, p, y, states, L, E, N]() mutable {
      if (!y.has_grad()) return;
      auto gy = y.grad();
      const auto& hs = *states;
      std::vector<double> gx(L * E, 0.0), gdelta(L * E, 0.0), gB(L * N, 0.0), gC(L * N, 0.0), gA(E * N, 0.0),
          gD(E, 0.0);
      // g holds dLoss/dh_k for each chain, propagated backwards in k.
      std::vector<double> g(E * N, 0.0);
      for (std::size_t k = L; k-- > 0;) {
        for (std::size_t e = 0; e < E; ++e) {
          const double dy = gy[k * E + e];
          const double xv = x[k * E + e];
          const double dt = p.delta[k * E + e];
          gD[e] += dy * xv;
          gx[k * E + e] += dy * p.D[e];
          for (std::size_t n = 0; n < N; ++n) {
            const std::size_t c = e * N + n;
            const double h = hs[k * E * N + c];
            gC[k * N + n] += dy * h;
            double& gh = g[c];
            gh += dy * p.C[k * N + n];
            const double a = p.A[c];
            const double abar = std::exp(dt * a);
            const double hprev = k ? hs[(k - 1) * E * N + c] : 0.0;
            // h_k = abar * h_{k-1} + dt * B * x
            const double dabar = gh * hprev;
            gdelta[k * E + e] += dabar * abar * a + gh * p.B[k * N + n] * xv;
            gA[c] += dabar * abar * dt;
            gB[k * N + n] += gh * dt * xv;
            gx[k * E + e] += gh * dt * p.B[k * N + n];
            gh *= abar;  // becomes the carry into step k-1
          }
        }
      }
      auto acc = [](const Tensor& t, const std::vector<double>& src) {
        if (!t.requires_grad()) return;
        auto gt = t.grad();
        for (std::size_t i = 0; i < src.size(); ++i) gt[i] += src[i];
      };
      acc(x, gx);
      acc(p.delta, gdelta);
      acc(p.A, gA);
      acc(p.B, gB);
      acc(p.C, gC);
      acc(p.D, gD);
    });
  }
  return y;
}

// Learned maps from the scan input to its input-dependent parameters.
struct SelectiveWeights {
  Tensor w_b;      // E x N
  Tensor w_c;      // E x N
  Tensor w_delta;  // E x E
  Tensor b_delta;  // E
  Tensor a_log;    // E x N, A = -exp(a_log)
  Tensor d_skip;   // E

  static SelectiveWeights make(ParameterStore& store, const std::string& name, std::size_t width,
                               std::size_t state, Rng& rng, double initial_delta = 0.05) {
    SelectiveWeights w;
    const double s = 1.0 / std::sqrt(double(width));
    w.w_b = store.add(name + ".w_b", normal_tensor({width, state}, s, rng));
    w.w_c = store.add(name + ".w_c", normal_tensor({width, state}, s, rng));
    w.w_delta = store.add(name + ".w_delta", normal_tensor({width, width}, 0.1 * s, rng));
    // softplus(bias) = initial_delta
    w.b_delta = store.add(name + ".b_delta", Tensor({width}, std::log(std::expm1(initial_delta))));
    Tensor a_log({width, state});
    for (std::size_t e = 0; e < width; ++e)
      for (std::size_t n = 0; n < state; ++n) a_log[e * state + n] = std::log(double(n + 1));
    w.a_log = store.add(name + ".a_log", a_log);
    w.d_skip = store.add(name + ".d_skip", Tensor({width}, 1.0));
    return w;
  }
};

// B = x W_B, C = x W_C, delta = softplus(x W_delta + b_delta); each row of the
// result depends only on the same row of x.
inline ScanParams selective_projections(const Tensor& x, const SelectiveWeights& w) {
  ScanParams p;
  p.B = linear(x, w.w_b);
  p.C = linear(x, w.w_c);
  p.delta = softplus(linear(x, w.w_delta, w.b_delta));
  p.A = scale(exp(w.a_log), -1.0);
  p.D = w.d_skip;
  return p;
}

}  // namespace mambarain

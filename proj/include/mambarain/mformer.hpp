#pragma once

// Hybrid block: selective-scan layer, MLP, multi-head self-attention, MLP.
// Each sublayer is pre-normalized and wrapped in a residual connection.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "mambarain/layers.hpp"
#include "mambarain/ssm.hpp"

namespace mambarain {

// Token order is time-major, then row-major within a frame.
struct TokenLayout {
  std::size_t time = 1;
  std::size_t height = 1;
  std::size_t width = 1;
  std::size_t length() const { return time * height * width; }
};

struct TokenSequence {
  Tensor tokens;  // L x D_feat
  TokenLayout layout;

  TokenSequence(Tensor t, TokenLayout l) : tokens(std::move(t)), layout(l) {
    if (tokens.rank() != 2 || tokens.dim(0) != layout.length())
      throw DimensionError("token sequence: " + shape_str(tokens.shape()) + " does not match layout length " +
                           std::to_string(layout.length()));
  }

  // Adds a learned L x D_feat positional embedding.
  TokenSequence with_position(const Tensor& positional) const {
    return TokenSequence(add(tokens, positional), layout);
  }
};

struct AttentionWeights {
  Tensor w_q;  // D x D
  Tensor w_k;
  Tensor w_v;
  std::size_t heads = 1;

  static AttentionWeights make(ParameterStore& store, const std::string& name, std::size_t width,
                               std::size_t heads, Rng& rng) {
    if (heads == 0 || width % heads != 0)
      throw ConfigError("attention: " + std::to_string(heads) + " heads do not divide width " + std::to_string(width));
    AttentionWeights w;
    const double s = 1.0 / std::sqrt(double(width));
    w.w_q = store.add(name + ".w_q", normal_tensor({width, width}, s, rng));
    w.w_k = store.add(name + ".w_k", normal_tensor({width, width}, s, rng));
    w.w_v = store.add(name + ".w_v", normal_tensor({width, width}, s, rng));
    w.heads = heads;
    return w;
  }
};

// softmax(Q_h K_h^T / sqrt(d)) V_h for each head h, heads concatenated.
// Q, K, V: L x D. Without a tape, rows are streamed so memory stays O(L).
inline Tensor attention_core(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  detail::require_same_shape(q, k, "attention");
  detail::require_same_shape(q, v, "attention");
  detail::require_rank(q, 2, "attention");
  const std::size_t L = q.dim(0), D = q.dim(1);
  if (heads == 0 || D % heads != 0)
    throw ConfigError("attention: " + std::to_string(heads) + " heads do not divide width " + std::to_string(D));
  const std::size_t d = D / heads;
  const double inv_sqrt_d = 1.0 / std::sqrt(double(d));
  Tape* tape = detail::recording_tape({&q, &k, &v});

  Tensor out({L, D});
  auto probs = std::make_shared<std::vector<double>>(tape ? heads * L * L : 0);
  std::vector<double> row(L);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < L; ++i) {
      const double* qi = q.ptr() + i * D + h * d;
      double mx = -INFINITY;
      for (std::size_t j = 0; j < L; ++j) {
        const double* kj = k.ptr() + j * D + h * d;
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += qi[c] * kj[c];
        row[j] = s * inv_sqrt_d;
        mx = std::max(mx, row[j]);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < L; ++j) z += (row[j] = std::exp(row[j] - mx));
      double* oi = out.ptr() + i * D + h * d;
      for (std::size_t j = 0; j < L; ++j) {
        const double pj = row[j] / z;
        if (tape) (*probs)[(h * L + i) * L + j] = pj;
        const double* vj = v.ptr() + j * D + h * d;
        for (std::size_t c = 0; c < d; ++c) oi[c] += pj * vj[c];
      }
    }
  }

  if (tape) {
    out.set_requires_grad();
    tape->record(out, [q, k, v, out, probs, L, D, d, heads, inv_sqrt_d]() mutable {
      if (!out.has_grad()) return;
      auto g = out.grad();
      std::vector<double> gq(L * D, 0.0), gk(L * D, 0.0), gv(L * D, 0.0), dp(L);
      for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < L; ++i) {
          const double* P = probs->data() + (h * L + i) * L;
          const double* gi = g.data() + i * D + h * d;
          double dot = 0.0;
          for (std::size_t j = 0; j < L; ++j) {
            const double* vj = v.ptr() + j * D + h * d;
            double* gvj = gv.data() + j * D + h * d;
            double s = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
              s += gi[c] * vj[c];
              gvj[c] += P[j] * gi[c];
            }
            dp[j] = s;
            dot += s * P[j];
          }
          const double* qi = q.ptr() + i * D + h * d;
          double* gqi = gq.data() + i * D + h * d;
          for (std::size_t j = 0; j < L; ++j) {
            const double ds = P[j] * (dp[j] - dot) * inv_sqrt_d;
            if (ds == 0.0) continue;
            const double* kj = k.ptr() + j * D + h * d;
            double* gkj = gk.data() + j * D + h * d;
            for (std::size_t c = 0; c < d; ++c) {
              gqi[c] += ds * kj[c];
              gkj[c] += ds * qi[c];
            }
          }
        }
      }
      auto acc = [](const Tensor& t, const std::vector<double>& src) {
        if (!t.requires_grad()) return;
        auto gt = t.grad();
        for (std::size_t i = 0; i < src.size(); ++i) gt[i] += src[i];
      };
      acc(q, gq);
      acc(k, gk);
      acc(v, gv);
    });
  }
  return out;
}

// softmax(Q K^T / sqrt(d)) V with Q = X W_Q, K = X W_K, V = X W_V.
inline Tensor self_attention(const TokenSequence& x, const AttentionWeights& w) {
  return attention_core(linear(x.tokens, w.w_q), linear(x.tokens, w.w_k), linear(x.tokens, w.w_v), w.heads);
}

struct MlpLayer {
  LinearLayer fc1;
  LinearLayer fc2;

  static MlpLayer make(ParameterStore& store, const std::string& name, std::size_t width, std::size_t ratio,
                       Rng& rng) {
    return {LinearLayer::make(store, name + ".fc1", width, width * ratio, rng),
            LinearLayer::make(store, name + ".fc2", width * ratio, width, rng)};
  }

  Tensor operator()(const Tensor& x) const { return fc2(silu(fc1(x))); }
};

// out = W_out( scan(W_in x) * silu(W_gate x) )
struct VimLayer {
  LinearLayer in_proj;
  LinearLayer gate;
  SelectiveWeights ssm;
  LinearLayer out_proj;

  static VimLayer make(ParameterStore& store, const std::string& name, std::size_t width, std::size_t expand,
                       std::size_t state, Rng& rng) {
    VimLayer l;
    const std::size_t inner = width * expand;
    l.in_proj = LinearLayer::make(store, name + ".in_proj", width, inner, rng);
    l.gate = LinearLayer::make(store, name + ".gate", width, inner, rng);
    l.ssm = SelectiveWeights::make(store, name + ".ssm", inner, state, rng);
    l.out_proj = LinearLayer::make(store, name + ".out_proj", inner, width, rng);
    return l;
  }

  Tensor operator()(const Tensor& x) const {
    Tensor u = in_proj(x);
    ScanParams p = selective_projections(u, ssm);
    Tensor y = selective_scan_op(u, p);
    return out_proj(mul(y, silu(gate(x))));
  }
};

inline Tensor vim_layer(const TokenSequence& x, const VimLayer& layer) { return layer(x.tokens); }

struct MFormerConfig {
  std::size_t width = 16;  // D_feat
  std::size_t heads = 4;
  std::size_t state = 8;   // N
  std::size_t expand = 2;
  std::size_t mlp_ratio = 2;
  bool zero_init_residual = true;
};

class MFormerBlock {
public:
  MFormerBlock() = default;

  MFormerBlock(ParameterStore& store, const std::string& name, const MFormerConfig& cfg, Rng& rng) {
    norm_vim_ = LayerNormLayer::make(store, name + ".norm_vim", cfg.width);
    vim_ = VimLayer::make(store, name + ".vim", cfg.width, cfg.expand, cfg.state, rng);
    norm_mlp1_ = LayerNormLayer::make(store, name + ".norm_mlp1", cfg.width);
    mlp1_ = MlpLayer::make(store, name + ".mlp1", cfg.width, cfg.mlp_ratio, rng);
    norm_attn_ = LayerNormLayer::make(store, name + ".norm_attn", cfg.width);
    attn_ = AttentionWeights::make(store, name + ".attn", cfg.width, cfg.heads, rng);
    attn_out_ = LinearLayer::make(store, name + ".attn_out", cfg.width, cfg.width, rng);
    norm_mlp2_ = LayerNormLayer::make(store, name + ".norm_mlp2", cfg.width);
    mlp2_ = MlpLayer::make(store, name + ".mlp2", cfg.width, cfg.mlp_ratio, rng);
    if (cfg.zero_init_residual) zero_residual_branches();
  }

  // Output projections of all four residual branches set to zero, which
  // makes the block the identity map.
  void zero_residual_branches() {
    for (Tensor* t : {&vim_.out_proj.weight, &vim_.out_proj.bias, &mlp1_.fc2.weight, &mlp1_.fc2.bias,
                      &attn_out_.weight, &attn_out_.bias, &mlp2_.fc2.weight, &mlp2_.fc2.bias})
      std::fill(t->data().begin(), t->data().end(), 0.0);
  }

  // Identity-preserving pipeline over ViM -> MLP -> attention -> MLP.
  Tensor forward(const TokenSequence& x) const {
    Tensor h = x.tokens;
    h = add(h, vim_(norm_vim_(h)));
    h = add(h, mlp1_(norm_mlp1_(h)));
    h = add(h, attn_out_(self_attention(TokenSequence(norm_attn_(h), x.layout), attn_)));
    h = add(h, mlp2_(norm_mlp2_(h)));
    return h;
  }

  const VimLayer& vim() const { return vim_; }
  const AttentionWeights& attention() const { return attn_; }

private:
  LayerNormLayer norm_vim_;
  VimLayer vim_;
  LayerNormLayer norm_mlp1_;
  MlpLayer mlp1_;
  LayerNormLayer norm_attn_;
  AttentionWeights attn_;
  LinearLayer attn_out_;
  LayerNormLayer norm_mlp2_;
  MlpLayer mlp2_;
};

inline Tensor mformer_forward(const TokenSequence& x, const MFormerBlock& block) { return block.forward(x); }

}  // namespace mambarain

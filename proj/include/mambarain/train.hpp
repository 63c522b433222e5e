#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mambarain/losses.hpp"
#include "mambarain/model.hpp"
#include "mambarain/verify.hpp"

namespace mambarain {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
public:
  Adam(ParameterStore& store, AdamOptions opt = {}) : store_(store), opt_(opt) {
    for (const auto& [_, t] : store_.entries()) {
      m_.emplace_back(t.size(), 0.0);
      v_.emplace_back(t.size(), 0.0);
    }
  }

  // One update with step size lr using the parameters' current gradients.
  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, double(t_));
    auto& entries = store_.entries();
    for (std::size_t p = 0; p < entries.size(); ++p) {
      Tensor& w = entries[p].second;
      if (!w.has_grad()) continue;
      auto g = w.grad();
      auto x = w.data();
      auto& m = m_[p];
      auto& v = v_[p];
      for (std::size_t i = 0; i < x.size(); ++i) {
        m[i] = opt_.beta1 * m[i] + (1 - opt_.beta1) * g[i];
        v[i] = opt_.beta2 * v[i] + (1 - opt_.beta2) * g[i] * g[i];
        x[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + opt_.eps);
      }
    }
  }

  std::size_t steps() const { return t_; }

private:
  ParameterStore& store_;
  AdamOptions opt_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

// Cosine annealing from lr at step 0 to min_ratio*lr at the final step.
inline double cosine_lr(std::size_t step, std::size_t total_steps, double lr, double min_ratio = 0.005) {
  if (total_steps <= 1) return lr;
  const double p = std::min(1.0, double(step) / double(total_steps - 1));
  const double lo = lr * min_ratio;
  return lo + 0.5 * (lr - lo) * (1.0 + std::cos(std::numbers::pi * p));
}

struct TrainingSample {
  Tensor inputs;   // T x H x W, normalized
  Tensor targets;  // K x H x W, normalized
  Tensor dem;      // 1 x H x W, normalized
  unsigned interval_minutes = 6;
};

inline TrainingSample make_training_sample(const RadarSequence& seq, std::size_t t, std::size_t k) {
  if (seq.frames.size() < t + k)
    throw ContractError("sample holds " + std::to_string(seq.frames.size()) + " frames, need " + std::to_string(t + k));
  return {frames_to_tensor(seq.frames, 0, t), frames_to_tensor(seq.frames, t, k), dem_to_tensor(seq.dem),
          seq.interval_minutes};
}

enum class LossKind { spectral, weighted_spectral, mse, combined };

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "spectral") return LossKind::spectral;
  if (s == "weighted_spectral") return LossKind::weighted_spectral;
  if (s == "mse") return LossKind::mse;
  if (s == "combined") return LossKind::combined;
  throw ConfigError("unknown loss '" + s + "' (spectral, weighted_spectral, mse, combined)");
}

struct TrainOptions {
  std::size_t epochs = 40;
  std::size_t batch_size = 8;
  double learning_rate = 2e-3;
  double lr_min_ratio = 0.005;
  AdamOptions adam;
  LossKind loss = LossKind::spectral;
  double lambda_spec = 1.0;
  double lambda_mse = 0.0;
  std::uint64_t seed = 0;
  std::size_t max_steps = 0;  // 0 = no cap
  bool augment = true;        // random flips and transposes per sample
};

// Applies one of the 8 symmetries of the square to every channel of a C x H x W
// tensor. Bit 0 flips rows, bit 1 flips columns, bit 2 transposes (square only).
inline Tensor dihedral(const Tensor& x, unsigned code) {
  if (x.rank() != 3) throw ContractError("dihedral: expected C x H x W");
  const std::size_t C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const bool transpose = (code & 4u) != 0;
  if (transpose && H != W) throw ContractError("dihedral: transpose needs a square grid");
  Tensor y(x.shape());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < W; ++j) {
        std::size_t r = (code & 1u) ? H - 1 - i : i, q = (code & 2u) ? W - 1 - j : j;
        if (transpose) std::swap(r, q);
        y[(c * H + r) * W + q] = x[(c * H + i) * W + j];
      }
  return y;
}

inline Tensor training_loss(const Tensor& pred, const Tensor& target, const TrainOptions& opt) {
  switch (opt.loss) {
    case LossKind::spectral: return spectral_loss(pred, target);
    case LossKind::weighted_spectral:
      return frequency_weighted_spectral_loss(pred, target, radial_weight_map(pred.dim(1), pred.dim(2)));
    case LossKind::mse: return mse_loss(pred, target);
    case LossKind::combined: return combined_loss(pred, target, opt.lambda_spec, opt.lambda_mse).total;
  }
  throw ConfigError("unhandled loss kind");
}

struct EpochLog {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::optional<double> val_csi20;
  double learning_rate = 0.0;
};

struct DivergenceError : Error {
  explicit DivergenceError(const std::string& w) : Error("divergence", w) {}
};

inline double mean_loss(const MambaRainNet& net, const std::vector<TrainingSample>& data, const TrainOptions& opt) {
  NoGradScope no_grad;
  double s = 0.0;
  for (const auto& d : data) s += training_loss(net.forward(d.inputs, d.dem), d.targets, opt).item();
  return data.empty() ? 0.0 : s / double(data.size());
}

inline SkillReport evaluate_model(const MambaRainNet& net, const std::vector<TrainingSample>& data) {
  if (data.empty()) throw ContractError("evaluate_model: no samples");
  NoGradScope no_grad;
  SkillAccumulator acc;
  for (const auto& d : data) {
    Tensor y = net.forward(d.inputs, d.dem);
    acc.add(ForecastBundle::make(tensor_to_frames(y), tensor_to_frames(d.targets), d.interval_minutes));
  }
  return acc.report();
}

// Mini-batch training with Adam and per-step cosine annealing. Gradients are
// averaged over each batch; samples are processed one at a time on their own
// tape. on_epoch sees every epoch's log; returning from it normally continues.
inline std::vector<EpochLog> train_model(MambaRainNet& net, const std::vector<TrainingSample>& train,
                                         const std::vector<TrainingSample>& val, const TrainOptions& opt,
                                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  if (train.empty()) throw ContractError("train: empty training set");
  if (opt.batch_size == 0 || opt.epochs == 0) throw ConfigError("train: epochs and batch size must be positive");
  auto& store = net.parameters();
  Adam adam(store, opt.adam);
  std::mt19937_64 rng(opt.seed ^ 0x5851F42D4C957F2DULL);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t batches = (train.size() + opt.batch_size - 1) / opt.batch_size;
  std::size_t total_steps = batches * opt.epochs;
  if (opt.max_steps) total_steps = std::min(total_steps, opt.max_steps);

  std::vector<EpochLog> history;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < opt.epochs && step < total_steps; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t seen = 0;
    double lr = opt.learning_rate;
    for (std::size_t b = 0; b < batches && step < total_steps; ++b, ++step) {
      store.zero_grad();
      const std::size_t lo = b * opt.batch_size, hi = std::min(train.size(), lo + opt.batch_size);
      for (std::size_t i = lo; i < hi; ++i) {
        const TrainingSample& s = train[order[i]];
        const unsigned code = opt.augment ? unsigned(rng() % (s.inputs.dim(1) == s.inputs.dim(2) ? 8 : 4)) : 0u;
        const Tensor x = dihedral(s.inputs, code), dem = dihedral(s.dem, code), y = dihedral(s.targets, code);
        const std::string where = "epoch " + std::to_string(epoch) + ", step " + std::to_string(step);
        Tape tape;
        TapeScope scope(tape);
        // Numeric domain failures inside a step mean the weights have blown up.
        try {
          Tensor loss = training_loss(net.forward(x, dem), y, opt);
          if (!std::isfinite(loss.item())) throw DivergenceError("non-finite loss at " + where);
          loss_sum += loss.item();
          ++seen;
          tape.backward(loss);
        } catch (const DomainError& e) {
          throw DivergenceError(std::string(e.what()) + " at " + where);
        }
      }
      const double inv = 1.0 / double(hi - lo);
      for (auto& [_, t] : store.entries())
        if (t.has_grad())
          for (double& g : t.grad()) g *= inv;
      lr = cosine_lr(step, total_steps, opt.learning_rate, opt.lr_min_ratio);
      adam.step(lr);
      for (const auto& [name, t] : store.entries())
        for (double v : t.data())
          if (!std::isfinite(v))
            throw DivergenceError("non-finite weight in " + name + " after step " + std::to_string(step));
    }
    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_sum / double(std::max<std::size_t>(1, seen));
    log.learning_rate = lr;
    if (!val.empty()) {
      log.val_loss = mean_loss(net, val, opt);
      log.val_csi20 = evaluate_model(net, val).at_threshold(20.0).scores.csi;
    }
    history.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return history;
}

}  // namespace mambarain

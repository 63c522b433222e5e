#pragma once

#include <cmath>
#include <random>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "mambarain/ops.hpp"

namespace mambarain {

// Named, ordered collection of learnable tensors. Registration order defines
// checkpoint order and the optimizer's parameter layout.
class ParameterStore {
public:
  Tensor& add(std::string name, Tensor t) {
    for (auto& [n, _] : params_)
      if (n == name) throw ConfigError("duplicate parameter name " + name);
    t.set_requires_grad();
    params_.emplace_back(std::move(name), std::move(t));
    return params_.back().second;
  }

  std::vector<std::pair<std::string, Tensor>>& entries() { return params_; }
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return params_; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
  }

  Tensor* find(const std::string& name) {
    for (auto& [n, t] : params_)
      if (n == name) return &t;
    return nullptr;
  }

private:
  std::vector<std::pair<std::string, Tensor>> params_;
};

using Rng = std::mt19937_64;

inline Tensor normal_tensor(Shape shape, double stddev, Rng& rng) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

struct Conv2dLayer {
  Tensor weight;  // Cout x Cin x k x k
  Tensor bias;    // Cout
  std::size_t stride = 1;
  std::size_t pad = 1;
  PadMode mode = PadMode::zeros;

  static Conv2dLayer make(ParameterStore& store, const std::string& name, std::size_t cin, std::size_t cout,
                          std::size_t k, std::size_t stride, PadMode mode, Rng& rng, double gain = 1.0) {
    Conv2dLayer l;
    const double std = gain / std::sqrt(double(cin * k * k));
    l.weight = store.add(name + ".weight", normal_tensor({cout, cin, k, k}, std, rng));
    l.bias = store.add(name + ".bias", Tensor({cout}));
    l.stride = stride;
    l.pad = k / 2;
    l.mode = mode;
    return l;
  }

  Tensor operator()(const Tensor& x) const { return conv2d(x, weight, bias, stride, pad, mode); }
};

struct LinearLayer {
  Tensor weight;  // in x out
  Tensor bias;    // out

  static LinearLayer make(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
                          double gain = 1.0) {
    LinearLayer l;
    l.weight = store.add(name + ".weight", normal_tensor({in, out}, gain / std::sqrt(double(in)), rng));
    l.bias = store.add(name + ".bias", Tensor({out}));
    return l;
  }

  Tensor operator()(const Tensor& x) const { return linear(x, weight, bias); }
};

struct LayerNormLayer {
  Tensor gain;
  Tensor bias;

  static LayerNormLayer make(ParameterStore& store, const std::string& name, std::size_t d) {
    LayerNormLayer l;
    l.gain = store.add(name + ".gain", Tensor({d}, 1.0));
    l.bias = store.add(name + ".bias", Tensor({d}));
    return l;
  }

  Tensor operator()(const Tensor& x) const { return layernorm(x, gain, bias); }
};

struct SiluLayer {
  Tensor operator()(const Tensor& x) const { return silu(x); }
};

struct SoftmaxLayer {
  Tensor operator()(const Tensor& x) const { return softmax(x); }
};

// Halves spatial extents with a stride-2 3x3 convolution.
struct Downsample2xLayer {
  Conv2dLayer conv;

  static Downsample2xLayer make(ParameterStore& store, const std::string& name, std::size_t cin, std::size_t cout,
                                PadMode mode, Rng& rng) {
    return {Conv2dLayer::make(store, name, cin, cout, 3, 2, mode, rng)};
  }

  Tensor operator()(const Tensor& x) const {
    if (x.rank() != 3 || x.dim(1) % 2 || x.dim(2) % 2)
      throw DimensionError("downsample needs even spatial extents, got " + shape_str(x.shape()));
    return conv(x);
  }
};

// Nearest-neighbour x2 followed by a 3x3 convolution.
struct Upsample2xLayer {
  Conv2dLayer conv;

  static Upsample2xLayer make(ParameterStore& store, const std::string& name, std::size_t cin, std::size_t cout,
                              PadMode mode, Rng& rng) {
    return {Conv2dLayer::make(store, name, cin, cout, 3, 1, mode, rng)};
  }

  Tensor operator()(const Tensor& x) const { return conv(upsample_nearest2x(x)); }
};

using Layer = std::variant<Conv2dLayer, LinearLayer, LayerNormLayer, SiluLayer, SoftmaxLayer, Downsample2xLayer,
                           Upsample2xLayer>;

inline Tensor apply_layer(const Layer& layer, const Tensor& input) {
  return std::visit([&](const auto& l) { return l(input); }, layer);
}

}  // namespace mambarain

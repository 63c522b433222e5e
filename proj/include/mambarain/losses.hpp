#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <string>

#include "mambarain/fft.hpp"
#include "mambarain/ops.hpp"

namespace mambarain {

namespace detail {

inline void frame_dims(const Tensor& t, std::size_t& frames, std::size_t& h, std::size_t& w) {
  if (t.rank() == 2) {
    frames = 1;
    h = t.dim(0);
    w = t.dim(1);
  } else if (t.rank() == 3) {
    frames = t.dim(0);
    h = t.dim(1);
    w = t.dim(2);
  } else {
    throw DimensionError("loss expects H x W or K x H x W, got " + shape_str(t.shape()));
  }
}

}  // namespace detail

// 1 + r / r_max over wrapped frequency indices (DC at (0,0)).
inline Tensor radial_weight_map(std::size_t h, std::size_t w) {
  Tensor m({h, w});
  auto wrap = [](std::size_t i, std::size_t n) {
    const double f = double(i);
    return f <= double(n) / 2 ? f : f - double(n);
  };
  const double rmax = std::hypot(double(h) / 2, double(w) / 2);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) m[r * w + c] = 1.0 + std::hypot(wrap(r, h), wrap(c, w)) / rmax;
  return m;
}

// (1/K) * sum_k sum_f weight_f * |F(pred_k - truth_k)_f|^2 with an unnormalized
// 2D DFT F. weight = 1 everywhere when no map is given.
inline Tensor frequency_weighted_spectral_loss(const Tensor& pred, const Tensor& truth,
                                               const std::optional<Tensor>& weight_map) {
  detail::require_same_shape(pred, truth, "spectral_loss");
  std::size_t frames = 0, h = 0, w = 0;
  detail::frame_dims(pred, frames, h, w);
  detail::check_fft_extents(h, w);
  if (weight_map) {
    if (weight_map->size() != h * w)
      throw DimensionError("spectral_loss: weight map " + shape_str(weight_map->shape()) + " vs frame " +
                           std::to_string(h) + "x" + std::to_string(w));
    for (double v : weight_map->data())
      if (v < 0.0) throw DomainError("spectral_loss: negative frequency weight");
  }
  const std::size_t hw = h * w;
  auto weight_at = [&](std::size_t i) { return weight_map ? (*weight_map)[i] : 1.0; };

  double total = 0.0;
  std::vector<ComplexGrid> spectra;
  spectra.reserve(frames);
  std::vector<double> resid(hw);
  for (std::size_t k = 0; k < frames; ++k) {
    for (std::size_t i = 0; i < hw; ++i) resid[i] = pred[k * hw + i] - truth[k * hw + i];
    spectra.push_back(fft2(resid, h, w));
    const auto& s = spectra.back();
    for (std::size_t i = 0; i < hw; ++i) total += weight_at(i) * (s.real[i] * s.real[i] + s.imag[i] * s.imag[i]);
  }
  Tensor out = Tensor::scalar(total / double(frames));

  if (Tape* tape = detail::recording_tape({&pred, &truth})) {
    out.set_requires_grad();
    auto held = std::make_shared<std::vector<ComplexGrid>>(std::move(spectra));
    tape->record(out, [=]() mutable {
      if (!out.has_grad()) return;
      const double g = out.grad()[0];
      // d/dr sum_f w_f |(F r)_f|^2 = 2 * Re(F^H (w . F r)) = 2*h*w*Re(ifft2(w . F r))
      const double c = 2.0 * g * double(hw) / double(frames);
      for (std::size_t k = 0; k < frames; ++k) {
        ComplexGrid z = (*held)[k];
        if (weight_map)
          for (std::size_t i = 0; i < hw; ++i) {
            z.real[i] *= (*weight_map)[i];
            z.imag[i] *= (*weight_map)[i];
          }
        const ComplexGrid back = ifft2(z);
        if (pred.requires_grad()) {
          auto gp = pred.grad();
          for (std::size_t i = 0; i < hw; ++i) gp[k * hw + i] += c * back.real[i];
        }
        if (truth.requires_grad()) {
          auto gt = truth.grad();
          for (std::size_t i = 0; i < hw; ++i) gt[k * hw + i] -= c * back.real[i];
        }
      }
    });
  }
  return out;
}

inline Tensor spectral_loss(const Tensor& pred, const Tensor& truth) {
  return frequency_weighted_spectral_loss(pred, truth, std::nullopt);
}

inline Tensor mse_loss(const Tensor& pred, const Tensor& truth) { return mean(square(sub(pred, truth))); }

struct LossReport {
  Tensor total;
  std::map<std::string, double> components;
  std::map<std::string, double> weights;
};

// total = lambda_spec * spectral + lambda_mse * mse. Both components are
// reported; a zero-weighted one stays off the tape.
inline LossReport combined_loss(const Tensor& pred, const Tensor& truth, double lambda_spec, double lambda_mse,
                                const std::optional<Tensor>& weight_map = std::nullopt) {
  if (lambda_spec < 0.0 || lambda_mse < 0.0) throw DomainError("combined_loss: weights must be nonnegative");
  if (lambda_spec == 0.0 && lambda_mse == 0.0) throw ConfigError("combined_loss: both weights are zero");
  LossReport r;
  r.weights = {{"spectral", lambda_spec}, {"mse", lambda_mse}};
  std::optional<Tensor> total;
  if (lambda_spec > 0.0) {
    Tensor s = frequency_weighted_spectral_loss(pred, truth, weight_map);
    r.components["spectral"] = s.item();
    total = lambda_spec == 1.0 ? s : scale(s, lambda_spec);
  }
  if (lambda_mse > 0.0) {
    Tensor m = mse_loss(pred, truth);
    r.components["mse"] = m.item();
    Tensor wm = lambda_mse == 1.0 ? m : scale(m, lambda_mse);
    total = total ? add(*total, wm) : wm;
  }
  {
    NoGradScope no_grad;
    if (!r.components.count("spectral"))
      r.components["spectral"] = frequency_weighted_spectral_loss(pred, truth, weight_map).item();
    if (!r.components.count("mse")) r.components["mse"] = mse_loss(pred, truth).item();
  }
  r.total = *total;
  return r;
}

}  // namespace mambarain

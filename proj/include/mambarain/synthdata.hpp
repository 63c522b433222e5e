#pragma once

// Seeded synthetic radar world: semi-Lagrangian advection under a
// divergence-free velocity field, Gaussian diffusion, Gaussian cells that
// grow and then decay exponentially, and multiplicative orographic
// enhancement over a synthetic terrain.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "mambarain/fft.hpp"
#include "mambarain/grid.hpp"

namespace mambarain {

inline constexpr double kMaxDbz = 70.0;

inline double normalize_dbz(double dbz) { return dbz / kMaxDbz; }
inline double denormalize_dbz(double v) { return v * kMaxDbz; }

struct DemGrid {
  Grid elevation;  // meters
  double min = 0.0;
  double max = 0.0;

  explicit DemGrid(Grid g = {}) : elevation(std::move(g)) { refresh_stats(); }

  void refresh_stats() {
    if (elevation.values.empty()) return;
    for (double v : elevation.values)
      if (!std::isfinite(v)) throw DomainError("dem: non-finite elevation");
    auto [lo, hi] = std::minmax_element(elevation.values.begin(), elevation.values.end());
    min = *lo;
    max = *hi;
  }

  // Affine map min -> 0, max -> 1. A flat DEM maps to all zeros.
  Grid normalized() const {
    Grid out(elevation.height, elevation.width);
    const double span = max - min;
    if (span > 0.0)
      for (std::size_t i = 0; i < out.size(); ++i) out.values[i] = (elevation.values[i] - min) / span;
    return out;
  }
};

struct RadarSequence {
  std::vector<Grid> frames;  // dBZ in [0, 70]
  unsigned interval_minutes = 6;
  DemGrid dem;

  std::size_t height() const { return frames.empty() ? dem.elevation.height : frames.front().height; }
  std::size_t width() const { return frames.empty() ? dem.elevation.width : frames.front().width; }
};

struct SynthConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t input_frames = 4;   // T
  std::size_t output_frames = 8;  // K
  unsigned interval_minutes = 6;
  std::size_t spinup_frames = 4;

  // Uniform drift with random direction plus a divergence-free swirl:
  // u += s*sin(2*pi*y/H + p1), v += s*sin(2*pi*x/W + p2).
  double speed_min = 0.4;  // cells per frame
  double speed_max = 1.4;
  double direction_deg = -1.0;  // < 0 draws a random direction
  double swirl = 0.3;
  double diffusion = 0.05;  // cells^2 per frame; blur sigma = sqrt(2*diffusion)

  std::size_t initial_cells = 4;
  double birth_rate = 0.35;  // expected new cells per frame
  double cell_radius_min = 2.0;
  double cell_radius_max = 4.5;
  double cell_amplitude_min = 25.0;  // dBZ
  double cell_amplitude_max = 50.0;
  double birth_amplitude = 14.0;
  double growth_tau = 4.0;   // frames; <= 0 disables growth
  double decay_tau = 14.0;   // frames; <= 0 disables decay
  double maturation_frames = 8.0;

  double orographic_gain = 0.6;
  double dem_base = 300.0;  // meters
  double dem_ridge_amplitude = 1500.0;
  double dem_noise_amplitude = 150.0;
  double dem_max_gradient = 0.5;  // bound on adjacent-cell change of normalized DEM

  void validate() const {
    if (!is_power_of_two(height) || !is_power_of_two(width))
      throw ConfigError("synth: grid extents must be powers of two, got " + std::to_string(height) + "x" +
                        std::to_string(width));
    if (input_frames == 0 || output_frames == 0) throw ConfigError("synth: T and K must be positive");
    if (speed_min < 0 || speed_max < speed_min) throw ConfigError("synth: invalid speed range");
    for (double v : {swirl, diffusion, birth_rate, cell_radius_min, birth_amplitude, maturation_frames,
                     orographic_gain, dem_ridge_amplitude, dem_noise_amplitude})
      if (v < 0 || !std::isfinite(v)) throw ConfigError("synth: rates and amplitudes must be nonnegative");
    if (cell_radius_max < cell_radius_min || cell_amplitude_max < cell_amplitude_min)
      throw ConfigError("synth: invalid cell ranges");
    if (!(dem_max_gradient > 0)) throw ConfigError("synth: dem_max_gradient must be positive");
  }
};

namespace detail {

inline double periodic_delta(double a, double b, double n) {
  double d = a - b;
  d -= n * std::round(d / n);
  return d;
}

inline Grid gaussian_blob(std::size_t h, std::size_t w, double row, double col, double radius) {
  Grid g(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const double dr = periodic_delta(double(r), row, double(h));
      const double dc = periodic_delta(double(c), col, double(w));
      g.at(r, c) = std::exp(-0.5 * (dr * dr + dc * dc) / (radius * radius));
    }
  return g;
}

inline double max_adjacent_change(const Grid& g) {
  double worst = 0.0;
  for (std::size_t r = 0; r < g.height; ++r)
    for (std::size_t c = 0; c < g.width; ++c) {
      worst = std::max(worst, std::abs(g.at(r, c) - g.at(r, (c + 1) % g.width)));
      worst = std::max(worst, std::abs(g.at(r, c) - g.at((r + 1) % g.height, c)));
    }
  return worst;
}

}  // namespace detail

// Periodic terrain: a few low-frequency sinusoidal ridges plus blurred
// noise, smoothed further until the normalized field meets dem_max_gradient.
inline DemGrid dem_synthesize(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + 0xD1B54A32D192ED03ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> freq(-2, 2);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t h = cfg.height, w = cfg.width;
  Grid elev(h, w, cfg.dem_base);

  if (cfg.dem_ridge_amplitude > 0)
    for (int i = 0; i < 3; ++i) {
      int ky = 0, kx = 0;
      while (ky == 0 && kx == 0) {
        ky = freq(rng);
        kx = freq(rng);
      }
      const double amp = cfg.dem_ridge_amplitude * (0.4 + 0.6 * unit(rng)) / 3.0;
      const double phase = 2 * std::numbers::pi * unit(rng);
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t c = 0; c < w; ++c)
          elev.at(r, c) += amp * (1.0 + std::sin(2 * std::numbers::pi * (ky * double(r) / double(h) +
                                                                          kx * double(c) / double(w)) +
                                                 phase));
    }
  if (cfg.dem_noise_amplitude > 0) {
    Grid noise(h, w);
    for (double& v : noise.values) v = gauss(rng);
    noise = gaussian_blur_periodic(noise, 1.5);
    double sd = 0.0;
    for (double v : noise.values) sd += v * v;
    sd = std::sqrt(sd / double(noise.size()));
    if (sd > 0)
      for (std::size_t i = 0; i < elev.size(); ++i) elev.values[i] += cfg.dem_noise_amplitude * noise.values[i] / sd;
  }
  for (double& v : elev.values) v = std::max(0.0, v);

  DemGrid dem(elev);
  for (int pass = 0; pass < 64 && detail::max_adjacent_change(dem.normalized()) >= cfg.dem_max_gradient; ++pass)
    dem = DemGrid(gaussian_blur_periodic(dem.elevation, 1.0));
  return dem;
}

// Generates T + K frames of reflectivity (dBZ) together with the sample's DEM.
inline RadarSequence generate_sample(const SynthConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t h = cfg.height, w = cfg.width;
  std::mt19937_64 rng(seed ^ 0xA0761D6478BD642FULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  RadarSequence seq;
  seq.interval_minutes = cfg.interval_minutes;
  seq.dem = dem_synthesize(cfg, seed);
  const Grid dem_n = seq.dem.normalized();

  const double speed = uniform(cfg.speed_min, cfg.speed_max);
  const double dir = cfg.direction_deg >= 0 ? cfg.direction_deg * std::numbers::pi / 180.0
                                            : uniform(0.0, 2 * std::numbers::pi);
  const double p1 = uniform(0.0, 2 * std::numbers::pi), p2 = uniform(0.0, 2 * std::numbers::pi);
  Grid u(h, w), v(h, w);
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      u.at(r, c) = speed * std::cos(dir) + cfg.swirl * std::sin(2 * std::numbers::pi * double(r) / double(h) + p1);
      v.at(r, c) = speed * std::sin(dir) + cfg.swirl * std::sin(2 * std::numbers::pi * double(c) / double(w) + p2);
    }

  const double growth = cfg.growth_tau > 0 ? 1.0 / cfg.growth_tau : 0.0;
  const double decay = cfg.decay_tau > 0 ? 1.0 / cfg.decay_tau : 0.0;
  const double drift = cfg.maturation_frames > 0 ? (growth + decay) / cfg.maturation_frames : 0.0;

  Grid rain(h, w);  // latent reflectivity before orographic modulation
  Grid rate(h, w, -decay);  // log growth per frame
  auto add_cell = [&](double amplitude, double log_rate) {
    const double row = uniform(0.0, double(h)), col = uniform(0.0, double(w));
    const Grid blob = detail::gaussian_blob(h, w, row, col, uniform(cfg.cell_radius_min, cfg.cell_radius_max));
    for (std::size_t i = 0; i < rain.size(); ++i) {
      rain.values[i] += amplitude * blob.values[i];
      rate.values[i] += (log_rate - rate.values[i]) * blob.values[i];
    }
  };
  for (std::size_t i = 0; i < cfg.initial_cells; ++i)
    add_cell(uniform(cfg.cell_amplitude_min, cfg.cell_amplitude_max), uniform(-decay, growth));

  std::poisson_distribution<int> births(cfg.birth_rate > 0 ? cfg.birth_rate : 1.0);
  const double blur_sigma = std::sqrt(2.0 * cfg.diffusion);
  auto step = [&]() {
    rain = advect_semi_lagrangian(rain, u, v);
    rate = advect_semi_lagrangian(rate, u, v);
    if (cfg.diffusion > 0) rain = gaussian_blur_periodic(rain, blur_sigma);
    if (growth > 0 || decay > 0)
      for (std::size_t i = 0; i < rain.size(); ++i) {
        rain.values[i] = std::min(rain.values[i] * std::exp(rate.values[i]), 2.0 * kMaxDbz);
        rate.values[i] = std::max(rate.values[i] - drift, -decay);
      }
    if (cfg.birth_rate > 0) {
      const int n = births(rng);
      for (int i = 0; i < n; ++i) add_cell(cfg.birth_amplitude, growth);
    }
  };
  auto observe = [&]() {
    Grid f(h, w);
    for (std::size_t i = 0; i < f.size(); ++i)
      f.values[i] = std::clamp(rain.values[i] * (1.0 + cfg.orographic_gain * dem_n.values[i]), 0.0, kMaxDbz);
    return f;
  };

  for (std::size_t i = 0; i < cfg.spinup_frames; ++i) step();
  const std::size_t total = cfg.input_frames + cfg.output_frames;
  for (std::size_t k = 0; k < total; ++k) {
    if (k) step();
    seq.frames.push_back(observe());
  }
  return seq;
}

// ---------------------------------------------------------------------------
// "NWCG" grid file: magic, u16 version, u32 frame count, u32 H, u32 W,
// u16 interval minutes, then frames as little-endian f32, row-major.

inline constexpr std::uint16_t kGridVersion = 1;

struct GridFile {
  std::vector<Grid> frames;
  std::size_t height = 0;
  std::size_t width = 0;
  unsigned interval_minutes = 0;
};

namespace detail {

template <class T>
void put_le(std::vector<unsigned char>& buf, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) buf.push_back(static_cast<unsigned char>((std::uint64_t(v) >> (8 * i)) & 0xFF));
}

template <class T>
T get_le(const std::vector<unsigned char>& buf, std::size_t& off, const char* what) {
  if (off + sizeof(T) > buf.size())
    throw FormatError(std::string("truncated ") + what + " at offset " + std::to_string(off));
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t(buf[off + i]) << (8 * i);
  off += sizeof(T);
  return static_cast<T>(v);
}

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace detail

inline std::vector<unsigned char> encode_grid(const GridFile& g) {
  std::vector<unsigned char> buf{'N', 'W', 'C', 'G'};
  detail::put_le<std::uint16_t>(buf, kGridVersion);
  detail::put_le<std::uint32_t>(buf, std::uint32_t(g.frames.size()));
  detail::put_le<std::uint32_t>(buf, std::uint32_t(g.height));
  detail::put_le<std::uint32_t>(buf, std::uint32_t(g.width));
  detail::put_le<std::uint16_t>(buf, std::uint16_t(g.interval_minutes));
  for (const Grid& f : g.frames) {
    if (f.height != g.height || f.width != g.width) throw DimensionError("write_grid: frame extents differ from header");
    for (double v : f.values) {
      const float x = static_cast<float>(v);
      std::uint32_t bits;
      std::memcpy(&bits, &x, sizeof bits);
      detail::put_le<std::uint32_t>(buf, bits);
    }
  }
  return buf;
}

inline GridFile decode_grid(const std::vector<unsigned char>& buf) {
  if (buf.size() < 4 || std::memcmp(buf.data(), "NWCG", 4) != 0) throw FormatError("bad magic at offset 0");
  std::size_t off = 4;
  const auto version = detail::get_le<std::uint16_t>(buf, off, "version");
  if (version != kGridVersion)
    throw FormatError("unsupported version " + std::to_string(version) + " at offset 4");
  GridFile g;
  const auto count = detail::get_le<std::uint32_t>(buf, off, "frame count");
  g.height = detail::get_le<std::uint32_t>(buf, off, "height");
  g.width = detail::get_le<std::uint32_t>(buf, off, "width");
  g.interval_minutes = detail::get_le<std::uint16_t>(buf, off, "interval");
  const std::size_t need = std::size_t(count) * g.height * g.width * 4;
  if (buf.size() - off < need)
    throw FormatError("truncated payload at offset " + std::to_string(off) + ": need " + std::to_string(need) +
                      " bytes, have " + std::to_string(buf.size() - off));
  for (std::uint32_t k = 0; k < count; ++k) {
    Grid f(g.height, g.width);
    for (double& v : f.values) {
      const auto bits = detail::get_le<std::uint32_t>(buf, off, "payload");
      float x;
      std::memcpy(&x, &bits, sizeof x);
      v = x;
    }
    g.frames.push_back(std::move(f));
  }
  return g;
}

inline void write_grid(const std::string& path, const GridFile& g) { detail::write_file_bytes(path, encode_grid(g)); }
inline GridFile read_grid(const std::string& path) { return decode_grid(detail::read_file_bytes(path)); }

// Radar frames go to `path`; the DEM goes beside it as a one-frame file.
inline std::string dem_path_for(const std::string& path) {
  const auto dot = path.rfind(".nwcg");
  return (dot == std::string::npos ? path : path.substr(0, dot)) + ".dem.nwcg";
}

inline void write_sequence(const std::string& path, const RadarSequence& seq) {
  write_grid(path, GridFile{seq.frames, seq.height(), seq.width(), seq.interval_minutes});
  write_grid(dem_path_for(path),
             GridFile{{seq.dem.elevation}, seq.dem.elevation.height, seq.dem.elevation.width, 0});
}

inline RadarSequence read_sequence(const std::string& path) {
  GridFile g = read_grid(path);
  GridFile d = read_grid(dem_path_for(path));
  if (d.frames.size() != 1) throw FormatError("dem file must hold exactly one frame: " + dem_path_for(path));
  RadarSequence seq;
  seq.frames = std::move(g.frames);
  seq.interval_minutes = g.interval_minutes;
  seq.dem = DemGrid(std::move(d.frames.front()));
  return seq;
}

// Manifest: one "path<TAB>split" line per sample.
struct ManifestEntry {
  std::string path;
  std::string split;
};

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& e : entries) out << e.path << '\t' << e.split << '\n';
}

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest " + path);
  std::vector<ManifestEntry> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw FormatError("manifest line " + std::to_string(lineno) + " has no tab");
    entries.push_back({line.substr(0, tab), line.substr(tab + 1)});
  }
  return entries;
}

}  // namespace mambarain

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "mambarain/synthdata.hpp"

using namespace mambarain;

namespace {

SynthConfig still_world() {
  SynthConfig c;
  c.speed_min = c.speed_max = 0.0;
  c.swirl = 0.0;
  c.diffusion = 0.0;
  c.birth_rate = 0.0;
  c.growth_tau = 0.0;
  c.decay_tau = 0.0;
  return c;
}

// Circular mean position of mass along one axis.
double circular_centroid(const Grid& g, bool columns) {
  const double n = double(columns ? g.width : g.height);
  double s = 0.0, c = 0.0;
  for (std::size_t r = 0; r < g.height; ++r)
    for (std::size_t q = 0; q < g.width; ++q) {
      const double ang = 2 * std::numbers::pi * double(columns ? q : r) / n;
      s += g.at(r, q) * std::sin(ang);
      c += g.at(r, q) * std::cos(ang);
    }
  double a = std::atan2(s, c) / (2 * std::numbers::pi) * n;
  return a < 0 ? a + n : a;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("mambarain_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST(Synth, ValuesInRangeAndFrameCount) {
  SynthConfig c;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const RadarSequence s = generate_sample(c, seed);
    ASSERT_EQ(s.frames.size(), c.input_frames + c.output_frames);
    EXPECT_EQ(s.interval_minutes, 6u);
    for (const Grid& f : s.frames) {
      ASSERT_EQ(f.height, 32u);
      for (double v : f.values) {
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, kMaxDbz);
      }
    }
  }
}

TEST(Synth, NormalizationIsExactlyInvertible) {
  for (double v : {0.0, 7.0, 19.999, 35.5, 70.0}) {
    EXPECT_EQ(normalize_dbz(v), v / 70.0);
    EXPECT_DOUBLE_EQ(denormalize_dbz(normalize_dbz(v)), v);
  }
}

TEST(Synth, SeededDeterminism) {
  SynthConfig c;
  const RadarSequence a = generate_sample(c, 17), b = generate_sample(c, 17), d = generate_sample(c, 18);
  for (std::size_t k = 0; k < a.frames.size(); ++k) EXPECT_EQ(a.frames[k].values, b.frames[k].values);
  EXPECT_EQ(a.dem.elevation.values, b.dem.elevation.values);
  EXPECT_NE(a.frames[0].values, d.frames[0].values);
}

TEST(Synth, NoDynamicsMeansIdenticalFrames) {
  const RadarSequence s = generate_sample(still_world(), 3);
  for (const Grid& f : s.frames) EXPECT_EQ(f.values, s.frames[0].values);
}

TEST(Synth, UniformEastwardDriftMovesCentroidOneColumnPerFrame) {
  SynthConfig c = still_world();
  c.speed_min = c.speed_max = 1.0;
  c.direction_deg = 0.0;
  c.initial_cells = 1;
  c.orographic_gain = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const RadarSequence s = generate_sample(c, seed);
    const double row0 = circular_centroid(s.frames[0], false);
    for (std::size_t k = 1; k < s.frames.size(); ++k) {
      double step = circular_centroid(s.frames[k], true) - circular_centroid(s.frames[k - 1], true);
      step -= 32.0 * std::round(step / 32.0);
      EXPECT_NEAR(step, 1.0, 0.1);
      EXPECT_NEAR(circular_centroid(s.frames[k], false), row0, 0.1);
    }
  }
}

TEST(Synth, AdvectionApproximatelyConservesMass) {
  SynthConfig c;
  c.birth_rate = 0.0;
  c.growth_tau = 0.0;
  c.decay_tau = 0.0;
  c.orographic_gain = 0.0;
  c.input_frames = 10;
  c.output_frames = 20;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const RadarSequence s = generate_sample(c, seed);
    ASSERT_EQ(s.frames.size(), 30u);
    const double m0 = s.frames.front().total();
    for (const Grid& f : s.frames) EXPECT_LT(std::abs(f.total() - m0) / m0, 0.05) << "seed " << seed;
  }
}

TEST(Synth, ZeroOrographicGainIgnoresTerrain) {
  SynthConfig a;
  a.orographic_gain = 0.0;
  SynthConfig b = a;
  b.dem_ridge_amplitude = 400.0;
  b.dem_noise_amplitude = 20.0;
  const RadarSequence x = generate_sample(a, 5), y = generate_sample(b, 5);
  EXPECT_NE(x.dem.elevation.values, y.dem.elevation.values);
  for (std::size_t k = 0; k < x.frames.size(); ++k) EXPECT_EQ(x.frames[k].values, y.frames[k].values);
}

TEST(Synth, TerrainModulatesIntensity) {
  SynthConfig a;
  SynthConfig b = a;
  b.orographic_gain = 0.0;
  const RadarSequence x = generate_sample(a, 6), y = generate_sample(b, 6);
  EXPECT_GT(x.frames[0].total(), y.frames[0].total());
}

TEST(Synth, InvalidConfigRejected) {
  SynthConfig c;
  c.height = 30;
  EXPECT_THROW(generate_sample(c, 0), ConfigError);
  c = SynthConfig{};
  c.birth_rate = -1;
  EXPECT_THROW(generate_sample(c, 0), ConfigError);
  c = SynthConfig{};
  c.speed_max = 0.1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = SynthConfig{};
  c.output_frames = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Dem, FlatWhenAmplitudesZero) {
  SynthConfig c;
  c.dem_ridge_amplitude = 0.0;
  c.dem_noise_amplitude = 0.0;
  const DemGrid d = dem_synthesize(c, 1);
  for (double v : d.elevation.values) EXPECT_EQ(v, c.dem_base);
  for (double v : d.normalized().values) EXPECT_EQ(v, 0.0);
}

TEST(Dem, NormalizationEndpoints) {
  const DemGrid d = dem_synthesize(SynthConfig{}, 2);
  const Grid n = d.normalized();
  EXPECT_EQ(*std::min_element(n.values.begin(), n.values.end()), 0.0);
  EXPECT_EQ(*std::max_element(n.values.begin(), n.values.end()), 1.0);
  for (double v : d.elevation.values) EXPECT_TRUE(std::isfinite(v));
}

TEST(Dem, SmoothnessBoundOnHundredSeeds) {
  SynthConfig c;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Grid n = dem_synthesize(c, seed).normalized();
    double worst = 0.0;
    for (std::size_t r = 0; r < n.height; ++r)
      for (std::size_t q = 0; q < n.width; ++q) {
        worst = std::max(worst, std::abs(n.at(r, q) - n.at(r, (q + 1) % n.width)));
        worst = std::max(worst, std::abs(n.at(r, q) - n.at((r + 1) % n.height, q)));
      }
    EXPECT_LT(worst, c.dem_max_gradient) << "seed " << seed;
  }
}

TEST(Dem, NonFiniteRejected) {
  Grid g(2, 2, 1.0);
  g.values[1] = std::nan("");
  EXPECT_THROW(DemGrid{g}, DomainError);
}

TEST(GridFormat, RoundTripWithinFloatPrecision) {
  const RadarSequence s = generate_sample(SynthConfig{}, 9);
  const GridFile in{s.frames, 32, 32, 6};
  const auto bytes = encode_grid(in);
  EXPECT_EQ(bytes.size(), 4 + 2 + 4 + 4 + 4 + 2 + s.frames.size() * 32 * 32 * 4);
  const GridFile out = decode_grid(bytes);
  ASSERT_EQ(out.frames.size(), s.frames.size());
  EXPECT_EQ(out.height, 32u);
  EXPECT_EQ(out.width, 32u);
  EXPECT_EQ(out.interval_minutes, 6u);
  for (std::size_t k = 0; k < out.frames.size(); ++k)
    for (std::size_t i = 0; i < out.frames[k].size(); ++i)
      EXPECT_EQ(out.frames[k].values[i], double(float(s.frames[k].values[i])));
}

TEST(GridFormat, HeaderLayoutIsLittleEndian) {
  Grid g(1, 2);
  g.values = {1.0, -2.5};
  const auto b = encode_grid(GridFile{{g}, 1, 2, 6});
  const std::vector<unsigned char> head(b.begin(), b.begin() + 20);
  const std::vector<unsigned char> want{'N', 'W', 'C', 'G', 1, 0, 1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 6, 0};
  EXPECT_EQ(head, want);
  // 1.0f = 0x3F800000
  EXPECT_EQ(b[20], 0x00);
  EXPECT_EQ(b[23], 0x3F);
}

TEST(GridFormat, Errors) {
  Grid g(2, 2, 1.0);
  const auto good = encode_grid(GridFile{{g}, 2, 2, 6});
  auto bad = good;
  bad[0] = 'X';
  try {
    decode_grid(bad);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("bad magic"), std::string::npos);
  }
  bad = good;
  bad[4] = 7;
  EXPECT_THROW(decode_grid(bad), FormatError);
  bad = good;
  bad.pop_back();
  EXPECT_THROW(decode_grid(bad), FormatError);
  bad.resize(10);
  EXPECT_THROW(decode_grid(bad), FormatError);
  EXPECT_THROW(encode_grid(GridFile{{Grid(3, 2)}, 2, 2, 6}), DimensionError);
  EXPECT_THROW(read_grid("/nonexistent/x.nwcg"), IoError);
}

TEST(GridFormat, ZeroFramesIsValid) {
  const GridFile out = decode_grid(encode_grid(GridFile{{}, 32, 32, 6}));
  EXPECT_TRUE(out.frames.empty());
  EXPECT_EQ(out.height, 32u);
}

TEST(GridFormat, SequenceAndManifestFiles) {
  const auto dir = temp_dir("synth_files");
  const RadarSequence s = generate_sample(SynthConfig{}, 11);
  const std::string path = (dir / "a.nwcg").string();
  write_sequence(path, s);
  EXPECT_TRUE(std::filesystem::exists(dir / "a.dem.nwcg"));
  const RadarSequence back = read_sequence(path);
  ASSERT_EQ(back.frames.size(), s.frames.size());
  EXPECT_EQ(back.interval_minutes, s.interval_minutes);
  EXPECT_NEAR(back.dem.elevation.values[5], s.dem.elevation.values[5], 1e-3);

  const std::vector<ManifestEntry> entries{{"a.nwcg", "train"}, {"b.nwcg", "val"}, {"c d.nwcg", "test"}};
  write_manifest((dir / "m.tsv").string(), entries);
  const auto got = read_manifest((dir / "m.tsv").string());
  ASSERT_EQ(got.size(), 3u);
  EXPECT_EQ(got[2].path, "c d.nwcg");
  EXPECT_EQ(got[1].split, "val");
  std::filesystem::remove_all(dir);
}

#pragma once

// Encoder-decoder nowcasting network. Two convolutional stages (each ending
// in a x2 downsample) feed two MFormer stages at the bottleneck. Terrain is
// encoded separately, tokenized to the same (L, D) shape and added to the
// bottleneck tokens. The decoder runs two MFormer stages, then two x2
// upsampling stages that fuse the encoder skips, and a head that emits K
// frames in [0, 1].

#include <chrono>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "mambarain/layers.hpp"
#include "mambarain/mformer.hpp"
#include "mambarain/synthdata.hpp"
#include "mambarain/verify.hpp"

namespace mambarain {

struct ModelConfig {
  std::size_t input_frames = 4;   // T
  std::size_t output_frames = 8;  // K
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t base_channels = 8;
  std::vector<std::size_t> multipliers = {1, 2};  // one per conv stage
  std::size_t time_tokens = 2;                    // T_tok
  std::size_t d_feat = 16;
  std::size_t state_size = 8;  // N
  std::size_t heads = 4;
  std::size_t expand = 2;
  std::size_t mlp_ratio = 2;
  bool zero_init_residual = true;
  std::uint64_t seed = 0;

  std::size_t stage_channels(std::size_t i) const { return base_channels * multipliers.at(i); }
  std::size_t bottleneck_height() const { return height / 4; }
  std::size_t bottleneck_width() const { return width / 4; }
  std::size_t token_count() const { return time_tokens * bottleneck_height() * bottleneck_width(); }
  TokenLayout token_layout() const { return {time_tokens, bottleneck_height(), bottleneck_width()}; }

  MFormerConfig mformer() const { return {d_feat, heads, state_size, expand, mlp_ratio, zero_init_residual}; }

  void validate() const {
    if (input_frames == 0 || output_frames == 0) throw ConfigError("model: T and K must be at least 1");
    if (multipliers.size() != 2)
      throw ConfigError("model: exactly two convolutional stages are required, got " +
                        std::to_string(multipliers.size()));
    if (base_channels == 0) throw ConfigError("model: base_channels must be positive");
    for (auto m : multipliers)
      if (m == 0) throw ConfigError("model: zero channel multiplier");
    if (height == 0 || width == 0 || height % 4 || width % 4)
      throw ConfigError("model: grid extents must be divisible by 4, got " + std::to_string(height) + "x" +
                        std::to_string(width));
    if (!is_power_of_two(height) || !is_power_of_two(width))
      throw ConfigError("model: grid extents must be powers of two");
    if (time_tokens == 0 || d_feat == 0 || state_size == 0 || expand == 0 || mlp_ratio == 0)
      throw ConfigError("model: token, feature, state and expansion sizes must be positive");
    if (heads == 0 || d_feat % heads != 0)
      throw ConfigError("model: " + std::to_string(heads) + " heads do not divide d_feat " + std::to_string(d_feat));
  }
};

struct EncoderOutput {
  Tensor tokens;              // X_l, L x D
  std::vector<Tensor> skips;  // full and half resolution features
};

class MambaRainNet {
public:
  explicit MambaRainNet(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(cfg_.seed);
    const auto mode = PadMode::circular;
    const std::size_t c1 = cfg_.stage_channels(0), c2 = cfg_.stage_channels(1);
    const std::size_t td = cfg_.time_tokens * cfg_.d_feat;

    enc1_a_ = Conv2dLayer::make(store_, "enc1.conv_a", cfg_.input_frames, c1, 3, 1, mode, rng);
    enc1_b_ = Conv2dLayer::make(store_, "enc1.conv_b", c1, c1, 3, 1, mode, rng);
    enc1_down_ = Downsample2xLayer::make(store_, "enc1.down", c1, c2, mode, rng);
    enc2_conv_ = Conv2dLayer::make(store_, "enc2.conv", c2, c2, 3, 1, mode, rng);
    enc2_down_ = Downsample2xLayer::make(store_, "enc2.down", c2, c2, mode, rng);
    token_proj_ = Conv2dLayer::make(store_, "tokens.proj", c2, td, 1, 1, mode, rng);
    positional_ = store_.add("tokens.positional", normal_tensor({cfg_.token_count(), cfg_.d_feat}, 0.02, rng));
    enc3_ = MFormerBlock(store_, "enc3", cfg_.mformer(), rng);
    enc4_ = MFormerBlock(store_, "enc4", cfg_.mformer(), rng);

    dem_conv_ = Conv2dLayer::make(store_, "dem.conv", 1, c1, 3, 1, mode, rng);
    dem_down1_ = Downsample2xLayer::make(store_, "dem.down1", c1, c1, mode, rng);
    dem_down2_ = Downsample2xLayer::make(store_, "dem.down2", c1, c1, mode, rng);
    dem_proj_ = Conv2dLayer::make(store_, "dem.proj", c1, cfg_.d_feat, 1, 1, mode, rng);

    dec4_ = MFormerBlock(store_, "dec4", cfg_.mformer(), rng);
    dec3_ = MFormerBlock(store_, "dec3", cfg_.mformer(), rng);
    dec2_up_ = Upsample2xLayer::make(store_, "dec2.up", td, c2, mode, rng);
    dec2_fuse_ = Conv2dLayer::make(store_, "dec2.fuse", 2 * c2, c2, 1, 1, mode, rng);
    dec2_conv_ = Conv2dLayer::make(store_, "dec2.conv", c2, c2, 3, 1, mode, rng);
    dec1_up_ = Upsample2xLayer::make(store_, "dec1.up", c2, c1, mode, rng);
    dec1_fuse_ = Conv2dLayer::make(store_, "dec1.fuse", 2 * c1, c1, 1, 1, mode, rng);
    dec1_conv_ = Conv2dLayer::make(store_, "dec1.conv", c1, c1, 3, 1, mode, rng);
    head_ = Conv2dLayer::make(store_, "head", c1, cfg_.output_frames, 3, 1, mode, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& parameters() { return store_; }
  const ParameterStore& parameters() const { return store_; }

  // frames: T x H x W, normalized reflectivity.
  EncoderOutput encode(const Tensor& frames) const {
    if (frames.rank() != 3 || frames.dim(0) != cfg_.input_frames || frames.dim(1) != cfg_.height ||
        frames.dim(2) != cfg_.width)
      throw ConfigError("encode: frames " + shape_str(frames.shape()) + " do not match model (" +
                        std::to_string(cfg_.input_frames) + "," + std::to_string(cfg_.height) + "," +
                        std::to_string(cfg_.width) + ")");
    EncoderOutput out;
    Tensor x = silu(enc1_b_(silu(enc1_a_(frames))));
    out.skips.push_back(x);
    x = silu(enc1_down_(x));
    x = silu(enc2_conv_(x));
    out.skips.push_back(x);
    x = silu(enc2_down_(x));
    TokenSequence tokens(to_tokens(token_proj_(x), cfg_.time_tokens), cfg_.token_layout());
    tokens = tokens.with_position(positional_);
    tokens = TokenSequence(enc3_.forward(tokens), tokens.layout);
    out.tokens = enc4_.forward(tokens);
    return out;
  }

  // dem: 1 x H x W (or H x W), normalized elevation. Returns X_d, L x D.
  Tensor encode_dem(const Tensor& dem) const {
    Tensor d = dem.rank() == 2 ? reshape(dem, {1, dem.dim(0), dem.dim(1)}) : dem;
    if (d.rank() != 3 || d.dim(0) != 1 || d.dim(1) != cfg_.height || d.dim(2) != cfg_.width)
      throw ConfigError("encode_dem: dem " + shape_str(dem.shape()) + " does not match model extents");
    Tensor x = silu(dem_conv_(d));
    x = silu(dem_down1_(x));
    x = silu(dem_down2_(x));
    return broadcast_time_tokens(dem_proj_(x), cfg_.time_tokens);
  }

  // X_out = Up(MFormer(X_l + X_d)). Without x_d the fusion step is skipped
  // (terrain ablation).
  Tensor decode(const Tensor& x_l, const std::optional<Tensor>& x_d, const std::vector<Tensor>& skips) const {
    if (skips.size() != 2) throw ContractError("decode: expected 2 skip tensors, got " + std::to_string(skips.size()));
    const TokenLayout layout = cfg_.token_layout();
    Tensor z = x_d ? add(x_l, *x_d) : x_l;
    z = dec4_.forward(TokenSequence(z, layout));
    z = dec3_.forward(TokenSequence(z, layout));
    Tensor x = from_tokens(z, cfg_.time_tokens, layout.height, layout.width);
    x = silu(dec2_up_(x));
    x = silu(dec2_fuse_(concat_channels(x, skips[1])));
    x = silu(dec2_conv_(x));
    x = silu(dec1_up_(x));
    x = silu(dec1_fuse_(concat_channels(x, skips[0])));
    x = silu(dec1_conv_(x));
    return sigmoid(head_(x));
  }

  Tensor forward(const Tensor& frames, const Tensor& dem) const {
    EncoderOutput enc = encode(frames);
    return decode(enc.tokens, encode_dem(dem), enc.skips);
  }

  Tensor forward_without_dem(const Tensor& frames) const {
    EncoderOutput enc = encode(frames);
    return decode(enc.tokens, std::nullopt, enc.skips);
  }

  const MFormerBlock& encoder_block(std::size_t i) const { return i == 0 ? enc3_ : enc4_; }

private:
  ModelConfig cfg_;
  ParameterStore store_;
  Conv2dLayer enc1_a_, enc1_b_;
  Downsample2xLayer enc1_down_;
  Conv2dLayer enc2_conv_;
  Downsample2xLayer enc2_down_;
  Conv2dLayer token_proj_;
  Tensor positional_;
  MFormerBlock enc3_, enc4_;
  Conv2dLayer dem_conv_;
  Downsample2xLayer dem_down1_, dem_down2_;
  Conv2dLayer dem_proj_;
  MFormerBlock dec4_, dec3_;
  Upsample2xLayer dec2_up_;
  Conv2dLayer dec2_fuse_, dec2_conv_;
  Upsample2xLayer dec1_up_;
  Conv2dLayer dec1_fuse_, dec1_conv_;
  Conv2dLayer head_;
};

// ---------------------------------------------------------------------------
// Conversions between radar sequences and model tensors.

inline Tensor frames_to_tensor(const std::vector<Grid>& frames, std::size_t begin, std::size_t count) {
  if (begin + count > frames.size()) throw ContractError("frames_to_tensor: range exceeds sequence");
  const std::size_t h = frames[begin].height, w = frames[begin].width;
  Tensor t({count, h, w});
  for (std::size_t k = 0; k < count; ++k) {
    const Grid& f = frames[begin + k];
    if (f.height != h || f.width != w) throw DimensionError("frames_to_tensor: ragged frames");
    for (std::size_t i = 0; i < h * w; ++i) t[k * h * w + i] = normalize_dbz(f.values[i]);
  }
  return t;
}

inline std::vector<Grid> tensor_to_frames(const Tensor& t) {
  const std::size_t k = t.dim(0), h = t.dim(1), w = t.dim(2);
  std::vector<Grid> out;
  for (std::size_t i = 0; i < k; ++i) {
    Grid g(h, w);
    for (std::size_t j = 0; j < h * w; ++j) g.values[j] = denormalize_dbz(t[i * h * w + j]);
    out.push_back(std::move(g));
  }
  return out;
}

inline Tensor dem_to_tensor(const DemGrid& dem) {
  const Grid n = dem.normalized();
  return Tensor({1, n.height, n.width}, n.values);
}

// Forecast from the first T frames of `seq`. When the sequence also holds K
// further frames they become the bundle's observations.
inline ForecastBundle predict(const MambaRainNet& net, const RadarSequence& seq) {
  const ModelConfig& cfg = net.config();
  if (seq.frames.size() < cfg.input_frames) throw ContractError("predict: sequence shorter than T");
  NoGradScope no_grad;
  Tensor y = net.forward(frames_to_tensor(seq.frames, 0, cfg.input_frames), dem_to_tensor(seq.dem));
  std::vector<Grid> obs;
  if (seq.frames.size() >= cfg.input_frames + cfg.output_frames)
    obs.assign(seq.frames.begin() + long(cfg.input_frames),
               seq.frames.begin() + long(cfg.input_frames + cfg.output_frames));
  auto bundle = ForecastBundle::make(tensor_to_frames(y), std::move(obs), seq.interval_minutes);
  return bundle;
}

struct ParamTiming {
  std::size_t parameters = 0;
  double mean_forward_ms = 0.0;
};

// Exact learnable-scalar count and mean latency of `repeats` forwards after
// `warmup` untimed ones.
inline ParamTiming count_params_and_time(const ModelConfig& cfg, std::size_t repeats = 20, std::size_t warmup = 3) {
  MambaRainNet net(cfg);
  ParamTiming r;
  r.parameters = net.parameters().scalar_count();
  Rng rng(cfg.seed + 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Tensor frames({cfg.input_frames, cfg.height, cfg.width});
  for (double& v : frames.data()) v = unit(rng);
  Tensor dem({1, cfg.height, cfg.width});
  for (double& v : dem.data()) v = unit(rng);
  NoGradScope no_grad;
  for (std::size_t i = 0; i < warmup; ++i) net.forward(frames, dem);
  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t i = 0; i < repeats; ++i) net.forward(frames, dem);
  const auto t1 = std::chrono::steady_clock::now();
  r.mean_forward_ms = std::chrono::duration<double, std::milli>(t1 - t0).count() / double(std::max<std::size_t>(1, repeats));
  return r;
}

// ---------------------------------------------------------------------------
// Checkpoint: "MRCK", u32 version, config record, u32 tensor count, then per
// tensor u32 name length, name bytes, u32 rank, u32 extents, f64 payload.
// All integers and floats little-endian.

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<unsigned char> encode_checkpoint(const MambaRainNet& net) {
  const ModelConfig& c = net.config();
  std::vector<unsigned char> buf{'M', 'R', 'C', 'K'};
  auto u32 = [&](std::uint64_t v) { detail::put_le<std::uint32_t>(buf, std::uint32_t(v)); };
  u32(kCheckpointVersion);
  for (auto v : {c.input_frames, c.output_frames, c.height, c.width, c.base_channels}) u32(v);
  u32(c.multipliers.size());
  for (auto m : c.multipliers) u32(m);
  for (auto v : {c.time_tokens, c.d_feat, c.state_size, c.heads, c.expand, c.mlp_ratio}) u32(v);
  u32(c.zero_init_residual ? 1 : 0);
  detail::put_le<std::uint64_t>(buf, c.seed);
  const auto& entries = net.parameters().entries();
  u32(entries.size());
  for (const auto& [name, t] : entries) {
    u32(name.size());
    buf.insert(buf.end(), name.begin(), name.end());
    u32(t.rank());
    for (auto e : t.shape()) u32(e);
    for (double v : t.data()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      detail::put_le<std::uint64_t>(buf, bits);
    }
  }
  return buf;
}

inline MambaRainNet decode_checkpoint(const std::vector<unsigned char>& buf) {
  if (buf.size() < 4 || std::memcmp(buf.data(), "MRCK", 4) != 0) throw FormatError("checkpoint: bad magic at offset 0");
  std::size_t off = 4;
  auto u32 = [&](const char* what) { return std::size_t(detail::get_le<std::uint32_t>(buf, off, what)); };
  const auto version = u32("version");
  if (version != kCheckpointVersion)
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " at offset 4");
  ModelConfig c;
  c.input_frames = u32("config");
  c.output_frames = u32("config");
  c.height = u32("config");
  c.width = u32("config");
  c.base_channels = u32("config");
  const std::size_t nm = u32("config");
  if (nm > 16) throw FormatError("checkpoint: implausible multiplier count at offset " + std::to_string(off - 4));
  c.multipliers.clear();
  for (std::size_t i = 0; i < nm; ++i) c.multipliers.push_back(u32("config"));
  c.time_tokens = u32("config");
  c.d_feat = u32("config");
  c.state_size = u32("config");
  c.heads = u32("config");
  c.expand = u32("config");
  c.mlp_ratio = u32("config");
  c.zero_init_residual = u32("config") != 0;
  c.seed = detail::get_le<std::uint64_t>(buf, off, "config");
  MambaRainNet net(c);
  auto& entries = net.parameters().entries();
  const std::size_t count = u32("tensor count");
  if (count != entries.size())
    throw FormatError("checkpoint: " + std::to_string(count) + " tensors, model expects " +
                      std::to_string(entries.size()));
  for (auto& [name, t] : entries) {
    const std::size_t name_len = u32("name length");
    if (off + name_len > buf.size()) throw FormatError("checkpoint: truncated name at offset " + std::to_string(off));
    const std::string stored(buf.begin() + long(off), buf.begin() + long(off + name_len));
    off += name_len;
    if (stored != name)
      throw FormatError("checkpoint: tensor '" + stored + "' where '" + name + "' was expected");
    const std::size_t rank = u32("rank");
    Shape shape;
    for (std::size_t i = 0; i < rank; ++i) shape.push_back(u32("extent"));
    if (shape != t.shape())
      throw FormatError("checkpoint: tensor '" + name + "' has shape " + shape_str(shape) + ", model expects " +
                        shape_str(t.shape()));
    for (double& v : t.data()) {
      const auto bits = detail::get_le<std::uint64_t>(buf, off, "payload");
      std::memcpy(&v, &bits, sizeof v);
      if (!std::isfinite(v)) throw FormatError("checkpoint: non-finite weight in '" + name + "'");
    }
  }
  if (off != buf.size()) throw FormatError("checkpoint: trailing bytes at offset " + std::to_string(off));
  return net;
}

inline void save_checkpoint(const std::string& path, const MambaRainNet& net) {
  detail::write_file_bytes(path, encode_checkpoint(net));
}

inline MambaRainNet load_checkpoint(const std::string& path) { return decode_checkpoint(detail::read_file_bytes(path)); }

}  // namespace mambarain

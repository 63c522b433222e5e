#pragma once

// Operator commands behind the command-line tool: generate, train, predict,
// evaluate, bench. Each takes a validated RunConfig and writes its outputs
// below cfg.out.

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "mambarain/baselines.hpp"
#include "mambarain/config.hpp"
#include "mambarain/mformer.hpp"
#include "mambarain/model.hpp"
#include "mambarain/ssm.hpp"
#include "mambarain/synthdata.hpp"
#include "mambarain/train.hpp"
#include "mambarain/verify.hpp"

namespace mambarain {

namespace fs = std::filesystem;

// Seed of sample `index` in a dataset generated from `base` (splitmix64).
inline std::uint64_t sample_seed(std::uint64_t base, std::uint64_t index) {
  std::uint64_t z = base * 0x9E3779B97F4A7C15ULL + index + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct SplitSizes {
  std::size_t train = 500, val = 50, test = 100;
};

inline std::string split_of(std::size_t i, const SplitSizes& n) {
  if (i < n.train) return "train";
  if (i < n.train + n.val) return "val";
  return "test";
}

// In-memory counterpart of cmd_generate: sample i of the dataset.
inline RadarSequence dataset_sample(const SynthConfig& cfg, std::uint64_t seed, std::size_t index) {
  return generate_sample(cfg, sample_seed(seed, index));
}

struct Dataset {
  std::vector<RadarSequence> train, val, test;
};

inline Dataset make_dataset(const SynthConfig& cfg, std::uint64_t seed, const SplitSizes& n) {
  Dataset d;
  for (std::size_t i = 0; i < n.train + n.val + n.test; ++i) {
    RadarSequence s = dataset_sample(cfg, seed, i);
    const std::string split = split_of(i, n);
    (split == "train" ? d.train : split == "val" ? d.val : d.test).push_back(std::move(s));
  }
  return d;
}

inline std::vector<TrainingSample> to_training_samples(const std::vector<RadarSequence>& seqs, std::size_t t,
                                                       std::size_t k) {
  std::vector<TrainingSample> out;
  out.reserve(seqs.size());
  for (const auto& s : seqs) out.push_back(make_training_sample(s, t, k));
  return out;
}

// Pooled reports of the two extrapolation baselines over a set of sequences.
struct BaselineReports {
  SkillReport persistence;
  SkillReport optflow;
};

inline BaselineReports evaluate_baselines(const std::vector<RadarSequence>& seqs, std::size_t t, std::size_t k) {
  if (seqs.empty()) throw ContractError("evaluate: no test sequences");
  if (t < 2) throw ConfigError("optical flow needs at least two input frames");
  SkillAccumulator pers, flow;
  for (const auto& s : seqs) {
    if (s.frames.size() < t + k) throw ContractError("evaluate: sequence shorter than T + K");
    std::vector<Grid> obs(s.frames.begin() + long(t), s.frames.begin() + long(t + k));
    const Grid& last = s.frames[t - 1];
    pers.add(ForecastBundle::make(persistence(last, k), obs, s.interval_minutes));
    const FlowField f = estimate_motion(s.frames[t - 2], last);
    flow.add(ForecastBundle::make(extrapolate(last, f, k), obs, s.interval_minutes));
  }
  return {pers.report(), flow.report()};
}

inline SkillReport evaluate_network(const MambaRainNet& net, const std::vector<RadarSequence>& seqs) {
  if (seqs.empty()) throw ContractError("evaluate: no test sequences");
  SkillAccumulator acc;
  for (const auto& s : seqs) acc.add(predict(net, s));
  return acc.report();
}

// ---------------------------------------------------------------------------
// Scan versus attention timing.

struct ScalingPoint {
  std::size_t length = 0;
  double scan_ms = 0.0;       // median
  double attention_ms = 0.0;  // median
};

namespace detail {
template <class F>
double median_ms(F&& f, std::size_t repeats) {
  std::vector<double> t;
  for (std::size_t r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

inline Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(s));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}
}  // namespace detail

// Median wall time of selective_scan and single-head-group attention at each
// length, fixed width and state size. Short scans are repeated inside each
// timed run so every run lasts long enough to measure.
inline std::vector<ScalingPoint> benchmark_scaling(const std::vector<std::size_t>& lengths, std::size_t width,
                                                   std::size_t state, std::size_t heads, std::size_t repeats,
                                                   std::uint64_t seed) {
  if (lengths.empty()) throw ConfigError("bench: no sequence lengths");
  Rng rng(seed);
  const std::size_t max_len = *std::max_element(lengths.begin(), lengths.end());
  const std::size_t scan_inner = std::max<std::size_t>(1, (64 * 2048) / max_len);
  std::vector<ScalingPoint> out;
  NoGradScope no_grad;
  for (std::size_t L : lengths) {
    if (L == 0) throw ConfigError("bench: sequence length must be positive");
    Tensor x = detail::random_tensor({L, width}, rng);
    ScanParams p;
    p.A = detail::random_tensor({width, state}, rng, -1.0, -0.1);
    p.B = detail::random_tensor({L, state}, rng);
    p.C = detail::random_tensor({L, state}, rng);
    p.D = detail::random_tensor({width}, rng);
    p.delta = detail::random_tensor({L, width}, rng, 0.01, 0.1);
    Tensor q = detail::random_tensor({L, width}, rng), k = detail::random_tensor({L, width}, rng),
           v = detail::random_tensor({L, width}, rng);
    double sink = 0.0;
    ScalingPoint pt;
    pt.length = L;
    pt.scan_ms = detail::median_ms(
                     [&] {
                       for (std::size_t i = 0; i < scan_inner; ++i) sink += selective_scan(x, p)[0];
                     },
                     repeats) /
                 double(scan_inner);
    pt.attention_ms = detail::median_ms([&] { sink += attention_core(q, k, v, heads)[0]; }, repeats);
    if (!std::isfinite(sink)) throw DomainError("bench: non-finite result");
    out.push_back(pt);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Commands.

namespace detail {
inline void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw IoError("cannot create directory " + p.string());
}

inline std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p, std::ios::trunc);
  if (!os) throw IoError("cannot write " + p.string());
  os.imbue(std::locale::classic());
  return os;
}

inline void save_checkpoint_atomic(const fs::path& path, const MambaRainNet& net) {
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  save_checkpoint(tmp.string(), net);
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string());
}

inline std::vector<RadarSequence> load_split(const std::string& manifest, const std::string& split) {
  const fs::path base = fs::path(manifest).parent_path();
  std::vector<RadarSequence> out;
  for (const auto& e : read_manifest(manifest))
    if (e.split == split) out.push_back(read_sequence((base / e.path).string()));
  return out;
}
}  // namespace detail

struct GenerateResult {
  std::string manifest;
  std::size_t samples = 0;
};

// Writes <out>/samples/sample_NNNNN.nwcg (+ .dem.nwcg) and <out>/manifest.tsv.
inline GenerateResult cmd_generate(const RunConfig& cfg) {
  const fs::path out(cfg.out);
  detail::ensure_dir(out / "samples");
  const SplitSizes n{cfg.n_train, cfg.n_val, cfg.n_test};
  const std::size_t total = n.train + n.val + n.test;
  if (total == 0) throw ConfigError("generate: n_train + n_val + n_test must be positive");
  std::vector<ManifestEntry> entries;
  for (std::size_t i = 0; i < total; ++i) {
    std::string idx = std::to_string(i);
    if (idx.size() < 5) idx.insert(0, 5 - idx.size(), '0');
    const std::string rel = "samples/sample_" + idx + ".nwcg";
    write_sequence((out / rel).string(), dataset_sample(cfg.synth, cfg.seed, i));
    entries.push_back({rel, split_of(i, n)});
  }
  const std::string manifest = (out / "manifest.tsv").string();
  write_manifest(manifest, entries);
  return {manifest, total};
}

// Trains on the manifest's train split, validating on its val split. Writes
// <out>/train_log.csv and the checkpoint of the best validation loss. The
// initial weights are saved first so a checkpoint always exists; if the loss
// diverges the last good checkpoint is kept and DivergenceError propagates.
inline std::vector<EpochLog> cmd_train(const RunConfig& cfg, std::ostream* progress = nullptr) {
  const auto train_seqs = detail::load_split(cfg.data, "train");
  const auto val_seqs = detail::load_split(cfg.data, "val");
  if (train_seqs.empty()) throw ContractError("train: manifest " + cfg.data + " has no train samples");
  const ModelConfig& mc = cfg.model;
  const auto train = to_training_samples(train_seqs, mc.input_frames, mc.output_frames);
  const auto val = to_training_samples(val_seqs, mc.input_frames, mc.output_frames);

  detail::ensure_dir(cfg.out);
  const fs::path ckpt = cfg.checkpoint_path();
  MambaRainNet net(mc);
  detail::save_checkpoint_atomic(ckpt, net);

  auto log = detail::open_out(fs::path(cfg.out) / "train_log.csv");
  log << "epoch,train_loss,val_loss,val_csi20\n";
  double best = std::numeric_limits<double>::infinity();
  auto on_epoch = [&](const EpochLog& e) {
    log << e.epoch << ',' << detail::csv_num(e.train_loss) << ',' << detail::csv_num(e.val_loss) << ','
        << detail::csv_opt(e.val_csi20) << '\n';
    log.flush();
    const double score = val.empty() ? e.train_loss : e.val_loss;
    if (score < best) {
      best = score;
      detail::save_checkpoint_atomic(ckpt, net);
    }
    if (progress)
      *progress << "epoch " << e.epoch << " train_loss " << e.train_loss << " val_loss " << e.val_loss << '\n';
  };
  return train_model(net, train, val, cfg.train, on_epoch);
}

// Forecasts for cfg.input or every test-split sequence; writes K-frame grids
// to <out>/predictions/<stem>.pred.nwcg.
inline std::vector<std::string> cmd_predict(const RunConfig& cfg) {
  const MambaRainNet net = load_checkpoint(cfg.checkpoint_path());
  std::vector<std::pair<std::string, RadarSequence>> inputs;
  if (!cfg.input.empty()) {
    inputs.emplace_back(fs::path(cfg.input).stem().string(), read_sequence(cfg.input));
  } else {
    const fs::path base = fs::path(cfg.data).parent_path();
    for (const auto& e : read_manifest(cfg.data))
      if (e.split == "test") inputs.emplace_back(fs::path(e.path).stem().string(), read_sequence((base / e.path).string()));
  }
  if (inputs.empty()) throw ContractError("predict: no input sequences");
  const fs::path dir = fs::path(cfg.out) / "predictions";
  detail::ensure_dir(dir);
  std::vector<std::string> written;
  for (const auto& [stem, seq] : inputs) {
    const ForecastBundle b = predict(net, seq);
    const std::string path = (dir / (stem + ".pred.nwcg")).string();
    write_grid(path, GridFile{b.predicted, seq.height(), seq.width(), seq.interval_minutes});
    written.push_back(path);
  }
  return written;
}

struct EvaluateResult {
  SkillReport model;
  BaselineReports baselines;
};

// Model and baseline skill on the test split: <out>/skill.csv and
// <out>/leadtime.csv, one row group per forecaster.
inline EvaluateResult cmd_evaluate(const RunConfig& cfg) {
  const std::string ckpt = cfg.checkpoint_path();
  if (!fs::exists(ckpt)) throw IoError("checkpoint not found: " + ckpt);
  const MambaRainNet net = load_checkpoint(ckpt);
  const auto test = detail::load_split(cfg.data, "test");
  if (test.empty()) throw ContractError("evaluate: manifest " + cfg.data + " has no test samples");
  const ModelConfig& mc = net.config();
  EvaluateResult r{evaluate_network(net, test), evaluate_baselines(test, mc.input_frames, mc.output_frames)};
  detail::ensure_dir(cfg.out);
  auto skill = detail::open_out(fs::path(cfg.out) / "skill.csv");
  write_skill_csv_header(skill);
  write_skill_rows(skill, "mambarain", r.model);
  write_skill_rows(skill, "persistence", r.baselines.persistence);
  write_skill_rows(skill, "optflow", r.baselines.optflow);
  auto lead = detail::open_out(fs::path(cfg.out) / "leadtime.csv");
  write_leadtime_csv_header(lead);
  write_leadtime_rows(lead, "mambarain", r.model);
  write_leadtime_rows(lead, "persistence", r.baselines.persistence);
  write_leadtime_rows(lead, "optflow", r.baselines.optflow);
  return r;
}

struct BenchResult {
  ParamTiming model;
  std::vector<ScalingPoint> scaling;
};

// <out>/bench.csv: metric,length,value. Parameter count and forward latency
// carry an empty length.
inline BenchResult cmd_bench(const RunConfig& cfg) {
  BenchResult r;
  r.model = count_params_and_time(cfg.model, cfg.bench_forward_repeats);
  r.scaling = benchmark_scaling(cfg.bench_lengths, cfg.model.d_feat, cfg.model.state_size, cfg.model.heads,
                                cfg.bench_repeats, cfg.seed);
  detail::ensure_dir(cfg.out);
  auto os = detail::open_out(fs::path(cfg.out) / "bench.csv");
  os << "metric,length,value\n";
  os << "parameters,," << r.model.parameters << '\n';
  os << "forward_ms,," << detail::csv_num(r.model.mean_forward_ms) << '\n';
  for (const auto& p : r.scaling) {
    os << "scan_ms," << p.length << ',' << detail::csv_num(p.scan_ms) << '\n';
    os << "attention_ms," << p.length << ',' << detail::csv_num(p.attention_ms) << '\n';
  }
  return r;
}

}  // namespace mambarain

// mambarain: generate / train / predict / evaluate / bench.
//
// Failures print one line, "error: <kind>: <message>", and exit nonzero.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "mambarain/commands.hpp"

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string checkpoint;
  std::vector<std::string> sets;
  bool quiet = false;
};

mambarain::RunConfig resolve(const Flags& f) {
  mambarain::RunConfig cfg;
  if (!f.config.empty()) cfg = mambarain::load_config_file(f.config);
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw mambarain::ConfigError("--set expects key=value, got '" + kv + "'");
    mambarain::apply_config_value(cfg, mambarain::detail::trim(kv.substr(0, eq)),
                                  mambarain::detail::trim(kv.substr(eq + 1)));
  }
  if (f.seed) cfg.seed = *f.seed;
  if (!f.out.empty()) cfg.out = f.out;
  if (!f.checkpoint.empty()) cfg.checkpoint = f.checkpoint;
  cfg.sync();
  cfg.validate();
  return cfg;
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r') c = ' ';
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MambaRain precipitation nowcasting"};
  app.require_subcommand(1);
  Flags flags;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", flags.config, "key = value configuration file");
    sub->add_option("--seed", flags.seed, "random seed");
    sub->add_option("--out", flags.out, "output directory");
    sub->add_option("--checkpoint", flags.checkpoint, "checkpoint path");
    sub->add_option("--set", flags.sets, "override one configuration key (key=value)");
    sub->add_flag("--quiet", flags.quiet, "suppress progress output");
  };
  auto* gen = app.add_subcommand("generate", "write a synthetic dataset and manifest");
  auto* train = app.add_subcommand("train", "train a model on a manifest");
  auto* pred = app.add_subcommand("predict", "forecast with a checkpoint");
  auto* eval = app.add_subcommand("evaluate", "score model and baselines on the test split");
  auto* bench = app.add_subcommand("bench", "parameter count, latency, scan vs attention scaling");
  for (auto* s : {gen, train, pred, eval, bench}) add_common(s);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage: " << one_line(e.what()) << '\n';
    return 2;
  }

  try {
    const mambarain::RunConfig cfg = resolve(flags);
    std::ostream* progress = flags.quiet ? nullptr : &std::cout;
    if (gen->parsed()) {
      const auto r = mambarain::cmd_generate(cfg);
      if (progress) *progress << "wrote " << r.samples << " samples, manifest " << r.manifest << '\n';
    } else if (train->parsed()) {
      const auto history = mambarain::cmd_train(cfg, progress);
      if (progress) *progress << "trained " << history.size() << " epochs, checkpoint " << cfg.checkpoint_path() << '\n';
    } else if (pred->parsed()) {
      const auto files = mambarain::cmd_predict(cfg);
      if (progress) *progress << "wrote " << files.size() << " forecasts to " << cfg.out << "/predictions\n";
    } else if (eval->parsed()) {
      const auto r = mambarain::cmd_evaluate(cfg);
      if (progress) {
        auto csi = [](const mambarain::SkillReport& s) { return mambarain::detail::csv_opt(s.at_threshold(20.0).scores.csi); };
        *progress << "CSI@20 mambarain " << csi(r.model) << " persistence " << csi(r.baselines.persistence)
                  << " optflow " << csi(r.baselines.optflow) << '\n';
      }
    } else if (bench->parsed()) {
      const auto r = mambarain::cmd_bench(cfg);
      if (progress)
        *progress << "parameters " << r.model.parameters << ", forward " << r.model.mean_forward_ms << " ms\n";
    }
  } catch (const mambarain::Error& e) {
    std::cerr << "error: " << e.kind() << ": " << one_line(e.what()) << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << one_line(e.what()) << '\n';
    return 1;
  }
  return 0;
}

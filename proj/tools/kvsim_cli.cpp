// kvsim: scenario runner, probe trainer and report emitter.

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "kvsim/errors.hpp"
#include "kvsim/probe.hpp"
#include "kvsim/report.hpp"
#include "kvsim/scenario.hpp"

namespace fs = std::filesystem;
using namespace kvsim;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitCoverage = 3;

int cmd_simulate(const std::string& config_path, std::optional<std::uint64_t> seed,
                 const std::string& out_dir) {
  const Scenario scenario = load_scenario(config_path);
  const auto points = expand(scenario, seed);
  const auto reports = run_points(points, sweep_threads(), fs::path(out_dir));
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    const ClassReport& b = r.aggregate.cls(TenantClass::Benign);
    fmt::print("{}/{}: {} requests, {} iterations, {} preemptions, benign TTFT mean {} s -> {}\n",
               points[i].config.name, points[i].label, r.records.size(), r.clock.iteration_index,
               r.aggregate.total_preemptions,
               b.ttft_us ? fmt::format("{:.3f}", b.ttft_us->mean * 1e-6) : std::string("-"),
               (fs::path(out_dir) / points[i].config.name / points[i].label).string());
  }
  return kExitOk;
}

int cmd_probe_train(const std::string& traces, int bins, const ProbeConfig& base,
                    std::uint64_t seed, const std::string& out) {
  std::vector<fs::path> files;
  if (!fs::is_directory(traces)) throw IoError("not a directory: " + traces);
  for (const auto& e : fs::recursive_directory_iterator(traces)) {
    if (e.is_regular_file() && e.path().filename() == "probe_windows.csv") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no probe_windows.csv under " + traces);
  std::vector<LabeledSample> samples;
  for (const auto& f : files) {
    auto s = read_samples_csv(f);
    samples.insert(samples.end(), s.begin(), s.end());
  }
  ProbeConfig cfg = base;
  cfg.n_bins = bins;
  cfg.validate();
  check_coverage(samples, bins);
  const TrainTestSplit split = split_holdout(samples, bins, cfg.holdout_fraction, seed);
  const ProbeModel model = train(split.train, cfg);
  const Evaluation ev = evaluate(model, split.test);
  fmt::print("samples: {} from {} files ({} train / {} held out)\n", samples.size(),
             files.size(), split.train.size(), split.test.size());
  fmt::print("held-out accuracy: {:.4f}\n", ev.accuracy);
  fmt::print("confusion (rows = true bin, columns = predicted):\n");
  for (int t = 0; t < bins; ++t) {
    std::string row = fmt::format("  {:>2} |", t);
    for (int p = 0; p < bins; ++p) row += fmt::format(" {:>5}", ev.confusion[t][p]);
    fmt::print("{}\n", row);
  }
  model.save(out);
  fmt::print("model written to {}\n", out);
  return kExitOk;
}

int cmd_report(const std::vector<std::string>& dirs, const std::optional<std::string>& baseline) {
  std::vector<RunSummary> runs;
  for (const auto& d : dirs) runs.push_back(load_run_summary(d));
  std::optional<RunSummary> base;
  if (baseline) base = load_run_summary(*baseline);
  std::cout << render_table(runs, base);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Discrete-event simulator of a continuous-batching LLM serving node"};
  app.require_subcommand(1);

  auto* sim = app.add_subcommand("simulate", "Run a scenario (and its sweep points)");
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  sim->add_option("--config", config_path, "Scenario file (.toml or .json)")->required();
  sim->add_option("--seed", seed, "Override sim.seed");
  sim->add_option("--out", out_dir, "Output root directory")->required();

  auto* pt = app.add_subcommand("probe-train", "Train an ITL probe classifier from labeled windows");
  std::string traces;
  int bins = 10;
  std::string model_out;
  ProbeConfig probe_cfg;
  std::uint64_t split_seed = 1;
  pt->add_option("--traces", traces, "Directory searched for probe_windows.csv")->required();
  pt->add_option("--bins", bins, "Number of usage bins")->capture_default_str();
  pt->add_option("--out", model_out, "Model JSON path")->required();
  pt->add_option("--n-trees", probe_cfg.hyper.n_rounds, "Boosting rounds")->capture_default_str();
  pt->add_option("--max-depth", probe_cfg.hyper.max_depth, "Tree depth")->capture_default_str();
  pt->add_option("--learning-rate", probe_cfg.hyper.learning_rate, "Shrinkage")->capture_default_str();
  pt->add_option("--holdout", probe_cfg.holdout_fraction, "Held-out fraction")->capture_default_str();
  pt->add_option("--seed", split_seed, "Train/test split seed")->capture_default_str();

  auto* rep = app.add_subcommand("report", "Compare run directories");
  std::vector<std::string> dirs;
  std::optional<std::string> baseline;
  rep->add_option("dirs", dirs, "Run directories containing report.json")->required();
  rep->add_option("--baseline", baseline, "Baseline run directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*sim) return cmd_simulate(config_path, seed, out_dir);
    if (*pt) return cmd_probe_train(traces, bins, probe_cfg, split_seed, model_out);
    if (*rep) return cmd_report(dirs, baseline);
  } catch (const InsufficientCoverage& e) {
    std::cerr << "kvsim: insufficient coverage: " << e.what() << '\n';
    return kExitCoverage;
  } catch (const Error& e) {
    std::cerr << "kvsim: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "kvsim: internal error: " << e.what() << '\n';
    return 1;
  }
  return kExitOk;
}

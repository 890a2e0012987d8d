// Command-line front end: train, eval, ablate, sweep, demo-ambiguity.
//
// Exit codes: 0 success, 1 runtime failure, 2 configuration error.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dscl/common.hpp"
#include "dscl/config.hpp"
#include "dscl/data.hpp"
#include "dscl/experiment.hpp"
#include "dscl/ranking.hpp"

namespace {

struct Common {
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::size_t threads = 1;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Override the run seed (beats DSCL_SEED and the config)");
  cmd->add_option("--out-dir", c.out_dir, "Directory for logs, checkpoints and reports");
  cmd->add_option("--threads", c.threads, "Parallel runs for ablate and sweep")->check(CLI::PositiveNumber);
  cmd->add_flag("--quiet", c.quiet, "Only print errors");
}

dscl::RunConfig load_config(const std::string& path, const Common& c) {
  dscl::RunConfig cfg = dscl::load_run_config(path);
  dscl::apply_seed_override(cfg, c.seed);
  if (!c.out_dir.empty()) cfg.out_dir = c.out_dir;
  return cfg;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw dscl::DataError("cannot write " + path.string());
  os << text;
}

std::vector<double> parse_rates(const std::string& text) {
  std::vector<double> rates;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw dscl::ConfigError("--rates: '" + item + "' is not a number");
    dscl::SplitSpec{v, 0}.validate();
    rates.push_back(v);
  }
  if (rates.empty()) throw dscl::ConfigError("--rates needs at least one value");
  return rates;
}

class Timer {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

int cmd_train(const std::string& config_path, const Common& c) {
  const dscl::RunConfig cfg = load_config(config_path, c);
  Timer timer;
  const dscl::RunOutcome out = dscl::run_experiment(cfg);
  if (cfg.out_dir.empty()) std::cout << dscl::report_to_json(out.report).dump(2) << '\n';
  if (!c.quiet) {
    std::cerr << dscl::format_report_table({{"test", out.report}});
    std::cerr << "finished " << out.log.steps.size() << " steps in " << timer.seconds() << " s";
    if (!cfg.out_dir.empty()) std::cerr << "; outputs in " << cfg.out_dir.string();
    std::cerr << '\n';
  }
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& angular, const Common& c) {
  std::optional<dscl::AngularMode> mode;
  if (angular == "euler2") mode = dscl::AngularMode::euler2;
  else if (angular == "vec3") mode = dscl::AngularMode::vec3;
  const dscl::MetricReport report = dscl::evaluate_checkpoint(ckpt, data, mode);
  const std::string json = dscl::report_to_json(report).dump(2) + "\n";
  if (!c.out_dir.empty())
    write_file(std::filesystem::path(c.out_dir) / "metrics.json", json);
  else
    std::cout << json;
  if (!c.quiet) std::cerr << dscl::format_report_table({{"eval", report}});
  return 0;
}

int cmd_ablate(const std::string& config_path, const Common& c) {
  const dscl::RunConfig cfg = load_config(config_path, c);
  const auto rows = dscl::run_ablation(cfg, c.threads);
  const std::string json = dscl::ablation_to_json(rows).dump(2) + "\n";
  std::vector<std::pair<std::string, dscl::MetricReport>> table;
  for (const auto& r : rows) table.emplace_back(r.name, r.report);
  const std::string text = dscl::format_report_table(table);
  if (!cfg.out_dir.empty()) {
    write_file(cfg.out_dir / "ablation.json", json);
    write_file(cfg.out_dir / "ablation.txt", text);
  } else {
    std::cout << json;
  }
  if (!c.quiet) std::cerr << text;
  return 0;
}

int cmd_sweep(const std::string& config_path, const std::string& rates_text, const Common& c) {
  const dscl::RunConfig cfg = load_config(config_path, c);
  const auto rates = parse_rates(rates_text);
  const auto rows = dscl::run_sweep(cfg, rates, c.threads);
  const std::string csv = dscl::sweep_csv(rows);
  std::vector<std::pair<std::string, dscl::MetricReport>> table;
  nlohmann::ordered_json reports = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    char label[32];
    std::snprintf(label, sizeof label, "rate %.2f", r.rate);
    table.emplace_back(label, r.report);
    auto j = dscl::report_to_json(r.report);
    reports.push_back({{"rate", r.rate}, {"report", j}});
  }
  if (!cfg.out_dir.empty()) {
    write_file(cfg.out_dir / "sweep.csv", csv);
    write_file(cfg.out_dir / "sweep.json", reports.dump(2) + "\n");
  } else {
    std::cout << csv;
  }
  if (!c.quiet) std::cerr << dscl::format_report_table(table);
  return 0;
}

int cmd_demo(std::size_t batch, std::uint64_t seed) {
  dscl::SyntheticTaskConfig task;
  task.num_samples = batch;
  task.input_dim = 2;
  task.num_targets = 2;
  task.generator = dscl::SyntheticGenerator::anti_correlated;
  task.noise_std = 0.0;
  task.seed = seed;
  const dscl::Dataset d = dscl::generate_synthetic(task);
  const dscl::AmbiguityReport r = dscl::rank_ambiguity_search(d.labels);

  std::ostringstream os;
  os << "labels (y1, y2):\n";
  for (std::size_t i = 0; i < batch; ++i)
    os << "  " << std::showpos << std::fixed << std::setprecision(4) << d.labels(i, 0) << "  "
       << d.labels(i, 1) << std::noshowpos << '\n';
  os << "rankings searched: " << r.rankings_searched << '\n';
  os << std::left << std::setw(28) << "ordering" << std::right << std::setw(14) << "Spearman y1"
     << std::setw(14) << "Spearman y2" << std::setw(14) << "min" << '\n';
  os << std::left << std::setw(28) << "best single scalar ranking" << std::right << std::setw(14)
     << "-" << std::setw(14) << "-" << std::setw(14) << r.best_scalar_min_spearman << '\n';
  os << std::left << std::setw(28) << "per-subspace rankings" << std::right << std::setw(14)
     << r.subspace_spearman_dim1 << std::setw(14) << r.subspace_spearman_dim2 << std::setw(14)
     << std::min(r.subspace_spearman_dim1, r.subspace_spearman_dim2) << '\n';
  std::cout << os.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Disentangled subspace contrastive learning for multi-target regression"};
  app.require_subcommand(1);
  Common common;

  std::string config_path, ckpt, data, angular, rates = "0.20,0.10,0.05";
  std::size_t demo_batch = 6;
  std::uint64_t demo_seed = 0;

  auto* train = app.add_subcommand("train", "Train on a config and report test metrics");
  train->add_option("config", config_path, "Run config (JSON)")->required();
  add_common(train, common);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a CSV file");
  eval->add_option("checkpoint", ckpt)->required();
  eval->add_option("data", data)->required();
  eval->add_option("--angular", angular, "Also report angular error")->check(CLI::IsMember({"euler2", "vec3"}));
  add_common(eval, common);

  auto* ablate = app.add_subcommand("ablate", "Run the loss/init ablation grid");
  ablate->add_option("config", config_path)->required();
  add_common(ablate, common);

  auto* sweep = app.add_subcommand("sweep", "Run one training per label rate");
  sweep->add_option("config", config_path)->required();
  sweep->add_option("--rates", rates, "Comma-separated label rates");
  add_common(sweep, common);

  auto* demo = app.add_subcommand("demo-ambiguity", "Exhaustive rank-ambiguity demonstration");
  demo->add_option("--batch", demo_batch, "Number of samples")->check(CLI::Range(2, 10));
  demo->add_option("--seed", demo_seed, "Label generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*train) return cmd_train(config_path, common);
    if (*eval) return cmd_eval(ckpt, data, angular, common);
    if (*ablate) return cmd_ablate(config_path, common);
    if (*sweep) return cmd_sweep(config_path, rates, common);
    if (*demo) return cmd_demo(demo_batch, demo_seed);
  } catch (const dscl::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

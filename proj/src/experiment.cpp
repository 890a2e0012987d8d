#include "dscl/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "dscl/common.hpp"

namespace dscl {

namespace {

Tensor row_tensor(const std::vector<double>& v) { return Tensor({1, v.size()}, v); }

std::vector<double> row_values(const Tensor& t) { return t.storage(); }

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  os << text;
}

std::vector<std::string> target_names_of(const Dataset& d) { return d.label_names; }

}  // namespace

PreparedRun prepare_run(const RunConfig& config) {
  PreparedRun run;
  if (config.task.kind == TaskKind::synthetic) {
    run.raw = generate_synthetic(config.task.synthetic);
  } else {
    run.raw = load_tabular(config.task.path, config.task.input_columns, config.task.target_columns,
                           false)
                  .data;
  }
  run.split = split(run.raw.size(), SplitSpec{config.split.label_rate, config.seed},
                    config.train.schedule.batch_size);

  std::vector<std::size_t> train_rows = run.split.labeled;
  train_rows.insert(train_rows.end(), run.split.unlabeled.begin(), run.split.unlabeled.end());
  const Tensor lx = run.raw.features.gather_rows(run.split.labeled);
  const Tensor ly = run.raw.labels.gather_rows(run.split.labeled);
  const Tensor ux = run.raw.features.gather_rows(run.split.unlabeled);
  const Tensor tx = run.raw.features.gather_rows(run.split.test);
  run.test_y = run.raw.labels.gather_rows(run.split.test);

  if (config.task.normalize) {
    run.features = Standardizer::fit(run.raw.features.gather_rows(train_rows));
    run.labels = Standardizer::fit(ly);
  } else {
    run.features = {std::vector<double>(lx.cols(), 0.0), std::vector<double>(lx.cols(), 1.0)};
    run.labels = {std::vector<double>(ly.cols(), 0.0), std::vector<double>(ly.cols(), 1.0)};
  }
  run.sets.labeled_x = run.features.apply(lx);
  run.sets.labeled_y = run.labels.apply(ly);
  run.sets.unlabeled_x = ux.rows() ? run.features.apply(ux) : Tensor({0, lx.cols()});
  run.test_x = run.features.apply(tx);

  run.model = config.model;
  run.model.encoder.input_dim = run.raw.features.cols();
  run.model.regressor.num_targets = run.raw.labels.cols();
  run.model.regressor.feature_dim = run.model.encoder.feature_dim;
  run.model.validate();
  return run;
}

nlohmann::ordered_json report_to_json(const MetricReport& r, const std::vector<std::string>& names) {
  auto opt = [](const std::optional<double>& v) -> nlohmann::ordered_json {
    return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
  };
  nlohmann::ordered_json j;
  j["seed"] = r.seed;
  j["config_digest"] = r.config_digest;
  j["mae"] = r.mae;
  j["rmse"] = r.rmse;
  j["pearson"] = opt(r.pearson);
  j["spearman"] = opt(r.spearman);
  if (r.angular_error_deg) j["angular_error_deg"] = *r.angular_error_deg;
  nlohmann::ordered_json targets = nlohmann::ordered_json::array();
  for (std::size_t m = 0; m < r.per_target.size(); ++m) {
    const auto& t = r.per_target[m];
    targets.push_back({{"target", m < names.size() ? names[m] : "y" + std::to_string(m)},
                       {"mae", t.mae},
                       {"rmse", t.rmse},
                       {"pearson", opt(t.pearson)},
                       {"spearman", opt(t.spearman)}});
  }
  j["per_target"] = targets;
  j["diagnostics"] = r.diagnostics;
  return j;
}

std::string format_report_table(const std::vector<std::pair<std::string, MetricReport>>& rows) {
  std::size_t width = 8;
  for (const auto& [label, _] : rows) width = std::max(width, label.size());
  std::ostringstream os;
  auto cell = [&](const std::optional<double>& v) {
    std::ostringstream c;
    if (v)
      c << std::fixed << std::setprecision(4) << *v;
    else
      c << "n/a";
    return c.str();
  };
  os << std::left << std::setw(static_cast<int>(width)) << "run" << std::right << std::setw(10)
     << "MAE" << std::setw(10) << "RMSE" << std::setw(10) << "Pearson" << std::setw(10)
     << "Spearman" << '\n';
  for (const auto& [label, r] : rows)
    os << std::left << std::setw(static_cast<int>(width)) << label << std::right << std::setw(10)
       << cell(r.mae) << std::setw(10) << cell(r.rmse) << std::setw(10) << cell(r.pearson)
       << std::setw(10) << cell(r.spearman) << '\n';
  return os.str();
}

RunOutcome run_experiment(const RunConfig& config) {
  PreparedRun prep = prepare_run(config);
  TrainOptions options = config.train;
  options.seed = config.seed;
  options.out_dir = config.out_dir;
  options.checkpoint_extras = {{"meta.feature_mean", row_tensor(prep.features.mean)},
                               {"meta.feature_std", row_tensor(prep.features.stddev)},
                               {"meta.label_mean", row_tensor(prep.labels.mean)},
                               {"meta.label_std", row_tensor(prep.labels.stddev)}};

  TrainResult result = train(Model(prep.model, config.seed), prep.sets, options);

  RunOutcome out;
  out.test_predictions = prep.labels.invert(result.model.predict(prep.test_x));
  out.report = metric_suite(out.test_predictions, prep.test_y);
  if (config.angular) out.report.angular_error_deg = angular_error(out.test_predictions, prep.test_y, *config.angular);
  out.report.seed = config.seed;
  out.report.config_digest = config_digest(config);
  for (const auto& d : result.log.diagnostics) out.report.diagnostics.push_back(d);
  if (result.log.seriation_failures)
    out.report.diagnostics.push_back(std::to_string(result.log.seriation_failures) +
                                     " finetune steps skipped the unsupervised terms (seriation undefined)");
  out.log = std::move(result.log);

  if (!config.out_dir.empty()) {
    const auto& dir = config.out_dir;
    std::vector<std::pair<std::string, Tensor>> tensors;
    tensors.emplace_back("meta.model", encode_model_config(result.model.config()));
    for (const auto& [name, value] : result.model.params()) tensors.emplace_back(name, value);
    tensors.emplace_back("meta.mask", out.log.mask.mask);
    for (const auto& extra : options.checkpoint_extras) tensors.push_back(extra);
    write_checkpoint(dir / "final.ckpt", tensors);

    nlohmann::ordered_json metrics = report_to_json(out.report, target_names_of(prep.raw));
    metrics["training"] = {{"steps", out.log.steps.size()},
                           {"init_disjointness", out.log.init_disjointness},
                           {"seriation_failures", out.log.seriation_failures}};
    write_text(dir / "metrics.json", metrics.dump(2) + "\n");
    write_text(dir / "report.txt", format_report_table({{"test", out.report}}));
    write_matrix_csv(dir / "mask.csv", out.log.mask.mask);

    Dataset test;
    test.features = prep.raw.features.gather_rows(prep.split.test);
    test.labels = prep.test_y;
    test.feature_names = prep.raw.feature_names;
    test.label_names = prep.raw.label_names;
    write_dataset_csv(dir / "test.csv", test);
  }
  return out;
}

std::vector<AblationVariant> ablation_grid(const LossWeights& base) {
  auto without = [&](auto edit) {
    LossWeights w = base;
    edit(w);
    return w;
  };
  return {
      {"full", base, true},
      {"w/o L_SC", without([](LossWeights& w) { w.w_sc = 0; }), true},
      {"w/o L_UR", without([](LossWeights& w) { w.w_ur = 0; }), true},
      {"w/o L_UC", without([](LossWeights& w) { w.w_uc = 0; }), true},
      {"w/o L_J", without([](LossWeights& w) { w.gamma = 0; }), true},
      {"w/o L_UR+L_UC", without([](LossWeights& w) { w.w_ur = w.w_uc = 0; }), true},
      {"w/o Init", base, false},
      {"w/ L_reg", LossWeights{0, 0, 0, 0}, true},
  };
}

void run_parallel(std::size_t jobs, std::size_t threads, const std::function<void(std::size_t)>& task) {
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(jobs, 1));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_lock;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs; i = next++) {
      try {
        task(i);
      } catch (...) {
        std::lock_guard lock(failure_lock);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
}

namespace {

std::string slug(const std::string& name) {
  std::string s;
  for (char c : name) s += std::isalnum(static_cast<unsigned char>(c)) ? static_cast<char>(std::tolower(c)) : '_';
  return s;
}

}  // namespace

std::vector<AblationRow> run_ablation(const RunConfig& config, std::size_t threads) {
  const auto grid = ablation_grid(config.train.weights);
  std::vector<AblationRow> rows(grid.size());
  run_parallel(grid.size(), threads, [&](std::size_t i) {
    RunConfig c = config;
    c.train.weights = grid[i].weights;
    c.train.schedule.init_updates = grid[i].init_updates;
    if (!config.out_dir.empty()) c.out_dir = config.out_dir / "ablate" / slug(grid[i].name);
    rows[i] = {grid[i].name, run_experiment(c).report};
  });
  return rows;
}

nlohmann::ordered_json ablation_to_json(const std::vector<AblationRow>& rows) {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["variant"] = r.name;
    const nlohmann::ordered_json report = report_to_json(r.report);
    for (const auto& [k, v] : report.items()) j[k] = v;
    out.push_back(j);
  }
  return out;
}

std::vector<SweepRow> run_sweep(const RunConfig& config, const std::vector<double>& rates,
                                std::size_t threads) {
  std::vector<SweepRow> rows(rates.size());
  run_parallel(rates.size(), threads, [&](std::size_t i) {
    RunConfig c = config;
    c.split.label_rate = rates[i];
    c.split.validate();
    if (!config.out_dir.empty()) {
      char name[32];
      std::snprintf(name, sizeof name, "rate_%.2f", rates[i]);
      c.out_dir = config.out_dir / "sweep" / name;
    }
    rows[i] = {rates[i], run_experiment(c).report};
  });
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << std::setprecision(17) << "rate,seed,mae,rmse,pearson,spearman\n";
  for (const auto& r : rows) {
    os << r.rate << ',' << r.report.seed << ',' << r.report.mae << ',' << r.report.rmse << ',';
    if (r.report.pearson) os << *r.report.pearson;
    os << ',';
    if (r.report.spearman) os << *r.report.spearman;
    os << '\n';
  }
  return os.str();
}

MetricReport evaluate_checkpoint(const std::filesystem::path& checkpoint,
                                 const std::filesystem::path& data,
                                 std::optional<AngularMode> angular) {
  const auto tensors = read_checkpoint(checkpoint);
  auto find = [&](const std::string& name) -> const Tensor& {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw DataError("checkpoint " + checkpoint.string() + " has no tensor '" + name + "'");
  };
  const ModelConfig mc = decode_model_config(find("meta.model"));
  Model model(mc, 0);
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    const Tensor& stored = find(model.params().name(i));
    if (stored.shape() != model.params().value(i).shape())
      throw DataError("checkpoint tensor '" + model.params().name(i) + "' has shape " +
                      shape_string(stored.shape()));
    model.params().value(i) = stored;
  }
  const Standardizer fx{row_values(find("meta.feature_mean")), row_values(find("meta.feature_std"))};
  const Standardizer fy{row_values(find("meta.label_mean")), row_values(find("meta.label_std"))};

  std::ifstream is(data, std::ios::binary);
  if (!is) throw DataError("cannot open " + data.string());
  std::string header_line;
  std::getline(is, header_line);
  const auto header = parse_csv(header_line);
  const std::size_t d = mc.encoder.input_dim, m = mc.regressor.num_targets;
  if (header.empty() || header[0].size() < d + m)
    throw DataError(data.string() + " needs at least " + std::to_string(d + m) + " columns");
  const std::vector<std::string> inputs(header[0].begin(), header[0].begin() + static_cast<std::ptrdiff_t>(d));
  const std::vector<std::string> targets(header[0].begin() + static_cast<std::ptrdiff_t>(d),
                                         header[0].begin() + static_cast<std::ptrdiff_t>(d + m));
  const Dataset ds = load_tabular(data, inputs, targets, false).data;

  const Tensor pred = fy.invert(model.predict(fx.apply(ds.features)));
  MetricReport report = metric_suite(pred, ds.labels);
  if (angular) report.angular_error_deg = angular_error(pred, ds.labels, *angular);
  return report;
}

}  // namespace dscl

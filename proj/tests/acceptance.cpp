// Acceptance gate. Prints one line per criterion:
//
//   criterion N: PASS|FAIL|REPLACED  <measurements>
//
// and exits non-zero if any criterion fails. Pass criterion numbers as
// arguments to run a subset.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dscl/config.hpp"
#include "dscl/data.hpp"
#include "dscl/experiment.hpp"
#include "dscl/ranking.hpp"
#include "dscl/train.hpp"
#include "gradcases.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr int kGradInstances = 50;
constexpr double kGradTol = 1e-4;
constexpr double kGradBudgetS = 120.0;

constexpr int kSeriationMatrices = 50;
constexpr double kSeriationBudgetS = 60.0;

constexpr int kSeeds = 5;
constexpr double kDisjointHigh = 0.9;
constexpr double kDisjointLow = 0.7;
constexpr double kDisentangleBudgetS = 300.0;

constexpr double kAmbiguityBudgetS = 10.0;

constexpr double kSineMinGainAt5 = 0.08;
constexpr double kSineBudgetS = 20.0 * 60.0;

constexpr double kSarcosMinGain = 0.10;
constexpr double kSarcosBudgetS = 60.0 * 60.0;

constexpr double kStabilityTol = 0.10;
constexpr double kSmoothingFraction = 0.10;

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

struct Verdict {
  enum Kind { pass, fail, replaced } kind = fail;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------
// Shared experiment runs, cached so criteria that need the same run reuse it.
// Each entry remembers its own wall time so per-criterion budgets can be
// charged honestly.

struct RunKey {
  std::string task;
  std::string variant;
  double rate;
  std::uint64_t seed;
  auto operator<=>(const RunKey&) const = default;
};

struct CachedRun {
  dscl::MetricReport report;
  dscl::SubspaceMask mask;
  double seconds = 0.0;
};

std::map<RunKey, CachedRun>& run_cache() {
  static std::map<RunKey, CachedRun> cache;
  return cache;
}

dscl::RunConfig synthetic_config(dscl::SyntheticGenerator g, std::size_t targets, double rate, std::uint64_t seed) {
  dscl::RunConfig c;
  c.seed = seed;
  c.task.synthetic.generator = g;
  c.task.synthetic.num_samples = 5000;
  c.task.synthetic.num_targets = targets;
  c.task.synthetic.seed = seed;
  c.split.label_rate = rate;
  return c;
}

const CachedRun& cached_run(const std::string& task, const std::string& variant, double rate, std::uint64_t seed,
                            const std::function<dscl::RunConfig()>& make, double& charged) {
  const RunKey key{task, variant, rate, seed};
  auto& cache = run_cache();
  auto it = cache.find(key);
  if (it == cache.end()) {
    dscl::RunConfig c = make();
    const dscl::LossWeights base = c.train.weights;
    bool found = false;
    for (const auto& v : dscl::ablation_grid(base))
      if (v.name == variant) {
        c.train.weights = v.weights;
        c.train.schedule.init_updates = v.init_updates;
        found = true;
      }
    if (!found) throw std::logic_error("unknown variant " + variant);
    Stopwatch sw;
    auto out = dscl::run_experiment(c);
    it = cache.emplace(key, CachedRun{out.report, out.log.mask, sw.seconds()}).first;
  }
  charged += it->second.seconds;
  return it->second;
}

double mean_mae(const std::string& task, const std::string& variant, double rate,
                const std::function<dscl::RunConfig(std::uint64_t)>& make, double& charged) {
  std::vector<double> maes;
  for (std::uint64_t s = 0; s < kSeeds; ++s)
    maes.push_back(cached_run(task, variant, rate, s, [&] { return make(s); }, charged).report.mae);
  return mean(maes);
}

// ---------------------------------------------------------------------------

Verdict criterion_gradients() {
  Stopwatch sw;
  std::mt19937_64 rng(1001);
  auto cases = gradcases::op_cases();
  for (auto& c : gradcases::loss_cases()) cases.push_back(std::move(c));
  double worst = 0.0;
  std::string worst_name, failures;
  for (const auto& c : cases) {
    for (int k = 0; k < kGradInstances; ++k) {
      const auto r = c.run(rng);
      if (!(r.rel_error < kGradTol)) failures += " " + c.name;
      if (!(r.rel_error <= worst)) {
        worst = r.rel_error;
        worst_name = c.name;
      }
    }
  }
  const double t = sw.seconds();
  Verdict v;
  v.kind = failures.empty() && t < kGradBudgetS ? Verdict::pass : Verdict::fail;
  v.detail = std::to_string(cases.size()) + " cases x " + std::to_string(kGradInstances) +
             " instances, worst rel error " + fmt("%.2e", worst) + " (" + worst_name + "), " + fmt("%.1f s", t);
  if (!failures.empty()) v.detail += "; failing:" + failures;
  return v;
}

Verdict criterion_seriation() {
  Stopwatch sw;
  std::mt19937_64 rng(1002);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int agree = 0, total = 0;
  for (std::size_t b = 4; b <= 8; ++b)
    for (int rep = 0; rep < kSeriationMatrices; ++rep) {
      std::vector<double> pos(b);
      for (double& p : pos) p = u(rng);
      const dscl::Tensor a = oracle::robinson_from_positions(pos, 0.1 + u(rng));
      const auto brute = oracle::brute_force_seriation(a);
      const auto spectral = dscl::spectral_seriation({a, dscl::SimilarityKind::affinity});
      agree += oracle::same_up_to_reversal(spectral.ranks, brute);
      ++total;
    }
  const double t = sw.seconds();
  Verdict v;
  v.kind = agree == total && t < kSeriationBudgetS ? Verdict::pass : Verdict::fail;
  v.detail = std::to_string(agree) + "/" + std::to_string(total) + " matrices (B=4..8) match brute force, " +
             fmt("%.1f s", t);
  return v;
}

// Init phase only, on the linear-mix task with every sample labeled.
struct InitRun {
  double disjointness = 0.0;
  bool one_hot = false;
  std::vector<double> jacobian_loss;
};

InitRun init_only(double gamma, std::uint64_t seed) {
  dscl::RunConfig c = synthetic_config(dscl::SyntheticGenerator::linear_mix, 2, 1.0, seed);
  c.model.encoder.feature_dim = 32;
  c.model.regressor.feature_dim = 32;
  c.train.weights.gamma = gamma;
  c.train.schedule.finetune_epochs = 0;
  const dscl::PreparedRun prep = dscl::prepare_run(c);
  dscl::TrainOptions options = c.train;
  options.seed = seed;
  const auto result = dscl::train(dscl::Model(prep.model, seed), prep.sets, options);
  InitRun r;
  r.disjointness = result.log.init_disjointness;
  r.jacobian_loss = result.log.init_jacobian_loss;
  const dscl::Tensor& m = result.log.mask.mask;
  r.one_hot = true;
  for (std::size_t k = 0; k < m.cols(); ++k) {
    double sum = 0.0;
    for (std::size_t t = 0; t < m.rows(); ++t) {
      r.one_hot = r.one_hot && (m(t, k) == 0.0 || m(t, k) == 1.0);
      sum += m(t, k);
    }
    r.one_hot = r.one_hot && sum == 1.0;
  }
  return r;
}

std::map<std::pair<int, std::uint64_t>, InitRun>& init_cache() {
  static std::map<std::pair<int, std::uint64_t>, InitRun> cache;
  return cache;
}

const InitRun& cached_init(double gamma, std::uint64_t seed) {
  const std::pair<int, std::uint64_t> key{gamma > 0.0, seed};
  auto it = init_cache().find(key);
  if (it == init_cache().end()) it = init_cache().emplace(key, init_only(gamma, seed)).first;
  return it->second;
}

Verdict criterion_disentanglement() {
  Stopwatch sw;
  double min_on = 1.0, max_off = 0.0;
  bool one_hot = true;
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    const auto& on = cached_init(1.0, s);
    const auto& off = cached_init(0.0, s);
    min_on = std::min(min_on, on.disjointness);
    max_off = std::max(max_off, off.disjointness);
    one_hot = one_hot && on.one_hot && off.one_hot;
  }
  const double t = sw.seconds();
  Verdict v;
  v.kind = min_on > kDisjointHigh && max_off < kDisjointLow && one_hot && t < kDisentangleBudgetS ? Verdict::pass
                                                                                                   : Verdict::fail;
  v.detail = "disjointness gamma=1 min " + fmt("%.3f", min_on) + ", gamma=0 max " + fmt("%.3f", max_off) +
             ", masks one-hot " + (one_hot ? "yes" : "no") + ", " + fmt("%.1f s", t);
  return v;
}

Verdict criterion_ambiguity() {
  Stopwatch sw;
  dscl::SyntheticTaskConfig task;
  task.num_samples = 6;
  task.input_dim = 2;
  task.generator = dscl::SyntheticGenerator::anti_correlated;
  task.noise_std = 0.0;
  const auto r = dscl::rank_ambiguity_search(dscl::generate_synthetic(task).labels);
  const double t = sw.seconds();
  Verdict v;
  v.kind = r.rankings_searched == 720 && r.best_scalar_min_spearman <= 0.0 && r.subspace_spearman_dim1 == 1.0 &&
                   r.subspace_spearman_dim2 == 1.0 && t < kAmbiguityBudgetS
               ? Verdict::pass
               : Verdict::fail;
  v.detail = std::to_string(r.rankings_searched) + " rankings, best scalar min Spearman " +
             fmt("%.4f", r.best_scalar_min_spearman) + ", per-subspace " + fmt("%.4f", r.subspace_spearman_dim1) +
             " / " + fmt("%.4f", r.subspace_spearman_dim2) + ", " + fmt("%.2f s", t);
  return v;
}

dscl::RunConfig sine_config(double rate, std::uint64_t seed) {
  return synthetic_config(dscl::SyntheticGenerator::nonlinear_sine, 2, rate, seed);
}

Verdict criterion_sine_gain() {
  double charged = 0.0;
  std::string detail;
  bool ok = true;
  for (double rate : {0.10, 0.05}) {
    auto make = [rate](std::uint64_t s) { return sine_config(rate, s); };
    const double full = mean_mae("sine", "full", rate, make, charged);
    const double sup = mean_mae("sine", "w/ L_reg", rate, make, charged);
    const double gain = (sup - full) / sup;
    ok = ok && full < sup;
    if (rate == 0.05) ok = ok && gain >= kSineMinGainAt5;
    detail += fmt("%.0f%%: ", rate * 100) + "full " + fmt("%.4f", full) + " vs supervised " + fmt("%.4f", sup) +
              " (" + fmt("%+.1f%%", 100 * gain) + "); ";
  }
  Verdict v;
  v.kind = ok && charged < kSineBudgetS ? Verdict::pass : Verdict::fail;
  v.detail = detail + fmt("%.0f s", charged);
  return v;
}

Verdict criterion_ablation() {
  double charged = 0.0;
  auto make = [](std::uint64_t s) { return sine_config(0.05, s); };
  const double full = mean_mae("sine", "full", 0.05, make, charged);
  const double both = mean_mae("sine", "w/o L_UR+L_UC", 0.05, make, charged) - full;
  bool largest = true;
  std::string detail = "degradation vs full " + fmt("%.4f", full) + ": w/o L_UR+L_UC " + fmt("%+.4f", both);
  for (const char* single : {"w/o L_SC", "w/o L_UR", "w/o L_UC", "w/o L_J"}) {
    const double d = mean_mae("sine", single, 0.05, make, charged) - full;
    largest = largest && both > d;
    detail += std::string(", ") + single + " " + fmt("%+.4f", d);
  }
  Verdict v;
  v.kind = largest ? Verdict::pass : Verdict::fail;
  v.detail = detail + "; " + fmt("%.0f s", charged);
  return v;
}

Verdict criterion_sarcos() {
  const char* path = std::getenv("DSCL_SARCOS_CSV");
  Verdict v;
  if (!path || !*path || !fs::exists(path)) {
    v.kind = Verdict::replaced;
    v.detail = "Sarcos data not available (set DSCL_SARCOS_CSV); replaced by criterion 5";
    return v;
  }
  Stopwatch sw;
  dscl::RunConfig base = dscl::load_run_config(fs::path(DSCL_SOURCE_DIR) / "configs" / "sarcos.json");
  base.task.path = path;
  base.split.label_rate = 0.10;
  dscl::RunConfig sup = base;
  sup.train.weights = {0, 0, 0, 0};
  const auto full_out = dscl::run_experiment(base);
  const auto sup_out = dscl::run_experiment(sup);
  const double gain = (sup_out.report.mae - full_out.report.mae) / sup_out.report.mae;
  const double t = sw.seconds();
  const bool spearman_ok = full_out.report.spearman && sup_out.report.spearman &&
                           *full_out.report.spearman >= *sup_out.report.spearman;
  v.kind = gain >= kSarcosMinGain && spearman_ok && t < kSarcosBudgetS ? Verdict::pass : Verdict::fail;
  v.detail = "MAE " + fmt("%.4f", full_out.report.mae) + " vs supervised " + fmt("%.4f", sup_out.report.mae) + " (" +
             fmt("%+.1f%%", 100 * gain) + "), Spearman " + fmt("%.4f", full_out.report.spearman.value_or(NAN)) +
             " vs " + fmt("%.4f", sup_out.report.spearman.value_or(NAN)) + ", " + fmt("%.0f s", t);
  return v;
}

Verdict criterion_three_targets() {
  double charged = 0.0;
  auto make = [](std::uint64_t s) {
    auto c = synthetic_config(dscl::SyntheticGenerator::nonlinear_sine, 3, 0.10, s);
    c.model.encoder.feature_dim = 48;
    c.model.regressor.feature_dim = 48;
    return c;
  };
  bool partition = true;
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    const auto& run = cached_run("sine3", "full", 0.10, s, [&] { return make(s); }, charged);
    const dscl::Tensor& m = run.mask.mask;
    partition = partition && m.rows() == 3 && m.cols() == 48;
    for (std::size_t k = 0; k < m.cols(); ++k) {
      double sum = 0.0;
      for (std::size_t t = 0; t < m.rows(); ++t) sum += m(t, k);
      partition = partition && sum == 1.0;
    }
    for (const auto& s_m : run.mask.support) partition = partition && !s_m.empty();
  }
  const double full = mean_mae("sine3", "full", 0.10, make, charged);
  const double sup = mean_mae("sine3", "w/ L_reg", 0.10, make, charged);
  Verdict v;
  v.kind = full < sup && partition ? Verdict::pass : Verdict::fail;
  v.detail = "full " + fmt("%.4f", full) + " vs supervised " + fmt("%.4f", sup) + ", masks valid 3-way partitions " +
             (partition ? "yes" : "no") + "; " + fmt("%.0f s", charged);
  return v;
}

// Trailing mean over the last `w` values ending before index `end`.
double trailing_mean(const std::vector<double>& v, std::size_t end, std::size_t w) {
  const std::size_t start = end >= w ? end - w : 0;
  return std::accumulate(v.begin() + static_cast<std::ptrdiff_t>(start), v.begin() + static_cast<std::ptrdiff_t>(end),
                         0.0) /
         static_cast<double>(end - start);
}

Verdict criterion_init_stability() {
  Stopwatch sw;
  double worst = 0.0;
  for (std::uint64_t s = 0; s < kSeeds; ++s) {
    const auto& lj = cached_init(1.0, s).jacobian_loss;
    const std::size_t w = std::max<std::size_t>(1, static_cast<std::size_t>(kSmoothingFraction * lj.size()));
    const double mid = trailing_mean(lj, lj.size() / 2, w);
    const double last = trailing_mean(lj, lj.size(), w);
    worst = std::max(worst, std::fabs(mid - last) / last);
  }
  Verdict v;
  v.kind = worst <= kStabilityTol ? Verdict::pass : Verdict::fail;
  v.detail = "worst |L_J(50%) - L_J(end)| / L_J(end) = " + fmt("%.3f", worst) + " over " + std::to_string(kSeeds) +
             " seeds, " + fmt("%.1f s", sw.seconds());
  return v;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

Verdict criterion_determinism() {
  Stopwatch sw;
  const fs::path root = fs::temp_directory_path() / "dscl_acceptance_determinism";
  fs::remove_all(root);
  const std::string config = (fs::path(DSCL_SOURCE_DIR) / "configs" / "smoke.json").string();
  bool ran = true;
  for (const char* name : {"a", "b"}) {
    const std::string cmd = "env -u DSCL_SEED '" DSCL_CLI_PATH "' train '" + config + "' --quiet --out-dir '" +
                            (root / name).string() + "'";
    const int status = std::system(cmd.c_str());
    ran = ran && WIFEXITED(status) && WEXITSTATUS(status) == 0;
  }
  const std::string a = slurp(root / "a" / "metrics.json"), b = slurp(root / "b" / "metrics.json");
  fs::remove_all(root);
  Verdict v;
  v.kind = ran && !a.empty() && a == b ? Verdict::pass : Verdict::fail;
  v.detail = std::string("two train runs ") + (ran ? "exited 0" : "failed") + ", metrics.json " +
             (a == b && !a.empty() ? "byte-identical" : "differs") + " (" + std::to_string(a.size()) + " bytes), " +
             fmt("%.1f s", sw.seconds());
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::function<Verdict()>> criteria = {
      criterion_gradients,   criterion_seriation, criterion_disentanglement, criterion_ambiguity,
      criterion_sine_gain,   criterion_ablation,  criterion_sarcos,          criterion_three_targets,
      criterion_init_stability, criterion_determinism};

  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  std::map<int, Verdict::Kind> kinds;
  for (int n = 1; n <= static_cast<int>(criteria.size()); ++n) {
    if (!selected.empty() && !selected.count(n)) continue;
    Verdict v;
    try {
      v = criteria[n - 1]();
    } catch (const std::exception& e) {
      v.kind = Verdict::fail;
      v.detail = std::string("threw: ") + e.what();
    }
    kinds[n] = v.kind;
    const char* label = v.kind == Verdict::pass ? "PASS" : v.kind == Verdict::fail ? "FAIL" : "REPLACED";
    std::cout << "criterion " << n << ": " << label << "  " << v.detail << std::endl;
    if (v.kind == Verdict::fail) ++failed;
  }
  // A replaced criterion stands or falls with its replacement.
  if (kinds.count(7) && kinds[7] == Verdict::replaced && kinds.count(5) && kinds[5] == Verdict::fail) ++failed;
  std::cout << (failed ? "acceptance: FAIL (" + std::to_string(failed) + " criteria)" : "acceptance: PASS")
            << std::endl;
  return failed ? 1 : 0;
}

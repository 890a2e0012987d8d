#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "dscl/common.hpp"
#include "dscl/data.hpp"
#include "dscl/train.hpp"

using dscl::Tensor;
namespace ad = dscl::ad;
namespace fs = std::filesystem;

namespace {

dscl::ModelConfig model_config() {
  dscl::ModelConfig c;
  c.encoder.input_dim = 3;
  c.encoder.hidden_dims = {8};
  c.encoder.feature_dim = 6;
  c.regressor.feature_dim = 6;
  c.regressor.num_targets = 2;
  c.regressor.hidden_dim = 5;
  return c;
}

dscl::TrainSets small_sets() {
  dscl::SyntheticTaskConfig task;
  task.num_samples = 104;
  task.input_dim = 3;
  task.seed = 11;
  const auto d = dscl::generate_synthetic(task);
  std::vector<std::size_t> lab(40), unl(64);
  for (std::size_t i = 0; i < 40; ++i) lab[i] = i;
  for (std::size_t i = 0; i < 64; ++i) unl[i] = 40 + i;
  return {d.features.gather_rows(lab), d.labels.gather_rows(lab), d.features.gather_rows(unl)};
}

dscl::TrainOptions small_options() {
  dscl::TrainOptions o;
  o.schedule.init_epochs = 2;
  o.schedule.finetune_epochs = 2;
  o.schedule.batch_size = 8;
  o.schedule.learning_rate = 1e-3;
  o.seed = 5;
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dscl_test_train_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("batch cycler visits every row once per pass and drops the tail") {
  std::mt19937_64 rng(1);
  dscl::BatchCycler c(10, 3, rng);
  CHECK(c.batches_per_pass() == 3);
  std::set<std::size_t> seen;
  for (int b = 0; b < 3; ++b) {
    const auto idx = c.next();
    CHECK(idx.size() == 3);
    seen.insert(idx.begin(), idx.end());
  }
  CHECK(seen.size() == 9);
  CHECK(c.passes() == 0);
  c.next();
  CHECK(c.passes() == 1);
  CHECK_THROWS_AS(dscl::BatchCycler(2, 3, rng), dscl::ContractError);
}

TEST_CASE("with every auxiliary weight at zero, training is plain L1 regression") {
  const auto sets = small_sets();
  auto options = small_options();
  options.weights = {0.0, 0.0, 0.0, 0.0};
  const dscl::Model start(model_config(), 9);
  const auto result = dscl::train(start, sets, options);

  // Reference loop: the same rng draws, Adam and mean absolute error only.
  dscl::Model ref = start;
  std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  dscl::AdamState adam(dscl::AdamConfig{.learning_rate = options.schedule.learning_rate});
  auto step = [&](const std::vector<std::size_t>& idx) {
    const auto p = ref.bind();
    const ad::Var y = ref.regress(p, ref.encode(p, ad::Var::constant(sets.labeled_x.gather_rows(idx))));
    ad::backward(ad::mean(ad::abs(ad::sub(y, ad::Var::constant(sets.labeled_y.gather_rows(idx))))));
    dscl::adam_step(adam, ref.params(), p.gradients());
  };
  dscl::BatchCycler init(40, 8, rng);
  for (std::size_t s = 0; s < 2 * 5; ++s) step(init.next());
  dscl::BatchCycler fine(40, 8, rng);
  for (std::size_t s = 0; s < 2 * 8; ++s) step(fine.next());

  REQUIRE(result.log.steps.size() == 26);
  for (std::size_t i = 0; i < ref.params().size(); ++i)
    CHECK(result.model.params().value(i) == ref.params().value(i));
}

TEST_CASE("full run bookkeeping") {
  const auto sets = small_sets();
  auto options = small_options();
  options.lambda = 10.0;
  const auto r = dscl::train(dscl::Model(model_config(), 2), sets, options);
  CHECK(r.log.steps.size() == 2 * 5 + 2 * 8);
  CHECK(r.log.init_jacobian_loss.size() == 10);
  CHECK(r.log.steps.front().phase == "init");
  CHECK(r.log.steps.back().phase == "finetune");
  CHECK(r.log.steps.back().loss.step == 25);
  CHECK(r.log.mask.targets() == 2);
  CHECK(r.log.jacobian_ema.shape() == dscl::Shape{2, 6});
  CHECK_NOTHROW(dscl::SubspaceMask::from_matrix(r.log.mask.mask));
  CHECK(r.log.init_disjointness > 0.0);
  CHECK(r.log.init_disjointness <= 1.0);
  CHECK(r.model.params().all_finite());
  bool any_unsupervised = false;
  for (const auto& s : r.log.steps) any_unsupervised = any_unsupervised || s.loss.l_uc > 0.0;
  CHECK(any_unsupervised);
}

TEST_CASE("without init updates the model only moves in finetuning") {
  const auto sets = small_sets();
  auto options = small_options();
  options.schedule.init_updates = false;
  const auto r = dscl::train(dscl::Model(model_config(), 2), sets, options);
  CHECK(r.log.steps.size() == 5 + 2 * 8);
  CHECK(r.log.mask.targets() == 2);
}

TEST_CASE("finetuning needs a frozen mask") {
  const auto sets = small_sets();
  const auto options = small_options();
  dscl::Model model(model_config(), 1);
  std::mt19937_64 rng(0);
  dscl::AdamState adam;
  dscl::RunLog log;
  CHECK_THROWS_AS(dscl::finetune_phase(model, sets, options, rng, adam, log), dscl::ContractError);
}

TEST_CASE("input validation") {
  auto sets = small_sets();
  const auto options = small_options();
  const dscl::Model model(model_config(), 1);
  auto bad = sets;
  bad.labeled_y(0, 0) = NAN;
  CHECK_THROWS_AS(dscl::train(model, bad, options), dscl::DataError);
  bad = sets;
  bad.labeled_x = Tensor({40, 4});
  CHECK_THROWS_AS(dscl::train(model, bad, options), dscl::DimensionError);
  auto opts = options;
  opts.schedule.batch_size = 64;
  CHECK_THROWS_AS(dscl::train(model, sets, opts), dscl::ConfigError);
  opts = options;
  opts.ema_decay = 1.0;
  CHECK_THROWS_AS(dscl::train(model, sets, opts), dscl::ConfigError);
}

TEST_CASE("run log and checkpoints on disk are deterministic") {
  const auto sets = small_sets();
  auto options = small_options();
  const fs::path a = temp_dir("a"), b = temp_dir("b");
  options.out_dir = a;
  options.checkpoint_extras.emplace_back("meta.note", Tensor::row({1.0, 2.0}));
  const auto ra = dscl::train(dscl::Model(model_config(), 3), sets, options);
  options.out_dir = b;
  dscl::train(dscl::Model(model_config(), 3), sets, options);

  const std::string log_a = slurp(a / "train.jsonl");
  CHECK(log_a == slurp(b / "train.jsonl"));
  CHECK(static_cast<std::size_t>(std::count(log_a.begin(), log_a.end(), '\n')) == ra.log.steps.size());
  CHECK(log_a.rfind("{\"phase\":\"init\",\"epoch\":0,\"step\":0,\"l_reg\":", 0) == 0);

  for (const char* name : {"init_epoch_000.ckpt", "init_epoch_001.ckpt", "finetune_epoch_001.ckpt"})
    CHECK(fs::exists(a / "checkpoints" / name));
  CHECK(ra.log.last_checkpoint == a / "checkpoints" / "finetune_epoch_001.ckpt");
  const auto ckpt = dscl::read_checkpoint(ra.log.last_checkpoint);
  bool has_mask = false, has_note = false;
  for (const auto& [name, t] : ckpt) {
    has_mask = has_mask || (name == "meta.mask" && t == ra.log.mask.mask);
    has_note = has_note || (name == "meta.note" && t == Tensor::row({1.0, 2.0}));
  }
  CHECK(has_mask);
  CHECK(has_note);

  // A second run into the same directory replaces the log instead of appending.
  options.out_dir = a;
  dscl::train(dscl::Model(model_config(), 3), sets, options);
  CHECK(slurp(a / "train.jsonl") == log_a);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("divergence aborts with the step and the last checkpoint") {
  const auto sets = small_sets();
  auto options = small_options();
  options.schedule.learning_rate = 1e300;
  std::string message;
  try {
    dscl::train(dscl::Model(model_config(), 4), sets, options);
  } catch (const dscl::NumericError& e) {
    message = e.what();
  }
  CHECK(message.rfind("training aborted at step ", 0) == 0);
  CHECK(message.find("no checkpoint written yet") != std::string::npos);

  const fs::path dir = temp_dir("nan");
  options.out_dir = dir;
  options.schedule.learning_rate = 1e-3;
  options.schedule.init_epochs = 1;
  // Poison the parameters after a clean init by finetuning at an absurd rate.
  dscl::Model model(model_config(), 4);
  std::mt19937_64 rng(0);
  dscl::AdamState adam(dscl::AdamConfig{.learning_rate = 1e-3});
  dscl::RunLog log;
  dscl::init_phase(model, sets, options, rng, adam, log);
  REQUIRE_FALSE(log.last_checkpoint.empty());
  adam.config.learning_rate = 1e300;
  message.clear();
  try {
    dscl::finetune_phase(model, sets, options, rng, adam, log);
  } catch (const dscl::NumericError& e) {
    message = e.what();
  }
  CHECK(message.find("last good checkpoint: " + (dir / "checkpoints" / "init_epoch_000.ckpt").string()) !=
        std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("jacobian profile of a linear regressor is |W|") {
  auto cfg = model_config();
  cfg.regressor.depth = dscl::RegressorDepth::linear;
  const dscl::Model model(cfg, 6);
  const auto sets = small_sets();
  const Tensor prof = dscl::jacobian_profile(model, sets.labeled_x, 7);
  const Tensor& w = model.params().find("regressor.0.weight");
  for (std::size_t i = 0; i < w.size(); ++i) CHECK(prof[i] == doctest::Approx(std::fabs(w[i])));
}

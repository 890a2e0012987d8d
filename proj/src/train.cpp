#include "dscl/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "dscl/common.hpp"
#include "dscl/ranking.hpp"

namespace dscl {

void TrainSchedule::validate() const {
  if (init_epochs < 1) throw ConfigError("init_epochs must be at least 1 (the mask is built there)");
  if (batch_size < 2) throw ConfigError("batch_size must be at least 2");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
    throw ConfigError("learning_rate must be positive");
}

void TrainSets::validate(const Model& model, std::size_t batch_size) const {
  const std::size_t d = model.config().encoder.input_dim;
  if (labeled_x.cols() != d || (unlabeled_x.size() && unlabeled_x.cols() != d))
    throw DimensionError("training features do not match the encoder input_dim " + std::to_string(d));
  if (labeled_y.rows() != labeled_x.rows() || labeled_y.cols() != model.num_targets())
    throw DimensionError("labeled targets are " + shape_string(labeled_y.shape()) + ", expected " +
                         std::to_string(labeled_x.rows()) + "x" + std::to_string(model.num_targets()));
  if (!labeled_y.all_finite() || !labeled_x.all_finite() || !unlabeled_x.all_finite())
    throw DataError("training data contains non-finite values");
  if (labeled_x.rows() < batch_size)
    throw ConfigError("labeled set (" + std::to_string(labeled_x.rows()) +
                      " rows) is smaller than one batch");
}

BatchCycler::BatchCycler(std::size_t n, std::size_t batch_size, std::mt19937_64& rng)
    : n_(n), batch_(batch_size), rng_(&rng), order_(n) {
  if (batch_size == 0 || n < batch_size)
    throw ContractError("BatchCycler needs at least one full batch");
  std::iota(order_.begin(), order_.end(), 0);
  reshuffle();
}

void BatchCycler::reshuffle() {
  std::shuffle(order_.begin(), order_.end(), *rng_);
  cursor_ = 0;
}

std::vector<std::size_t> BatchCycler::next() {
  if (cursor_ + batch_ > n_) {
    ++passes_;
    reshuffle();
  }
  std::vector<std::size_t> out(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                               order_.begin() + static_cast<std::ptrdiff_t>(cursor_ + batch_));
  cursor_ += batch_;
  return out;
}

nlohmann::ordered_json StepRecord::to_json() const {
  nlohmann::ordered_json j = {{"phase", phase}, {"epoch", epoch}};
  const nlohmann::ordered_json parts = loss.to_json();
  for (const auto& [k, v] : parts.items()) j[k] = v;
  return j;
}

namespace {

class RunWriter {
 public:
  RunWriter(const TrainOptions& options, RunLog& log) : options_(options), log_(log) {
    if (options.out_dir.empty()) return;
    std::filesystem::create_directories(options.out_dir / "checkpoints");
    jsonl_.open(options.out_dir / "train.jsonl", std::ios::app);
    if (!jsonl_) throw DataError("cannot write " + (options.out_dir / "train.jsonl").string());
  }

  void record(StepRecord rec) {
    if (jsonl_.is_open()) jsonl_ << rec.to_json().dump() << '\n';
    log_.steps.push_back(std::move(rec));
  }

  void checkpoint(const Model& model, const std::string& phase, std::size_t epoch) {
    if (options_.out_dir.empty()) return;
    std::vector<std::pair<std::string, Tensor>> tensors;
    tensors.emplace_back("meta.model", encode_model_config(model.config()));
    for (const auto& [name, value] : model.params()) tensors.emplace_back(name, value);
    if (log_.mask.mask.size()) tensors.emplace_back("meta.mask", log_.mask.mask);
    for (const auto& extra : options_.checkpoint_extras) tensors.push_back(extra);
    char name[64];
    std::snprintf(name, sizeof name, "%s_epoch_%03zu.ckpt", phase.c_str(), epoch);
    const auto path = options_.out_dir / "checkpoints" / name;
    write_checkpoint(path, tensors);
    log_.last_checkpoint = path;
    jsonl_.flush();
  }

 private:
  const TrainOptions& options_;
  RunLog& log_;
  std::ofstream jsonl_;
};

[[noreturn]] void abort_run(const RunLog& log, std::uint64_t step, const std::string& what) {
  const std::string where = log.last_checkpoint.empty()
                                ? std::string("no checkpoint written yet")
                                : "last good checkpoint: " + log.last_checkpoint.string();
  throw NumericError("training aborted at step " + std::to_string(step) + ": " + what + "; " + where);
}

void optimize(const ad::Var& total, const ParamBinding& binding, Model& model, AdamState& adam) {
  if (!std::isfinite(total.item())) throw NumericError("non-finite loss");
  ad::backward(total);
  adam_step(adam, model.params(), binding.gradients());
}

// Runs one training step; any numeric failure inside it ends the run.
template <class Step>
void guarded_step(const RunLog& log, Step&& body) {
  const std::uint64_t step = log.steps.size();
  try {
    body(step);
  } catch (const NumericError& e) {
    abort_run(log, step, e.what());
  }
}

Tensor rows_of(const Tensor& t, const std::vector<std::size_t>& idx) { return t.gather_rows(idx); }

}  // namespace

Tensor jacobian_profile(const Model& model, const Tensor& x, std::size_t chunk) {
  const std::size_t m_count = model.num_targets(), n = model.feature_dim();
  Tensor total({m_count, n});
  const ParamBinding p = model.bind();
  for (std::size_t start = 0; start < x.rows(); start += chunk) {
    const std::size_t stop = std::min(x.rows(), start + chunk);
    std::vector<std::size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    const ad::Var z = model.encode(p, ad::Var::constant(x.gather_rows(idx)));
    const auto rows = model.regressor_jacobian(p, z);
    for (std::size_t m = 0; m < m_count; ++m) {
      const Tensor& j = rows[m].value();
      for (std::size_t i = 0; i < j.rows(); ++i)
        for (std::size_t k = 0; k < n; ++k) total(m, k) += std::fabs(j(i, k));
    }
  }
  for (double& v : total.data()) v /= static_cast<double>(x.rows());
  return total;
}

void init_phase(Model& model, const TrainSets& sets, const TrainOptions& options,
                std::mt19937_64& rng, AdamState& adam, RunLog& log) {
  const auto& sched = options.schedule;
  const bool multi = model.num_targets() >= 2;
  JacobianEma ema(options.ema_decay);
  BatchCycler labeled(sets.labeled_x.rows(), sched.batch_size, rng);
  RunWriter writer(options, log);
  const std::size_t epochs = sched.init_updates ? sched.init_epochs : 1;

  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    for (std::size_t b = 0; b < labeled.batches_per_pass(); ++b) {
      const auto idx = labeled.next();
      guarded_step(log, [&](std::uint64_t step) {
        const ParamBinding p = model.bind();
        const ad::Var z = model.encode(p, ad::Var::constant(rows_of(sets.labeled_x, idx)));
        const ad::Var y = model.regress(p, z);
        const JacobianStats stats = compute_jacobian(model, p, z);
        ema.update(stats.aggregated);

        LossTerms terms;
        terms.reg = regression_loss(y, rows_of(sets.labeled_y, idx));
        if (multi) terms.jacobian = jacobian_loss(stats);
        const ad::Var total = total_loss(terms, options.weights);
        if (!std::isfinite(total.item())) throw NumericError("non-finite loss");
        log.init_jacobian_loss.push_back(terms.jacobian ? terms.jacobian.item() : 0.0);
        if (sched.init_updates) optimize(total, p, model, adam);
        writer.record({"init", epoch, LossBreakdown::from_terms(step, terms, total)});
      });
    }
    log.mask = build_mask(ema.value());
    writer.checkpoint(model, "init", epoch);
  }
  log.jacobian_ema = ema.value();
  if (log.mask.degenerate_columns)
    log.diagnostics.push_back(std::to_string(log.mask.degenerate_columns) +
                              " feature dimensions have zero Jacobian mass");
  std::string diag;
  log.init_disjointness =
      disjointness_score(jacobian_profile(model, sets.labeled_x), log.mask, &diag);
  if (!diag.empty()) log.diagnostics.push_back(diag);
}

void finetune_phase(Model& model, const TrainSets& sets, const TrainOptions& options,
                    std::mt19937_64& rng, AdamState& adam, RunLog& log) {
  if (log.mask.mask.size() == 0)
    throw ContractError("finetuning requires the frozen mask from the init phase");
  if (log.mask.targets() != model.num_targets() || log.mask.features() != model.feature_dim())
    throw DimensionError("frozen mask does not match the model");
  const auto& sched = options.schedule;
  const auto& w = options.weights;
  const bool multi = model.num_targets() >= 2;
  const bool has_unlabeled = sets.unlabeled_x.rows() >= sched.batch_size;
  const bool use_unlabeled = w.unsupervised() && has_unlabeled;

  // An epoch is one pass over the unlabeled set whether or not the
  // unsupervised terms are active, so ablations train for equal step counts.
  BatchCycler labeled(sets.labeled_x.rows(), sched.batch_size, rng);
  std::optional<BatchCycler> unlabeled;
  if (use_unlabeled) unlabeled.emplace(sets.unlabeled_x.rows(), sched.batch_size, rng);
  const std::size_t steps_per_epoch =
      has_unlabeled ? sets.unlabeled_x.rows() / sched.batch_size : labeled.batches_per_pass();
  RunWriter writer(options, log);

  for (std::size_t epoch = 0; epoch < sched.finetune_epochs; ++epoch) {
    for (std::size_t s = 0; s < steps_per_epoch; ++s) {
      guarded_step(log, [&](std::uint64_t step) {
        const ParamBinding p = model.bind();
        LossTerms terms;

        const auto idx = labeled.next();
        const ad::Var z = model.encode(p, ad::Var::constant(rows_of(sets.labeled_x, idx)));
        const Tensor y_true = rows_of(sets.labeled_y, idx);
        terms.reg = regression_loss(model.regress(p, z), y_true);
        if (multi && w.gamma > 0.0) terms.jacobian = jacobian_loss(compute_jacobian(model, p, z));
        if (w.w_sc > 0.0) {
          const auto sims = subspace_similarities(apply_mask(z, log.mask));
          terms.sc = supervised_contrastive_loss(sims, y_true, options.kernel);
        }

        if (use_unlabeled) {
          const auto uidx = unlabeled->next();
          const ad::Var zu = model.encode(p, ad::Var::constant(rows_of(sets.unlabeled_x, uidx)));
          const auto sims = subspace_similarities(apply_mask(zu, log.mask));
          for (std::size_t zr : sims.zero_rows) log.zero_feature_rows += zr;
          std::vector<RankVector> pseudo;
          try {
            for (std::size_t m = 0; m < sims.targets(); ++m)
              pseudo.push_back(spectral_seriation(distance_to_affinity(sims.matrix(m))));
          } catch (const NumericError&) {
            // Disconnected graph or a degenerate Fiedler gap: no usable ordering.
            ++log.seriation_failures;
            pseudo.clear();
          }
          if (!pseudo.empty()) {
            if (w.w_uc > 0.0) terms.uc = unsupervised_contrastive_loss(sims, pseudo, options.lambda);
            if (w.w_ur > 0.0)
              terms.ur = unsupervised_ranking_loss(model.regress(p, zu), pseudo, options.lambda);
          }
        }

        const ad::Var total = total_loss(terms, w);
        optimize(total, p, model, adam);
        writer.record({"finetune", epoch, LossBreakdown::from_terms(step, terms, total)});
      });
    }
    writer.checkpoint(model, "finetune", epoch);
  }
}

TrainResult train(Model model, const TrainSets& sets, const TrainOptions& options) {
  options.schedule.validate();
  options.weights.validate();
  if (!(options.lambda > 0.0)) throw ConfigError("lambda must be positive");
  if (!(options.ema_decay >= 0.0 && options.ema_decay < 1.0))
    throw ConfigError("ema_decay must lie in [0, 1)");
  sets.validate(model, options.schedule.batch_size);

  std::mt19937_64 rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  AdamState adam(AdamConfig{.learning_rate = options.schedule.learning_rate});
  RunLog log;
  if (!options.out_dir.empty()) std::filesystem::remove(options.out_dir / "train.jsonl");
  init_phase(model, sets, options, rng, adam, log);
  finetune_phase(model, sets, options, rng, adam, log);
  return {std::move(model), std::move(log)};
}

}  // namespace dscl

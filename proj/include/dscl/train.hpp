#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "dscl/disentangle.hpp"
#include "dscl/losses.hpp"
#include "dscl/model.hpp"

namespace dscl {

struct TrainSchedule {
  std::size_t init_epochs = 30;
  std::size_t finetune_epochs = 100;
  std::size_t batch_size = 32;
  double learning_rate = 1e-4;
  // When false the init phase only gathers Jacobian statistics for the mask
  // (one pass, no parameter updates). This is the "w/o Init" ablation.
  bool init_updates = true;

  void validate() const;
};

struct TrainOptions {
  TrainSchedule schedule;
  LossWeights weights;
  LabelKernelConfig kernel;
  double lambda = 0.5;
  double ema_decay = 0.99;
  std::uint64_t seed = 0;
  // Empty: no JSONL log or checkpoints on disk.
  std::filesystem::path out_dir;
  // Stored in every checkpoint next to the parameters (e.g. standardizers).
  std::vector<std::pair<std::string, Tensor>> checkpoint_extras;
};

// Standardized training data.
struct TrainSets {
  Tensor labeled_x;    // L x input_dim
  Tensor labeled_y;    // L x M
  Tensor unlabeled_x;  // U x input_dim, may have zero rows

  void validate(const Model& model, std::size_t batch_size) const;
};

// Reshuffles 0..n-1 each pass and hands out full batches; a trailing
// partial batch is dropped.
class BatchCycler {
 public:
  BatchCycler(std::size_t n, std::size_t batch_size, std::mt19937_64& rng);
  std::vector<std::size_t> next();
  std::size_t batches_per_pass() const { return n_ / batch_; }
  std::size_t passes() const { return passes_; }

 private:
  void reshuffle();
  std::size_t n_, batch_;
  std::mt19937_64* rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::size_t passes_ = 0;
};

struct StepRecord {
  std::string phase;  // "init" or "finetune"
  std::size_t epoch = 0;
  LossBreakdown loss;

  nlohmann::ordered_json to_json() const;
};

struct RunLog {
  std::vector<StepRecord> steps;
  std::vector<double> init_jacobian_loss;  // one entry per init step
  Tensor jacobian_ema;
  SubspaceMask mask;
  double init_disjointness = 0.0;  // on the labeled set right after init
  std::size_t seriation_failures = 0;
  std::size_t zero_feature_rows = 0;
  std::vector<std::string> diagnostics;
  std::filesystem::path last_checkpoint;
};

struct TrainResult {
  Model model;
  RunLog log;
};

// Phase 1 then phase 2. Throws NumericError on a non-finite loss; the message
// names the last checkpoint written, if any.
TrainResult train(Model model, const TrainSets& sets, const TrainOptions& options);

// Phase 1 alone: labeled batches, L_reg + gamma * L_J, mask frozen at the end.
void init_phase(Model& model, const TrainSets& sets, const TrainOptions& options,
                std::mt19937_64& rng, AdamState& adam, RunLog& log);

// Phase 2 alone. ContractError when log.mask holds no frozen mask.
void finetune_phase(Model& model, const TrainSets& sets, const TrainOptions& options,
                    std::mt19937_64& rng, AdamState& adam, RunLog& log);

// Batch-mean |J| over rows of x, evaluated in chunks.
Tensor jacobian_profile(const Model& model, const Tensor& x, std::size_t chunk = 256);

}  // namespace dscl

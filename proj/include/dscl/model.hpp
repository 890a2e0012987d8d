#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "dscl/autodiff.hpp"
#include "dscl/tensor.hpp"

namespace dscl {

enum class Activation { relu, tanh };
enum class RegressorDepth { linear, two_layer };

struct EncoderConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims{64, 64};
  std::size_t feature_dim = 32;
  Activation activation = Activation::relu;
};

struct RegressorConfig {
  std::size_t feature_dim = 32;
  std::size_t num_targets = 2;
  RegressorDepth depth = RegressorDepth::two_layer;
  std::size_t hidden_dim = 32;  // two_layer only
};

struct ModelConfig {
  EncoderConfig encoder;
  RegressorConfig regressor;

  // Throws ConfigError on zero sizes, mismatched feature dims, or
  // feature_dim < num_targets.
  void validate() const;
};

// Named weight/bias tensors, encoder first then regressor, in a fixed order.
class ModelParams {
 public:
  void add(std::string name, Tensor value);
  std::size_t size() const { return entries_.size(); }
  const std::string& name(std::size_t i) const { return entries_[i].first; }
  Tensor& value(std::size_t i) { return entries_[i].second; }
  const Tensor& value(std::size_t i) const { return entries_[i].second; }
  const Tensor& find(const std::string& name) const;
  Tensor& find(const std::string& name);
  bool all_finite() const;

  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

// Parameters wrapped as graph leaves for one forward/backward pass.
class ParamBinding {
 public:
  explicit ParamBinding(const ModelParams& params);
  const ad::Var& operator[](std::size_t i) const { return leaves_[i]; }
  std::size_t size() const { return leaves_.size(); }
  // Collects leaf gradients in parameter order.
  std::vector<Tensor> gradients() const;

 private:
  std::vector<ad::Var> leaves_;
};

// Encoder E(x) -> Z and regressor R(Z) -> Y_hat.
class Model {
 public:
  // Glorot-uniform weights from the seed, zero biases.
  Model(ModelConfig config, std::uint64_t seed);
  Model(ModelConfig config, ModelParams params);

  const ModelConfig& config() const { return config_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }
  std::size_t num_targets() const { return config_.regressor.num_targets; }
  std::size_t feature_dim() const { return config_.encoder.feature_dim; }

  ParamBinding bind() const { return ParamBinding(params_); }

  ad::Var encode(const ParamBinding& p, const ad::Var& x) const;
  ad::Var regress(const ParamBinding& p, const ad::Var& z) const;

  // Differentiable per-sample Jacobian of the regressor, one B x N node per
  // target: rows[m](i, n) = dR^m/dZ^n at z_i. Built in closed form from the
  // regressor layers so it can itself be backpropagated.
  std::vector<ad::Var> regressor_jacobian(const ParamBinding& p, const ad::Var& z) const;

  // Forward-only convenience.
  Tensor encode(const Tensor& x) const;
  Tensor predict(const Tensor& x) const;

 private:
  std::size_t encoder_layers() const { return config_.encoder.hidden_dims.size() + 1; }
  std::size_t regressor_offset() const { return 2 * encoder_layers(); }

  ModelConfig config_;
  ModelParams params_;
};

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::uint64_t step = 0;

  explicit AdamState(AdamConfig cfg = {}) : config(cfg) {}
};

// One bias-corrected Adam update. Non-finite gradients abort the step
// (no parameter changes) with a NumericError naming the parameter.
void adam_step(AdamState& state, ModelParams& params, const std::vector<Tensor>& gradients);

// ---- checkpoints ---------------------------------------------------------
//
// "DSCL" magic, u32 version, then per tensor: u32 name length, name bytes,
// u32 rank, u64 dims, f64 payload. Little-endian throughout.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, Tensor>>& tensors);
std::vector<std::pair<std::string, Tensor>> read_checkpoint(const std::filesystem::path& path);

// Architecture descriptor stored alongside parameters as "meta.model".
Tensor encode_model_config(const ModelConfig& config);
ModelConfig decode_model_config(const Tensor& meta);

}  // namespace dscl

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dscl/autodiff.hpp"
#include "dscl/model.hpp"
#include "dscl/tensor.hpp"

namespace dscl {

// Sensitivity of each regressor output to each feature dimension.
struct JacobianStats {
  Tensor per_sample;  // B x M x N, dR^m/dZ^n at z_i
  Tensor aggregated;  // M x N, batch mean of |per_sample|
  // Differentiable per-target Jacobians (B x N each). Empty when the stats
  // were built from plain values.
  std::vector<ad::Var> rows;

  std::size_t batch() const { return per_sample.shape()[0]; }
  std::size_t targets() const { return per_sample.shape()[1]; }
  std::size_t features() const { return per_sample.shape()[2]; }

  // Treats an M x N matrix as the Jacobian of a single sample.
  static JacobianStats from_matrix(const Tensor& jacobian);
};

// per_sample comes from M backward passes through the regressor (one seeded
// output column each); rows carries the closed-form differentiable Jacobian
// for the loss. Z is the live feature node so that the loss reaches the
// encoder.
JacobianStats compute_jacobian(const Model& model, const ParamBinding& params, const ad::Var& z);

// sum over ordered target pairs m != k and features n of |J_mn * J_kn|,
// averaged over the batch. ContractError when M < 2.
ad::Var jacobian_loss(const JacobianStats& stats);

struct SubspaceMask {
  Tensor mask;                                  // M x N in {0,1}, one-hot columns
  std::vector<std::vector<std::size_t>> support;  // S_m, 0-based feature indices
  std::size_t degenerate_columns = 0;             // all-zero columns assigned to row 0

  std::size_t targets() const { return mask.rows(); }
  std::size_t features() const { return mask.cols(); }
  // Rebuilds support sets from an explicit 0/1 matrix (columns must be one-hot).
  static SubspaceMask from_matrix(const Tensor& mask);
};

// Column-wise argmax of |J| (ties -> smallest row index).
SubspaceMask build_mask(const Tensor& aggregated);
inline SubspaceMask build_mask(const JacobianStats& stats) { return build_mask(stats.aggregated); }

// Z gated per subspace: slices[m] = Z (.) mask_row_m, a B x N node each.
// The mask is a constant, so gradients reach Z only through selected indices.
struct DisentangledBatch {
  std::vector<ad::Var> slices;
  std::vector<std::vector<std::size_t>> support;

  std::size_t targets() const { return slices.size(); }
  // Dense B x N x M copy, zd[i, n, m].
  Tensor to_tensor() const;
};

DisentangledBatch apply_mask(const ad::Var& z, const SubspaceMask& mask);

// Share of aggregated Jacobian mass inside the mask. Returns 0 and sets
// diagnostic when the aggregated matrix is all zero.
double disjointness_score(const Tensor& aggregated, const SubspaceMask& mask,
                          std::string* diagnostic = nullptr);

// Exponential moving average of aggregated Jacobians across steps.
class JacobianEma {
 public:
  explicit JacobianEma(double decay = 0.99) : decay_(decay) {}
  void update(const Tensor& aggregated);
  bool empty() const { return value_.size() == 0; }
  const Tensor& value() const { return value_; }

 private:
  double decay_;
  Tensor value_;
};

// Plain CSV dump (one matrix row per line) for masks and Jacobian heatmaps.
void write_matrix_csv(const std::filesystem::path& path, const Tensor& matrix);

}  // namespace dscl

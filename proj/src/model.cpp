#include "dscl/model.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <random>

#include "dscl/common.hpp"

namespace dscl {

void ModelConfig::validate() const {
  if (encoder.input_dim == 0) throw ConfigError("encoder input_dim must be positive");
  for (std::size_t h : encoder.hidden_dims)
    if (h == 0) throw ConfigError("encoder hidden dims must be positive");
  if (encoder.feature_dim == 0) throw ConfigError("feature_dim must be positive");
  if (regressor.feature_dim != encoder.feature_dim)
    throw ConfigError("regressor feature_dim " + std::to_string(regressor.feature_dim) +
                      " != encoder feature_dim " + std::to_string(encoder.feature_dim));
  if (regressor.num_targets == 0) throw ConfigError("num_targets must be positive");
  if (encoder.feature_dim < regressor.num_targets)
    throw ConfigError("feature_dim must be at least num_targets");
  if (regressor.depth == RegressorDepth::two_layer && regressor.hidden_dim == 0)
    throw ConfigError("two_layer regressor needs a positive hidden_dim");
}

// ---- ModelParams -----------------------------------------------------------

void ModelParams::add(std::string name, Tensor value) {
  entries_.emplace_back(std::move(name), std::move(value));
}

const Tensor& ModelParams::find(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw ContractError("no parameter named '" + name + "'");
}

Tensor& ModelParams::find(const std::string& name) {
  for (auto& [n, t] : entries_)
    if (n == name) return t;
  throw ContractError("no parameter named '" + name + "'");
}

bool ModelParams::all_finite() const {
  for (const auto& e : entries_)
    if (!e.second.all_finite()) return false;
  return true;
}

ParamBinding::ParamBinding(const ModelParams& params) {
  leaves_.reserve(params.size());
  for (const auto& [name, value] : params) leaves_.push_back(ad::Var::leaf(value));
}

std::vector<Tensor> ParamBinding::gradients() const {
  std::vector<Tensor> out;
  out.reserve(leaves_.size());
  for (const auto& v : leaves_) out.push_back(v.grad());
  return out;
}

// ---- Model -----------------------------------------------------------------

namespace {

Tensor glorot(std::size_t out, std::size_t in, std::mt19937_64& rng) {
  const double s = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-s, s);
  Tensor w({out, in});
  for (double& v : w.data()) v = dist(rng);
  return w;
}

}  // namespace

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  std::mt19937_64 rng(seed);
  std::size_t in = config_.encoder.input_dim;
  std::vector<std::size_t> dims = config_.encoder.hidden_dims;
  dims.push_back(config_.encoder.feature_dim);
  for (std::size_t l = 0; l < dims.size(); ++l) {
    params_.add("encoder." + std::to_string(l) + ".weight", glorot(dims[l], in, rng));
    params_.add("encoder." + std::to_string(l) + ".bias", Tensor({1, dims[l]}));
    in = dims[l];
  }
  const auto& r = config_.regressor;
  if (r.depth == RegressorDepth::linear) {
    params_.add("regressor.0.weight", glorot(r.num_targets, r.feature_dim, rng));
    params_.add("regressor.0.bias", Tensor({1, r.num_targets}));
  } else {
    params_.add("regressor.0.weight", glorot(r.hidden_dim, r.feature_dim, rng));
    params_.add("regressor.0.bias", Tensor({1, r.hidden_dim}));
    params_.add("regressor.1.weight", glorot(r.num_targets, r.hidden_dim, rng));
    params_.add("regressor.1.bias", Tensor({1, r.num_targets}));
  }
}

Model::Model(ModelConfig config, ModelParams params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  Model reference(config_, 0);
  if (reference.params().size() != params_.size())
    throw ContractError("parameter count does not match model config");
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (reference.params().name(i) != params_.name(i) ||
        reference.params().value(i).shape() != params_.value(i).shape())
      throw ContractError("parameter '" + params_.name(i) + "' does not match model config");
}

ad::Var Model::encode(const ParamBinding& p, const ad::Var& x) const {
  if (x.value().rank() != 2 || x.cols() != config_.encoder.input_dim)
    throw DimensionError("encode: input " + shape_string(x.shape()) + " but input_dim is " +
                         std::to_string(config_.encoder.input_dim));
  ad::Var h = x;
  const std::size_t layers = encoder_layers();
  for (std::size_t l = 0; l < layers; ++l) {
    h = ad::linear(h, p[2 * l], p[2 * l + 1]);
    if (l + 1 < layers)
      h = config_.encoder.activation == Activation::relu ? ad::relu(h) : ad::tanh(h);
  }
  return h;
}

ad::Var Model::regress(const ParamBinding& p, const ad::Var& z) const {
  if (z.value().rank() != 2 || z.cols() != config_.regressor.feature_dim)
    throw DimensionError("regress: features " + shape_string(z.shape()) + " but feature_dim is " +
                         std::to_string(config_.regressor.feature_dim));
  const std::size_t o = regressor_offset();
  if (config_.regressor.depth == RegressorDepth::linear) return ad::linear(z, p[o], p[o + 1]);
  ad::Var h = ad::tanh(ad::linear(z, p[o], p[o + 1]));
  return ad::linear(h, p[o + 2], p[o + 3]);
}

std::vector<ad::Var> Model::regressor_jacobian(const ParamBinding& p, const ad::Var& z) const {
  if (z.value().rank() != 2 || z.cols() != config_.regressor.feature_dim)
    throw DimensionError("regressor_jacobian: features " + shape_string(z.shape()));
  const std::size_t o = regressor_offset();
  const std::size_t m_count = config_.regressor.num_targets;
  std::vector<ad::Var> rows;
  rows.reserve(m_count);
  if (config_.regressor.depth == RegressorDepth::linear) {
    for (std::size_t m = 0; m < m_count; ++m)
      rows.push_back(ad::repeat_rows(ad::row(p[o], m), z.rows()));
    return rows;
  }
  // J_m = (diag(1 - h^2) * W2[m,:]) W1 per sample.
  const ad::Var h = ad::tanh(ad::linear(z, p[o], p[o + 1]));
  const ad::Var slope = ad::add_scalar(ad::scale(ad::square(h), -1.0), 1.0);
  for (std::size_t m = 0; m < m_count; ++m)
    rows.push_back(ad::matmul(ad::mul_rowvec(slope, ad::row(p[o + 2], m)), p[o]));
  return rows;
}

Tensor Model::encode(const Tensor& x) const {
  return encode(bind(), ad::Var::constant(x)).value();
}

Tensor Model::predict(const Tensor& x) const {
  const ParamBinding p = bind();
  return regress(p, encode(p, ad::Var::constant(x))).value();
}

// ---- Adam ------------------------------------------------------------------

void adam_step(AdamState& state, ModelParams& params, const std::vector<Tensor>& gradients) {
  if (gradients.size() != params.size())
    throw ContractError("adam_step: " + std::to_string(gradients.size()) + " gradients for " +
                        std::to_string(params.size()) + " parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (gradients[i].shape() != params.value(i).shape())
      throw DimensionError("adam_step: gradient shape mismatch for '" + params.name(i) + "'");
    if (!gradients[i].all_finite())
      throw NumericError("adam_step: non-finite gradient for parameter '" + params.name(i) + "'");
  }
  if (state.first_moment.empty()) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.first_moment.emplace_back(params.value(i).shape());
      state.second_moment.emplace_back(params.value(i).shape());
    }
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = params.value(i);
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    const Tensor& g = gradients[i];
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      w[k] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

// ---- checkpoints -------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'D', 'S', 'C', 'L'};

template <class T>
void put_le(std::ostream& os, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U bits = std::bit_cast<U>(value);
  for (std::size_t b = 0; b < sizeof(U); ++b) os.put(static_cast<char>((bits >> (8 * b)) & 0xFF));
}

template <class T>
T get_le(std::istream& is) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U bits = 0;
  for (std::size_t b = 0; b < sizeof(U); ++b) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw DataError("checkpoint truncated");
    bits |= static_cast<U>(static_cast<unsigned char>(c)) << (8 * b);
  }
  return std::bit_cast<T>(bits);
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path,
                      const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint for writing: " + path.string());
  os.write(kMagic, 4);
  put_le<std::uint32_t>(os, kCheckpointVersion);
  for (const auto& [name, t] : tensors) {
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) put_le<std::uint64_t>(os, d);
    for (double v : t.data()) put_le<double>(os, v);
  }
  if (!os) throw DataError("failed writing checkpoint: " + path.string());
}

std::vector<std::pair<std::string, Tensor>> read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint: " + path.string());
  char magic[4];
  if (!is.read(magic, 4) || !std::equal(magic, magic + 4, kMagic))
    throw DataError("not a DSCL checkpoint: " + path.string());
  const auto version = get_le<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  std::vector<std::pair<std::string, Tensor>> out;
  while (is.peek() != std::char_traits<char>::eof()) {
    const auto len = get_le<std::uint32_t>(is);
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw DataError("checkpoint truncated in tensor name");
    const auto rank = get_le<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(get_le<std::uint64_t>(is));
    Tensor t(shape);
    for (double& v : t.data()) v = get_le<double>(is);
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

Tensor encode_model_config(const ModelConfig& c) {
  std::vector<double> v{static_cast<double>(c.encoder.input_dim),
                        static_cast<double>(c.encoder.feature_dim),
                        static_cast<double>(c.regressor.num_targets),
                        c.encoder.activation == Activation::relu ? 0.0 : 1.0,
                        c.regressor.depth == RegressorDepth::linear ? 0.0 : 1.0,
                        static_cast<double>(c.regressor.hidden_dim)};
  for (std::size_t h : c.encoder.hidden_dims) v.push_back(static_cast<double>(h));
  const std::size_t n = v.size();
  return Tensor({1, n}, std::move(v));
}

ModelConfig decode_model_config(const Tensor& meta) {
  if (meta.size() < 6) throw DataError("malformed meta.model tensor");
  auto as_size = [&](std::size_t i) { return static_cast<std::size_t>(meta[i]); };
  ModelConfig c;
  c.encoder.input_dim = as_size(0);
  c.encoder.feature_dim = as_size(1);
  c.regressor.feature_dim = as_size(1);
  c.regressor.num_targets = as_size(2);
  c.encoder.activation = meta[3] == 0.0 ? Activation::relu : Activation::tanh;
  c.regressor.depth = meta[4] == 0.0 ? RegressorDepth::linear : RegressorDepth::two_layer;
  c.regressor.hidden_dim = as_size(5);
  c.encoder.hidden_dims.clear();
  for (std::size_t i = 6; i < meta.size(); ++i) c.encoder.hidden_dims.push_back(as_size(i));
  c.validate();
  return c;
}

}  // namespace dscl

#include "dscl/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>

#include "dscl/common.hpp"

namespace dscl {

namespace {

using json = nlohmann::json;

// Walks one JSON object, remembering which keys were read so leftovers can
// be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj.is_object()) fail(path_, "expected an object");
  }

  [[noreturn]] static void fail(const std::string& path, const std::string& what) {
    throw ConfigError("config schema violation at " + (path.empty() ? "/" : path) + ": " + what);
  }

  std::string at(const std::string& key) const { return path_ + "/" + key; }

  const json* get(const std::string& key) {
    seen_.insert(key);
    const auto it = obj_.find(key);
    return it == obj_.end() || it->is_null() ? nullptr : &*it;
  }

  double number(const std::string& key, double fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_number()) fail(at(key), "expected a number");
    return v->get<double>();
  }

  std::uint64_t count(const std::string& key, std::uint64_t fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_number_integer() || v->get<std::int64_t>() < 0)
      fail(at(key), "expected a non-negative integer");
    return v->get<std::uint64_t>();
  }

  bool boolean(const std::string& key, bool fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_boolean()) fail(at(key), "expected true or false");
    return v->get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_string()) fail(at(key), "expected a string");
    return v->get<std::string>();
  }

  std::vector<std::string> strings(const std::string& key) {
    const json* v = get(key);
    if (!v) return {};
    if (!v->is_array()) fail(at(key), "expected an array of strings");
    std::vector<std::string> out;
    for (const auto& e : *v) {
      if (!e.is_string()) fail(at(key), "expected an array of strings");
      out.push_back(e.get<std::string>());
    }
    return out;
  }

  std::vector<std::size_t> counts(const std::string& key, std::vector<std::size_t> fallback) {
    const json* v = get(key);
    if (!v) return fallback;
    if (!v->is_array()) fail(at(key), "expected an array of positive integers");
    std::vector<std::size_t> out;
    for (const auto& e : *v) {
      if (!e.is_number_integer() || e.get<std::int64_t>() <= 0)
        fail(at(key), "expected an array of positive integers");
      out.push_back(e.get<std::size_t>());
    }
    return out;
  }

  std::optional<ObjectReader> child(const std::string& key) {
    const json* v = get(key);
    if (!v) return std::nullopt;
    return ObjectReader(*v, at(key));
  }

  void finish() const {
    for (const auto& [k, _] : obj_.items())
      if (!seen_.count(k)) fail(at(k), "unknown key");
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename Enum>
Enum pick_enum(const std::string& path, const std::string& value,
               std::initializer_list<std::pair<const char*, Enum>> choices) {
  std::string names;
  for (const auto& [name, e] : choices) {
    if (value == name) return e;
    names += (names.empty() ? "" : ", ") + std::string(name);
  }
  ObjectReader::fail(path, "'" + value + "' is not one of " + names);
}

const char* generator_name(SyntheticGenerator g) {
  switch (g) {
    case SyntheticGenerator::linear_mix: return "linear_mix";
    case SyntheticGenerator::nonlinear_sine: return "nonlinear_sine";
    case SyntheticGenerator::anti_correlated: return "anti_correlated";
  }
  return "";
}

void check(bool ok, const std::string& path, const std::string& what) {
  if (!ok) ObjectReader::fail(path, what);
}

}  // namespace

RunConfig parse_run_config(const json& doc) {
  RunConfig c;
  ObjectReader root(doc, "");
  c.seed = root.count("seed", 0);

  if (auto task = root.child("task")) {
    const std::string kind = task->string("kind", "synthetic");
    c.task.kind = pick_enum<TaskKind>(task->at("kind"), kind,
                                      {{"synthetic", TaskKind::synthetic}, {"tabular", TaskKind::tabular}});
    c.task.normalize = task->boolean("normalize", true);
    if (c.task.kind == TaskKind::synthetic) {
      auto& s = c.task.synthetic;
      s.generator = pick_enum<SyntheticGenerator>(
          task->at("generator"), task->string("generator", "nonlinear_sine"),
          {{"linear_mix", SyntheticGenerator::linear_mix},
           {"nonlinear_sine", SyntheticGenerator::nonlinear_sine},
           {"anti_correlated", SyntheticGenerator::anti_correlated}});
      s.num_samples = task->count("num_samples", s.num_samples);
      s.input_dim = task->count("input_dim", s.input_dim);
      s.num_targets = task->count("num_targets", s.num_targets);
      s.noise_std = task->number("noise_std", s.noise_std);
      s.seed = task->count("seed", s.seed);
      try {
        s.validate();
      } catch (const ConfigError& e) {
        ObjectReader::fail("/task", e.what());
      }
    } else {
      c.task.path = task->string("path", "");
      check(!c.task.path.empty(), "/task/path", "required for tabular tasks");
      c.task.input_columns = task->strings("input_columns");
      c.task.target_columns = task->strings("target_columns");
      check(!c.task.target_columns.empty(), "/task/target_columns", "required for tabular tasks");
    }
    task->finish();
  }

  if (auto model = root.child("model")) {
    auto& e = c.model.encoder;
    auto& r = c.model.regressor;
    e.hidden_dims = model->counts("hidden_dims", e.hidden_dims);
    e.feature_dim = model->count("feature_dim", e.feature_dim);
    e.activation = pick_enum<Activation>(model->at("activation"), model->string("activation", "relu"),
                                         {{"relu", Activation::relu}, {"tanh", Activation::tanh}});
    r.depth = pick_enum<RegressorDepth>(
        model->at("regressor"), model->string("regressor", "two_layer"),
        {{"linear", RegressorDepth::linear}, {"two_layer", RegressorDepth::two_layer}});
    r.hidden_dim = model->count("regressor_hidden", r.hidden_dim);
    check(e.feature_dim > 0, "/model/feature_dim", "must be positive");
    check(r.hidden_dim > 0, "/model/regressor_hidden", "must be positive");
    model->finish();
  }
  c.model.regressor.feature_dim = c.model.encoder.feature_dim;

  if (auto split = root.child("split")) {
    c.split.label_rate = split->number("label_rate", c.split.label_rate);
    split->finish();
  }
  try {
    c.split.validate();
  } catch (const ConfigError& e) {
    ObjectReader::fail("/split/label_rate", e.what());
  }

  auto& t = c.train;
  if (auto sched = root.child("schedule")) {
    t.schedule.init_epochs = sched->count("init_epochs", t.schedule.init_epochs);
    t.schedule.finetune_epochs = sched->count("finetune_epochs", t.schedule.finetune_epochs);
    t.schedule.batch_size = sched->count("batch_size", t.schedule.batch_size);
    t.schedule.learning_rate = sched->number("learning_rate", t.schedule.learning_rate);
    t.schedule.init_updates = sched->boolean("init_updates", t.schedule.init_updates);
    sched->finish();
  }
  try {
    t.schedule.validate();
  } catch (const ConfigError& e) {
    ObjectReader::fail("/schedule", e.what());
  }

  if (auto w = root.child("weights")) {
    t.weights.gamma = w->number("gamma", t.weights.gamma);
    t.weights.w_sc = w->number("w_sc", t.weights.w_sc);
    t.weights.w_uc = w->number("w_uc", t.weights.w_uc);
    t.weights.w_ur = w->number("w_ur", t.weights.w_ur);
    w->finish();
  }
  try {
    t.weights.validate();
  } catch (const ConfigError& e) {
    ObjectReader::fail("/weights", e.what());
  }

  if (auto k = root.child("kernel")) {
    t.kernel.bandwidth = k->number("bandwidth", t.kernel.bandwidth);
    k->finish();
  }
  check(t.kernel.bandwidth > 0.0, "/kernel/bandwidth", "must be positive");
  t.lambda = root.number("lambda", t.lambda);
  check(t.lambda > 0.0, "/lambda", "must be positive");
  t.ema_decay = root.number("ema_decay", t.ema_decay);
  check(t.ema_decay >= 0.0 && t.ema_decay < 1.0, "/ema_decay", "must lie in [0, 1)");

  if (root.get("angular")) {
    c.angular = pick_enum<AngularMode>("/angular", root.string("angular", ""),
                                       {{"euler2", AngularMode::euler2}, {"vec3", AngularMode::vec3}});
  }
  c.out_dir = root.string("out_dir", "");
  root.finish();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  json doc;
  try {
    doc = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  RunConfig c = parse_run_config(doc);
  if (c.task.kind == TaskKind::tabular && c.task.path.is_relative())
    c.task.path = path.parent_path() / c.task.path;
  return c;
}

void apply_seed_override(RunConfig& config, std::optional<std::uint64_t> flag_seed) {
  if (flag_seed) {
    config.seed = *flag_seed;
    return;
  }
  if (const char* env = std::getenv("DSCL_SEED"); env && *env) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (*end != '\0' || env[0] == '-') throw ConfigError("DSCL_SEED must be a non-negative integer");
    config.seed = v;
  }
}

nlohmann::ordered_json RunConfig::to_json() const {
  nlohmann::ordered_json task_json;
  if (task.kind == TaskKind::synthetic) {
    const auto& s = task.synthetic;
    task_json = {{"kind", "synthetic"},          {"generator", generator_name(s.generator)},
                 {"num_samples", s.num_samples}, {"input_dim", s.input_dim},
                 {"num_targets", s.num_targets}, {"noise_std", s.noise_std},
                 {"seed", s.seed},               {"normalize", task.normalize}};
  } else {
    task_json = {{"kind", "tabular"},
                 {"path", task.path.string()},
                 {"input_columns", task.input_columns},
                 {"target_columns", task.target_columns},
                 {"normalize", task.normalize}};
  }
  const auto& e = model.encoder;
  const auto& r = model.regressor;
  const auto& s = train.schedule;
  const auto& w = train.weights;
  nlohmann::ordered_json j;
  j["seed"] = seed;
  j["task"] = task_json;
  j["model"] = {{"hidden_dims", e.hidden_dims},
                {"feature_dim", e.feature_dim},
                {"activation", e.activation == Activation::relu ? "relu" : "tanh"},
                {"regressor", r.depth == RegressorDepth::linear ? "linear" : "two_layer"},
                {"regressor_hidden", r.hidden_dim}};
  j["split"] = {{"label_rate", split.label_rate}};
  j["schedule"] = {{"init_epochs", s.init_epochs},
                   {"finetune_epochs", s.finetune_epochs},
                   {"batch_size", s.batch_size},
                   {"learning_rate", s.learning_rate},
                   {"init_updates", s.init_updates}};
  j["weights"] = {{"gamma", w.gamma}, {"w_sc", w.w_sc}, {"w_uc", w.w_uc}, {"w_ur", w.w_ur}};
  j["kernel"] = {{"bandwidth", train.kernel.bandwidth}};
  j["lambda"] = train.lambda;
  j["ema_decay"] = train.ema_decay;
  if (angular) j["angular"] = *angular == AngularMode::euler2 ? "euler2" : "vec3";
  return j;
}

std::string config_digest(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : config.to_json().dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace dscl

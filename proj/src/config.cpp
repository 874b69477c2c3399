#include "mvbed/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace mvbed {

using nlohmann::json;

std::string model_kind_name(ModelKind kind) { return kind == ModelKind::Discrete ? "discrete" : "continuous"; }

ContextPair ContextConfig::build() const {
  return layout == Layout::Negated ? negated_contexts(start, stop, count) : midpoint_contexts(start, stop, count);
}

std::string hash_hex(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

// The seed is recorded next to the hash, so it is left out of it.
std::string ExperimentConfig::config_hash() const {
  json body = effective;
  body.erase("seed");
  return hash_hex(fnv1a64(body.dump()));
}

std::string ExperimentConfig::model_hash() const {
  json part{{"model", effective.at("model")}, {"contexts", effective.at("contexts")}};
  return hash_hex(fnv1a64(part.dump()));
}

TrainConfig ExperimentConfig::fixed_design_train() const {
  TrainConfig cfg = train;
  cfg.steps = eig.critic_steps;
  return cfg;
}

BaselineSpec ExperimentConfig::baseline_spec(const std::string& method) const {
  BaselineSpec spec = BaselineSpec::parse(method);
  spec.mc_samples = ucb_mc_samples;
  spec.grid_points = ucb_grid_points;
  return spec;
}

namespace {

// Typed access to one JSON object; every key must be consumed or listed.
class Section {
 public:
  Section(const json& node, std::string path) : node_(node), path_(std::move(path)) {
    if (!node_.is_object()) fail("expected an object");
  }

  bool has(const std::string& key) const { return node_.contains(key); }

  const json& required(const std::string& key) {
    seen_.insert(key);
    if (!node_.contains(key)) throw ConfigError("config: missing required key '" + full(key) + "'");
    return node_.at(key);
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!node_.contains(key)) return fallback;
    return as<T>(node_.at(key), key);
  }

  template <typename T>
  T need(const std::string& key) {
    return as<T>(required(key), key);
  }

  Section child(const std::string& key) {
    seen_.insert(key);
    if (!node_.contains(key)) return Section(empty_object(), full(key));
    return Section(node_.at(key), full(key));
  }

  void finish() const {
    for (const auto& [key, value] : node_.items()) {
      if (!seen_.count(key)) throw ConfigError("config: unknown key '" + full(key) + "'");
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& msg) const {
    throw ConfigError("config: '" + full(key) + "': " + msg);
  }

 private:
  static const json& empty_object() {
    static const json obj = json::object();
    return obj;
  }

  [[noreturn]] void fail(const std::string& msg) const { throw ConfigError("config: '" + path_ + "': " + msg); }

  std::string full(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  template <typename T>
  T as(const json& v, const std::string& key) const {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(key, "expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) fail(key, "expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_integer() && !v.is_number_unsigned() && v.get<long long>() < 0) fail(key, "must be non-negative");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail(key, "expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(key, "expected a string");
    }
    return v.get<T>();
  }

  const json& node_;
  std::string path_;
  std::set<std::string> seen_;
};

void check(bool ok, Section& s, const std::string& key, const std::string& msg) {
  if (!ok) s.fail(key, msg);
}

void parse_model(Section s, ExperimentConfig& cfg) {
  const std::string kind = s.need<std::string>("kind");
  if (kind == "discrete") {
    cfg.model = ModelKind::Discrete;
    auto& o = cfg.discrete;
    o.noise_variance = s.get("noise_variance", o.noise_variance);
    check(o.noise_variance > 0.0, s, "noise_variance", "must be positive");
    if (s.has("prior_mean")) {
      const json& pm = s.required("prior_mean");
      if (!pm.is_array() || pm.size() != DiscreteQuadraticModel::kTreatments) s.fail("prior_mean", "expected 4 [low, high] pairs");
      for (std::size_t k = 0; k < pm.size(); ++k) {
        if (!pm[k].is_array() || pm[k].size() != 2 || !pm[k][0].is_number() || !pm[k][1].is_number()) {
          s.fail("prior_mean", "entry " + std::to_string(k) + " is not a numeric pair");
        }
        o.prior_mean[k] = {pm[k][0].get<double>(), pm[k][1].get<double>()};
      }
    }
    if (s.has("prior_variance")) {
      const json& pv = s.required("prior_variance");
      if (!pv.is_array() || pv.size() != DiscreteQuadraticModel::kTreatments) s.fail("prior_variance", "expected 4 numbers");
      for (std::size_t k = 0; k < pv.size(); ++k) {
        if (!pv[k].is_number() || !(pv[k].get<double>() > 0.0)) s.fail("prior_variance", "entries must be positive");
        o.prior_variance[k] = pv[k].get<double>();
      }
    }
  } else if (kind == "continuous") {
    cfg.model = ModelKind::Continuous;
    auto& o = cfg.continuous;
    o.noise_std = s.get("noise_std", o.noise_std);
    o.prior_low = s.get("prior_low", o.prior_low);
    o.prior_high = s.get("prior_high", o.prior_high);
    if (s.has("action_bounds")) {
      const json& b = s.required("action_bounds");
      if (!b.is_array() || b.size() != 2 || !b[0].is_number() || !b[1].is_number()) {
        s.fail("action_bounds", "expected [low, high]");
      }
      o.action_low = b[0].get<double>();
      o.action_high = b[1].get<double>();
    }
    check(o.noise_std > 0.0, s, "noise_std", "must be positive");
    check(o.prior_low > 0.0 && o.prior_high > o.prior_low, s, "prior_low", "prior must be a positive interval");
    check(o.action_high > o.action_low, s, "action_bounds", "empty interval");
  } else {
    s.fail("kind", "expected 'discrete' or 'continuous', got '" + kind + "'");
  }
  s.finish();
}

void parse_contexts(Section s, ExperimentConfig& cfg) {
  auto& c = cfg.contexts;
  const std::string layout = s.need<std::string>("layout");
  if (layout == "negated") {
    c.layout = ContextConfig::Layout::Negated;
  } else if (layout == "midpoint") {
    c.layout = ContextConfig::Layout::Midpoint;
  } else {
    s.fail("layout", "expected 'negated' or 'midpoint', got '" + layout + "'");
  }
  c.start = s.need<double>("start");
  c.stop = s.need<double>("stop");
  c.count = s.need<Index>("count");
  check(c.count >= 2, s, "count", "need at least 2 contexts");
  check(c.stop > c.start, s, "stop", "must exceed start");
  s.finish();
}

void parse_train(Section s, TrainConfig& t) {
  t.steps = s.get("steps", t.steps);
  t.batch_size = s.get("batch_size", t.batch_size);
  t.learning_rate = s.get("learning_rate", t.learning_rate);
  t.lr_decay = s.get("lr_decay", t.lr_decay);
  t.lr_decay_interval = s.get("lr_decay_interval", t.lr_decay_interval);
  t.initial_temperature = s.get("initial_temperature", t.initial_temperature);
  t.temperature_decay = s.get("temperature_decay", t.temperature_decay);
  t.temperature_interval = s.get("temperature_interval", t.temperature_interval);
  t.hard_fraction = s.get("hard_fraction", t.hard_fraction);
  t.log_interval = s.get("log_interval", t.log_interval);
  t.bn_calibration_batches = s.get("bn_calibration_batches", t.bn_calibration_batches);
  s.finish();
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: train: ") + e.what());
  }
}

}  // namespace

ExperimentConfig parse_config(const json& doc, const std::optional<std::string>& scale) {
  if (!doc.is_object()) throw ConfigError("config: top level must be an object");
  json eff = doc;
  ExperimentConfig cfg;

  std::optional<std::string> chosen = scale;
  if (!chosen && doc.contains("default_scale")) {
    if (!doc["default_scale"].is_string()) throw ConfigError("config: 'default_scale' must be a string");
    chosen = doc["default_scale"].get<std::string>();
  }
  if (chosen) {
    if (!doc.contains("scale") || !doc["scale"].is_object() || !doc["scale"].contains(*chosen)) {
      throw ConfigError("config: no scale variant '" + *chosen + "'");
    }
    eff.merge_patch(doc["scale"][*chosen]);
    cfg.scale = *chosen;
  }
  eff.erase("scale");
  eff.erase("default_scale");

  Section root(eff, "");
  cfg.name = root.get<std::string>("name", "");
  for (const char* key : {"model", "contexts"}) {
    if (!eff.contains(key)) throw ConfigError(std::string("config: missing required key '") + key + "'");
  }
  parse_model(root.child("model"), cfg);
  parse_contexts(root.child("contexts"), cfg);

  cfg.critic = cfg.model == ModelKind::Discrete ? CriticPreset::Discrete : CriticPreset::Continuous;
  parse_train(root.child("train"), cfg.train);
  {
    Section s = root.child("eig");
    cfg.eig.critic_steps = s.get("critic_steps", cfg.eig.critic_steps);
    cfg.eig.eval_batches = s.get("eval_batches", cfg.eig.eval_batches);
    check(cfg.eig.critic_steps >= 0, s, "critic_steps", "must be >= 0");
    check(cfg.eig.eval_batches >= 1, s, "eval_batches", "must be >= 1");
    s.finish();
  }
  {
    Section s = root.child("baselines");
    if (s.has("methods")) {
      const json& m = s.required("methods");
      if (!m.is_array()) s.fail("methods", "expected an array of method strings");
      for (const json& v : m) {
        if (!v.is_string()) s.fail("methods", "expected an array of method strings");
        cfg.baselines.push_back(v.get<std::string>());
      }
    }
    cfg.ucb_mc_samples = s.get("mc_samples", cfg.ucb_mc_samples);
    cfg.ucb_grid_points = s.get("grid_points", cfg.ucb_grid_points);
    check(cfg.ucb_mc_samples >= 2, s, "mc_samples", "must be >= 2");
    check(cfg.ucb_grid_points >= 2, s, "grid_points", "must be >= 2");
    for (const std::string& m : cfg.baselines) {
      try {
        (void)BaselineSpec::parse(m);
      } catch (const std::invalid_argument& e) {
        s.fail("methods", e.what());
      }
    }
    s.finish();
  }
  {
    Section s = root.child("deploy");
    cfg.deploy.n_envs = s.get("n_envs", cfg.deploy.n_envs);
    cfg.deploy.snis_particles = s.get("snis_particles", cfg.deploy.snis_particles);
    cfg.deploy.posterior_draws = s.get("posterior_draws", cfg.deploy.posterior_draws);
    check(cfg.deploy.n_envs >= 1, s, "n_envs", "must be >= 1");
    check(cfg.deploy.snis_particles >= 2, s, "snis_particles", "must be >= 2");
    check(cfg.deploy.posterior_draws >= 1, s, "posterior_draws", "must be >= 1");
    s.finish();
  }
  cfg.seed = root.get<std::uint64_t>("seed", 0);
  root.finish();

  cfg.effective = std::move(eff);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path, const std::optional<std::string>& scale) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_config(doc, scale);
}

}  // namespace mvbed

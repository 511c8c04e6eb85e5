#include "duacm/app/config.hpp"

#include <set>

#include "duacm/error.hpp"
#include "duacm/text.hpp"

namespace duacm::app {

using json = nlohmann::ordered_json;

namespace {

// Reads fields out of one JSON object, remembering which keys were used so
// leftovers can be reported.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw SchemaError(where() + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw SchemaError(where(key) + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string where(const char* key = nullptr) const {
    std::string p = path_.empty() ? "config" : "config." + path_;
    if (key) p += std::string(".") + key;
    return p;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.contains(it.key())) throw SchemaError("unknown key " + where(it.key().c_str()));
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

json cohort_json(const cohort::CohortSpec& s) {
  json pairs = json::array();
  for (const auto& p : s.confusable_pairs) {
    pairs.push_back({{"first", p.first}, {"second", p.second}, {"separation", p.separation}});
  }
  json beta = json::object();
  for (const auto& [d, b] : s.beta_true) beta[std::to_string(d)] = b;
  return {{"n_patients", s.n_patients},
          {"n_features", s.n_features},
          {"latent_dim", s.latent_dim},
          {"n_diagnoses", s.n_diagnoses},
          {"zipf_exponent", s.zipf_exponent},
          {"confusable_pairs", pairs},
          {"beta_true", beta},
          {"risk_weights", s.risk_weights},
          {"outcome_intercept", s.outcome_intercept},
          {"feature_noise_sd", s.feature_noise_sd},
          {"diagnosis_noise_sd", s.diagnosis_noise_sd},
          {"feature_map", s.feature_map == cohort::FeatureMap::kIdentity ? "identity" : "nonlinear"},
          {"nonlinearity", s.nonlinearity}};
}

void read_cohort(const json& j, cohort::CohortSpec& s) {
  ObjectReader r(j, "cohort");
  r.get("n_patients", s.n_patients);
  r.get("n_features", s.n_features);
  r.get("latent_dim", s.latent_dim);
  r.get("n_diagnoses", s.n_diagnoses);
  r.get("zipf_exponent", s.zipf_exponent);
  if (const json* pairs = r.child("confusable_pairs")) {
    if (!pairs->is_array()) throw SchemaError("config.cohort.confusable_pairs must be an array");
    s.confusable_pairs.clear();
    for (const auto& pj : *pairs) {
      ObjectReader pr(pj, "cohort.confusable_pairs[]");
      cohort::ConfusablePair p;
      pr.get("first", p.first);
      pr.get("second", p.second);
      pr.get("separation", p.separation);
      pr.finish();
      s.confusable_pairs.push_back(p);
    }
  }
  if (const json* beta = r.child("beta_true")) {
    if (!beta->is_object()) throw SchemaError("config.cohort.beta_true must be an object");
    s.beta_true.clear();
    for (auto it = beta->begin(); it != beta->end(); ++it) {
      const auto id = parse_integer(it.key());
      if (!id || *id < 0) throw SchemaError("config.cohort.beta_true key '" + it.key() + "' is not a diagnosis id");
      if (!it->is_number()) throw SchemaError("config.cohort.beta_true values must be numbers");
      s.beta_true[static_cast<DiagnosisId>(*id)] = it->get<double>();
    }
  }
  r.get("risk_weights", s.risk_weights);
  r.get("outcome_intercept", s.outcome_intercept);
  r.get("feature_noise_sd", s.feature_noise_sd);
  r.get("diagnosis_noise_sd", s.diagnosis_noise_sd);
  std::string map = s.feature_map == cohort::FeatureMap::kIdentity ? "identity" : "nonlinear";
  r.get("feature_map", map);
  if (map == "identity") {
    s.feature_map = cohort::FeatureMap::kIdentity;
  } else if (map == "nonlinear") {
    s.feature_map = cohort::FeatureMap::kNonlinear;
  } else {
    throw SchemaError("config.cohort.feature_map must be 'nonlinear' or 'identity'");
  }
  r.get("nonlinearity", s.nonlinearity);
  r.finish();
}

json gam_json(const gam::GamConfig& g) {
  return {{"inner_bags", g.inner_bags},     {"outer_bags", g.outer_bags},
          {"learning_rate", g.learning_rate}, {"max_rounds", g.max_rounds},
          {"patience", g.patience ? json(*g.patience) : json(nullptr)},
          {"max_bins", g.max_bins},         {"max_leaves", g.max_leaves}};
}

void read_gam(const json& j, gam::GamConfig& g) {
  ObjectReader r(j, "gam");
  r.get("inner_bags", g.inner_bags);
  r.get("outer_bags", g.outer_bags);
  r.get("learning_rate", g.learning_rate);
  r.get("max_rounds", g.max_rounds);
  if (const json* p = r.child("patience")) {
    if (p->is_null()) {
      g.patience.reset();
    } else if (p->is_number_integer() && p->get<std::int64_t>() >= 0) {
      g.patience = p->get<std::size_t>();
    } else {
      throw SchemaError("config.gam.patience must be a count or null");
    }
  }
  r.get("max_bins", g.max_bins);
  r.get("max_leaves", g.max_leaves);
  r.finish();
}

json mlp_json(const diag::MlpConfig& m) {
  return {{"learning_rates", m.learning_rates}, {"weight_decays", m.weight_decays},
          {"epochs", m.epochs},                 {"batch_size", m.batch_size},
          {"hidden", m.hidden},                 {"momentum", m.momentum},
          {"max_halvings", m.max_halvings}};
}

void read_mlp(const json& j, diag::MlpConfig& m) {
  ObjectReader r(j, "mlp");
  r.get("learning_rates", m.learning_rates);
  r.get("weight_decays", m.weight_decays);
  r.get("epochs", m.epochs);
  r.get("batch_size", m.batch_size);
  r.get("hidden", m.hidden);
  r.get("momentum", m.momentum);
  r.get("max_halvings", m.max_halvings);
  r.finish();
}

}  // namespace

std::string mode_name(infer::Mode mode) { return mode == infer::Mode::kExact ? "exact" : "sampled"; }

infer::Mode parse_mode(const std::string& name) {
  if (name == "exact") return infer::Mode::kExact;
  if (name == "sampled") return infer::Mode::kSampled;
  throw ValidationError("mode must be 'sampled' or 'exact', got '" + name + "'");
}

cohort::CohortSpec demo_cohort_spec() {
  cohort::CohortSpec s;
  s.n_patients = 5000;
  s.risk_weights = {1.0, -0.8, 0.6, 0.5};
  s.outcome_intercept = -2.0;
  s.nonlinearity = 2.0;
  s.confusable_pairs = {{1, 6, 0.0}};
  s.beta_true = {{1, -1.0}, {6, 1.5}};
  return s;
}

void RunConfig::derive_seeds() {
  cohort.seed = derive_seed(seed, 1);
  gam.seed = derive_seed(seed, 2);
  mlp.seed = derive_seed(seed, 3);
  logistic.seed = derive_seed(seed, 4);
}

json to_json(const RunConfig& c) {
  json j;
  j["schema_version"] = kSchemaVersion;
  j["seed"] = c.seed;
  j["cohort"] = cohort_json(c.cohort);
  j["split"] = {{"train", c.split[0]}, {"valid", c.split[1]}, {"test", c.split[2]}};
  j["gam"] = gam_json(c.gam);
  j["mlp"] = mlp_json(c.mlp);
  j["logistic"] = {{"lambda_grid", c.logistic.lambda_grid}, {"n_folds", c.logistic.n_folds}};
  j["predict"] = {{"mode", mode_name(c.predict.mode)},
                  {"n_samples", c.predict.n_samples},
                  {"quantiles", c.predict.quantiles},
                  {"top_k", c.predict.top_k},
                  {"driver_threshold", c.predict.driver_threshold}};
  j["census"] = {{"min_patients", c.census.min_patients},
                 {"min_mortality", c.census.min_mortality}};
  j["experiment"] = {{"calibration_bins", c.experiment.calibration_bins},
                     {"alpha", c.experiment.alpha},
                     {"delta_bins", c.experiment.delta_bins},
                     {"delta_max", c.experiment.delta_max},
                     {"census_max_count", c.experiment.census_max_count}};
  j["serve"] = {{"host", c.serve.host},
                {"port", c.serve.port},
                {"session_idle_seconds", c.serve.session_idle_seconds},
                {"threads", c.serve.threads}};
  return j;
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  ObjectReader r(j, "");
  int version = kSchemaVersion;
  r.get("schema_version", version);
  if (version != kSchemaVersion) {
    throw SchemaError("config schema_version " + std::to_string(version) + " is not supported");
  }
  r.get("seed", c.seed);
  if (const json* v = r.child("cohort")) read_cohort(*v, c.cohort);
  if (const json* v = r.child("split")) {
    ObjectReader s(*v, "split");
    s.get("train", c.split[0]);
    s.get("valid", c.split[1]);
    s.get("test", c.split[2]);
    s.finish();
  }
  if (const json* v = r.child("gam")) read_gam(*v, c.gam);
  if (const json* v = r.child("mlp")) read_mlp(*v, c.mlp);
  if (const json* v = r.child("logistic")) {
    ObjectReader s(*v, "logistic");
    s.get("lambda_grid", c.logistic.lambda_grid);
    s.get("n_folds", c.logistic.n_folds);
    s.finish();
  }
  if (const json* v = r.child("predict")) {
    ObjectReader s(*v, "predict");
    std::string mode = mode_name(c.predict.mode);
    s.get("mode", mode);
    c.predict.mode = parse_mode(mode);
    s.get("n_samples", c.predict.n_samples);
    s.get("quantiles", c.predict.quantiles);
    s.get("top_k", c.predict.top_k);
    s.get("driver_threshold", c.predict.driver_threshold);
    s.finish();
  }
  if (const json* v = r.child("census")) {
    ObjectReader s(*v, "census");
    s.get("min_patients", c.census.min_patients);
    s.get("min_mortality", c.census.min_mortality);
    s.finish();
  }
  if (const json* v = r.child("experiment")) {
    ObjectReader s(*v, "experiment");
    s.get("calibration_bins", c.experiment.calibration_bins);
    s.get("alpha", c.experiment.alpha);
    s.get("delta_bins", c.experiment.delta_bins);
    s.get("delta_max", c.experiment.delta_max);
    s.get("census_max_count", c.experiment.census_max_count);
    s.finish();
  }
  if (const json* v = r.child("serve")) {
    ObjectReader s(*v, "serve");
    s.get("host", c.serve.host);
    s.get("port", c.serve.port);
    s.get("session_idle_seconds", c.serve.session_idle_seconds);
    s.get("threads", c.serve.threads);
    s.finish();
  }
  r.finish();
  c.derive_seeds();
  cohort::validate(c.cohort);
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError("config " + path.string() + ": " + e.what());
  }
  return config_from_json(j);
}

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ValidationError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;  // bare strings such as mode=exact
  }
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ValidationError("override key '" + key + "' has an empty component");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    if (!node->is_object()) {
      if (!node->is_null()) throw ValidationError("override key '" + key + "' crosses a non-object");
      *node = json::object();
    }
    start = dot + 1;
  }
}

std::string config_hash(const RunConfig& config) {
  return hex64(fnv1a64(to_json(config).dump()));
}

}  // namespace duacm::app

#include "duacm/app/bundle.hpp"

#include <sstream>

#include "duacm/cohort_io.hpp"
#include "duacm/error.hpp"
#include "duacm/text.hpp"

namespace duacm::app {

using json = nlohmann::ordered_json;

namespace {
constexpr const char* kFormat = "duacm-bundle";
}

json gam_to_json(const gam::GamModel& m) {
  json features = json::array();
  for (std::size_t j = 0; j < m.shapes.size(); ++j) {
    features.push_back({{"cuts", m.binning.features.at(j).cuts},
                        {"contributions", m.shapes[j].contributions},
                        {"bin_counts", m.shapes[j].bin_counts}});
  }
  json offsets = json::array();
  for (const auto& [d, b] : m.diagnosis_offsets) {
    auto it = m.diagnosis_counts.find(d);
    offsets.push_back({{"diagnosis", d},
                       {"offset", b},
                       {"count", it == m.diagnosis_counts.end() ? 0 : it->second}});
  }
  json bags = json::array();
  for (const auto& b : m.info.bags) {
    bags.push_back({{"rounds_run", b.rounds_run},
                    {"best_round", b.best_round},
                    {"valid_loss", b.valid_loss}});
  }
  return {{"intercept", m.intercept},
          {"max_bins", m.binning.max_bins},
          {"features", features},
          {"diagnosis_offsets", offsets},
          {"info",
           {{"inner_bags", m.info.inner_bags},
            {"outer_bags", m.info.outer_bags},
            {"learning_rate", m.info.learning_rate},
            {"bags", bags}}}};
}

gam::GamModel gam_from_json(const json& j) {
  gam::GamModel m;
  m.intercept = j.at("intercept").get<double>();
  m.binning.max_bins = j.at("max_bins").get<std::size_t>();
  const auto& features = j.at("features");
  for (std::size_t f = 0; f < features.size(); ++f) {
    const auto& fj = features[f];
    gam::FeatureBins bins;
    bins.cuts = fj.at("cuts").get<std::vector<double>>();
    for (std::size_t k = 1; k < bins.cuts.size(); ++k) {
      if (!(bins.cuts[k - 1] < bins.cuts[k])) {
        throw SchemaError("outcome model feature " + std::to_string(f) + " cuts not increasing");
      }
    }
    gam::ShapeFunction shape;
    shape.feature = f;
    shape.contributions = fj.at("contributions").get<std::vector<double>>();
    shape.bin_counts = fj.at("bin_counts").get<std::vector<std::size_t>>();
    if (shape.contributions.size() != bins.n_bins() || shape.bin_counts.size() != bins.n_bins()) {
      throw SchemaError("outcome model feature " + std::to_string(f) +
                        " has a bin count inconsistent with its cuts");
    }
    m.binning.features.push_back(std::move(bins));
    m.shapes.push_back(std::move(shape));
  }
  for (const auto& oj : j.at("diagnosis_offsets")) {
    const auto d = oj.at("diagnosis").get<DiagnosisId>();
    m.diagnosis_offsets[d] = oj.at("offset").get<double>();
    m.diagnosis_counts[d] = oj.at("count").get<std::size_t>();
  }
  const auto& info = j.at("info");
  m.info.inner_bags = info.at("inner_bags").get<std::size_t>();
  m.info.outer_bags = info.at("outer_bags").get<std::size_t>();
  m.info.learning_rate = info.at("learning_rate").get<double>();
  for (const auto& bj : info.at("bags")) {
    gam::BagTrace t;
    t.rounds_run = bj.at("rounds_run").get<std::size_t>();
    t.best_round = bj.at("best_round").get<std::size_t>();
    t.valid_loss = bj.at("valid_loss").get<std::vector<double>>();
    m.info.bags.push_back(std::move(t));
  }
  return m;
}

json diag_to_json(const diag::DiagnosisModel& m) {
  json layers = json::array();
  for (const auto& l : m.layers) {
    layers.push_back({{"inputs", l.inputs},
                      {"outputs", l.outputs},
                      {"weights", l.weights},
                      {"bias", l.bias}});
  }
  json grid = json::array();
  for (const auto& g : m.info.grid) {
    grid.push_back({{"learning_rate", g.learning_rate},
                    {"weight_decay", g.weight_decay},
                    {"valid_loss", g.valid_loss}});
  }
  return {{"vocabulary", m.vocabulary},
          {"standardization",
           {{"mean", m.standardization.mean}, {"sd", m.standardization.sd}}},
          {"layers", layers},
          {"info",
           {{"learning_rate", m.info.learning_rate},
            {"weight_decay", m.info.weight_decay},
            {"valid_loss", m.info.valid_loss},
            {"epochs", m.info.epochs},
            {"halvings", m.info.halvings},
            {"loss_trace", m.info.loss_trace},
            {"grid", grid}}}};
}

diag::DiagnosisModel diag_from_json(const json& j) {
  diag::DiagnosisModel m;
  m.vocabulary = j.at("vocabulary").get<std::vector<DiagnosisId>>();
  m.standardization.mean = j.at("standardization").at("mean").get<std::vector<double>>();
  m.standardization.sd = j.at("standardization").at("sd").get<std::vector<double>>();
  std::size_t inputs = m.standardization.mean.size();
  for (const auto& lj : j.at("layers")) {
    diag::DenseLayer l;
    l.inputs = lj.at("inputs").get<std::size_t>();
    l.outputs = lj.at("outputs").get<std::size_t>();
    l.weights = lj.at("weights").get<std::vector<double>>();
    l.bias = lj.at("bias").get<std::vector<double>>();
    if (l.inputs != inputs || l.weights.size() != l.inputs * l.outputs ||
        l.bias.size() != l.outputs) {
      throw SchemaError("diagnosis model layer shapes are inconsistent");
    }
    inputs = l.outputs;
    m.layers.push_back(std::move(l));
  }
  if (m.layers.empty() || inputs != m.vocabulary.size()) {
    throw SchemaError("diagnosis model output width differs from its vocabulary");
  }
  const auto& info = j.at("info");
  m.info.learning_rate = info.at("learning_rate").get<double>();
  m.info.weight_decay = info.at("weight_decay").get<double>();
  m.info.valid_loss = info.at("valid_loss").get<double>();
  m.info.epochs = info.at("epochs").get<std::size_t>();
  m.info.halvings = info.at("halvings").get<std::size_t>();
  m.info.loss_trace = info.at("loss_trace").get<std::vector<double>>();
  for (const auto& gj : info.at("grid")) {
    m.info.grid.push_back({gj.at("learning_rate").get<double>(),
                           gj.at("weight_decay").get<double>(),
                           gj.at("valid_loss").get<double>()});
  }
  return m;
}

void ModelBundle::validate() const {
  const std::size_t p = schema.size();
  if (outcome_model.n_features() != p) {
    throw SchemaError("outcome model has " + std::to_string(outcome_model.n_features()) +
                      " features, schema has " + std::to_string(p));
  }
  if (diagnosis_model.n_features() != p) {
    throw SchemaError("diagnosis model has " + std::to_string(diagnosis_model.n_features()) +
                      " features, schema has " + std::to_string(p));
  }
  for (DiagnosisId d : diagnosis_model.vocabulary) {
    if (d >= diagnosis_vocab.size()) {
      throw SchemaError("diagnosis model refers to diagnosis " + std::to_string(d) +
                        " outside the bundle vocabulary");
    }
  }
  for (const auto& [d, b] : outcome_model.diagnosis_offsets) {
    if (d >= diagnosis_vocab.size()) {
      throw SchemaError("outcome model refers to diagnosis " + std::to_string(d) +
                        " outside the bundle vocabulary");
    }
  }
}

json bundle_to_json(const ModelBundle& b) {
  b.validate();
  return {{"format", kFormat},
          {"schema_version", kSchemaVersion},
          {"schema",
           {{"names", b.schema.names},
            {"min", b.schema.min_values},
            {"max", b.schema.max_values}}},
          {"diagnosis_vocab", b.diagnosis_vocab},
          {"outcome_model", gam_to_json(b.outcome_model)},
          {"diagnosis_model", diag_to_json(b.diagnosis_model)},
          {"provenance",
           {{"config_hash", b.provenance.config_hash},
            {"data_fingerprint", b.provenance.data_fingerprint},
            {"config", b.provenance.config}}}};
}

ModelBundle bundle_from_json(const json& j) {
  ModelBundle b;
  try {
    if (j.at("format").get<std::string>() != kFormat) throw SchemaError("not a model bundle");
    const int version = j.at("schema_version").get<int>();
    if (version != kSchemaVersion) {
      throw SchemaError("bundle schema_version " + std::to_string(version) + " is not supported");
    }
    b.schema.names = j.at("schema").at("names").get<std::vector<std::string>>();
    b.schema.min_values = j.at("schema").at("min").get<std::vector<double>>();
    b.schema.max_values = j.at("schema").at("max").get<std::vector<double>>();
    b.diagnosis_vocab = j.at("diagnosis_vocab").get<std::vector<std::string>>();
    b.outcome_model = gam_from_json(j.at("outcome_model"));
    b.diagnosis_model = diag_from_json(j.at("diagnosis_model"));
    const auto& pj = j.at("provenance");
    b.provenance.config_hash = pj.at("config_hash").get<std::string>();
    b.provenance.data_fingerprint = pj.at("data_fingerprint").get<std::string>();
    b.provenance.config = pj.at("config");
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed model bundle: ") + e.what());
  }
  b.validate();
  return b;
}

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path) {
  write_file_atomically(path, bundle_to_json(bundle).dump(1) + "\n");
}

ModelBundle load_bundle(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError("bundle " + path.string() + ": " + e.what());
  }
  return bundle_from_json(j);
}

std::string cohort_fingerprint(const cohort::Cohort& c) {
  std::ostringstream out;
  cohort::write_cohort(out, c);
  return hex64(fnv1a64(out.str()));
}

}  // namespace duacm::app

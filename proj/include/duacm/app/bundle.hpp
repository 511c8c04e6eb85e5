#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

#include "duacm/app/config.hpp"
#include "duacm/cohort.hpp"
#include "duacm/diagmodel.hpp"
#include "duacm/gam.hpp"

namespace duacm::app {

struct Provenance {
  std::string config_hash;
  std::string data_fingerprint;  // of the cohort file the models were trained from
  nlohmann::ordered_json config;
  bool operator==(const Provenance&) const = default;
};

/// Outcome model f(x, d) and diagnosis model g(x) over one schema and vocabulary.
struct ModelBundle {
  cohort::FeatureSchema schema;
  std::vector<std::string> diagnosis_vocab;
  gam::GamModel outcome_model;
  diag::DiagnosisModel diagnosis_model;
  Provenance provenance;

  /// Throws SchemaError when the models disagree with the schema/vocabulary.
  void validate() const;
  bool operator==(const ModelBundle&) const = default;
};

nlohmann::ordered_json gam_to_json(const gam::GamModel& model);
gam::GamModel gam_from_json(const nlohmann::ordered_json& j);
nlohmann::ordered_json diag_to_json(const diag::DiagnosisModel& model);
diag::DiagnosisModel diag_from_json(const nlohmann::ordered_json& j);

nlohmann::ordered_json bundle_to_json(const ModelBundle& bundle);
ModelBundle bundle_from_json(const nlohmann::ordered_json& j);

void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path);
ModelBundle load_bundle(const std::filesystem::path& path);

/// Fingerprint of a cohort's canonical file form.
std::string cohort_fingerprint(const cohort::Cohort& cohort);

}  // namespace duacm::app

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>

#include "json.hpp"

#include "duacm/cohort.hpp"
#include "duacm/diagmodel.hpp"
#include "duacm/duacm.hpp"
#include "duacm/experiments.hpp"
#include "duacm/gam.hpp"
#include "duacm/linmod.hpp"

namespace duacm::app {

inline constexpr int kSchemaVersion = 1;

struct PredictSettings {
  infer::Mode mode = infer::Mode::kSampled;
  std::size_t n_samples = 150;
  std::vector<double> quantiles = {0.5, 0.9};
  std::size_t top_k = 5;
  double driver_threshold = 0.05;
};

struct CensusSettings {
  std::size_t min_patients = 200;
  double min_mortality = 0.05;
};

struct ExperimentSettings {
  std::size_t calibration_bins = 10;
  double alpha = 0.05;
  std::size_t delta_bins = 20;       // pessimistic-delta histogram
  double delta_max = 1.0;            // histogram upper edge
  std::size_t census_max_count = 0;  // census histogram range; 0 = largest count
};

struct ServeSettings {
  std::string host = "127.0.0.1";
  int port = 8080;
  double session_idle_seconds = 1800.0;
  std::size_t threads = 4;
};

/// Cohort generated when no cohort file is given: moderate mortality, a
/// handful of diagnoses common enough for per-diagnosis experiments, and one
/// confusable pair with opposite diagnosis offsets.
cohort::CohortSpec demo_cohort_spec();

/// Everything a command needs besides file paths. One master seed feeds
/// every random stream through derive_seed.
struct RunConfig {
  std::uint64_t seed = 1;
  cohort::CohortSpec cohort = demo_cohort_spec();  // cohort.seed is derived from `seed`
  std::array<double, 3> split = {0.6, 0.2, 0.2};
  gam::GamConfig gam;         // gam.seed derived; use_diagnosis set per use
  diag::MlpConfig mlp;        // mlp.seed derived
  linmod::LogisticConfig logistic;
  PredictSettings predict;
  CensusSettings census;
  ExperimentSettings experiment;
  ServeSettings serve;

  /// Applies the master seed to every component seed.
  void derive_seeds();
};

nlohmann::ordered_json to_json(const RunConfig& config);
/// Missing keys keep their defaults; unknown keys are a SchemaError.
RunConfig config_from_json(const nlohmann::ordered_json& j);
RunConfig load_config(const std::filesystem::path& path);

/// Sets a dotted key ("gam.learning_rate") to a JSON-parsed value.
void apply_override(nlohmann::ordered_json& j, const std::string& assignment);

/// Stable hash of the canonical JSON form.
std::string config_hash(const RunConfig& config);

std::string mode_name(infer::Mode mode);
infer::Mode parse_mode(const std::string& name);

}  // namespace duacm::app

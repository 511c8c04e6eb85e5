#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "duacm/app/bundle.hpp"
#include "duacm/app/config.hpp"
#include "duacm/duacm.hpp"
#include "duacm/table.hpp"

namespace duacm::app {

enum class SplitPart { kAll, kTrain, kValid, kTest };
SplitPart parse_split_part(const std::string& name);

/// The train/valid/test partition a config implies for a cohort.
cohort::CohortSplit split_for(const cohort::Cohort& cohort, const RunConfig& config);

/// Selects one part of the configured split (or the whole cohort).
cohort::Cohort select_part(const cohort::Cohort& cohort, const RunConfig& config, SplitPart part);

/// Fits f(x, d) (GAM with diagnosis term) and g(x) on the train/valid parts.
ModelBundle train_bundle(const cohort::Cohort& cohort, const RunConfig& config);

struct PatientPrediction {
  std::string id;
  infer::RiskDistribution distribution;
  infer::Explanation explanation;
  double delta = 0.0;
};

/// Quantile levels from the settings with 0.9 always included.
std::vector<double> quantile_levels(const PredictSettings& settings);

PatientPrediction predict_patient(const ModelBundle& bundle, const cohort::PatientRecord& record,
                                  const PredictSettings& settings, std::uint64_t seed);

/// Base seed of the sampled predictions a config implies.
std::uint64_t prediction_seed(const RunConfig& config);

/// Patient i uses seed derive_seed(base_seed, i).
std::vector<PatientPrediction> predict_cohort(const ModelBundle& bundle,
                                              const cohort::Cohort& cohort,
                                              const PredictSettings& settings,
                                              std::uint64_t base_seed);

Table prediction_table(const ModelBundle& bundle, const std::vector<PatientPrediction>& preds,
                       const PredictSettings& settings);

/// Metric, value, standard error rows for a labeled cohort.
Table evaluate_bundle(const ModelBundle& bundle, const cohort::Cohort& cohort,
                      const RunConfig& config);

/// Runs one named experiment and writes its tables into `out_dir`.
/// Returns the written file names.
std::vector<std::string> run_experiment(const std::string& name, const cohort::Cohort& cohort,
                                        const RunConfig& config,
                                        const std::optional<ModelBundle>& bundle,
                                        const std::filesystem::path& out_dir);

/// Names accepted by run_experiment.
const std::vector<std::string>& experiment_names();

}  // namespace duacm::app

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "duacm/cohort.hpp"
#include "duacm/random.hpp"

namespace duacm::testing {

/// Builds a cohort from explicit rows; ids are "r0", "r1", ...
inline cohort::Cohort make_cohort(const std::vector<std::vector<double>>& features,
                                  const std::vector<int>& outcomes,
                                  const std::vector<std::optional<DiagnosisId>>& diagnoses = {},
                                  std::size_t n_diagnoses = 0) {
  cohort::Cohort c;
  const std::size_t p = features.empty() ? 0 : features.front().size();
  std::vector<std::string> names;
  for (std::size_t j = 0; j < p; ++j) names.push_back("f" + std::to_string(j));
  for (std::size_t i = 0; i < features.size(); ++i) {
    cohort::PatientRecord r;
    r.id = "r" + std::to_string(i);
    r.features = features[i];
    r.outcome = outcomes[i];
    if (!diagnoses.empty()) r.diagnosis = diagnoses[i];
    c.records.push_back(std::move(r));
  }
  c.schema = cohort::schema_from_records(names, c.records);
  for (std::size_t d = 0; d < n_diagnoses; ++d) c.diagnosis_vocab.push_back("D" + std::to_string(d));
  return c;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("duacm_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::vector<double> normal_vector(Rng& rng, std::size_t n, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

}  // namespace duacm::testing

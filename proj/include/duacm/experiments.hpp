#pragma once

// Experiment harnesses comparing all-cause and diagnosis-specific models.
// Every model here is a feature-only GAM (no diagnosis term).
//
// Data layout shared by the harnesses: each diagnosis d in d_common is split
// (outcome-stratified) into train/valid/test with fractions 0.6/0.2/0.2;
// "train + valid" is the 80% used for fitting (valid drives early stopping)
// and "test" is the 20% holdout.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "duacm/cohort.hpp"
#include "duacm/gam.hpp"
#include "duacm/metrics.hpp"
#include "duacm/table.hpp"

namespace duacm::eval {

struct HarnessConfig {
  gam::GamConfig gam;  // use_diagnosis is ignored
  std::uint64_t seed = 0;
  double alpha = 0.05;  // Benjamini-Hochberg level
  std::size_t calibration_bins = 10;
};

struct AucPair {
  AucResult first;
  AucResult second;
};

// ACM vs diagnosis-specific models.

struct AcmVsSpecificRow {
  DiagnosisId diagnosis = 0;
  std::string name;
  std::size_t n_fit = 0;   // records the specific model was fitted on
  std::size_t n_test = 0;
  std::optional<AucResult> acm;
  std::optional<AucResult> specific;
  std::string skipped;  // reason; empty when evaluated
};

struct AcmVsSpecificReport {
  std::vector<AcmVsSpecificRow> rows;  // d_common order
  std::size_t acm_n_fit = 0;
  double acm_mean_auc = 0.0;
  double acm_mean_se = 0.0;  // sqrt(sum se^2) / k over evaluated rows
  double specific_mean_auc = 0.0;
  double specific_mean_se = 0.0;
  std::size_t n_evaluated = 0;

  Table table() const;
};

/// The ACM is fitted on every record outside the per-diagnosis test sets;
/// with a single diagnosis it sees exactly the specific model's data.
AcmVsSpecificReport run_acm_vs_specific(const cohort::Cohort& cohort,
                                        const std::vector<DiagnosisId>& d_common,
                                        const HarnessConfig& config = {});

// Out-of-diagnosis generalization.

struct OutOfDiagnosisRow {
  DiagnosisId diagnosis = 0;
  std::string name;
  std::optional<AucResult> within;        // on d's 20% holdout
  std::optional<AucResult> out_of_d;      // leave-d-out model on all of d
  std::optional<CalibrationReport> calibration;  // leave-d-out model on all of d
  // Sampling SE of the leave-d-out model's own intercept, 1 / sqrt(sum p(1-p))
  // over its training records. A diagnosis with no offset still sees this
  // much intercept noise, so the flag tests the calibration intercept
  // against sqrt(calibration SE^2 + reference_se^2).
  double reference_se = 0.0;
  double test_p = 1.0;
  double adjusted_p = 1.0;
  bool calibration_flagged = false;       // BH rejection
  bool within_beats_out = false;          // by more than 2 combined SEs
  std::string skipped;
};

struct OutOfDiagnosisReport {
  std::vector<OutOfDiagnosisRow> rows;
  std::size_t n_flagged = 0;
  std::size_t n_within_beats_out = 0;

  Table table() const;
  /// One row per (diagnosis, calibration bin).
  Table calibration_table() const;
};

OutOfDiagnosisReport run_out_of_diagnosis(const cohort::Cohort& cohort,
                                          const std::vector<DiagnosisId>& d_common,
                                          const HarnessConfig& config = {});

// Cross-model prediction correlation.

struct CorrelationReport {
  std::vector<DiagnosisId> diagnoses;
  std::vector<std::string> names;
  std::vector<std::vector<double>> matrix;  // symmetric off the diagonal
  double mean_diagonal = 0.0;
  double mean_off_diagonal = 0.0;
  std::size_t n_heldout = 0;
  std::vector<std::string> skipped;  // "id: reason"

  Table table() const;
};

/// Per diagnosis, two models are fitted on independent bootstrap resamples of
/// its records. Diagonal (i, i): Spearman correlation of the two replicates'
/// predictions on `heldout`. Off-diagonal (i, j): correlation of replicate 0
/// of model i with replicate 0 of model j.
CorrelationReport run_cross_model_correlation(const cohort::Cohort& cohort,
                                              const std::vector<DiagnosisId>& d_common,
                                              const cohort::Cohort& heldout,
                                              const HarnessConfig& config = {});

}  // namespace duacm::eval

#pragma once

// Diagnosis-uncertain risk: combine an outcome model f(x, d) with a diagnosis
// model g(x) into the distribution of conditional risks f(x, d), d ~ g(x).
//
// Quantiles use the weighted lower convention: Q(q) is the smallest risk r
// whose cumulative weight (risks sorted ascending) reaches q. Cumulative sums
// are compared with a 1e-12 slack so that weights like 0.1 + 0.8 still reach
// 0.9 despite rounding.

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "duacm/diagmodel.hpp"
#include "duacm/gam.hpp"

namespace duacm::infer {

enum class Mode { kSampled, kExact };

struct RiskEntry {
  DiagnosisId diagnosis = 0;
  double weight = 0.0;
  double conditional_risk = 0.0;
  bool operator==(const RiskEntry&) const = default;
};

struct RiskDistribution {
  Mode mode = Mode::kExact;
  std::vector<RiskEntry> entries;  // positive weights only, by diagnosis id
  double mean = 0.0;
  std::map<double, double> quantiles;
  std::size_t n_samples = 0;  // sampled mode only
  std::uint64_t seed = 0;
  // Some diagnosis had no offset in the outcome model; beta = 0 was used.
  bool offset_fallback = false;

  /// Stored quantile, else computed from the entries.
  double quantile(double q) const;
  bool operator==(const RiskDistribution&) const = default;
};

struct PredictConfig {
  Mode mode = Mode::kSampled;
  std::size_t n_samples = 150;
  std::vector<double> quantiles = {0.5, 0.9};
  std::uint64_t seed = 0;
};

/// Smallest risk whose cumulative weight reaches q. Entries need not be sorted.
double weighted_lower_quantile(std::span<const RiskEntry> entries, double q);

/// Full pipeline for one patient.
RiskDistribution du_predict(const gam::GamModel& outcome_model,
                            const diag::DiagnosisModel& diag_model,
                            std::span<const double> features, const PredictConfig& config = {});

/// Same, from an explicit diagnosis posterior (probabilities need not be
/// normalized; zero entries never contribute).
RiskDistribution risk_from_posterior(const gam::GamModel& outcome_model,
                                     std::span<const double> features,
                                     const diag::DiagnosisDistribution& posterior,
                                     const PredictConfig& config);

/// Q90 - mean. Throws ValidationError when Q90 was not requested.
double pessimistic_delta(const RiskDistribution& dist);

struct ExplanationItem {
  DiagnosisId diagnosis = 0;
  double probability = 0.0;
  double conditional_risk = 0.0;
  bool risk_driver = false;
};

struct Explanation {
  std::vector<ExplanationItem> ranked;  // descending probability, ties by id
  std::vector<DiagnosisId> drivers;     // in ranked order
};

Explanation explain(const RiskDistribution& dist, std::size_t top_k,
                    double driver_threshold = 0.05);

struct SessionConfig {
  PredictConfig predict{Mode::kExact, 150, {0.5, 0.9}, 0};
};

/// Interactive what-if state for one patient. Holds non-owning pointers to
/// the models, which must outlive the session.
class RuleOutSession {
 public:
  RuleOutSession(std::string id, const gam::GamModel& outcome_model,
                 const diag::DiagnosisModel& diag_model, std::vector<double> features,
                 SessionConfig config = {});

  const std::string& id() const { return id_; }
  const std::vector<double>& features() const { return features_; }
  const diag::DiagnosisDistribution& base() const { return base_; }
  const std::set<DiagnosisId>& excluded() const { return excluded_; }
  const std::optional<DiagnosisId>& confirmed() const { return confirmed_; }
  const RiskDistribution& current() const { return current_; }
  const SessionConfig& config() const { return config_; }

  /// Renormalized posterior after exclusions and confirmation.
  diag::DiagnosisDistribution posterior() const;

  /// Throws ConflictError if nothing with positive probability would remain
  /// and ValidationError for diagnoses outside the vocabulary. The session
  /// is unchanged on error.
  const RiskDistribution& rule_out(const std::set<DiagnosisId>& diagnoses);
  /// Throws ConflictError if `diagnosis` is excluded or has no probability.
  const RiskDistribution& confirm(DiagnosisId diagnosis);
  const RiskDistribution& reset();

  bool operator==(const RuleOutSession& other) const;

 private:
  bool allowed(DiagnosisId d, const std::set<DiagnosisId>& excluded,
               const std::optional<DiagnosisId>& confirmed) const;
  diag::DiagnosisDistribution posterior_for(const std::set<DiagnosisId>& excluded,
                                            const std::optional<DiagnosisId>& confirmed) const;
  void recompute();

  std::string id_;
  const gam::GamModel* outcome_model_;
  std::vector<double> features_;
  SessionConfig config_;
  diag::DiagnosisDistribution base_;
  std::set<DiagnosisId> excluded_;
  std::optional<DiagnosisId> confirmed_;
  RiskDistribution current_;
};

}  // namespace duacm::infer

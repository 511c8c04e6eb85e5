#include "duacm/duacm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "duacm/error.hpp"

namespace duacm::infer {
namespace {

constexpr double kCumulativeSlack = 1e-12;

void check_quantile_levels(const std::vector<double>& qs) {
  for (double q : qs) {
    if (!(q > 0.0 && q <= 1.0)) throw ValidationError("quantile levels must lie in (0, 1]");
  }
}

void finish(RiskDistribution& dist, const std::vector<double>& levels) {
  double total = 0.0;
  for (const auto& e : dist.entries) total += e.weight;
  for (auto& e : dist.entries) e.weight /= total;
  dist.mean = 0.0;
  for (const auto& e : dist.entries) dist.mean += e.weight * e.conditional_risk;
  for (double q : levels) dist.quantiles[q] = weighted_lower_quantile(dist.entries, q);
}

}  // namespace

double weighted_lower_quantile(std::span<const RiskEntry> entries, double q) {
  if (entries.empty()) throw ValidationError("quantile of an empty distribution");
  std::vector<const RiskEntry*> sorted;
  double total = 0.0;
  for (const auto& e : entries) {
    sorted.push_back(&e);
    total += e.weight;
  }
  std::sort(sorted.begin(), sorted.end(), [](const RiskEntry* a, const RiskEntry* b) {
    if (a->conditional_risk != b->conditional_risk) return a->conditional_risk < b->conditional_risk;
    return a->diagnosis < b->diagnosis;
  });
  double cum = 0.0;
  for (const auto* e : sorted) {
    cum += e->weight / total;
    if (cum >= q - kCumulativeSlack) return e->conditional_risk;
  }
  return sorted.back()->conditional_risk;
}

double RiskDistribution::quantile(double q) const {
  auto it = quantiles.find(q);
  if (it != quantiles.end()) return it->second;
  return weighted_lower_quantile(entries, q);
}

RiskDistribution risk_from_posterior(const gam::GamModel& outcome_model,
                                     std::span<const double> features,
                                     const diag::DiagnosisDistribution& posterior,
                                     const PredictConfig& config) {
  check_quantile_levels(config.quantiles);
  if (posterior.diagnoses.size() != posterior.probabilities.size()) {
    throw ValidationError("malformed diagnosis distribution");
  }
  RiskDistribution dist;
  dist.mode = config.mode;
  dist.seed = config.seed;

  // Weight per vocabulary position; sampled mode replaces posterior mass by
  // draw frequencies.
  std::vector<double> weight(posterior.diagnoses.size(), 0.0);
  if (config.mode == Mode::kExact) {
    weight = posterior.probabilities;
  } else {
    if (config.n_samples == 0) throw ValidationError("n_samples must be >= 1");
    dist.n_samples = config.n_samples;
    const auto draws = diag::sample_diagnoses(posterior, config.n_samples, config.seed);
    std::map<DiagnosisId, std::size_t> position;
    for (std::size_t k = 0; k < posterior.diagnoses.size(); ++k) {
      position.emplace(posterior.diagnoses[k], k);
    }
    for (DiagnosisId d : draws) weight[position.at(d)] += 1.0;
  }

  for (std::size_t k = 0; k < weight.size(); ++k) {
    if (!(weight[k] > 0.0)) continue;
    const DiagnosisId d = posterior.diagnoses[k];
    const auto pred = gam::predict_gam(outcome_model, features, d);
    dist.offset_fallback = dist.offset_fallback || pred.unseen_diagnosis;
    dist.entries.push_back({d, weight[k], pred.probability});
  }
  if (dist.entries.empty()) throw ValidationError("diagnosis distribution has no mass");
  std::sort(dist.entries.begin(), dist.entries.end(),
            [](const RiskEntry& a, const RiskEntry& b) { return a.diagnosis < b.diagnosis; });
  finish(dist, config.quantiles);
  return dist;
}

RiskDistribution du_predict(const gam::GamModel& outcome_model,
                            const diag::DiagnosisModel& diag_model,
                            std::span<const double> features, const PredictConfig& config) {
  if (outcome_model.n_features() != diag_model.n_features()) {
    throw ValidationError("outcome and diagnosis models disagree on the number of features");
  }
  if (!outcome_model.has_diagnosis_term()) {
    throw ValidationError("outcome model has no diagnosis term");
  }
  const auto posterior = diag::predict_diagnosis(diag_model, features);
  return risk_from_posterior(outcome_model, features, posterior, config);
}

double pessimistic_delta(const RiskDistribution& dist) {
  auto it = dist.quantiles.find(0.9);
  if (it == dist.quantiles.end()) throw ValidationError("distribution has no 0.9 quantile");
  return it->second - dist.mean;
}

Explanation explain(const RiskDistribution& dist, std::size_t top_k, double driver_threshold) {
  Explanation out;
  for (const auto& e : dist.entries) {
    out.ranked.push_back({e.diagnosis, e.weight, e.conditional_risk, false});
  }
  std::stable_sort(out.ranked.begin(), out.ranked.end(),
                   [](const ExplanationItem& a, const ExplanationItem& b) {
                     return a.probability > b.probability;
                   });
  if (out.ranked.size() > top_k) out.ranked.resize(top_k);
  if (dist.entries.empty()) return out;
  const double q90 = dist.quantile(0.9);
  for (auto& item : out.ranked) {
    if (item.conditional_risk >= q90 && item.probability >= driver_threshold) {
      item.risk_driver = true;
      out.drivers.push_back(item.diagnosis);
    }
  }
  return out;
}

RuleOutSession::RuleOutSession(std::string id, const gam::GamModel& outcome_model,
                               const diag::DiagnosisModel& diag_model,
                               std::vector<double> features, SessionConfig config)
    : id_(std::move(id)),
      outcome_model_(&outcome_model),
      features_(std::move(features)),
      config_(std::move(config)) {
  if (outcome_model.n_features() != diag_model.n_features()) {
    throw ValidationError("outcome and diagnosis models disagree on the number of features");
  }
  if (!outcome_model.has_diagnosis_term()) {
    throw ValidationError("outcome model has no diagnosis term");
  }
  base_ = diag::predict_diagnosis(diag_model, features_);
  recompute();
}

bool RuleOutSession::allowed(DiagnosisId d, const std::set<DiagnosisId>& excluded,
                             const std::optional<DiagnosisId>& confirmed) const {
  if (confirmed && d != *confirmed) return false;
  return !excluded.contains(d);
}

diag::DiagnosisDistribution RuleOutSession::posterior_for(
    const std::set<DiagnosisId>& excluded, const std::optional<DiagnosisId>& confirmed) const {
  diag::DiagnosisDistribution out = base_;
  if (excluded.empty() && !confirmed) return out;
  double total = 0.0;
  for (std::size_t k = 0; k < out.diagnoses.size(); ++k) {
    if (!allowed(out.diagnoses[k], excluded, confirmed)) out.probabilities[k] = 0.0;
    total += out.probabilities[k];
  }
  if (!(total > 0.0)) throw ConflictError("no diagnosis with positive probability would remain");
  for (double& p : out.probabilities) p /= total;
  return out;
}

diag::DiagnosisDistribution RuleOutSession::posterior() const {
  return posterior_for(excluded_, confirmed_);
}

void RuleOutSession::recompute() {
  current_ = risk_from_posterior(*outcome_model_, features_, posterior(), config_.predict);
}

const RiskDistribution& RuleOutSession::rule_out(const std::set<DiagnosisId>& diagnoses) {
  for (DiagnosisId d : diagnoses) {
    if (std::find(base_.diagnoses.begin(), base_.diagnoses.end(), d) == base_.diagnoses.end()) {
      throw ValidationError("diagnosis " + std::to_string(d) + " is not in the vocabulary");
    }
  }
  std::set<DiagnosisId> next = excluded_;
  next.insert(diagnoses.begin(), diagnoses.end());
  posterior_for(next, confirmed_);  // throws before any state changes
  excluded_ = std::move(next);
  recompute();
  return current_;
}

const RiskDistribution& RuleOutSession::confirm(DiagnosisId diagnosis) {
  const auto it = std::find(base_.diagnoses.begin(), base_.diagnoses.end(), diagnosis);
  if (it == base_.diagnoses.end()) {
    throw ValidationError("diagnosis " + std::to_string(diagnosis) + " is not in the vocabulary");
  }
  if (excluded_.contains(diagnosis)) {
    throw ConflictError("diagnosis " + std::to_string(diagnosis) +
                        " was ruled out and cannot be confirmed");
  }
  if (confirmed_ && *confirmed_ != diagnosis) {
    throw ConflictError("diagnosis " + std::to_string(*confirmed_) +
                        " is already confirmed; reset first");
  }
  posterior_for(excluded_, diagnosis);
  confirmed_ = diagnosis;
  recompute();
  return current_;
}

const RiskDistribution& RuleOutSession::reset() {
  excluded_.clear();
  confirmed_.reset();
  recompute();
  return current_;
}

bool RuleOutSession::operator==(const RuleOutSession& other) const {
  return id_ == other.id_ && outcome_model_ == other.outcome_model_ &&
         features_ == other.features_ && base_.diagnoses == other.base_.diagnoses &&
         base_.probabilities == other.base_.probabilities && excluded_ == other.excluded_ &&
         confirmed_ == other.confirmed_ && current_ == other.current_;
}

}  // namespace duacm::infer

#pragma once

// Synthetic cohorts with known ground truth.
//
// Generative process for one patient:
//   z  ~ Normal(0, I_latent_dim)                       latent patient state
//   d  | z   via an ordered-probit layout of diagnoses along a latent
//            direction (each diagnosis owns an interval of the probit scale
//            whose width is its Zipf prior mass, so the marginal of d is the
//            Zipf prior exactly)
//   x_j = a_j p_j + b_j tanh(c_j p_j + e_j) + Normal(0, noise^2),  p_j = v_j . z
//   y  ~ Bernoulli(sigmoid(intercept + risk_weights . z + beta_true(d)))
//
// A confusable pair (first, second) shares one interval; inside it `second`
// is chosen with probability prior(second) / (prior(first) + prior(second))
// through a probit on an independent direction scaled by `separation`. With
// separation 0 the choice is independent of z, so the two diagnoses have the
// same feature distribution.

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "duacm/random.hpp"

namespace duacm {

using DiagnosisId = std::uint32_t;

namespace cohort {

struct ConfusablePair {
  DiagnosisId first = 0;
  DiagnosisId second = 0;
  double separation = 0.0;
  bool operator==(const ConfusablePair&) const = default;
};

enum class FeatureMap { kNonlinear, kIdentity };

struct CohortSpec {
  std::size_t n_patients = 1000;
  std::size_t n_features = 8;
  std::size_t latent_dim = 4;
  std::size_t n_diagnoses = 20;
  double zipf_exponent = 1.2;
  std::vector<ConfusablePair> confusable_pairs;
  std::map<DiagnosisId, double> beta_true;  // missing ids have offset 0
  std::vector<double> risk_weights;         // empty means all zero
  double outcome_intercept = 0.0;
  double feature_noise_sd = 0.1;
  // Noise on the probit scale that places diagnoses; smaller values make the
  // diagnosis easier to read off the latent state.
  double diagnosis_noise_sd = 0.5;
  FeatureMap feature_map = FeatureMap::kNonlinear;
  // Scale of the tanh component of the nonlinear feature map.
  double nonlinearity = 1.0;
  std::uint64_t seed = 1;
};

/// Throws ValidationError naming the offending field.
void validate(const CohortSpec& spec);

/// Normalized Zipf weights k^-exponent for ranks k = 1..n.
std::vector<double> zipf_prior(std::size_t n, double exponent);

struct FeatureSchema {
  std::vector<std::string> names;
  std::vector<double> min_values;
  std::vector<double> max_values;
  std::size_t size() const { return names.size(); }
  bool operator==(const FeatureSchema&) const = default;
};

struct PatientRecord {
  std::string id;
  std::vector<double> features;
  std::optional<DiagnosisId> diagnosis;
  int outcome = 0;
  std::vector<double> latent_state;  // empty for external data
  bool operator==(const PatientRecord&) const = default;
};

struct Cohort {
  FeatureSchema schema;
  std::vector<PatientRecord> records;
  std::vector<std::string> diagnosis_vocab;  // index is the DiagnosisId

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  std::size_t n_features() const { return schema.size(); }
  std::size_t n_diagnoses() const { return diagnosis_vocab.size(); }
  double mortality() const;

  /// Checks record/schema agreement, vocabulary membership and id
  /// uniqueness. Throws SchemaError.
  void validate() const;

  bool operator==(const Cohort&) const = default;
};

/// The realized generative process for a spec: all structural parameters are
/// drawn once from the spec seed.
class GenerativeModel {
 public:
  explicit GenerativeModel(CohortSpec spec);

  const CohortSpec& spec() const { return spec_; }
  const std::vector<double>& prior() const { return prior_; }

  /// Noise-free feature values for a latent state.
  std::vector<double> feature_means(std::span<const double> latent) const;

  /// P(d | z) for every diagnosis, in closed form.
  std::vector<double> diagnosis_posterior(std::span<const double> latent) const;

  /// sigmoid(intercept + risk_weights . z + beta_true(d)).
  double true_risk(std::span<const double> latent, DiagnosisId diagnosis) const;

  /// Recovers z from noise-free features (first latent_dim features are
  /// strictly monotone in one latent coordinate each).
  std::vector<double> invert_features(std::span<const double> features) const;

  PatientRecord sample_patient(Rng& rng, std::size_t index) const;

  FeatureSchema schema_names() const;
  std::vector<std::string> vocabulary() const;

 private:
  struct Region {
    DiagnosisId first;
    std::optional<DiagnosisId> second;
    double separation = 0.0;
    double second_share = 0.0;
    std::size_t pair_index = 0;
  };
  struct FeatureTransform {
    std::vector<double> direction;
    double linear = 1.0;
    double tanh_scale = 0.0;
    double tanh_slope = 1.0;
    double tanh_shift = 0.0;
    double apply(double projection) const;
  };

  double beta(DiagnosisId d) const;

  CohortSpec spec_;
  std::vector<double> prior_;
  std::vector<Region> regions_;
  std::vector<double> region_upper_;  // cumulative probit-scale mass boundaries
  std::vector<double> diagnosis_direction_;
  std::vector<std::vector<double>> pair_directions_;
  std::vector<FeatureTransform> transforms_;
  std::vector<double> risk_weights_;
  std::vector<double> beta_;
};

/// Generates `spec.n_patients` records. Deterministic in `spec.seed`.
Cohort generate_cohort(const CohortSpec& spec);

/// Exact outcome probability under the generator for (z, d).
double true_risk(const CohortSpec& spec, std::span<const double> latent_state,
                 DiagnosisId diagnosis);

/// Posterior quantities given observed features, by self-normalized
/// importance sampling over z drawn from its prior.
struct FeaturePosterior {
  double marginal_risk = 0.0;                  // P(y=1 | x)
  std::vector<double> diagnosis_probability;   // P(d | x)
  std::vector<double> conditional_risk;        // P(y=1 | x, d); NaN where P(d|x)=0
  double effective_sample_size = 0.0;
};
FeaturePosterior posterior_given_features(const GenerativeModel& model,
                                          std::span<const double> features,
                                          std::size_t n_draws, std::uint64_t seed);

struct CohortSplit {
  Cohort train;
  Cohort valid;
  Cohort test;
};

/// Outcome-stratified random partition. Fractions are non-negative and sum to
/// 1; a split with a positive fraction that would receive no records is an
/// error. Records keep their original relative order inside each split.
CohortSplit split(const Cohort& cohort, std::array<double, 3> fractions, std::uint64_t seed);

struct CensusEntry {
  DiagnosisId diagnosis = 0;
  std::size_t count = 0;
  std::size_t deaths = 0;
  double mortality = 0.0;
};

/// Diagnoses with count >= min_patients and mortality >= min_mortality,
/// sorted by descending count (ties by id).
std::vector<CensusEntry> diagnosis_census(const Cohort& cohort, std::size_t min_patients,
                                          double min_mortality);

/// Records satisfying `keep`, sharing schema and vocabulary.
template <typename Pred>
Cohort filter(const Cohort& cohort, Pred keep) {
  Cohort out{cohort.schema, {}, cohort.diagnosis_vocab};
  for (const auto& r : cohort.records) {
    if (keep(r)) out.records.push_back(r);
  }
  return out;
}

/// Concatenation of two cohorts over the same schema and vocabulary.
Cohort concat(const Cohort& a, const Cohort& b);

/// Per-feature min/max recomputed from records.
FeatureSchema schema_from_records(std::vector<std::string> names,
                                  const std::vector<PatientRecord>& records);

}  // namespace cohort
}  // namespace duacm

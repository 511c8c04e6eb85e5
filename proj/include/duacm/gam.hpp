#pragma once

// Additive logistic model with binned shape functions:
//
//   score(x, d) = intercept + sum_j shape_j(bin_j(x_j)) + offset(d)
//   p(y = 1 | x, d) = sigmoid(score)
//
// Fitted by cyclic gradient boosting on the log-loss. Each round visits every
// feature in order and then the diagnosis term (one bin per diagnosis). For
// each inner bag the bins of a feature are grouped into at most `max_leaves`
// contiguous segments by greedy best-gain splits, and every bin in a segment
// takes the segment's Newton step sum(y - p) / sum(p (1 - p)). With
// max_leaves = 0 each bin takes its own step. The diagnosis term always steps
// per diagnosis. Steps are averaged over `inner_bags` bootstrap subsamples
// and scaled by the learning rate. `outer_bags` independent fits
// on bootstrap resamples are averaged, then every term is centered on the
// training distribution and the means folded into the intercept.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "duacm/cohort.hpp"

namespace duacm::gam {

struct FeatureBins {
  // Bin k holds values v with cuts[k-1] < v <= cuts[k]; values outside the
  // training range clamp to the edge bins.
  std::vector<double> cuts;

  std::size_t n_bins() const { return cuts.size() + 1; }
  std::size_t bin(double value) const;
  bool operator==(const FeatureBins&) const = default;
};

struct BinningSpec {
  std::size_t max_bins = 64;
  std::vector<FeatureBins> features;
  bool operator==(const BinningSpec&) const = default;
};

/// Equal-frequency cuts per feature taken at observed values, so binning
/// depends only on ranks. Features with at most `max_bins` distinct values
/// get one bin per value.
BinningSpec bin_features(const cohort::Cohort& train, std::size_t max_bins);
FeatureBins bin_column(std::vector<double> values, std::size_t max_bins);

struct ShapeFunction {
  std::size_t feature = 0;
  std::vector<double> contributions;     // one per bin
  std::vector<std::size_t> bin_counts;   // training records per bin
  bool operator==(const ShapeFunction&) const = default;
};

struct BagTrace {
  std::size_t rounds_run = 0;
  std::size_t best_round = 0;            // 0 = the initial constant model
  std::vector<double> valid_loss;        // index r = after r rounds; [0] is initial
  bool operator==(const BagTrace&) const = default;
};

struct GamTrainingInfo {
  std::size_t inner_bags = 0;
  std::size_t outer_bags = 0;
  double learning_rate = 0.0;
  std::vector<BagTrace> bags;
  bool operator==(const GamTrainingInfo&) const = default;
};

struct GamModel {
  double intercept = 0.0;
  std::vector<ShapeFunction> shapes;
  std::map<DiagnosisId, double> diagnosis_offsets;        // empty for a feature-only model
  std::map<DiagnosisId, std::size_t> diagnosis_counts;    // training records per diagnosis
  BinningSpec binning;
  GamTrainingInfo info;

  std::size_t n_features() const { return shapes.size(); }
  bool has_diagnosis_term() const { return !diagnosis_offsets.empty(); }

  /// A model whose every term is zero.
  static GamModel zero(BinningSpec binning);

  bool operator==(const GamModel&) const = default;
};

struct GamConfig {
  bool use_diagnosis = false;
  std::size_t inner_bags = 16;
  std::size_t outer_bags = 4;
  double learning_rate = 0.05;
  std::size_t max_rounds = 2000;
  std::optional<std::size_t> patience = 50;  // nullopt disables early stopping
  std::size_t max_bins = 64;
  // 0: every bin takes its own step. k >= 2: each bag's step for a feature is
  // constant on at most k contiguous bin segments chosen by greedy splits.
  std::size_t max_leaves = 3;
  std::uint64_t seed = 0;
};

GamModel fit_gam(const cohort::Cohort& train, const cohort::Cohort& valid,
                 const GamConfig& config = {});

struct GamPrediction {
  double probability = 0.5;
  double score = 0.0;
  bool unseen_diagnosis = false;  // diagnosis had no offset; 0 was used
};

/// With no diagnosis, or a model without a diagnosis term, the offset is 0.
GamPrediction predict_gam(const GamModel& model, std::span<const double> features,
                          std::optional<DiagnosisId> diagnosis = std::nullopt);

struct CurveSegment {
  double lower = 0.0;  // exclusive; -inf for the first bin
  double upper = 0.0;  // inclusive; +inf for the last bin
  double contribution = 0.0;
  std::size_t count = 0;
};

std::vector<CurveSegment> shape_curve(const GamModel& model, std::size_t feature);

}  // namespace duacm::gam

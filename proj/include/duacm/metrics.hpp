#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace duacm::eval {

struct AucResult {
  double auc = 0.5;
  double standard_error = 0.0;  // Hanley-McNeil
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
};

/// Normalized Mann-Whitney U with ties counted one half. Rank based,
/// O(n log n). Throws ValidationError unless both classes are present.
AucResult auc(std::span<const double> scores, std::span<const int> labels);

/// Hanley-McNeil standard error for a given AUC and class sizes.
double hanley_mcneil_se(double auc, std::size_t n_pos, std::size_t n_neg);

struct CalibrationBin {
  double mean_predicted = 0.0;
  double observed_rate = 0.0;
  std::size_t count = 0;
};

struct CalibrationReport {
  std::vector<CalibrationBin> bins;
  double intercept = 0.0;
  double intercept_se = 0.0;
  double p_value = 1.0;
};

/// Equal-frequency bins on sorted scores, plus the intercept of the
/// fixed-slope recalibration logit P(y=1) = a + logit(score).
CalibrationReport calibration_report(std::span<const double> scores, std::span<const int> labels,
                                     std::size_t n_bins = 10);

struct BhResult {
  std::vector<std::size_t> rejected;  // ascending indices
  std::vector<double> adjusted;       // input order
};

BhResult bh_adjust(std::span<const double> p_values, double alpha);

/// Mid-ranks (1-based, ties averaged).
std::vector<double> mid_ranks(std::span<const double> values);

double spearman_corr(std::span<const double> a, std::span<const double> b);

}  // namespace duacm::eval

#pragma once

// L2-regularized logistic regression on standardized features, with the
// penalty strength chosen by stratified k-fold cross-validation.
//
// Objective for a fixed lambda:
//   J(w, b) = mean_i logloss(y_i, sigmoid(b + w . s(x_i))) + lambda/2 * |w|^2
// where s() standardizes each feature with the training mean and sd. The
// intercept is not penalized.

#include <cstdint>
#include <span>
#include <vector>

#include "duacm/cohort.hpp"
#include "duacm/standardize.hpp"

namespace duacm::linmod {

struct CvEntry {
  double lambda = 0.0;
  double mean_log_loss = 0.0;
};

struct LinearModel {
  std::vector<double> weights;  // on the standardized scale
  double intercept = 0.0;
  double lambda = 0.0;
  Standardization standardization;
  std::vector<CvEntry> cv_table;  // grid order
  std::size_t iterations = 0;
  double gradient_max_norm = 0.0;

  std::size_t n_features() const { return weights.size(); }
};

std::vector<double> default_lambda_grid();

struct LogisticConfig {
  std::vector<double> lambda_grid = default_lambda_grid();
  std::size_t n_folds = 5;
  std::uint64_t seed = 0;
  double tolerance = 1e-8;
  std::size_t max_iterations = 500;
};

/// Cross-validates lambda, then refits on all of `train` at the chosen value.
/// Ties in CV loss go to the larger lambda.
LinearModel fit_logistic(const cohort::Cohort& train, const LogisticConfig& config = {});

/// Fits at one lambda with no cross-validation.
LinearModel fit_logistic_at(const std::vector<std::vector<double>>& features,
                            const std::vector<int>& labels, double lambda,
                            double tolerance = 1e-8, std::size_t max_iterations = 500);

double predict_logistic(const LinearModel& model, std::span<const double> features);

/// Gradient of J at the model's parameters over the given data; entry p is
/// the intercept component.
std::vector<double> penalized_gradient(const LinearModel& model,
                                       const std::vector<std::vector<double>>& features,
                                       const std::vector<int>& labels);

}  // namespace duacm::linmod

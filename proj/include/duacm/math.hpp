#pragma once

#include <cmath>
#include <span>

namespace duacm {

inline double sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

/// log(1 + exp(z)) without overflow.
inline double log1pexp(double z) {
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

/// Binary cross-entropy of a label against a logit score.
inline double log_loss_from_score(double score, int label) {
  return label ? log1pexp(-score) : log1pexp(score);
}

/// Binary cross-entropy against a probability, clamped away from 0 and 1.
inline double log_loss(double p, int label) {
  constexpr double kEps = 1e-15;
  const double q = p < kEps ? kEps : (p > 1.0 - kEps ? 1.0 - kEps : p);
  return label ? -std::log(q) : -std::log1p(-q);
}

double normal_cdf(double x);
double normal_quantile(double p);

double mean(std::span<const double> values);

}  // namespace duacm

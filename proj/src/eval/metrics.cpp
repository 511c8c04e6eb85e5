#include "duacm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "duacm/error.hpp"
#include "duacm/math.hpp"

namespace duacm::eval {
namespace {

void check_labels(std::span<const double> scores, std::span<const int> labels, const char* who) {
  if (scores.size() != labels.size()) {
    throw ValidationError(std::string(who) + ": scores and labels differ in length");
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw ValidationError(std::string(who) + ": labels must be 0 or 1");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw ValidationError(std::string(who) + ": non-finite score");
  }
}

std::vector<std::size_t> sorted_order(std::span<const double> values) {
  std::vector<std::size_t> order(values.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  return order;
}

}  // namespace

std::vector<double> mid_ranks(std::span<const double> values) {
  const auto order = sorted_order(values);
  std::vector<double> ranks(values.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i + 1;
    while (j < order.size() && values[order[j]] == values[order[i]]) ++j;
    // Positions i..j-1 (0-based) share the average of ranks i+1..j.
    const double rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = rank;
    i = j;
  }
  return ranks;
}

double hanley_mcneil_se(double a, std::size_t n_pos, std::size_t n_neg) {
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  const double q1 = a / (2.0 - a);
  const double q2 = 2.0 * a * a / (1.0 + a);
  const double var =
      (a * (1.0 - a) + (np - 1.0) * (q1 - a * a) + (nn - 1.0) * (q2 - a * a)) / (np * nn);
  return std::sqrt(std::max(var, 0.0));
}

AucResult auc(std::span<const double> scores, std::span<const int> labels) {
  check_labels(scores, labels, "auc");
  AucResult r;
  for (int y : labels) (y ? r.n_pos : r.n_neg)++;
  if (r.n_pos == 0 || r.n_neg == 0) throw ValidationError("auc: labels contain a single class");
  const auto ranks = mid_ranks(scores);
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < ranks.size(); ++i) {
    if (labels[i]) rank_sum += ranks[i];
  }
  const double np = static_cast<double>(r.n_pos);
  const double u = rank_sum - np * (np + 1.0) / 2.0;
  r.auc = u / (np * static_cast<double>(r.n_neg));
  r.standard_error = hanley_mcneil_se(r.auc, r.n_pos, r.n_neg);
  return r;
}

CalibrationReport calibration_report(std::span<const double> scores, std::span<const int> labels,
                                     std::size_t n_bins) {
  check_labels(scores, labels, "calibration_report");
  if (n_bins < 2) throw ValidationError("calibration_report: n_bins must be >= 2");
  if (scores.empty()) throw ValidationError("calibration_report: no records");
  for (double s : scores) {
    if (s < 0.0 || s > 1.0) throw ValidationError("calibration_report: score outside [0, 1]");
  }
  CalibrationReport rep;
  const std::size_t n = scores.size();
  const auto order = sorted_order(scores);
  for (std::size_t b = 0; b < n_bins; ++b) {
    const std::size_t lo = b * n / n_bins;
    const std::size_t hi = (b + 1) * n / n_bins;
    if (hi == lo) continue;
    CalibrationBin bin;
    double pred = 0.0, obs = 0.0;
    for (std::size_t k = lo; k < hi; ++k) {
      pred += scores[order[k]];
      obs += labels[order[k]];
    }
    bin.count = hi - lo;
    bin.mean_predicted = pred / static_cast<double>(bin.count);
    bin.observed_rate = obs / static_cast<double>(bin.count);
    rep.bins.push_back(bin);
  }

  // One-parameter Newton fit of the intercept with logit(score) as offset.
  std::vector<double> offset(n);
  for (std::size_t i = 0; i < n; ++i) offset[i] = logit(std::clamp(scores[i], 1e-12, 1.0 - 1e-12));
  double a = 0.0, h = 0.0;
  for (int it = 0; it < 100; ++it) {
    double g = 0.0;
    h = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double p = sigmoid(a + offset[i]);
      g += labels[i] - p;
      h += p * (1.0 - p);
    }
    if (h <= 0.0) break;
    const double step = g / h;
    a += std::clamp(step, -5.0, 5.0);
    if (std::abs(step) < 1e-12) break;
  }
  h = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = sigmoid(a + offset[i]);
    h += p * (1.0 - p);
  }
  rep.intercept = a;
  rep.intercept_se = h > 0.0 ? 1.0 / std::sqrt(h) : std::numeric_limits<double>::infinity();
  rep.p_value = std::isfinite(rep.intercept_se)
                    ? std::erfc(std::abs(a / rep.intercept_se) / std::sqrt(2.0))
                    : 1.0;
  return rep;
}

BhResult bh_adjust(std::span<const double> p_values, double alpha) {
  for (double p : p_values) {
    if (!(p >= 0.0 && p <= 1.0)) throw ValidationError("bh_adjust: p-values must lie in [0, 1]");
  }
  BhResult r;
  const std::size_t m = p_values.size();
  r.adjusted.assign(m, 1.0);
  if (m == 0) return r;
  const auto order = sorted_order(p_values);
  const double md = static_cast<double>(m);
  std::size_t k_max = 0;
  for (std::size_t k = 1; k <= m; ++k) {
    if (p_values[order[k - 1]] <= static_cast<double>(k) * alpha / md) k_max = k;
  }
  double running = 1.0;
  for (std::size_t k = m; k >= 1; --k) {
    const std::size_t i = order[k - 1];
    running = std::min(running, std::min(1.0, md * p_values[i] / static_cast<double>(k)));
    r.adjusted[i] = running;
  }
  for (std::size_t k = 0; k < k_max; ++k) r.rejected.push_back(order[k]);
  std::sort(r.rejected.begin(), r.rejected.end());
  return r;
}

double spearman_corr(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("spearman_corr: inputs differ in length");
  if (a.size() < 3) throw ValidationError("spearman_corr: need at least 3 points");
  const auto ra = mid_ranks(a);
  const auto rb = mid_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) throw ValidationError("spearman_corr: constant input");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

}  // namespace duacm::eval

#include "duacm/linmod.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "duacm/error.hpp"
#include "duacm/math.hpp"
#include "duacm/simd/kernels.hpp"

namespace duacm::linmod {
namespace {

struct Design {
  std::size_t n = 0;
  std::size_t p = 0;
  std::vector<double> x;  // n x p standardized, row-major
  std::vector<int> y;
};

Design standardize(const std::vector<std::vector<double>>& rows, const std::vector<int>& labels,
                   const Standardization& st) {
  Design d;
  d.n = rows.size();
  d.p = st.mean.size();
  d.x.resize(d.n * d.p);
  d.y = labels;
  for (std::size_t i = 0; i < d.n; ++i) {
    st.apply(rows[i], std::span<double>(d.x.data() + i * d.p, d.p));
  }
  return d;
}

double objective(const Design& d, const std::vector<double>& w, double b, double lambda,
                 std::vector<double>& scores) {
  double loss = 0.0;
  for (std::size_t i = 0; i < d.n; ++i) {
    scores[i] = b + simd::dot({d.x.data() + i * d.p, d.p}, w);
    loss += log_loss_from_score(scores[i], d.y[i]);
  }
  double pen = 0.0;
  for (double v : w) pen += v * v;
  return loss / static_cast<double>(d.n) + 0.5 * lambda * pen;
}

void gradient(const Design& d, const std::vector<double>& w, double lambda,
              const std::vector<double>& scores, std::vector<double>& grad) {
  grad.assign(d.p + 1, 0.0);
  std::span<double> gw(grad.data(), d.p);
  for (std::size_t i = 0; i < d.n; ++i) {
    const double r = sigmoid(scores[i]) - d.y[i];
    simd::axpy(r, {d.x.data() + i * d.p, d.p}, gw);
    grad[d.p] += r;
  }
  const double inv_n = 1.0 / static_cast<double>(d.n);
  for (std::size_t j = 0; j < d.p; ++j) grad[j] = grad[j] * inv_n + lambda * w[j];
  grad[d.p] *= inv_n;
}

double max_abs(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

struct NewtonResult {
  std::vector<double> w;
  double b = 0.0;
  std::size_t iterations = 0;
  double grad_norm = 0.0;
};

NewtonResult newton(const Design& d, double lambda, double tol, std::size_t max_iter) {
  const std::size_t p = d.p;
  NewtonResult res;
  res.w.assign(p, 0.0);
  std::size_t pos = 0;
  for (int y : d.y) pos += static_cast<std::size_t>(y);
  const double base = std::clamp(static_cast<double>(pos) / static_cast<double>(d.n), 1e-6, 1 - 1e-6);
  res.b = logit(base);

  std::vector<double> scores(d.n), grad, trial_w(p), trial_scores(d.n);
  double f = objective(d, res.w, res.b, lambda, scores);
  Eigen::MatrixXd hess(p + 1, p + 1);
  Eigen::VectorXd g(p + 1);
  for (res.iterations = 0; res.iterations < max_iter; ++res.iterations) {
    gradient(d, res.w, lambda, scores, grad);
    res.grad_norm = max_abs(grad);
    if (res.grad_norm < tol) break;

    hess.setZero();
    for (std::size_t i = 0; i < d.n; ++i) {
      const double pr = sigmoid(scores[i]);
      const double s = pr * (1.0 - pr);
      const double* xi = d.x.data() + i * p;
      for (std::size_t a = 0; a < p; ++a) {
        const double sa = s * xi[a];
        for (std::size_t c = 0; c <= a; ++c) hess(a, c) += sa * xi[c];
        hess(p, a) += sa;
      }
      hess(p, p) += s;
    }
    const double inv_n = 1.0 / static_cast<double>(d.n);
    for (std::size_t a = 0; a <= p; ++a) {
      for (std::size_t c = 0; c <= a; ++c) {
        hess(a, c) *= inv_n;
        hess(c, a) = hess(a, c);
      }
    }
    for (std::size_t a = 0; a < p; ++a) hess(a, a) += lambda;
    hess(p, p) += 1e-12;
    for (std::size_t a = 0; a <= p; ++a) g(a) = grad[a];
    const Eigen::VectorXd step = hess.ldlt().solve(g);

    // Backtracking on the objective. Near the optimum the decrease falls
    // below rounding noise, so a step that does not raise the objective by
    // more than that noise is taken as is.
    double t = 1.0;
    bool accepted = false;
    const double decrement = g.dot(step);
    const double noise = 1e-13 * std::abs(f);
    for (int ls = 0; ls < 60; ++ls) {
      for (std::size_t a = 0; a < p; ++a) trial_w[a] = res.w[a] - t * step(a);
      const double trial_b = res.b - t * step(p);
      const double ft = objective(d, trial_w, trial_b, lambda, trial_scores);
      if (ft <= f - 1e-4 * t * decrement || ft - f <= noise) {
        res.w = trial_w;
        res.b = trial_b;
        f = ft;
        scores.swap(trial_scores);
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
  }
  gradient(d, res.w, lambda, scores, grad);
  res.grad_norm = max_abs(grad);
  return res;
}

void check_rows(const std::vector<std::vector<double>>& rows, const std::vector<int>& labels,
                std::size_t p) {
  if (rows.size() != labels.size()) throw ValidationError("features and labels differ in length");
  for (const auto& r : rows) {
    if (r.size() != p) throw ValidationError("feature length mismatch");
    for (double v : r) {
      if (!std::isfinite(v)) throw ValidationError("non-finite feature value");
    }
  }
  for (int y : labels) {
    if (y != 0 && y != 1) throw ValidationError("labels must be 0 or 1");
  }
}

}  // namespace

std::vector<double> default_lambda_grid() {
  std::vector<double> grid;
  for (int k = -8; k <= 4; ++k) grid.push_back(std::pow(10.0, 0.5 * k));
  return grid;
}

LinearModel fit_logistic_at(const std::vector<std::vector<double>>& features,
                            const std::vector<int>& labels, double lambda, double tolerance,
                            std::size_t max_iterations) {
  if (features.empty()) throw ValidationError("fit_logistic: empty training data");
  const std::size_t p = features.front().size();
  check_rows(features, labels, p);
  if (!(lambda > 0.0)) throw ValidationError("fit_logistic: lambda must be positive");
  const bool has_pos = std::find(labels.begin(), labels.end(), 1) != labels.end();
  const bool has_neg = std::find(labels.begin(), labels.end(), 0) != labels.end();
  if (!has_pos || !has_neg) throw ValidationError("fit_logistic: training data has a single class");

  LinearModel model;
  model.standardization = Standardization::fit(features, p);
  const Design d = standardize(features, labels, model.standardization);
  auto res = newton(d, lambda, tolerance, max_iterations);
  model.weights = std::move(res.w);
  model.intercept = res.b;
  model.lambda = lambda;
  model.iterations = res.iterations;
  model.gradient_max_norm = res.grad_norm;
  return model;
}

LinearModel fit_logistic(const cohort::Cohort& train, const LogisticConfig& config) {
  if (config.lambda_grid.empty()) throw ValidationError("fit_logistic: lambda_grid is empty");
  if (config.n_folds < 2) throw ValidationError("fit_logistic: n_folds must be >= 2");
  for (double l : config.lambda_grid) {
    if (!(l > 0.0)) throw ValidationError("fit_logistic: lambda values must be positive");
  }
  std::vector<std::vector<double>> rows;
  std::vector<int> labels;
  rows.reserve(train.size());
  for (const auto& r : train.records) {
    rows.push_back(r.features);
    labels.push_back(r.outcome);
  }
  check_rows(rows, labels, train.n_features());
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty()) throw ValidationError("fit_logistic: training data has a single class");
  if (pos.size() < config.n_folds || neg.size() < config.n_folds) {
    throw ValidationError("fit_logistic: fewer records of a class than folds");
  }

  Rng rng = make_rng(config.seed, 0x11);
  shuffle(pos.begin(), pos.end(), rng);
  shuffle(neg.begin(), neg.end(), rng);
  std::vector<std::size_t> fold(rows.size());
  for (std::size_t k = 0; k < pos.size(); ++k) fold[pos[k]] = k % config.n_folds;
  for (std::size_t k = 0; k < neg.size(); ++k) fold[neg[k]] = k % config.n_folds;

  std::vector<CvEntry> table;
  for (double lambda : config.lambda_grid) {
    double total = 0.0;
    for (std::size_t f = 0; f < config.n_folds; ++f) {
      std::vector<std::vector<double>> tr_x, te_x;
      std::vector<int> tr_y, te_y;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (fold[i] == f) {
          te_x.push_back(rows[i]);
          te_y.push_back(labels[i]);
        } else {
          tr_x.push_back(rows[i]);
          tr_y.push_back(labels[i]);
        }
      }
      const auto m = fit_logistic_at(tr_x, tr_y, lambda, config.tolerance, config.max_iterations);
      double loss = 0.0;
      for (std::size_t i = 0; i < te_x.size(); ++i) {
        loss += log_loss(predict_logistic(m, te_x[i]), te_y[i]);
      }
      total += loss / static_cast<double>(te_x.size());
    }
    table.push_back({lambda, total / static_cast<double>(config.n_folds)});
  }

  std::size_t best = 0;
  for (std::size_t k = 1; k < table.size(); ++k) {
    const auto& cand = table[k];
    const auto& cur = table[best];
    if (cand.mean_log_loss < cur.mean_log_loss ||
        (cand.mean_log_loss == cur.mean_log_loss && cand.lambda > cur.lambda)) {
      best = k;
    }
  }
  auto model = fit_logistic_at(rows, labels, table[best].lambda, config.tolerance,
                               config.max_iterations);
  model.cv_table = std::move(table);
  return model;
}

double predict_logistic(const LinearModel& model, std::span<const double> features) {
  if (features.size() != model.weights.size()) {
    throw ValidationError("predict_logistic: expected " + std::to_string(model.weights.size()) +
                          " features, got " + std::to_string(features.size()));
  }
  std::vector<double> z(features.size());
  model.standardization.apply(features, z);
  return sigmoid(model.intercept + simd::dot(z, model.weights));
}

std::vector<double> penalized_gradient(const LinearModel& model,
                                       const std::vector<std::vector<double>>& features,
                                       const std::vector<int>& labels) {
  check_rows(features, labels, model.weights.size());
  const Design d = standardize(features, labels, model.standardization);
  std::vector<double> scores(d.n), grad;
  objective(d, model.weights, model.intercept, model.lambda, scores);
  gradient(d, model.weights, model.lambda, scores, grad);
  return grad;
}

}  // namespace duacm::linmod

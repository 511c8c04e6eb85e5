#include "duacm/gam.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "duacm/error.hpp"
#include "duacm/math.hpp"
#include "duacm/random.hpp"
#include "duacm/simd/kernels.hpp"

namespace duacm::gam {
namespace {

constexpr std::size_t kMaxBins = 65535;
constexpr double kMinHessian = 1e-12;

void check_features(std::span<const double> x, std::size_t p) {
  if (x.size() != p) {
    throw ValidationError("expected " + std::to_string(p) + " features, got " +
                          std::to_string(x.size()));
  }
  for (double v : x) {
    if (!std::isfinite(v)) throw ValidationError("non-finite feature value");
  }
}

// Binned view of a cohort. Term t < p is feature t; term p (if present) is
// the diagnosis term, whose bin `n_categories` means "no offset".
struct BinnedData {
  std::vector<std::vector<std::uint16_t>> bins;  // [term][record]
  std::vector<int> labels;
};

struct TermLayout {
  std::vector<std::size_t> n_bins;  // per term
  std::vector<DiagnosisId> categories;  // diagnosis per category bin
  std::size_t n_features = 0;
  bool has_diagnosis_term = false;
};

BinnedData bin_cohort(const cohort::Cohort& data, const BinningSpec& binning,
                      const TermLayout& layout, bool use_diagnosis) {
  const std::size_t p = binning.features.size();
  BinnedData out;
  out.bins.assign(p + (use_diagnosis ? 1 : 0), std::vector<std::uint16_t>(data.size()));
  out.labels.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& r = data.records[i];
    check_features(r.features, p);
    for (std::size_t j = 0; j < p; ++j) {
      out.bins[j][i] = static_cast<std::uint16_t>(binning.features[j].bin(r.features[j]));
    }
    if (use_diagnosis) {
      std::size_t cat = layout.categories.size();
      if (r.diagnosis) {
        auto it = std::lower_bound(layout.categories.begin(), layout.categories.end(),
                                   *r.diagnosis);
        if (it != layout.categories.end() && *it == *r.diagnosis) {
          cat = static_cast<std::size_t>(it - layout.categories.begin());
        }
      }
      out.bins[p][i] = static_cast<std::uint16_t>(cat);
    }
    out.labels[i] = r.outcome;
  }
  return out;
}

// Splits bins [0, nb) into at most `max_leaves` contiguous segments by greedy
// best-gain splits on one bag's histograms (stride `stride`), and writes each
// bin's segment Newton step G/H into `step`.
void segmented_step(const double* g, const double* h, std::size_t stride, std::size_t nb,
                    std::size_t max_leaves, std::vector<double>& step) {
  struct Segment {
    std::size_t lo, hi;
    double g, h;
  };
  auto sums = [&](std::size_t lo, std::size_t hi) {
    Segment s{lo, hi, 0.0, 0.0};
    for (std::size_t k = lo; k < hi; ++k) {
      s.g += g[k * stride];
      s.h += h[k * stride];
    }
    return s;
  };
  auto score = [](double gs, double hs) { return hs > kMinHessian ? gs * gs / hs : 0.0; };
  std::vector<Segment> segments{sums(0, nb)};
  while (segments.size() < max_leaves) {
    double best_gain = 0.0;
    std::size_t best_seg = 0, best_cut = 0;
    for (std::size_t s = 0; s < segments.size(); ++s) {
      const auto& seg = segments[s];
      double gl = 0.0, hl = 0.0;
      for (std::size_t cut = seg.lo + 1; cut < seg.hi; ++cut) {
        gl += g[(cut - 1) * stride];
        hl += h[(cut - 1) * stride];
        const double hr = seg.h - hl;
        if (hl <= kMinHessian || hr <= kMinHessian) continue;
        const double gain = score(gl, hl) + score(seg.g - gl, hr) - score(seg.g, seg.h);
        if (gain > best_gain) {
          best_gain = gain;
          best_seg = s;
          best_cut = cut;
        }
      }
    }
    if (best_gain <= 0.0) break;
    const Segment whole = segments[best_seg];
    segments[best_seg] = sums(whole.lo, best_cut);
    segments.push_back(sums(best_cut, whole.hi));
  }
  step.assign(nb, 0.0);
  for (const auto& seg : segments) {
    const double v = seg.h > kMinHessian ? seg.g / seg.h : 0.0;
    for (std::size_t k = seg.lo; k < seg.hi; ++k) step[k] = v;
  }
}

struct BagResult {
  double intercept = 0.0;
  std::vector<std::vector<double>> terms;  // [term][bin]
  BagTrace trace;
};

double mean_log_loss(const std::vector<double>& scores, const std::vector<int>& labels) {
  double loss = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) loss += log_loss_from_score(scores[i], labels[i]);
  return loss / static_cast<double>(scores.size());
}

BagResult fit_bag(const BinnedData& train, const BinnedData& valid, const TermLayout& layout,
                  const GamConfig& config, std::size_t bag_index) {
  const std::size_t n = train.labels.size();
  const std::size_t n_terms = layout.n_bins.size();
  const std::size_t B = config.inner_bags;
  Rng rng = make_rng(config.seed, 1000 + bag_index);

  // Outer bootstrap: multiset of record indices.
  std::vector<std::size_t> outer(n);
  std::vector<std::size_t> outer_count(n, 0);
  for (auto& idx : outer) {
    idx = uniform_index(rng, n);
    ++outer_count[idx];
  }
  std::vector<std::size_t> active;
  std::vector<std::size_t> active_pos(n, std::numeric_limits<std::size_t>::max());
  for (std::size_t i = 0; i < n; ++i) {
    if (outer_count[i] > 0) {
      active_pos[i] = active.size();
      active.push_back(i);
    }
  }
  const std::size_t m = active.size();

  // Inner bootstraps drawn from the outer multiset.
  std::vector<double> bag_weights(m * B, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t rec = outer[uniform_index(rng, n)];
      bag_weights[active_pos[rec] * B + b] += 1.0;
    }
  }

  std::vector<std::vector<std::uint16_t>> bins(n_terms, std::vector<std::uint16_t>(m));
  std::vector<int> labels(m);
  double pos = 0.0;
  for (std::size_t a = 0; a < m; ++a) {
    const std::size_t i = active[a];
    for (std::size_t t = 0; t < n_terms; ++t) bins[t][a] = train.bins[t][i];
    labels[a] = train.labels[i];
    pos += static_cast<double>(outer_count[i] * static_cast<std::size_t>(train.labels[i]));
  }
  const double base = std::clamp(pos / static_cast<double>(n), 1e-6, 1.0 - 1e-6);

  BagResult result;
  result.intercept = logit(base);
  result.terms.resize(n_terms);
  for (std::size_t t = 0; t < n_terms; ++t) result.terms[t].assign(layout.n_bins[t], 0.0);

  std::vector<double> scores(m, result.intercept);
  std::vector<double> valid_scores(valid.labels.size(), result.intercept);
  std::vector<double> grad(m), hess(m), update;
  std::vector<double> grad_hist, hess_hist, bag_step;
  const bool early_stopping = config.patience.has_value() && !valid.labels.empty();

  auto current = result.terms;
  double best_loss = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;
  if (!valid.labels.empty()) {
    best_loss = mean_log_loss(valid_scores, valid.labels);
    result.trace.valid_loss.push_back(best_loss);
  }

  std::size_t round = 0;
  while (round < config.max_rounds) {
    ++round;
    for (std::size_t t = 0; t < n_terms; ++t) {
      const std::size_t nb = layout.n_bins[t];
      for (std::size_t a = 0; a < m; ++a) {
        const double pr = sigmoid(scores[a]);
        grad[a] = labels[a] - pr;
        hess[a] = pr * (1.0 - pr);
      }
      grad_hist.assign(nb * B, 0.0);
      hess_hist.assign(nb * B, 0.0);
      simd::bagged_histogram(bins[t], grad, hess, bag_weights, B, grad_hist, hess_hist);
      update.assign(nb, 0.0);
      // The diagnosis term's last bin ("no offset") never moves.
      const std::size_t movable = layout.has_diagnosis_term && t + 1 == n_terms ? nb - 1 : nb;
      const bool segmented = config.max_leaves > 0 && t < layout.n_features;
      if (segmented) {
        for (std::size_t b = 0; b < B; ++b) {
          segmented_step(grad_hist.data() + b, hess_hist.data() + b, B, nb, config.max_leaves,
                         bag_step);
          for (std::size_t k = 0; k < nb; ++k) update[k] += bag_step[k];
        }
      } else {
        for (std::size_t k = 0; k < movable; ++k) {
          for (std::size_t b = 0; b < B; ++b) {
            const double h = hess_hist[k * B + b];
            if (h > kMinHessian) update[k] += grad_hist[k * B + b] / h;
          }
        }
      }
      for (std::size_t k = 0; k < movable; ++k) {
        update[k] *= config.learning_rate / static_cast<double>(B);
        current[t][k] += update[k];
      }
      for (std::size_t a = 0; a < m; ++a) scores[a] += update[bins[t][a]];
      const auto& vb = valid.bins[t];
      for (std::size_t i = 0; i < valid_scores.size(); ++i) valid_scores[i] += update[vb[i]];
    }

    if (valid.labels.empty()) continue;
    const double loss = mean_log_loss(valid_scores, valid.labels);
    result.trace.valid_loss.push_back(loss);
    if (loss < best_loss) {
      best_loss = loss;
      result.trace.best_round = round;
      result.terms = current;
      since_best = 0;
    } else if (early_stopping && ++since_best >= *config.patience) {
      break;
    }
  }
  result.trace.rounds_run = round;
  if (valid.labels.empty()) {
    result.terms = current;
    result.trace.best_round = round;
  }
  return result;
}

}  // namespace

std::size_t FeatureBins::bin(double value) const {
  return static_cast<std::size_t>(std::lower_bound(cuts.begin(), cuts.end(), value) -
                                  cuts.begin());
}

FeatureBins bin_column(std::vector<double> values, std::size_t max_bins) {
  if (values.empty()) throw ValidationError("bin_features: empty cohort");
  if (max_bins < 2 || max_bins > kMaxBins) {
    throw ValidationError("bin_features: max_bins must be in [2, 65535]");
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw ValidationError("bin_features: non-finite feature value");
  }
  std::sort(values.begin(), values.end());
  FeatureBins fb;
  std::vector<double> distinct;
  for (double v : values) {
    if (distinct.empty() || v != distinct.back()) distinct.push_back(v);
    if (distinct.size() > max_bins) break;
  }
  if (distinct.size() <= max_bins) {
    fb.cuts.assign(distinct.begin(), distinct.end() - 1);
    return fb;
  }
  const std::size_t n = values.size();
  const double top = values.back();
  for (std::size_t k = 1; k < max_bins; ++k) {
    const std::size_t pos = (k * n + max_bins - 1) / max_bins;  // ceil(k n / B)
    const double c = values[pos - 1];
    if (c >= top) break;
    if (fb.cuts.empty() || c > fb.cuts.back()) fb.cuts.push_back(c);
  }
  return fb;
}

BinningSpec bin_features(const cohort::Cohort& train, std::size_t max_bins) {
  if (train.empty()) throw ValidationError("bin_features: empty cohort");
  BinningSpec spec;
  spec.max_bins = max_bins;
  const std::size_t p = train.n_features();
  std::vector<double> column(train.size());
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t i = 0; i < train.size(); ++i) column[i] = train.records[i].features.at(j);
    spec.features.push_back(bin_column(column, max_bins));
  }
  return spec;
}

GamModel GamModel::zero(BinningSpec binning) {
  GamModel model;
  for (std::size_t j = 0; j < binning.features.size(); ++j) {
    const std::size_t nb = binning.features[j].n_bins();
    model.shapes.push_back({j, std::vector<double>(nb, 0.0), std::vector<std::size_t>(nb, 0)});
  }
  model.binning = std::move(binning);
  return model;
}

GamModel fit_gam(const cohort::Cohort& train, const cohort::Cohort& valid,
                 const GamConfig& config) {
  if (train.empty()) throw ValidationError("fit_gam: empty training cohort");
  if (config.inner_bags < 1 || config.outer_bags < 1) {
    throw ValidationError("fit_gam: bag counts must be >= 1");
  }
  if (!(config.learning_rate > 0.0)) throw ValidationError("fit_gam: learning_rate must be > 0");
  if (config.patience && *config.patience == 0) {
    throw ValidationError("fit_gam: patience must be >= 1");
  }
  if (config.patience && valid.empty()) {
    throw ValidationError("fit_gam: early stopping needs a non-empty validation cohort");
  }
  const std::size_t p = train.n_features();
  if (valid.n_features() != p && !valid.empty()) {
    throw ValidationError("fit_gam: validation schema differs from training schema");
  }

  GamModel model;
  model.binning = bin_features(train, config.max_bins);

  TermLayout layout;
  for (const auto& fb : model.binning.features) layout.n_bins.push_back(fb.n_bins());
  layout.n_features = p;
  if (config.use_diagnosis) {
    for (std::size_t i = 0; i < train.size(); ++i) {
      const auto& r = train.records[i];
      if (!r.diagnosis) {
        throw ValidationError("fit_gam: use_diagnosis requires every training record to have a "
                              "diagnosis (record " + r.id + " has none)");
      }
      layout.categories.push_back(*r.diagnosis);
    }
    std::sort(layout.categories.begin(), layout.categories.end());
    layout.categories.erase(std::unique(layout.categories.begin(), layout.categories.end()),
                            layout.categories.end());
    if (layout.categories.size() + 1 > kMaxBins) {
      throw ValidationError("fit_gam: too many diagnoses");
    }
    layout.n_bins.push_back(layout.categories.size() + 1);
    layout.has_diagnosis_term = true;
  }

  const BinnedData train_bins = bin_cohort(train, model.binning, layout, config.use_diagnosis);
  const BinnedData valid_bins = bin_cohort(valid, model.binning, layout, config.use_diagnosis);

  const std::size_t n_terms = layout.n_bins.size();
  std::vector<std::vector<double>> terms(n_terms);
  for (std::size_t t = 0; t < n_terms; ++t) terms[t].assign(layout.n_bins[t], 0.0);
  double intercept = 0.0;
  model.info.inner_bags = config.inner_bags;
  model.info.outer_bags = config.outer_bags;
  model.info.learning_rate = config.learning_rate;
  for (std::size_t o = 0; o < config.outer_bags; ++o) {
    auto bag = fit_bag(train_bins, valid_bins, layout, config, o);
    intercept += bag.intercept;
    for (std::size_t t = 0; t < n_terms; ++t) {
      for (std::size_t k = 0; k < layout.n_bins[t]; ++k) terms[t][k] += bag.terms[t][k];
    }
    model.info.bags.push_back(std::move(bag.trace));
  }
  const double inv = 1.0 / static_cast<double>(config.outer_bags);
  intercept *= inv;
  for (auto& term : terms) {
    for (auto& v : term) v *= inv;
  }

  // Center each term on the training distribution.
  const double n = static_cast<double>(train.size());
  for (std::size_t t = 0; t < n_terms; ++t) {
    std::vector<std::size_t> counts(layout.n_bins[t], 0);
    for (auto b : train_bins.bins[t]) ++counts[b];
    double m = 0.0;
    for (std::size_t k = 0; k < counts.size(); ++k) m += static_cast<double>(counts[k]) * terms[t][k];
    m /= n;
    for (auto& v : terms[t]) v -= m;
    intercept += m;
    if (t < p) {
      model.shapes.push_back({t, std::move(terms[t]), std::move(counts)});
    } else {
      for (std::size_t c = 0; c < layout.categories.size(); ++c) {
        model.diagnosis_offsets[layout.categories[c]] = terms[t][c];
        model.diagnosis_counts[layout.categories[c]] = counts[c];
      }
    }
  }
  model.intercept = intercept;
  return model;
}

GamPrediction predict_gam(const GamModel& model, std::span<const double> features,
                          std::optional<DiagnosisId> diagnosis) {
  check_features(features, model.shapes.size());
  GamPrediction out;
  double score = model.intercept;
  for (std::size_t j = 0; j < model.shapes.size(); ++j) {
    score += model.shapes[j].contributions[model.binning.features[j].bin(features[j])];
  }
  if (diagnosis && model.has_diagnosis_term()) {
    auto it = model.diagnosis_offsets.find(*diagnosis);
    if (it != model.diagnosis_offsets.end()) {
      score += it->second;
    } else {
      out.unseen_diagnosis = true;
    }
  }
  out.score = score;
  out.probability = sigmoid(score);
  return out;
}

std::vector<CurveSegment> shape_curve(const GamModel& model, std::size_t feature) {
  if (feature >= model.shapes.size()) {
    throw ValidationError("shape_curve: feature index " + std::to_string(feature) +
                          " out of range");
  }
  const auto& cuts = model.binning.features[feature].cuts;
  const auto& shape = model.shapes[feature];
  std::vector<CurveSegment> out;
  constexpr double inf = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < shape.contributions.size(); ++k) {
    CurveSegment seg;
    seg.lower = k == 0 ? -inf : cuts[k - 1];
    seg.upper = k == cuts.size() ? inf : cuts[k];
    seg.contribution = shape.contributions[k];
    seg.count = k < shape.bin_counts.size() ? shape.bin_counts[k] : 0;
    out.push_back(seg);
  }
  return out;
}

}  // namespace duacm::gam

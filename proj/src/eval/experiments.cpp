#include "duacm/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "duacm/error.hpp"
#include "duacm/text.hpp"

namespace duacm::eval {
namespace {

using cohort::Cohort;

constexpr std::array<double, 3> kDiagnosisSplit = {0.6, 0.2, 0.2};
constexpr std::array<double, 3> kFitSplit = {0.75, 0.25, 0.0};

struct Scored {
  std::vector<double> scores;
  std::vector<int> labels;
};

bool has_both_classes(const Cohort& c) {
  bool pos = false, neg = false;
  for (const auto& r : c.records) (r.outcome ? pos : neg) = true;
  return pos && neg;
}

Cohort with_diagnosis(const Cohort& c, DiagnosisId d) {
  return cohort::filter(c, [d](const cohort::PatientRecord& r) { return r.diagnosis == d; });
}

std::string name_of(const Cohort& c, DiagnosisId d) {
  return d < c.diagnosis_vocab.size() ? c.diagnosis_vocab[d] : std::to_string(d);
}

gam::GamModel fit_feature_gam(const Cohort& train, const Cohort& valid,
                              const HarnessConfig& config) {
  gam::GamConfig gc = config.gam;
  gc.use_diagnosis = false;
  gc.seed = derive_seed(config.seed, 0x6a);
  if (valid.empty()) gc.patience.reset();
  return gam::fit_gam(train, valid, gc);
}

Scored score(const gam::GamModel& model, const Cohort& c) {
  Scored s;
  for (const auto& r : c.records) {
    s.scores.push_back(gam::predict_gam(model, r.features).probability);
    s.labels.push_back(r.outcome);
  }
  return s;
}

// Outcome-stratified fit/valid partition of records that are not held out.
// Falls back to "everything in fit" when the cohort is too small to carve a
// validation part.
std::pair<Cohort, Cohort> fit_partition(const Cohort& c, std::uint64_t seed) {
  try {
    auto s = cohort::split(c, kFitSplit, seed);
    return {std::move(s.train), std::move(s.valid)};
  } catch (const ValidationError&) {
    return {c, Cohort{c.schema, {}, c.diagnosis_vocab}};
  }
}

std::optional<cohort::CohortSplit> diagnosis_split(const Cohort& subset, std::uint64_t seed,
                                                   std::string& reason) {
  if (subset.size() < 10) {
    reason = "too few records (" + std::to_string(subset.size()) + ")";
    return std::nullopt;
  }
  try {
    auto s = cohort::split(subset, kDiagnosisSplit, seed);
    if (!has_both_classes(s.test)) {
      reason = "test split has a single outcome class";
      return std::nullopt;
    }
    if (!has_both_classes(s.train)) {
      reason = "training split has a single outcome class";
      return std::nullopt;
    }
    return s;
  } catch (const ValidationError& e) {
    reason = std::string("cannot split: ") + e.what();
    return std::nullopt;
  }
}

void check_d_common(const Cohort& c, const std::vector<DiagnosisId>& d_common) {
  if (d_common.empty()) throw ValidationError("d_common is empty");
  std::set<DiagnosisId> seen;
  for (DiagnosisId d : d_common) {
    if (d >= c.n_diagnoses()) {
      throw ValidationError("d_common contains unknown diagnosis " + std::to_string(d));
    }
    if (!seen.insert(d).second) {
      throw ValidationError("d_common contains diagnosis " + std::to_string(d) + " twice");
    }
  }
}

std::string real(double v) { return format_real(v); }
std::string opt_auc(const std::optional<AucResult>& a) { return a ? real(a->auc) : ""; }
std::string opt_se(const std::optional<AucResult>& a) { return a ? real(a->standard_error) : ""; }

}  // namespace

AcmVsSpecificReport run_acm_vs_specific(const Cohort& c, const std::vector<DiagnosisId>& d_common,
                                        const HarnessConfig& config) {
  check_d_common(c, d_common);
  AcmVsSpecificReport rep;
  std::vector<std::optional<cohort::CohortSplit>> splits;
  std::set<DiagnosisId> split_ok;
  for (DiagnosisId d : d_common) {
    AcmVsSpecificRow row;
    row.diagnosis = d;
    row.name = name_of(c, d);
    auto s = diagnosis_split(with_diagnosis(c, d), derive_seed(config.seed, 0x100 + d), row.skipped);
    if (s) split_ok.insert(d);
    splits.push_back(std::move(s));
    rep.rows.push_back(std::move(row));
  }

  const Cohort others = cohort::filter(c, [&](const cohort::PatientRecord& r) {
    return !(r.diagnosis && split_ok.contains(*r.diagnosis));
  });
  Cohort acm_train{c.schema, {}, c.diagnosis_vocab};
  Cohort acm_valid{c.schema, {}, c.diagnosis_vocab};
  for (const auto& s : splits) {
    if (!s) continue;
    acm_train = cohort::concat(acm_train, s->train);
    acm_valid = cohort::concat(acm_valid, s->valid);
  }
  if (!others.empty()) {
    auto [tr, va] = fit_partition(others, derive_seed(config.seed, 0x200));
    acm_train = cohort::concat(acm_train, tr);
    acm_valid = cohort::concat(acm_valid, va);
  }
  if (acm_train.empty() || !has_both_classes(acm_train)) {
    throw ValidationError("acm-vs-specific: the ACM training data lacks one outcome class");
  }
  rep.acm_n_fit = acm_train.size() + acm_valid.size();
  const auto acm = fit_feature_gam(acm_train, acm_valid, config);

  double acm_var = 0.0, spec_var = 0.0;
  for (std::size_t k = 0; k < d_common.size(); ++k) {
    auto& row = rep.rows[k];
    const auto& s = splits[k];
    if (!s) continue;
    row.n_fit = s->train.size() + s->valid.size();
    row.n_test = s->test.size();
    const auto model = fit_feature_gam(s->train, s->valid, config);
    const auto a = score(acm, s->test);
    const auto b = score(model, s->test);
    row.acm = auc(a.scores, a.labels);
    row.specific = auc(b.scores, b.labels);
    rep.acm_mean_auc += row.acm->auc;
    rep.specific_mean_auc += row.specific->auc;
    acm_var += row.acm->standard_error * row.acm->standard_error;
    spec_var += row.specific->standard_error * row.specific->standard_error;
    ++rep.n_evaluated;
  }
  if (rep.n_evaluated > 0) {
    const double k = static_cast<double>(rep.n_evaluated);
    rep.acm_mean_auc /= k;
    rep.specific_mean_auc /= k;
    rep.acm_mean_se = std::sqrt(acm_var) / k;
    rep.specific_mean_se = std::sqrt(spec_var) / k;
  }
  return rep;
}

Table AcmVsSpecificReport::table() const {
  Table t;
  t.columns = {"diagnosis", "name",       "n_fit",       "n_test",
               "acm_auc",   "acm_se",     "specific_auc", "specific_se", "skipped"};
  for (const auto& r : rows) {
    t.add_row({std::to_string(r.diagnosis), r.name, std::to_string(r.n_fit),
               std::to_string(r.n_test), opt_auc(r.acm), opt_se(r.acm), opt_auc(r.specific),
               opt_se(r.specific), r.skipped});
  }
  t.add_row({"mean", "", std::to_string(acm_n_fit), std::to_string(n_evaluated),
             real(acm_mean_auc), real(acm_mean_se), real(specific_mean_auc),
             real(specific_mean_se), ""});
  return t;
}

OutOfDiagnosisReport run_out_of_diagnosis(const Cohort& c, const std::vector<DiagnosisId>& d_common,
                                          const HarnessConfig& config) {
  check_d_common(c, d_common);
  OutOfDiagnosisReport rep;
  std::vector<double> p_values;
  std::vector<std::size_t> p_rows;
  for (DiagnosisId d : d_common) {
    OutOfDiagnosisRow row;
    row.diagnosis = d;
    row.name = name_of(c, d);
    const Cohort subset = with_diagnosis(c, d);
    const auto s = diagnosis_split(subset, derive_seed(config.seed, 0x100 + d), row.skipped);
    if (s) {
      const Cohort rest =
          cohort::filter(c, [d](const cohort::PatientRecord& r) { return r.diagnosis != d; });
      auto [tr, va] = fit_partition(rest, derive_seed(config.seed, 0x300 + d));
      if (!has_both_classes(tr)) {
        row.skipped = "leave-out training data has a single outcome class";
      } else {
        const auto within = fit_feature_gam(s->train, s->valid, config);
        const auto out = fit_feature_gam(tr, va, config);
        const auto a = score(within, s->test);
        const auto b = score(out, subset);
        row.within = auc(a.scores, a.labels);
        row.out_of_d = auc(b.scores, b.labels);
        row.calibration = calibration_report(b.scores, b.labels, config.calibration_bins);
        double info = 0.0;
        for (double q : score(out, tr).scores) info += q * (1.0 - q);
        row.reference_se = info > 0.0 ? 1.0 / std::sqrt(info) : 0.0;
        const double se = std::hypot(row.calibration->intercept_se, row.reference_se);
        row.test_p = std::isfinite(se) && se > 0.0
                         ? std::erfc(std::abs(row.calibration->intercept) / se / std::sqrt(2.0))
                         : 1.0;
        const double combined = std::hypot(row.within->standard_error, row.out_of_d->standard_error);
        row.within_beats_out = row.within->auc - row.out_of_d->auc > 2.0 * combined;
        if (row.within_beats_out) ++rep.n_within_beats_out;
        p_values.push_back(row.test_p);
        p_rows.push_back(rep.rows.size());
      }
    }
    rep.rows.push_back(std::move(row));
  }
  const auto bh = bh_adjust(p_values, config.alpha);
  for (std::size_t k = 0; k < p_rows.size(); ++k) rep.rows[p_rows[k]].adjusted_p = bh.adjusted[k];
  for (std::size_t k : bh.rejected) {
    rep.rows[p_rows[k]].calibration_flagged = true;
    ++rep.n_flagged;
  }
  return rep;
}

Table OutOfDiagnosisReport::table() const {
  Table t;
  t.columns = {"diagnosis",       "name",         "within_auc",       "within_se",
               "out_auc",         "out_se",       "calib_intercept",  "calib_se",
               "calib_p",         "reference_se", "test_p",           "adjusted_p",
               "calib_flagged",   "within_beats_out", "skipped"};
  for (const auto& r : rows) {
    const auto& cal = r.calibration;
    t.add_row({std::to_string(r.diagnosis), r.name, opt_auc(r.within), opt_se(r.within),
               opt_auc(r.out_of_d), opt_se(r.out_of_d), cal ? real(cal->intercept) : "",
               cal ? real(cal->intercept_se) : "", cal ? real(cal->p_value) : "",
               cal ? real(r.reference_se) : "", cal ? real(r.test_p) : "",
               cal ? real(r.adjusted_p) : "", r.calibration_flagged ? "1" : "0",
               r.within_beats_out ? "1" : "0", r.skipped});
  }
  return t;
}

Table OutOfDiagnosisReport::calibration_table() const {
  Table t;
  t.columns = {"diagnosis", "bin", "mean_predicted", "observed_rate", "count"};
  for (const auto& r : rows) {
    if (!r.calibration) continue;
    for (std::size_t b = 0; b < r.calibration->bins.size(); ++b) {
      const auto& bin = r.calibration->bins[b];
      t.add_row({std::to_string(r.diagnosis), std::to_string(b), real(bin.mean_predicted),
                 real(bin.observed_rate), std::to_string(bin.count)});
    }
  }
  return t;
}

CorrelationReport run_cross_model_correlation(const Cohort& c,
                                              const std::vector<DiagnosisId>& d_common,
                                              const Cohort& heldout, const HarnessConfig& config) {
  check_d_common(c, d_common);
  const std::set<DiagnosisId> common(d_common.begin(), d_common.end());
  for (const auto& r : heldout.records) {
    if (r.diagnosis && common.contains(*r.diagnosis)) {
      throw ValidationError("held-out record " + r.id + " has a diagnosis in d_common");
    }
  }
  if (heldout.size() < 3) throw ValidationError("held-out cohort needs at least 3 records");

  CorrelationReport rep;
  rep.n_heldout = heldout.size();
  std::vector<std::array<std::vector<double>, 2>> preds;
  for (DiagnosisId d : d_common) {
    const Cohort subset = with_diagnosis(c, d);
    auto [tr, va] = fit_partition(subset, derive_seed(config.seed, 0x400 + d));
    if (tr.size() < 10 || !has_both_classes(tr)) {
      rep.skipped.push_back(std::to_string(d) + ": too few records or a single outcome class");
      continue;
    }
    std::array<std::vector<double>, 2> reps;
    for (std::size_t r = 0; r < 2; ++r) {
      Rng rng = make_rng(config.seed, 0x500 + 2 * static_cast<std::uint64_t>(d) + r);
      Cohort boot{tr.schema, {}, tr.diagnosis_vocab};
      for (std::size_t k = 0; k < tr.size(); ++k) {
        boot.records.push_back(tr.records[uniform_index(rng, tr.size())]);
      }
      const auto model = fit_feature_gam(boot, va, config);
      reps[r] = score(model, heldout).scores;
    }
    rep.diagnoses.push_back(d);
    rep.names.push_back(name_of(c, d));
    preds.push_back(std::move(reps));
  }

  auto corr = [](const std::vector<double>& a, const std::vector<double>& b) {
    try {
      return spearman_corr(a, b);
    } catch (const ValidationError&) {
      return std::numeric_limits<double>::quiet_NaN();  // a constant prediction vector
    }
  };
  const std::size_t k = preds.size();
  rep.matrix.assign(k, std::vector<double>(k, 0.0));
  double diag_sum = 0.0, off_sum = 0.0;
  std::size_t diag_n = 0, off_n = 0;
  for (std::size_t i = 0; i < k; ++i) {
    rep.matrix[i][i] = corr(preds[i][0], preds[i][1]);
    if (std::isfinite(rep.matrix[i][i])) {
      diag_sum += rep.matrix[i][i];
      ++diag_n;
    }
    for (std::size_t j = i + 1; j < k; ++j) {
      const double v = corr(preds[i][0], preds[j][0]);
      rep.matrix[i][j] = rep.matrix[j][i] = v;
      if (std::isfinite(v)) {
        off_sum += 2.0 * v;
        off_n += 2;
      }
    }
  }
  rep.mean_diagonal = diag_n ? diag_sum / static_cast<double>(diag_n)
                             : std::numeric_limits<double>::quiet_NaN();
  rep.mean_off_diagonal = off_n ? off_sum / static_cast<double>(off_n)
                                : std::numeric_limits<double>::quiet_NaN();
  return rep;
}

Table CorrelationReport::table() const {
  Table t;
  t.columns = {"row", "column", "row_name", "column_name", "spearman"};
  for (std::size_t i = 0; i < diagnoses.size(); ++i) {
    for (std::size_t j = 0; j < diagnoses.size(); ++j) {
      t.add_row({std::to_string(diagnoses[i]), std::to_string(diagnoses[j]), names[i], names[j],
                 real(matrix[i][j])});
    }
  }
  return t;
}

}  // namespace duacm::eval

#include "duacm/app/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "duacm/error.hpp"
#include "duacm/experiments.hpp"
#include "duacm/metrics.hpp"
#include "duacm/text.hpp"

namespace duacm::app {
namespace {

constexpr std::uint64_t kSplitStream = 5;
constexpr std::uint64_t kPredictStream = 6;
constexpr std::uint64_t kExperimentStream = 7;

std::string real(double v) { return format_real(v); }

std::string diagnosis_name(const ModelBundle& b, DiagnosisId d) {
  return d < b.diagnosis_vocab.size() ? b.diagnosis_vocab[d] : std::to_string(d);
}

std::vector<DiagnosisId> d_common_for(const cohort::Cohort& c, const RunConfig& config) {
  std::vector<DiagnosisId> out;
  for (const auto& e :
       cohort::diagnosis_census(c, config.census.min_patients, config.census.min_mortality)) {
    out.push_back(e.diagnosis);
  }
  if (out.empty()) {
    throw ValidationError("no diagnosis passes the census thresholds (min_patients " +
                          std::to_string(config.census.min_patients) + ", min_mortality " +
                          real(config.census.min_mortality) + ")");
  }
  return out;
}

eval::HarnessConfig harness_config(const RunConfig& config) {
  eval::HarnessConfig h;
  h.gam = config.gam;
  h.seed = derive_seed(config.seed, kExperimentStream);
  h.alpha = config.experiment.alpha;
  h.calibration_bins = config.experiment.calibration_bins;
  return h;
}

void write_table(const std::filesystem::path& dir, const std::string& name, const Table& t,
                 std::vector<std::string>& written) {
  write_file_atomically(dir / name, t.to_tsv());
  written.push_back(name);
}

void census_experiment(const cohort::Cohort& c, const RunConfig& config,
                       const std::filesystem::path& dir, std::vector<std::string>& written) {
  const auto all = cohort::diagnosis_census(c, 0, 0.0);
  std::set<DiagnosisId> common;
  for (const auto& e :
       cohort::diagnosis_census(c, config.census.min_patients, config.census.min_mortality)) {
    common.insert(e.diagnosis);
  }
  Table t;
  t.columns = {"diagnosis", "name", "count", "deaths", "mortality", "in_d_common"};
  std::size_t max_count = 0;
  for (const auto& e : all) {
    t.add_row({std::to_string(e.diagnosis), c.diagnosis_vocab[e.diagnosis], std::to_string(e.count),
               std::to_string(e.deaths), real(e.mortality), common.contains(e.diagnosis) ? "1" : "0"});
    max_count = std::max(max_count, e.count);
  }
  write_table(dir, "census.tsv", t, written);

  // Number of diagnoses having each record count (the long-tail histogram).
  const std::size_t top = config.experiment.census_max_count ? config.experiment.census_max_count
                                                             : max_count;
  std::vector<std::size_t> hist(top + 1, 0);
  for (const auto& e : all) ++hist[std::min(e.count, top)];
  Table h;
  h.columns = {"records_per_diagnosis", "n_diagnoses"};
  for (std::size_t k = 0; k <= top; ++k) {
    if (hist[k]) h.add_row({std::to_string(k), std::to_string(hist[k])});
  }
  write_table(dir, "census_histogram.tsv", h, written);
}

void du_summary_experiment(const cohort::Cohort& c, const RunConfig& config,
                           const std::optional<ModelBundle>& given,
                           const std::filesystem::path& dir, std::vector<std::string>& written) {
  cohort::Cohort target = c;
  std::optional<ModelBundle> trained;
  if (!given) {
    trained = train_bundle(c, config);
    target = select_part(c, config, SplitPart::kTest);
  }
  const ModelBundle& bundle = given ? *given : *trained;
  std::set<DiagnosisId> confusable;
  for (const auto& p : config.cohort.confusable_pairs) {
    confusable.insert(p.first);
    confusable.insert(p.second);
  }
  const auto preds = predict_cohort(bundle, target, config.predict,
                                    derive_seed(config.seed, kPredictStream));

  Table patients;
  patients.columns = {"id", "diagnosis", "confusable", "mean", "q90", "delta"};
  const std::size_t nb = std::max<std::size_t>(1, config.experiment.delta_bins);
  const double width = config.experiment.delta_max / static_cast<double>(nb);
  std::vector<std::array<std::size_t, 2>> hist(nb, {0, 0});
  std::array<std::size_t, 2> n{0, 0}, above{0, 0};
  std::array<double, 2> sum{0.0, 0.0};
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& r = target.records[i];
    const bool conf = r.diagnosis && confusable.contains(*r.diagnosis);
    const auto& p = preds[i];
    patients.add_row({p.id, r.diagnosis ? target.diagnosis_vocab[*r.diagnosis] : "",
                      conf ? "1" : "0", real(p.distribution.mean),
                      real(p.distribution.quantile(0.9)), real(p.delta)});
    const std::size_t g = conf ? 0 : 1;
    std::size_t bin = p.delta <= 0.0 ? 0 : static_cast<std::size_t>(p.delta / width);
    ++hist[std::min(bin, nb - 1)][g];
    ++n[g];
    sum[g] += p.delta;
    if (p.delta > 0.2) ++above[g];
  }
  write_table(dir, "du_patients.tsv", patients, written);

  Table h;
  h.columns = {"delta_lower", "delta_upper", "confusable_count", "other_count"};
  for (std::size_t k = 0; k < nb; ++k) {
    h.add_row({real(width * static_cast<double>(k)), real(width * static_cast<double>(k + 1)),
               std::to_string(hist[k][0]), std::to_string(hist[k][1])});
  }
  write_table(dir, "du_delta_histogram.tsv", h, written);

  Table s;
  s.columns = {"group", "n", "mean_delta", "fraction_delta_above_0.2"};
  const char* names[2] = {"confusable", "other"};
  for (std::size_t g = 0; g < 2; ++g) {
    const double nn = static_cast<double>(n[g]);
    s.add_row({names[g], std::to_string(n[g]), n[g] ? real(sum[g] / nn) : "",
               n[g] ? real(static_cast<double>(above[g]) / nn) : ""});
  }
  write_table(dir, "du_summary.tsv", s, written);
}

}  // namespace

SplitPart parse_split_part(const std::string& name) {
  if (name == "all") return SplitPart::kAll;
  if (name == "train") return SplitPart::kTrain;
  if (name == "valid") return SplitPart::kValid;
  if (name == "test") return SplitPart::kTest;
  throw ValidationError("split must be one of all, train, valid, test; got '" + name + "'");
}

cohort::CohortSplit split_for(const cohort::Cohort& c, const RunConfig& config) {
  return cohort::split(c, config.split, derive_seed(config.seed, kSplitStream));
}

cohort::Cohort select_part(const cohort::Cohort& c, const RunConfig& config, SplitPart part) {
  if (part == SplitPart::kAll) return c;
  auto s = split_for(c, config);
  switch (part) {
    case SplitPart::kTrain: return std::move(s.train);
    case SplitPart::kValid: return std::move(s.valid);
    default: return std::move(s.test);
  }
}

ModelBundle train_bundle(const cohort::Cohort& c, const RunConfig& config) {
  const auto s = split_for(c, config);
  ModelBundle b;
  b.schema = c.schema;
  b.diagnosis_vocab = c.diagnosis_vocab;
  gam::GamConfig gc = config.gam;
  gc.use_diagnosis = true;
  b.outcome_model = gam::fit_gam(s.train, s.valid, gc);
  b.diagnosis_model = diag::fit_mlp(s.train, s.valid, config.mlp);
  b.provenance.config_hash = config_hash(config);
  b.provenance.data_fingerprint = cohort_fingerprint(c);
  b.provenance.config = to_json(config);
  b.validate();
  return b;
}

std::uint64_t prediction_seed(const RunConfig& config) {
  return derive_seed(config.seed, kPredictStream);
}

std::vector<double> quantile_levels(const PredictSettings& settings) {
  std::vector<double> q = settings.quantiles;
  if (std::find(q.begin(), q.end(), 0.9) == q.end()) q.push_back(0.9);
  std::sort(q.begin(), q.end());
  return q;
}

PatientPrediction predict_patient(const ModelBundle& bundle, const cohort::PatientRecord& record,
                                  const PredictSettings& settings, std::uint64_t seed) {
  infer::PredictConfig pc;
  pc.mode = settings.mode;
  pc.n_samples = settings.n_samples;
  pc.quantiles = quantile_levels(settings);
  pc.seed = seed;
  PatientPrediction p;
  p.id = record.id;
  p.distribution =
      infer::du_predict(bundle.outcome_model, bundle.diagnosis_model, record.features, pc);
  p.explanation = infer::explain(p.distribution, settings.top_k, settings.driver_threshold);
  p.delta = infer::pessimistic_delta(p.distribution);
  return p;
}

std::vector<PatientPrediction> predict_cohort(const ModelBundle& bundle, const cohort::Cohort& c,
                                              const PredictSettings& settings,
                                              std::uint64_t base_seed) {
  if (c.n_features() != bundle.schema.size()) {
    throw SchemaError("cohort has " + std::to_string(c.n_features()) +
                      " features, the bundle expects " + std::to_string(bundle.schema.size()));
  }
  std::vector<PatientPrediction> out;
  out.reserve(c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    out.push_back(predict_patient(bundle, c.records[i], settings, derive_seed(base_seed, i)));
  }
  return out;
}

Table prediction_table(const ModelBundle& bundle, const std::vector<PatientPrediction>& preds,
                       const PredictSettings& settings) {
  const auto levels = quantile_levels(settings);
  Table t;
  t.columns = {"id", "mode", "mean"};
  for (double q : levels) t.columns.push_back("q" + real(q));
  for (const char* c : {"delta", "min_risk", "max_risk", "n_entries", "offset_fallback",
                        "top_diagnoses", "risk_drivers"}) {
    t.columns.emplace_back(c);
  }
  for (const auto& p : preds) {
    const auto& d = p.distribution;
    std::vector<std::string> row = {p.id, mode_name(d.mode), real(d.mean)};
    for (double q : levels) row.push_back(real(d.quantile(q)));
    double lo = 1.0, hi = 0.0;
    for (const auto& e : d.entries) {
      lo = std::min(lo, e.conditional_risk);
      hi = std::max(hi, e.conditional_risk);
    }
    std::string top, drivers;
    for (const auto& item : p.explanation.ranked) {
      if (!top.empty()) top += ';';
      top += diagnosis_name(bundle, item.diagnosis) + ":" + real(item.probability) + ":" +
             real(item.conditional_risk);
    }
    for (DiagnosisId dd : p.explanation.drivers) {
      if (!drivers.empty()) drivers += ';';
      drivers += diagnosis_name(bundle, dd);
    }
    row.insert(row.end(), {real(p.delta), real(lo), real(hi), std::to_string(d.entries.size()),
                           d.offset_fallback ? "1" : "0", top, drivers});
    t.add_row(std::move(row));
  }
  return t;
}

Table evaluate_bundle(const ModelBundle& bundle, const cohort::Cohort& c, const RunConfig& config) {
  const auto preds =
      predict_cohort(bundle, c, config.predict, derive_seed(config.seed, kPredictStream));
  std::vector<double> mean, q90, given_d;
  std::vector<int> y, y_given_d;
  std::vector<std::vector<double>> diag_scores;
  std::vector<DiagnosisId> diag_labels;
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& r = c.records[i];
    mean.push_back(preds[i].distribution.mean);
    q90.push_back(preds[i].distribution.quantile(0.9));
    y.push_back(r.outcome);
    if (r.diagnosis) {
      given_d.push_back(gam::predict_gam(bundle.outcome_model, r.features, *r.diagnosis).probability);
      y_given_d.push_back(r.outcome);
      diag_scores.push_back(diag::predict_diagnosis(bundle.diagnosis_model, r.features).probabilities);
      diag_labels.push_back(*r.diagnosis);
    }
  }
  Table t;
  t.columns = {"metric", "value", "standard_error"};
  t.add_row({"n_records", std::to_string(c.size()), ""});
  t.add_row({"mortality", real(c.mortality()), ""});
  auto auc_row = [&](const std::string& name, const std::vector<double>& s, const std::vector<int>& l) {
    try {
      const auto a = eval::auc(s, l);
      t.add_row({name, real(a.auc), real(a.standard_error)});
    } catch (const ValidationError&) {
      t.add_row({name, "", ""});  // single outcome class
    }
  };
  auc_row("auc_mean_risk", mean, y);
  auc_row("auc_q90", q90, y);
  auc_row("auc_outcome_given_true_diagnosis", given_d, y_given_d);
  if (!mean.empty()) {
    const auto cal = eval::calibration_report(mean, y, config.experiment.calibration_bins);
    t.add_row({"calibration_intercept_mean_risk", real(cal.intercept), real(cal.intercept_se)});
    t.add_row({"calibration_p_value_mean_risk", real(cal.p_value), ""});
  }
  const auto ova = diag::one_vs_all_auc(bundle.diagnosis_model.vocabulary, diag_scores, diag_labels);
  t.add_row({"diagnosis_macro_auc", ova.macro_auc ? real(*ova.macro_auc) : "", ""});
  t.add_row({"diagnosis_evaluable_classes", std::to_string(ova.n_evaluable), ""});
  double delta = 0.0;
  for (const auto& p : preds) delta += p.delta;
  t.add_row({"mean_pessimistic_delta", preds.empty() ? "" : real(delta / static_cast<double>(preds.size())), ""});
  return t;
}

const std::vector<std::string>& experiment_names() {
  static const std::vector<std::string> names = {"census", "acm-vs-specific", "out-of-diagnosis",
                                                 "cross-correlation", "du-summary"};
  return names;
}

std::vector<std::string> run_experiment(const std::string& name, const cohort::Cohort& c,
                                        const RunConfig& config,
                                        const std::optional<ModelBundle>& bundle,
                                        const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  std::vector<std::string> written;
  if (name == "census") {
    census_experiment(c, config, out_dir, written);
  } else if (name == "acm-vs-specific") {
    const auto rep = eval::run_acm_vs_specific(c, d_common_for(c, config), harness_config(config));
    write_table(out_dir, "acm_vs_specific.tsv", rep.table(), written);
  } else if (name == "out-of-diagnosis") {
    const auto rep = eval::run_out_of_diagnosis(c, d_common_for(c, config), harness_config(config));
    write_table(out_dir, "out_of_diagnosis.tsv", rep.table(), written);
    write_table(out_dir, "out_of_diagnosis_calibration.tsv", rep.calibration_table(), written);
  } else if (name == "cross-correlation") {
    const auto d_common = d_common_for(c, config);
    const std::set<DiagnosisId> common(d_common.begin(), d_common.end());
    const auto heldout = cohort::filter(c, [&](const cohort::PatientRecord& r) {
      return !(r.diagnosis && common.contains(*r.diagnosis));
    });
    const auto rep = eval::run_cross_model_correlation(c, d_common, heldout, harness_config(config));
    write_table(out_dir, "cross_correlation.tsv", rep.table(), written);
    Table s;
    s.columns = {"mean_diagonal", "mean_off_diagonal", "n_models", "n_heldout"};
    s.add_row({real(rep.mean_diagonal), real(rep.mean_off_diagonal),
               std::to_string(rep.diagnoses.size()), std::to_string(rep.n_heldout)});
    write_table(out_dir, "cross_correlation_summary.tsv", s, written);
  } else if (name == "du-summary") {
    du_summary_experiment(c, config, bundle, out_dir, written);
  } else {
    std::string list;
    for (const auto& n : experiment_names()) list += (list.empty() ? "" : ", ") + n;
    throw ValidationError("unknown experiment '" + name + "' (expected one of " + list + ")");
  }
  return written;
}

}  // namespace duacm::app

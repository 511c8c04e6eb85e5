#include <algorithm>

#include "doctest.h"
#include "app_fixtures.hpp"
#include "helpers.hpp"

#include "duacm/error.hpp"
#include "duacm/text.hpp"

using namespace duacm;
using namespace duacm::app;

namespace {

double cell(const Table& t, std::size_t row, const std::string& column) {
  const auto it = std::find(t.columns.begin(), t.columns.end(), column);
  REQUIRE(it != t.columns.end());
  const auto v = parse_real(t.rows[row][static_cast<std::size_t>(it - t.columns.begin())]);
  REQUIRE(v.has_value());
  return *v;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("split parts partition the cohort and parse by name") {
  const auto& demo = testing::trained_demo();
  const auto s = split_for(demo.cohort, demo.config);
  CHECK(s.train.size() + s.valid.size() + s.test.size() == demo.cohort.size());
  CHECK(select_part(demo.cohort, demo.config, SplitPart::kTest) == s.test);
  CHECK(select_part(demo.cohort, demo.config, SplitPart::kAll) == demo.cohort);
  CHECK(parse_split_part("valid") == SplitPart::kValid);
  CHECK_THROWS_AS(parse_split_part("holdout"), ValidationError);
}

TEST_CASE("predict on the test split: one row per patient with valid summaries") {
  const auto& demo = testing::trained_demo();
  const auto test = select_part(demo.cohort, demo.config, SplitPart::kTest);
  const auto preds = predict_cohort(demo.bundle, test, demo.config.predict, prediction_seed(demo.config));
  REQUIRE(preds.size() == test.size());
  const auto table = prediction_table(demo.bundle, preds, demo.config.predict);
  CHECK(table.rows.size() == test.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const auto& d = preds[i].distribution;
    CHECK(preds[i].id == test.records[i].id);
    CHECK(d.mean >= 0.0);
    CHECK(d.mean <= 1.0);
    double lo = 1.0;
    for (const auto& e : d.entries) lo = std::min(lo, e.conditional_risk);
    CHECK(d.quantile(0.9) >= lo);
    CHECK(d.n_samples == 150);
    CHECK(preds[i].delta == doctest::Approx(d.quantile(0.9) - d.mean));
    CHECK(cell(table, i, "mean") == d.mean);
  }
  // Fixed seed, fixed output.
  const auto again = predict_cohort(demo.bundle, test, demo.config.predict, prediction_seed(demo.config));
  CHECK(prediction_table(demo.bundle, again, demo.config.predict).to_tsv() == table.to_tsv());
}

TEST_CASE("quantile levels always include 0.9") {
  PredictSettings s;
  s.quantiles = {0.75, 0.25};
  CHECK(quantile_levels(s) == std::vector<double>{0.25, 0.75, 0.9});
  s.quantiles = {0.9, 0.5};
  CHECK(quantile_levels(s) == std::vector<double>{0.5, 0.9});
}

TEST_CASE("evaluate reports AUCs, calibration and diagnosis-model quality") {
  const auto& demo = testing::trained_demo();
  const auto test = select_part(demo.cohort, demo.config, SplitPart::kTest);
  const auto t = evaluate_bundle(demo.bundle, test, demo.config);
  REQUIRE(t.columns == std::vector<std::string>{"metric", "value", "standard_error"});
  std::vector<std::string> metrics;
  for (const auto& r : t.rows) metrics.push_back(r[0]);
  for (const char* m : {"n_records", "mortality", "diagnosis_macro_auc", "mean_pessimistic_delta"}) {
    CHECK(std::find(metrics.begin(), metrics.end(), m) != metrics.end());
  }
  CHECK(cell(t, 0, "value") == static_cast<double>(test.size()));
}

TEST_CASE("du-summary on the confusable-pair cohort: large deltas concentrate in the pair") {
  // Diagnoses sit in contiguous latent regions that the features expose
  // almost directly, so only the pair (0, 1) is hard to tell apart.
  auto j = testing::fast_config_json(3);
  j["cohort"] = {{"n_patients", 6000},
                 {"n_diagnoses", 6},
                 {"zipf_exponent", 0.5},
                 {"diagnosis_noise_sd", 0.0},
                 {"feature_noise_sd", 0.05},
                 {"feature_map", "identity"},
                 {"confusable_pairs", {{{"first", 0}, {"second", 1}, {"separation", 0.0}}}},
                 {"beta_true", {{"0", -2.0}, {"1", 2.0}}}};
  j["mlp"] = {{"learning_rates", {0.1}}, {"weight_decays", {0.0}}, {"epochs", 40}};
  const auto config = config_from_json(j);
  const auto c = cohort::generate_cohort(config.cohort);
  const auto dir = testing::scratch_dir("du_summary");
  const auto files = run_experiment("du-summary", c, config, std::nullopt, dir);
  CHECK(files == std::vector<std::string>{"du_patients.tsv", "du_delta_histogram.tsv", "du_summary.tsv"});
  const auto summary = Table::from_tsv(read_file(dir / "du_summary.tsv"));
  REQUIRE(summary.rows.size() == 2);
  CHECK(summary.rows[0][0] == "confusable");
  const double confusable = cell(summary, 0, "fraction_delta_above_0.2");
  const double other = cell(summary, 1, "fraction_delta_above_0.2");
  MESSAGE("delta > 0.2: confusable " << confusable << ", other " << other);
  // Patients on the boundary of a region next to the pair keep a little
  // learned diagnosis uncertainty, so "elsewhere" is small but not zero.
  CHECK(confusable > 0.2);
  CHECK(other < 0.05);
  CHECK(confusable > 10.0 * other);

  const auto hist = Table::from_tsv(read_file(dir / "du_delta_histogram.tsv"));
  CHECK(hist.rows.size() == config.experiment.delta_bins);
  std::size_t total = 0;
  for (const auto& r : hist.rows) total += std::stoul(r[2]) + std::stoul(r[3]);
  CHECK(total == select_part(c, config, SplitPart::kTest).size());
}

TEST_CASE("census experiment and unknown experiment names") {
  const auto& demo = testing::trained_demo();
  const auto dir = testing::scratch_dir("census_exp");
  const auto files = run_experiment("census", demo.cohort, demo.config, std::nullopt, dir);
  CHECK(files == std::vector<std::string>{"census.tsv", "census_histogram.tsv"});
  CHECK_FALSE(Table::from_tsv(read_file(dir / "census.tsv")).rows.empty());
  CHECK_THROWS_AS(run_experiment("nonsense", demo.cohort, demo.config, std::nullopt, dir),
                  ValidationError);
  CHECK(experiment_names().size() == 5);
}

}  // TEST_SUITE

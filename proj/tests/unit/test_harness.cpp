#include <cmath>

#include "doctest.h"
#include "helpers.hpp"

#include "duacm/error.hpp"
#include "duacm/experiments.hpp"

using namespace duacm;
using namespace duacm::eval;

namespace {

HarnessConfig light_config(std::uint64_t seed = 3) {
  HarnessConfig h;
  h.gam.inner_bags = 4;
  h.gam.outer_bags = 1;
  h.gam.learning_rate = 0.1;
  h.gam.max_rounds = 300;
  h.gam.patience = 20;
  h.gam.max_bins = 32;
  h.seed = seed;
  return h;
}

// Shared risk weights, and diagnosis noise so large that the diagnosis is
// effectively independent of the latent state: every diagnosis sees the same
// feature distribution and the same risk mechanism.
cohort::CohortSpec transferable_spec(std::size_t n, std::uint64_t seed) {
  cohort::CohortSpec s;
  s.n_patients = n;
  s.n_features = 4;
  s.latent_dim = 4;
  s.n_diagnoses = 6;
  s.zipf_exponent = 0.5;
  s.risk_weights = {1.2, -0.9, 0.7, 0.5};
  s.outcome_intercept = -1.2;
  s.diagnosis_noise_sd = 1000.0;
  s.seed = seed;
  return s;
}

}  // namespace

TEST_SUITE("harness") {

TEST_CASE("acm vs specific on a transferable cohort: the ACM is at least as good on average") {
  const auto c = cohort::generate_cohort(transferable_spec(12000, 1));
  const auto report = run_acm_vs_specific(c, {0, 1, 2, 3, 4, 5}, light_config());
  REQUIRE(report.n_evaluated == 6);
  CHECK(report.acm_mean_auc >= report.specific_mean_auc);
  CHECK(report.acm_mean_se > 0.0);
  for (const auto& row : report.rows) {
    CHECK(row.skipped.empty());
    CHECK(row.acm->n_pos + row.acm->n_neg == row.n_test);
  }
  CHECK(report.acm_n_fit > report.rows.front().n_fit);
  const auto t = report.table();
  CHECK(t.rows.size() >= 6);
}

TEST_CASE("acm vs specific with a single diagnosis: AUCs agree within two SEs") {
  auto spec = transferable_spec(3000, 2);
  spec.n_diagnoses = 1;
  const auto c = cohort::generate_cohort(spec);
  const auto report = run_acm_vs_specific(c, {0}, light_config());
  REQUIRE(report.n_evaluated == 1);
  const auto& row = report.rows[0];
  CHECK(report.acm_n_fit == row.n_fit);
  const double se = std::hypot(row.acm->standard_error, row.specific->standard_error);
  CHECK(std::abs(row.acm->auc - row.specific->auc) <= 2.0 * se);
}

TEST_CASE("acm vs specific skips a diagnosis too small to split") {
  auto c = cohort::generate_cohort(transferable_spec(3000, 4));
  // Keep only two records of diagnosis 5.
  std::size_t kept = 0;
  c = cohort::filter(c, [&](const cohort::PatientRecord& r) { return *r.diagnosis != 5 || kept++ < 2; });
  const auto report = run_acm_vs_specific(c, {0, 5}, light_config());
  CHECK(report.rows[0].skipped.empty());
  CHECK_FALSE(report.rows[1].skipped.empty());
  CHECK(report.n_evaluated == 1);
  CHECK_THROWS_AS(run_acm_vs_specific(c, {}, light_config()), ValidationError);
}

TEST_CASE("out of diagnosis on a transferable cohort: no diagnosis where the within-d model wins") {
  const auto c = cohort::generate_cohort(transferable_spec(10000, 5));
  const auto report = run_out_of_diagnosis(c, {0, 1, 2, 3, 4, 5}, light_config());
  CHECK(report.n_within_beats_out == 0);
  for (const auto& row : report.rows) {
    REQUIRE(row.calibration);
    CHECK(row.test_p >= row.calibration->p_value);
    CHECK(row.adjusted_p >= row.test_p);
    CHECK(row.reference_se > 0.0);
  }
  CHECK(report.calibration_table().rows.size() == 6 * 10);
}

TEST_CASE("out of diagnosis: a uniformly riskier diagnosis is flagged with a positive intercept") {
  auto spec = transferable_spec(10000, 6);
  spec.beta_true = {{2, 2.0}};
  const auto c = cohort::generate_cohort(spec);
  const auto report = run_out_of_diagnosis(c, {0, 1, 2, 3, 4, 5}, light_config());
  const auto& row = report.rows[2];
  REQUIRE(row.diagnosis == 2);
  CHECK(row.calibration_flagged);
  CHECK(row.calibration->intercept > 0.0);
  CHECK(report.n_flagged >= 1);
}

TEST_CASE("out of diagnosis with zero offset spread: no BH rejections in at least 95% of seeds") {
  int clean = 0;
  const int seeds = 20;
  for (int k = 0; k < seeds; ++k) {
    const auto c = cohort::generate_cohort(transferable_spec(10000, 100 + static_cast<std::uint64_t>(k)));
    auto config = light_config(static_cast<std::uint64_t>(k));
    config.gam.inner_bags = 8;
    config.gam.outer_bags = 2;
    config.gam.learning_rate = 0.05;
    config.gam.patience = 50;
    clean += run_out_of_diagnosis(c, {0, 1, 2, 3, 4, 5}, config).n_flagged == 0;
  }
  CHECK(clean >= 19);
}

TEST_CASE("cross-model correlation: duplicated training data behaves like a bootstrap replicate") {
  auto spec = transferable_spec(8000, 7);
  spec.n_diagnoses = 4;
  const auto base = cohort::generate_cohort(spec);
  // Diagnosis 1 becomes an exact copy of diagnosis 0's records.
  auto c = cohort::filter(base, [](const cohort::PatientRecord& r) { return *r.diagnosis != 1; });
  for (const auto& r : base.records) {
    if (*r.diagnosis != 0) continue;
    auto copy = r;
    copy.id = r.id + "_dup";
    copy.diagnosis = 1;
    c.records.push_back(copy);
  }
  const auto heldout = cohort::filter(c, [](const cohort::PatientRecord& r) { return *r.diagnosis >= 2; });
  // The spread of a correlation between two bootstrap fits comes from the
  // refitting, so the SE is estimated from repeated runs with fresh seeds.
  std::vector<double> diag, off;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto report = run_cross_model_correlation(c, {0, 1}, heldout, light_config(seed));
    REQUIRE(report.matrix.size() == 2);
    diag.push_back(report.matrix[0][0]);
    diag.push_back(report.matrix[1][1]);
    off.push_back(report.matrix[0][1]);
  }
  auto mean = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  const double md = mean(diag);
  double var = 0.0;
  for (double x : diag) var += (x - md) * (x - md);
  var /= static_cast<double>(diag.size() - 1);
  const double se = std::sqrt(var / static_cast<double>(diag.size()) + var / static_cast<double>(off.size()));
  CHECK(var > 0.0);
  CHECK(std::abs(mean(off) - md) <= 2.0 * se);
}

TEST_CASE("cross-model correlation on a transferable cohort: diagonal above off-diagonal above zero") {
  const auto c = cohort::generate_cohort(transferable_spec(12000, 8));
  const auto heldout = cohort::filter(c, [](const cohort::PatientRecord& r) { return *r.diagnosis >= 4; });
  const auto report = run_cross_model_correlation(c, {0, 1, 2, 3}, heldout, light_config());
  REQUIRE(report.matrix.size() == 4);
  CHECK(report.mean_diagonal > report.mean_off_diagonal);
  CHECK(report.mean_off_diagonal > 0.0);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t j = 0; j < 4; ++j) {
      if (i != j) CHECK(std::abs(report.matrix[i][j] - report.matrix[j][i]) < 1e-12);
    }
  }
  // The held-out set must not contain d_common patients.
  CHECK_THROWS_AS(run_cross_model_correlation(c, {0, 1, 2, 3}, c, light_config()), ValidationError);
}

TEST_CASE("harness tables are byte-identical across runs") {
  const auto c = cohort::generate_cohort(transferable_spec(4000, 9));
  const std::vector<DiagnosisId> d = {0, 1, 2};
  const auto heldout = cohort::filter(c, [](const cohort::PatientRecord& r) { return *r.diagnosis >= 3; });
  CHECK(run_acm_vs_specific(c, d, light_config()).table().to_tsv() ==
        run_acm_vs_specific(c, d, light_config()).table().to_tsv());
  const auto a = run_out_of_diagnosis(c, d, light_config());
  const auto b = run_out_of_diagnosis(c, d, light_config());
  CHECK(a.table().to_tsv() == b.table().to_tsv());
  CHECK(a.calibration_table().to_tsv() == b.calibration_table().to_tsv());
  CHECK(run_cross_model_correlation(c, d, heldout, light_config()).table().to_tsv() ==
        run_cross_model_correlation(c, d, heldout, light_config()).table().to_tsv());
}

}  // TEST_SUITE

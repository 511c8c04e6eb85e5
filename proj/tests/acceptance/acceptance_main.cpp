// Acceptance suite: each criterion prints one PASS/FAIL line with its
// measurement, elapsed time and time limit. Pass criterion names (or
// substrings) as arguments to run a subset.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include "httplib.h"
#include "json.hpp"

#include "duacm/app/bundle.hpp"
#include "duacm/app/config.hpp"
#include "duacm/app/pipeline.hpp"
#include "duacm/cohort.hpp"
#include "duacm/cohort_io.hpp"
#include "duacm/diagmodel.hpp"
#include "duacm/duacm.hpp"
#include "duacm/error.hpp"
#include "duacm/experiments.hpp"
#include "duacm/gam.hpp"
#include "duacm/linmod.hpp"
#include "duacm/metrics.hpp"
#include "duacm/random.hpp"
#include "duacm/text.hpp"

extern char** environ;

namespace {

using namespace duacm;
using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  std::string name;
  double limit_seconds;  // <= 0: no limit
  std::function<Outcome()> run;
  bool uses_shared = false;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// A bundle shared by the inference criteria: the demo cohort with a reduced
// diagnosis-model grid. Built once, outside the timed sections.
struct Shared {
  app::RunConfig config;
  cohort::Cohort cohort;
  cohort::Cohort test;
  app::ModelBundle bundle;
  double setup_seconds = 0.0;
};

const Shared& shared() {
  static const Shared s = [] {
    const auto t0 = std::chrono::steady_clock::now();
    Shared out;
    json j;
    j["seed"] = 11;
    j["cohort"] = {{"n_patients", 5000}};
    j["mlp"] = {{"learning_rates", {0.03}}, {"weight_decays", {1e-4}}, {"epochs", 60}};
    out.config = app::config_from_json(j);
    out.cohort = cohort::generate_cohort(out.config.cohort);
    out.test = app::select_part(out.cohort, out.config, app::SplitPart::kTest);
    out.bundle = app::train_bundle(out.cohort, out.config);
    out.setup_seconds = seconds_since(t0);
    std::cout << "  (shared bundle: " << out.cohort.size() << " patients, " << out.test.size()
              << " in the test split, trained in " << fmt(out.setup_seconds, 3) << " s)\n";
    return out;
  }();
  return s;
}

// The first 1000 test-split patients of the shared cohort.
std::vector<const cohort::PatientRecord*> thousand_patients() {
  const auto& s = shared();
  std::vector<const cohort::PatientRecord*> out;
  for (const auto& r : s.test.records) {
    if (out.size() == 1000) break;
    out.push_back(&r);
  }
  return out;
}

Outcome factorization() {
  const auto& s = shared();
  const auto patients = thousand_patients();
  infer::PredictConfig exact;
  exact.mode = infer::Mode::kExact;
  double worst = 0.0;
  for (const auto* r : patients) {
    const auto dist = infer::du_predict(s.bundle.outcome_model, s.bundle.diagnosis_model, r->features, exact);
    const auto post = diag::predict_diagnosis(s.bundle.diagnosis_model, r->features);
    double sum = 0.0;
    for (std::size_t k = 0; k < post.diagnoses.size(); ++k) {
      sum += gam::predict_gam(s.bundle.outcome_model, r->features, post.diagnoses[k]).probability *
             post.probabilities[k];
    }
    worst = std::max(worst, std::abs(dist.mean - sum));
  }
  return {patients.size() == 1000 && worst <= 1e-12,
          std::to_string(patients.size()) + " patients, max |mean - sum| = " + fmt(worst, 3)};
}

Outcome sampled_vs_exact() {
  const auto& s = shared();
  const auto patients = thousand_patients();
  std::size_t within = 0;
  for (std::size_t i = 0; i < patients.size(); ++i) {
    infer::PredictConfig exact;
    exact.mode = infer::Mode::kExact;
    infer::PredictConfig sampled;
    sampled.mode = infer::Mode::kSampled;
    sampled.n_samples = 150;
    sampled.seed = 1000 + i;
    const auto& x = patients[i]->features;
    const auto e = infer::du_predict(s.bundle.outcome_model, s.bundle.diagnosis_model, x, exact);
    const auto m = infer::du_predict(s.bundle.outcome_model, s.bundle.diagnosis_model, x, sampled);
    double var = 0.0;
    for (const auto& entry : e.entries) var += entry.weight * std::pow(entry.conditional_risk - e.mean, 2);
    within += std::abs(m.mean - e.mean) <= 4.0 * std::sqrt(var) / std::sqrt(150.0);
  }
  const double frac = static_cast<double>(within) / static_cast<double>(patients.size());
  return {patients.size() == 1000 && frac >= 0.99,
          "within 4 SD/sqrt(150) for " + fmt(100.0 * frac) + "% of " + std::to_string(patients.size())};
}

Outcome averaging_failure() {
  // Pair (0, 2) with separation 0; Zipf(1.5) over 8 diagnoses gives the
  // risky member a marginal prior of 0.0999.
  json j;
  j["seed"] = 7;
  j["cohort"] = {{"n_patients", 20000},
                 {"n_diagnoses", 8},
                 {"zipf_exponent", 1.5},
                 {"diagnosis_noise_sd", 0.05},
                 {"confusable_pairs", {{{"first", 0}, {"second", 2}, {"separation", 0.0}}}},
                 {"beta_true", {{"0", -2.0}, {"2", 2.0}}}};
  j["mlp"] = {{"learning_rates", {0.03}}, {"weight_decays", {1e-4}}};
  const auto config = app::config_from_json(j);
  const DiagnosisId risky = 2;
  const cohort::GenerativeModel truth(config.cohort);
  const auto c = cohort::generate_cohort(config.cohort);
  const auto bundle = app::train_bundle(c, config);
  const auto test = app::select_part(c, config, app::SplitPart::kTest);

  double underestimate = 0.0;
  std::size_t n = 0, q90_hits = 0, q90_true_hits = 0;
  const auto preds = app::predict_cohort(bundle, test, config.predict, app::prediction_seed(config));
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto& r = test.records[i];
    if (*r.diagnosis != risky) continue;
    const auto& dist = preds[i].distribution;
    const double true_risk = truth.true_risk(r.latent_state, risky);
    const double model_risk = gam::predict_gam(bundle.outcome_model, r.features, risky).probability;
    underestimate += true_risk - dist.mean;
    q90_hits += std::abs(dist.quantile(0.9) - model_risk) <= 0.05;
    q90_true_hits += std::abs(dist.quantile(0.9) - true_risk) <= 0.05;
    ++n;
  }
  if (n == 0) return {false, "no risky patients in the test split"};
  underestimate /= static_cast<double>(n);
  const double hit = static_cast<double>(q90_hits) / static_cast<double>(n);
  const double true_hit = static_cast<double>(q90_true_hits) / static_cast<double>(n);
  return {underestimate > 0.15 && hit >= 0.90,
          std::to_string(n) + " risky patients, mean underestimate " + fmt(underestimate) +
              ", Q90 within 0.05 of the risky conditional risk for " + fmt(100.0 * hit) +
              "% (of the generator's true risk: " + fmt(100.0 * true_hit) + "%)"};
}

Outcome rule_out_correctness() {
  const auto& s = shared();
  infer::SessionConfig sc;
  sc.predict.mode = infer::Mode::kExact;
  Rng rng(4242);
  std::size_t confirms = 0, rule_outs = 0, collapse_failures = 0, q90_increases = 0;
  const auto& vocab = s.bundle.diagnosis_model.vocabulary;
  for (std::size_t script = 0; script < 10000; ++script) {
    const auto& r = s.test.records[script % s.test.size()];
    infer::RuleOutSession session("a" + std::to_string(script), s.bundle.outcome_model,
                                  s.bundle.diagnosis_model, r.features, sc);
    const std::size_t steps = 1 + uniform_index(rng, 8);
    for (std::size_t step = 0; step < steps; ++step) {
      const double u = uniform01(rng);
      try {
        if (u < 0.5 && !session.confirmed()) {
          // Rule out the highest-risk diagnosis still carrying weight.
          const auto& cur = session.current();
          if (cur.entries.size() < 2) continue;
          const auto top = std::max_element(cur.entries.begin(), cur.entries.end(),
                                            [](const auto& a, const auto& b) {
                                              return a.conditional_risk < b.conditional_risk;
                                            });
          const double before = cur.quantile(0.9);
          const auto after = session.rule_out({top->diagnosis});
          ++rule_outs;
          q90_increases += after.quantile(0.9) > before;
        } else if (u < 0.7) {
          std::set<DiagnosisId> ids;
          const std::size_t k = 1 + uniform_index(rng, 3);
          for (std::size_t m = 0; m < k; ++m) ids.insert(vocab[uniform_index(rng, vocab.size())]);
          session.rule_out(ids);
        } else if (u < 0.9) {
          const DiagnosisId d = vocab[uniform_index(rng, vocab.size())];
          const auto dist = session.confirm(d);
          ++confirms;
          const double risk = gam::predict_gam(s.bundle.outcome_model, r.features, d).probability;
          collapse_failures += !(dist.mean == risk && dist.quantile(0.9) == risk && dist.entries.size() == 1);
        } else {
          session.reset();
        }
      } catch (const ConflictError&) {
        // Illegal steps are part of the scripts; the state stays put.
      }
    }
  }
  return {confirms > 0 && rule_outs > 0 && collapse_failures == 0 && q90_increases == 0,
          "10000 scripts: " + std::to_string(confirms) + " confirms (" + std::to_string(collapse_failures) +
              " not collapsed), " + std::to_string(rule_outs) + " max-risk rule-outs (" +
              std::to_string(q90_increases) + " raised Q90)"};
}

Outcome model_quality() {
  cohort::CohortSpec spec;
  spec.n_patients = 20000;
  spec.n_features = 4;
  spec.latent_dim = 4;
  spec.n_diagnoses = 1;
  spec.risk_weights = {2.0, -1.6, 1.2, 1.0};
  spec.outcome_intercept = -2.0;
  spec.nonlinearity = 4.0;
  spec.seed = 7;
  const auto c = cohort::generate_cohort(spec);
  const auto parts = cohort::split(c, {0.6, 0.2, 0.2}, 7);
  const auto g = gam::fit_gam(parts.train, parts.valid);
  const auto l = linmod::fit_logistic(parts.train);
  std::vector<double> sg, sl;
  std::vector<int> y;
  for (const auto& r : parts.test.records) {
    sg.push_back(gam::predict_gam(g, r.features).probability);
    sl.push_back(linmod::predict_logistic(l, r.features));
    y.push_back(r.outcome);
  }
  const auto ag = eval::auc(sg, y);
  const auto al = eval::auc(sl, y);
  const double se = std::hypot(ag.standard_error, al.standard_error);
  return {ag.auc - al.auc > 2.0 * se, "GAM AUC " + fmt(ag.auc) + " vs logistic " + fmt(al.auc) +
                                          ", difference " + fmt(ag.auc - al.auc) + " vs 2 SE " +
                                          fmt(2.0 * se)};
}

// Diagnosis independent of the latent state and one shared risk mechanism.
cohort::CohortSpec transferable_spec(std::uint64_t seed) {
  cohort::CohortSpec s;
  s.n_patients = 10000;
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

eval::HarnessConfig harness_config(std::uint64_t seed) {
  eval::HarnessConfig h;
  h.seed = seed;
  return h;
}

Outcome out_of_diagnosis() {
  const std::vector<DiagnosisId> d_common = {0, 1, 2, 3, 4, 5};
  const auto base = eval::run_out_of_diagnosis(cohort::generate_cohort(transferable_spec(1)), d_common,
                                               harness_config(1));
  // Alternate the sign of the shift so both directions are checked.
  const DiagnosisId shifted = 2;
  std::size_t correct = 0;
  for (std::uint64_t k = 0; k < 20; ++k) {
    auto spec = transferable_spec(100 + k);
    const double beta = k % 2 == 0 ? 1.0 : -1.0;
    spec.beta_true = {{shifted, beta}};
    const auto report = eval::run_out_of_diagnosis(cohort::generate_cohort(spec), d_common, harness_config(k));
    const auto& row = report.rows[shifted];
    correct += row.calibration_flagged && row.calibration && (row.calibration->intercept > 0.0) == (beta > 0.0);
  }
  return {base.n_within_beats_out == 0 && correct >= 19,
          "transferable: " + std::to_string(base.n_within_beats_out) +
              " diagnoses where within-d wins; shifted diagnosis flagged with the right sign in " +
              std::to_string(correct) + "/20 seeds"};
}

double pair_count_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (!y[i]) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j]) continue;
      num += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      den += 1.0;
    }
  }
  return num / den;
}

std::vector<double> brute_mid_ranks(const std::vector<double>& v) {
  std::vector<double> r(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    double below = 0.0, equal = 0.0;
    for (double w : v) {
      below += w < v[i];
      equal += w == v[i];
    }
    r[i] = below + (equal + 1.0) / 2.0;
  }
  return r;
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(a.begin(), a.end(), 0.0) / n;
  const double mb = std::accumulate(b.begin(), b.end(), 0.0) / n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

// Largest k with p_(k) <= k alpha / m, by direct search.
std::vector<std::size_t> brute_bh(const std::vector<double>& p, double alpha) {
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return p[a] < p[b]; });
  std::size_t k = 0;
  for (std::size_t j = m; j >= 1 && k == 0; --j) {
    if (p[order[j - 1]] <= static_cast<double>(j) * alpha / static_cast<double>(m)) k = j;
  }
  std::vector<std::size_t> out(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k));
  std::sort(out.begin(), out.end());
  return out;
}

// Every multiset of 10 values from `levels`, in nondecreasing order.
void for_each_multiset(const std::vector<double>& levels, std::vector<double>& cur, std::size_t from,
                       const std::function<void(const std::vector<double>&)>& f) {
  if (cur.size() == 10) {
    f(cur);
    return;
  }
  for (std::size_t i = from; i < levels.size(); ++i) {
    cur.push_back(levels[i]);
    for_each_multiset(levels, cur, i, f);
    cur.pop_back();
  }
}

Outcome metric_oracles() {
  Rng rng(77);
  std::vector<std::string> failures;

  double worst_auc = 0.0;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> s(200);
    std::vector<int> y(200);
    for (std::size_t i = 0; i < 200; ++i) {
      y[i] = uniform01(rng) < 0.35;
      s[i] = std::round((uniform01(rng) + 0.3 * y[i]) * 50.0) / 50.0;
    }
    y[0] = 1;
    y[1] = 0;
    worst_auc = std::max(worst_auc, std::abs(eval::auc(s, y).auc - pair_count_auc(s, y)));
  }
  if (worst_auc > 1e-12) failures.push_back("auc");

  // Hanley-McNeil SE against a class-stratified bootstrap on several instances.
  std::normal_distribution<double> g(0.0, 1.0);
  double worst_se = 0.0;
  const std::vector<std::pair<int, double>> designs = {{80, 1.0}, {50, 0.5}, {120, 1.5}, {100, 0.8}};
  for (const auto& [n_pos, shift] : designs) {
    const int n = 250;
    std::vector<double> s;
    std::vector<int> y;
    for (int i = 0; i < n; ++i) {
      y.push_back(i < n_pos);
      s.push_back(g(rng) + (i < n_pos ? shift : 0.0));
    }
    const auto r = eval::auc(s, y);
    std::vector<double> boots;
    for (int b = 0; b < 2000; ++b) {
      std::vector<double> bs;
      std::vector<int> by;
      for (int i = 0; i < n; ++i) {
        const std::size_t j = i < n_pos ? uniform_index(rng, static_cast<std::size_t>(n_pos))
                                        : static_cast<std::size_t>(n_pos) + uniform_index(rng, static_cast<std::size_t>(n - n_pos));
        bs.push_back(s[j]);
        by.push_back(y[j]);
      }
      boots.push_back(eval::auc(bs, by).auc);
    }
    const double m = std::accumulate(boots.begin(), boots.end(), 0.0) / static_cast<double>(boots.size());
    double v = 0.0;
    for (double a : boots) v += (a - m) * (a - m);
    const double sd = std::sqrt(v / static_cast<double>(boots.size() - 1));
    worst_se = std::max(worst_se, std::abs(r.standard_error - sd) / sd);
  }
  if (worst_se >= 0.15) failures.push_back("auc_se");

  // BH: all multisets of 10 p-values over a grid, at several levels.
  const std::vector<double> levels = {0.0005, 0.004, 0.01, 0.02, 0.03, 0.045, 0.08, 0.3};
  const std::vector<double> alphas = {0.01, 0.05, 0.1};
  std::size_t bh_instances = 0, bh_mismatches = 0;
  std::vector<double> cur;
  for_each_multiset(levels, cur, 0, [&](const std::vector<double>& sorted) {
    // Shuffle so the input order is arbitrary.
    std::vector<double> p = sorted;
    std::shuffle(p.begin(), p.end(), rng);
    for (double a : alphas) {
      ++bh_instances;
      bh_mismatches += eval::bh_adjust(p, a).rejected != brute_bh(p, a);
    }
  });
  if (bh_mismatches > 0) failures.push_back("bh");

  double worst_rho = 0.0;
  for (int t = 0; t < 100; ++t) {
    std::vector<double> a(100), b(100);
    for (std::size_t i = 0; i < 100; ++i) {
      a[i] = static_cast<double>(uniform_index(rng, 15));
      b[i] = a[i] * 0.5 + static_cast<double>(uniform_index(rng, 10));
    }
    worst_rho = std::max(worst_rho, std::abs(eval::spearman_corr(a, b) -
                                             pearson(brute_mid_ranks(a), brute_mid_ranks(b))));
  }
  if (worst_rho > 1e-12) failures.push_back("spearman");

  std::string detail = "auc max err " + fmt(worst_auc, 3) + ", SE max rel dev " + fmt(worst_se, 3) +
                       ", BH " + std::to_string(bh_mismatches) + "/" + std::to_string(bh_instances) +
                       " mismatches, spearman max err " + fmt(worst_rho, 3);
  return {failures.empty(), detail};
}

Outcome gradient_check() {
  auto m = diag::init_model(5, {0, 1, 2}, {7, 6}, 17);
  Rng rng(18);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> z;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 12; ++i) {
    for (int j = 0; j < 5; ++j) z.push_back(g(rng));
    labels.push_back(uniform_index(rng, 3));
  }
  auto params = diag::flatten_parameters(m);
  for (double& v : params) v += 0.1 * (uniform01(rng) - 0.5);
  diag::assign_parameters(m, params);
  const double wd = 0.01;
  std::vector<double> grad;
  diag::loss_and_gradient(m, z, labels, wd, &grad);
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto plus = params, minus = params;
    plus[i] += h;
    minus[i] -= h;
    auto mp = m, mm = m;
    diag::assign_parameters(mp, plus);
    diag::assign_parameters(mm, minus);
    const double numeric = (diag::loss_and_gradient(mp, z, labels, wd, nullptr) -
                            diag::loss_and_gradient(mm, z, labels, wd, nullptr)) / (2 * h);
    const double scale = std::max(1e-3, std::abs(numeric) + std::abs(grad[i]));
    worst = std::max(worst, std::abs(numeric - grad[i]) / scale);
  }
  return {grad.size() == params.size() && worst < 1e-4,
          std::to_string(params.size()) + " parameters, max relative error " + fmt(worst, 3)};
}

std::string quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return q + "'";
}

int run_cli(const std::vector<std::string>& args) {
  std::string cmd = quote(DUACM_CLI_PATH);
  for (const auto& a : args) cmd += " " + quote(a);
  cmd += " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

// Starts `serve`, fetches a fixed set of endpoints and returns the bodies.
std::optional<std::string> serve_transcript(const fs::path& bundle, const fs::path& cohort_path,
                                            const fs::path& config) {
  int out_pipe[2];
  if (pipe(out_pipe) != 0) return std::nullopt;
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  posix_spawn_file_actions_adddup2(&actions, out_pipe[1], STDOUT_FILENO);
  posix_spawn_file_actions_addclose(&actions, out_pipe[0]);
  std::vector<std::string> args = {DUACM_CLI_PATH, "serve", "--config", config.string(),
                                   "--bundle", bundle.string(), "--cohort", cohort_path.string(),
                                   "--host", "127.0.0.1", "--port", "0"};
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  argv.push_back(nullptr);
  pid_t pid = 0;
  const int rc = posix_spawn(&pid, DUACM_CLI_PATH, &actions, nullptr, argv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  close(out_pipe[1]);
  if (rc != 0) {
    close(out_pipe[0]);
    return std::nullopt;
  }
  std::string line;
  char ch = 0;
  while (read(out_pipe[0], &ch, 1) == 1 && ch != '\n') line += ch;
  close(out_pipe[0]);

  std::optional<std::string> transcript;
  try {
    const int port = json::parse(line)["listening"]["port"].get<int>();
    httplib::Client client("127.0.0.1", port);
    std::string t;
    auto record = [&](const httplib::Result& res) {
      if (!res) throw Error("request failed");
      t += std::to_string(res->status) + " " + res->body + "\n";
    };
    record(client.Get("/api/patients?sort=delta&limit=20"));
    const auto first = json::parse(client.Get("/api/patients?sort=delta&limit=1")->body)["patients"][0]["id"];
    record(client.Post("/api/patients/" + first.get<std::string>() + "/predict", "{}", "application/json"));
    const auto opened = client.Post("/api/sessions", json{{"patient_id", first}}.dump(), "application/json");
    record(opened);
    const auto sid = json::parse(opened->body)["session"]["id"].get<std::string>();
    record(client.Post("/api/sessions/" + sid + "/rule_out", R"({"diagnoses": [0]})", "application/json"));
    record(client.Post("/api/sessions/" + sid + "/reset", "", "application/json"));
    transcript = t;
  } catch (const std::exception&) {
  }
  kill(pid, SIGTERM);
  int status = 0;
  waitpid(pid, &status, 0);
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) return std::nullopt;
  return transcript;
}

std::string directory_bytes(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string all;
  for (const auto& f : files) all += f.filename().string() + "\n" + read_file(f);
  return all;
}

Outcome cli_determinism() {
  const auto root = fs::temp_directory_path() / "duacm_acceptance_cli";
  fs::remove_all(root);
  fs::create_directories(root);
  json cfg;
  cfg["seed"] = 21;
  cfg["cohort"] = {{"n_patients", 2500}};
  cfg["gam"] = {{"inner_bags", 4}, {"outer_bags", 2}};
  cfg["mlp"] = {{"learning_rates", {0.03}}, {"weight_decays", {1e-4}}, {"epochs", 20}};
  const auto config = root / "config.json";
  write_file_atomically(config, cfg.dump(2));

  std::vector<std::string> failures;
  std::vector<std::string> outputs;
  for (const std::string run : {"a", "b"}) {
    const auto dir = root / run;
    fs::create_directories(dir);
    const std::string c = config.string();
    const std::string cohort_path = (dir / "cohort.tsv").string();
    const std::string bundle = (dir / "bundle.json").string();
    std::vector<std::pair<std::string, std::vector<std::string>>> commands = {
        {"print-config", {"print-config", "--config", c, "--out", (dir / "resolved.json").string()}},
        {"generate", {"generate", "--config", c, "--out", cohort_path}},
        {"train", {"train", "--config", c, "--cohort", cohort_path, "--out", bundle}},
        {"evaluate", {"evaluate", "--config", c, "--bundle", bundle, "--cohort", cohort_path, "--out",
                      (dir / "evaluate.tsv").string()}},
        {"predict", {"predict", "--config", c, "--bundle", bundle, "--cohort", cohort_path, "--out",
                     (dir / "predict.tsv").string()}}};
    for (const auto& name : app::experiment_names()) {
      commands.push_back({"experiment " + name,
                          {"experiment", name, "--config", c, "--cohort", cohort_path, "--out",
                           (dir / ("exp_" + name)).string()}});
    }
    for (const auto& [name, args] : commands) {
      if (run_cli(args) != 0) failures.push_back(name + " exited nonzero (run " + run + ")");
    }
    const auto transcript = serve_transcript(bundle, cohort_path, config);
    if (!transcript) failures.push_back("serve failed (run " + run + ")");
    write_file_atomically(dir / "serve.txt", transcript.value_or(""));
  }
  std::size_t compared = 0;
  for (const auto& e : fs::directory_iterator(root / "a")) {
    const auto other = root / "b" / e.path().filename();
    const bool same = e.is_directory() ? directory_bytes(e.path()) == directory_bytes(other)
                                       : read_file(e.path()) == read_file(other);
    ++compared;
    if (!same) failures.push_back(e.path().filename().string() + " differs");
  }
  std::string detail = std::to_string(compared) + " outputs compared across two runs";
  for (const auto& f : failures) detail += "; " + f;
  return {failures.empty() && compared >= 11, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {"factorization identity", 10.0, factorization, true},
      {"sampled vs exact within CLT bounds", 30.0, sampled_vs_exact, true},
      {"averaging failure mode", 300.0, averaging_failure},
      {"rule-out correctness", 60.0, rule_out_correctness, true},
      {"model-quality ordering", 300.0, model_quality},
      {"out-of-diagnosis harness", 900.0, out_of_diagnosis},
      {"metric oracles", 120.0, metric_oracles},
      {"gradient check", 10.0, gradient_check},
      {"cli determinism", 0.0, cli_determinism},
  };
  std::vector<std::string> filters(argv + 1, argv + argc);
  int failed = 0;
  int ran = 0;
  for (const auto& c : criteria) {
    if (!filters.empty() &&
        std::none_of(filters.begin(), filters.end(),
                     [&](const std::string& f) { return c.name.find(f) != std::string::npos; })) {
      continue;
    }
    ++ran;
    // The shared bundle is training, not the criterion under test.
    if (c.uses_shared) shared();
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double elapsed = seconds_since(t0);
    const bool in_time = c.limit_seconds <= 0.0 || elapsed <= c.limit_seconds;
    const bool pass = o.pass && in_time;
    failed += !pass;
    std::cout << (pass ? "PASS " : "FAIL ") << c.name << ": " << o.detail << " [" << fmt(elapsed, 3) << " s";
    if (c.limit_seconds > 0.0) std::cout << ", limit " << fmt(c.limit_seconds, 4) << " s";
    if (!in_time) std::cout << ", over the time limit";
    std::cout << "]" << std::endl;
  }
  if (ran == 0) {
    std::cout << "FAIL no criterion matched the filter" << std::endl;
    return 1;
  }
  std::cout << (failed == 0 ? "all " + std::to_string(ran) + " criteria passed"
                            : std::to_string(failed) + " of " + std::to_string(ran) + " criteria failed")
            << std::endl;
  return failed == 0 ? 0 : 1;
}

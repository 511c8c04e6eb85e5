#include "duacm/cohort.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>
#include <unordered_set>

#include "duacm/error.hpp"
#include "duacm/math.hpp"

namespace duacm::cohort {
namespace {

constexpr std::uint64_t kStructureStream = 1;
constexpr std::uint64_t kPatientStream = 2;

std::vector<double> random_unit(Rng& rng, std::size_t dim) {
  std::normal_distribution<double> normal;
  std::vector<double> v(dim);
  double norm = 0.0;
  while (norm < 1e-12) {
    norm = 0.0;
    for (auto& x : v) {
      x = normal(rng);
      norm += x * x;
    }
  }
  norm = std::sqrt(norm);
  for (auto& x : v) x /= norm;
  return v;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

std::string padded(const char* prefix, std::size_t value, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%0*zu", prefix, width, value);
  return buf;
}

int digits(std::size_t n) {
  int d = 1;
  while (n >= 10) {
    n /= 10;
    ++d;
  }
  return d;
}

// P(u < c | t) where u = Phi((t + eps) / sqrt(1 + tau^2)), eps ~ N(0, tau^2).
double probit_cdf(double c, double t, double tau) {
  if (c <= 0.0) return 0.0;
  if (c >= 1.0) return 1.0;
  const double threshold = normal_quantile(c) * std::sqrt(1.0 + tau * tau);
  if (tau == 0.0) return t < threshold ? 1.0 : 0.0;
  return normal_cdf((threshold - t) / tau);
}

}  // namespace

void validate(const CohortSpec& spec) {
  auto fail = [](const std::string& field, const std::string& what) {
    throw ValidationError("CohortSpec." + field + " " + what);
  };
  if (spec.n_patients < 1) fail("n_patients", "must be >= 1");
  if (spec.n_features < 1) fail("n_features", "must be >= 1");
  if (spec.latent_dim < 1) fail("latent_dim", "must be >= 1");
  if (spec.n_features < spec.latent_dim) fail("n_features", "must be >= latent_dim");
  if (spec.n_diagnoses < 1) fail("n_diagnoses", "must be >= 1");
  if (!(spec.zipf_exponent > 0.0) || !std::isfinite(spec.zipf_exponent)) {
    fail("zipf_exponent", "must be a positive real");
  }
  if (!(spec.feature_noise_sd >= 0.0) || !std::isfinite(spec.feature_noise_sd)) {
    fail("feature_noise_sd", "must be >= 0");
  }
  if (!(spec.diagnosis_noise_sd >= 0.0) || !std::isfinite(spec.diagnosis_noise_sd)) {
    fail("diagnosis_noise_sd", "must be >= 0");
  }
  if (!(spec.nonlinearity >= 0.0) || !std::isfinite(spec.nonlinearity)) {
    fail("nonlinearity", "must be >= 0");
  }
  if (!std::isfinite(spec.outcome_intercept)) fail("outcome_intercept", "must be finite");
  if (!spec.risk_weights.empty() && spec.risk_weights.size() != spec.latent_dim) {
    fail("risk_weights", "must have latent_dim entries");
  }
  for (double w : spec.risk_weights) {
    if (!std::isfinite(w)) fail("risk_weights", "must be finite");
  }
  std::set<DiagnosisId> paired;
  for (const auto& p : spec.confusable_pairs) {
    if (p.first >= spec.n_diagnoses || p.second >= spec.n_diagnoses) {
      fail("confusable_pairs", "references a diagnosis id >= n_diagnoses");
    }
    if (p.first == p.second) fail("confusable_pairs", "pairs a diagnosis with itself");
    if (!(p.separation >= 0.0) || !std::isfinite(p.separation)) {
      fail("confusable_pairs", "separation must be >= 0");
    }
    if (!paired.insert(p.first).second || !paired.insert(p.second).second) {
      fail("confusable_pairs", "uses a diagnosis in more than one pair");
    }
  }
  for (const auto& [id, beta] : spec.beta_true) {
    if (id >= spec.n_diagnoses) fail("beta_true", "references a diagnosis id >= n_diagnoses");
    if (!std::isfinite(beta)) fail("beta_true", "must be finite");
  }
}

std::vector<double> zipf_prior(std::size_t n, double exponent) {
  std::vector<double> w(n);
  for (std::size_t k = 0; k < n; ++k) w[k] = std::pow(static_cast<double>(k + 1), -exponent);
  // Sum smallest-first for accuracy.
  double total = 0.0;
  for (std::size_t k = n; k-- > 0;) total += w[k];
  for (auto& x : w) x /= total;
  return w;
}

double Cohort::mortality() const {
  if (records.empty()) return 0.0;
  std::size_t deaths = 0;
  for (const auto& r : records) deaths += static_cast<std::size_t>(r.outcome);
  return static_cast<double>(deaths) / static_cast<double>(records.size());
}

void Cohort::validate() const {
  const std::size_t p = schema.size();
  if (schema.min_values.size() != p || schema.max_values.size() != p) {
    throw SchemaError("schema ranges do not match the number of features");
  }
  std::unordered_set<std::string> ids;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.features.size() != p) {
      throw SchemaError("record " + std::to_string(i) + " (" + r.id + ") has " +
                        std::to_string(r.features.size()) + " features, schema has " +
                        std::to_string(p));
    }
    if (r.diagnosis && *r.diagnosis >= diagnosis_vocab.size()) {
      throw SchemaError("record " + std::to_string(i) + " (" + r.id +
                        ") has diagnosis id not in vocabulary: " + std::to_string(*r.diagnosis));
    }
    if (r.outcome != 0 && r.outcome != 1) {
      throw SchemaError("record " + std::to_string(i) + " (" + r.id + ") outcome not in {0,1}");
    }
    if (!ids.insert(r.id).second) {
      throw SchemaError("duplicate record id: " + r.id);
    }
  }
}

double GenerativeModel::FeatureTransform::apply(double projection) const {
  return linear * projection + tanh_scale * std::tanh(tanh_slope * projection + tanh_shift);
}

GenerativeModel::GenerativeModel(CohortSpec spec) : spec_(std::move(spec)) {
  validate(spec_);
  const std::size_t L = spec_.latent_dim;
  Rng rng = make_rng(spec_.seed, kStructureStream);

  prior_ = zipf_prior(spec_.n_diagnoses, spec_.zipf_exponent);
  risk_weights_ = spec_.risk_weights.empty() ? std::vector<double>(L, 0.0) : spec_.risk_weights;
  beta_.assign(spec_.n_diagnoses, 0.0);
  for (const auto& [id, b] : spec_.beta_true) beta_[id] = b;

  // One region per diagnosis; a pair's second member lives inside the
  // region of its first member.
  std::vector<std::optional<std::size_t>> pair_of_first(spec_.n_diagnoses);
  std::vector<bool> is_second(spec_.n_diagnoses, false);
  for (std::size_t k = 0; k < spec_.confusable_pairs.size(); ++k) {
    pair_of_first[spec_.confusable_pairs[k].first] = k;
    is_second[spec_.confusable_pairs[k].second] = true;
  }
  for (DiagnosisId d = 0; d < spec_.n_diagnoses; ++d) {
    if (is_second[d]) continue;
    Region region{d, std::nullopt, 0.0, 0.0, 0};
    if (pair_of_first[d]) {
      const auto& pair = spec_.confusable_pairs[*pair_of_first[d]];
      region.second = pair.second;
      region.separation = pair.separation;
      region.second_share = prior_[pair.second] / (prior_[pair.first] + prior_[pair.second]);
      region.pair_index = *pair_of_first[d];
    }
    regions_.push_back(region);
  }
  shuffle(regions_.begin(), regions_.end(), rng);
  double cumulative = 0.0;
  for (const auto& region : regions_) {
    cumulative += prior_[region.first] + (region.second ? prior_[*region.second] : 0.0);
    region_upper_.push_back(cumulative);
  }
  region_upper_.back() = 1.0;

  diagnosis_direction_ = random_unit(rng, L);
  for (std::size_t k = 0; k < spec_.confusable_pairs.size(); ++k) {
    pair_directions_.push_back(random_unit(rng, L));
  }

  transforms_.resize(spec_.n_features);
  for (std::size_t j = 0; j < spec_.n_features; ++j) {
    auto& t = transforms_[j];
    if (j < L) {
      t.direction.assign(L, 0.0);
      t.direction[j] = 1.0;
    } else {
      t.direction = random_unit(rng, L);
    }
    // Parameters are always drawn so the stream does not depend on the map.
    const double linear = uniform(rng, 0.1, 0.4);
    const double scale = uniform(rng, 1.0, 2.0);
    const double slope = uniform(rng, 1.5, 3.0);
    const double shift = uniform(rng, -1.0, 1.0);
    if (spec_.feature_map == FeatureMap::kIdentity) {
      t.linear = 1.0;
      t.tanh_scale = 0.0;
    } else {
      t.linear = linear;
      t.tanh_scale = spec_.nonlinearity * scale;
      t.tanh_slope = slope;
      t.tanh_shift = shift;
    }
  }
}

double GenerativeModel::beta(DiagnosisId d) const { return beta_[d]; }

std::vector<double> GenerativeModel::feature_means(std::span<const double> latent) const {
  std::vector<double> x(transforms_.size());
  for (std::size_t j = 0; j < transforms_.size(); ++j) {
    x[j] = transforms_[j].apply(dot(transforms_[j].direction, latent));
  }
  return x;
}

std::vector<double> GenerativeModel::diagnosis_posterior(std::span<const double> latent) const {
  const double t = dot(diagnosis_direction_, latent);
  const double tau = spec_.diagnosis_noise_sd;
  std::vector<double> post(spec_.n_diagnoses, 0.0);
  double lower_cdf = 0.0;
  for (std::size_t k = 0; k < regions_.size(); ++k) {
    const double upper_cdf = probit_cdf(region_upper_[k], t, tau);
    const double mass = std::max(0.0, upper_cdf - lower_cdf);
    lower_cdf = upper_cdf;
    const auto& region = regions_[k];
    if (!region.second) {
      post[region.first] = mass;
      continue;
    }
    const double s = region.separation;
    const double e = dot(pair_directions_[region.pair_index], latent);
    const double q = region.second_share;
    const double second = normal_cdf(normal_quantile(q) * std::sqrt(1.0 + s * s) - s * e);
    post[*region.second] = mass * second;
    post[region.first] = mass * (1.0 - second);
  }
  return post;
}

double GenerativeModel::true_risk(std::span<const double> latent, DiagnosisId diagnosis) const {
  if (diagnosis >= spec_.n_diagnoses) {
    throw ValidationError("unknown diagnosis id " + std::to_string(diagnosis));
  }
  return sigmoid(spec_.outcome_intercept + dot(risk_weights_, latent) + beta(diagnosis));
}

std::vector<double> GenerativeModel::invert_features(std::span<const double> features) const {
  if (features.size() != spec_.n_features) {
    throw ValidationError("invert_features: feature length mismatch");
  }
  std::vector<double> z(spec_.latent_dim);
  for (std::size_t j = 0; j < spec_.latent_dim; ++j) {
    const auto& t = transforms_[j];
    double lo = -60.0;
    double hi = 60.0;
    for (int it = 0; it < 200 && hi - lo > 1e-15 * (1.0 + std::abs(lo)); ++it) {
      const double mid = 0.5 * (lo + hi);
      (t.apply(mid) < features[j] ? lo : hi) = mid;
    }
    z[j] = 0.5 * (lo + hi);
  }
  return z;
}

PatientRecord GenerativeModel::sample_patient(Rng& rng, std::size_t index) const {
  std::normal_distribution<double> normal;
  const std::size_t L = spec_.latent_dim;
  PatientRecord rec;
  rec.id = padded("P", index, std::max(6, digits(spec_.n_patients)));
  rec.latent_state.resize(L);
  for (auto& z : rec.latent_state) z = normal(rng);

  const double tau = spec_.diagnosis_noise_sd;
  const double t = dot(diagnosis_direction_, rec.latent_state);
  const double u = normal_cdf((t + tau * normal(rng)) / std::sqrt(1.0 + tau * tau));
  const double eta = normal(rng);
  std::size_t k = static_cast<std::size_t>(
      std::upper_bound(region_upper_.begin(), region_upper_.end(), u) - region_upper_.begin());
  k = std::min(k, regions_.size() - 1);
  const auto& region = regions_[k];
  DiagnosisId d = region.first;
  if (region.second) {
    const double s = region.separation;
    const double e = dot(pair_directions_[region.pair_index], rec.latent_state);
    const double v = normal_cdf((s * e + eta) / std::sqrt(1.0 + s * s));
    if (v < region.second_share) d = *region.second;
  }
  rec.diagnosis = d;

  rec.features = feature_means(rec.latent_state);
  for (auto& x : rec.features) x += spec_.feature_noise_sd * normal(rng);

  rec.outcome = uniform01(rng) < true_risk(rec.latent_state, d) ? 1 : 0;
  return rec;
}

FeatureSchema GenerativeModel::schema_names() const {
  FeatureSchema schema;
  for (std::size_t j = 0; j < spec_.n_features; ++j) {
    schema.names.push_back(padded("x", j, 2));
  }
  return schema;
}

std::vector<std::string> GenerativeModel::vocabulary() const {
  std::vector<std::string> vocab;
  const int width = std::max(4, digits(spec_.n_diagnoses));
  for (std::size_t d = 0; d < spec_.n_diagnoses; ++d) vocab.push_back(padded("D", d, width));
  return vocab;
}

FeatureSchema schema_from_records(std::vector<std::string> names,
                                  const std::vector<PatientRecord>& records) {
  FeatureSchema schema;
  const std::size_t p = names.size();
  schema.names = std::move(names);
  schema.min_values.assign(p, 0.0);
  schema.max_values.assign(p, 0.0);
  if (records.empty()) return schema;
  for (std::size_t j = 0; j < p; ++j) {
    schema.min_values[j] = std::numeric_limits<double>::infinity();
    schema.max_values[j] = -std::numeric_limits<double>::infinity();
  }
  for (const auto& r : records) {
    for (std::size_t j = 0; j < p; ++j) {
      schema.min_values[j] = std::min(schema.min_values[j], r.features[j]);
      schema.max_values[j] = std::max(schema.max_values[j], r.features[j]);
    }
  }
  return schema;
}

Cohort generate_cohort(const CohortSpec& spec) {
  const GenerativeModel model(spec);
  Rng rng = make_rng(spec.seed, kPatientStream);
  std::vector<PatientRecord> records;
  records.reserve(spec.n_patients);
  for (std::size_t i = 0; i < spec.n_patients; ++i) {
    records.push_back(model.sample_patient(rng, i));
  }
  Cohort cohort;
  cohort.schema = schema_from_records(model.schema_names().names, records);
  cohort.records = std::move(records);
  cohort.diagnosis_vocab = model.vocabulary();
  return cohort;
}

double true_risk(const CohortSpec& spec, std::span<const double> latent_state,
                 DiagnosisId diagnosis) {
  if (diagnosis >= spec.n_diagnoses) {
    throw ValidationError("unknown diagnosis id " + std::to_string(diagnosis));
  }
  if (latent_state.size() != spec.latent_dim) {
    throw ValidationError("latent state length does not match latent_dim");
  }
  double score = spec.outcome_intercept;
  if (!spec.risk_weights.empty()) score += dot(spec.risk_weights, latent_state);
  if (auto it = spec.beta_true.find(diagnosis); it != spec.beta_true.end()) score += it->second;
  return sigmoid(score);
}

FeaturePosterior posterior_given_features(const GenerativeModel& model,
                                          std::span<const double> features,
                                          std::size_t n_draws, std::uint64_t seed) {
  const auto& spec = model.spec();
  if (features.size() != spec.n_features) {
    throw ValidationError("posterior_given_features: feature length mismatch");
  }
  if (!(spec.feature_noise_sd > 0.0)) {
    throw ValidationError("posterior_given_features requires feature_noise_sd > 0");
  }
  if (n_draws == 0) throw ValidationError("posterior_given_features: n_draws must be >= 1");
  const std::size_t D = spec.n_diagnoses;
  Rng rng(seed);
  std::normal_distribution<double> normal;
  std::vector<std::vector<double>> draws(n_draws, std::vector<double>(spec.latent_dim));
  std::vector<double> log_w(n_draws);
  const double inv_var = 1.0 / (spec.feature_noise_sd * spec.feature_noise_sd);
  for (std::size_t m = 0; m < n_draws; ++m) {
    for (auto& z : draws[m]) z = normal(rng);
    const auto mu = model.feature_means(draws[m]);
    double ll = 0.0;
    for (std::size_t j = 0; j < mu.size(); ++j) {
      const double r = features[j] - mu[j];
      ll -= 0.5 * r * r * inv_var;
    }
    log_w[m] = ll;
  }
  const double max_lw = *std::max_element(log_w.begin(), log_w.end());
  std::vector<double> w(n_draws);
  double total = 0.0;
  for (std::size_t m = 0; m < n_draws; ++m) {
    w[m] = std::exp(log_w[m] - max_lw);
    total += w[m];
  }
  double sum_sq = 0.0;
  for (auto& x : w) {
    x /= total;
    sum_sq += x * x;
  }

  FeaturePosterior out;
  out.effective_sample_size = 1.0 / sum_sq;
  out.diagnosis_probability.assign(D, 0.0);
  std::vector<double> joint_risk(D, 0.0);
  for (std::size_t m = 0; m < n_draws; ++m) {
    if (w[m] == 0.0) continue;
    const auto post = model.diagnosis_posterior(draws[m]);
    for (DiagnosisId d = 0; d < D; ++d) {
      if (post[d] == 0.0) continue;
      const double pd = w[m] * post[d];
      const double risk = model.true_risk(draws[m], d);
      out.diagnosis_probability[d] += pd;
      joint_risk[d] += pd * risk;
      out.marginal_risk += pd * risk;
    }
  }
  out.conditional_risk.assign(D, std::numeric_limits<double>::quiet_NaN());
  for (DiagnosisId d = 0; d < D; ++d) {
    if (out.diagnosis_probability[d] > 0.0) {
      out.conditional_risk[d] = joint_risk[d] / out.diagnosis_probability[d];
    }
  }
  return out;
}

namespace {

// Largest-remainder apportionment of `total` by `fractions`.
std::array<std::size_t, 3> apportion(std::size_t total, const std::array<double, 3>& fractions) {
  std::array<std::size_t, 3> out{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double exact = fractions[k] * static_cast<double>(total);
    out[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[k] = exact - static_cast<double>(out[k]);
    assigned += out[k];
  }
  while (assigned < total) {
    int best = -1;
    for (int k = 0; k < 3; ++k) {
      if (fractions[k] <= 0.0) continue;
      if (best < 0 || rem[k] > rem[best]) best = k;
    }
    ++out[best];
    rem[best] = -1.0;
    ++assigned;
  }
  while (assigned > total) {
    for (int k = 2; k >= 0 && assigned > total; --k) {
      if (out[k] > 0) {
        --out[k];
        --assigned;
      }
    }
  }
  return out;
}

}  // namespace

CohortSplit split(const Cohort& cohort, std::array<double, 3> fractions, std::uint64_t seed) {
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0) || !std::isfinite(f)) throw ValidationError("split fractions must be >= 0");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("split fractions must sum to 1");

  const std::size_t n = cohort.size();
  const auto sizes = apportion(n, fractions);
  for (int k = 0; k < 3; ++k) {
    if (fractions[k] > 0.0 && sizes[k] == 0) {
      static const char* names[] = {"train", "valid", "test"};
      throw ValidationError(std::string("split would leave the ") + names[k] +
                            " partition empty");
    }
  }

  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < n; ++i) (cohort.records[i].outcome ? pos : neg).push_back(i);
  Rng rng = make_rng(seed, 0x5b1);
  shuffle(pos.begin(), pos.end(), rng);
  shuffle(neg.begin(), neg.end(), rng);

  // Positives per split by apportionment, negatives fill the remaining size.
  auto pos_counts = apportion(pos.size(), fractions);
  std::array<std::size_t, 3> neg_counts{};
  for (int k = 0; k < 3; ++k) {
    if (pos_counts[k] > sizes[k]) pos_counts[k] = sizes[k];
  }
  // Re-balance positives that did not fit.
  std::size_t pos_left = pos.size();
  for (int k = 0; k < 3; ++k) pos_left -= pos_counts[k];
  for (int k = 0; k < 3 && pos_left > 0; ++k) {
    const std::size_t room = sizes[k] - pos_counts[k];
    const std::size_t add = std::min(room, pos_left);
    pos_counts[k] += add;
    pos_left -= add;
  }
  for (int k = 0; k < 3; ++k) neg_counts[k] = sizes[k] - pos_counts[k];

  std::vector<int> assignment(n, 0);
  std::size_t pi = 0, ni = 0;
  for (int k = 0; k < 3; ++k) {
    for (std::size_t c = 0; c < pos_counts[k]; ++c) assignment[pos[pi++]] = k;
    for (std::size_t c = 0; c < neg_counts[k]; ++c) assignment[neg[ni++]] = k;
  }

  CohortSplit out;
  Cohort* parts[3] = {&out.train, &out.valid, &out.test};
  for (auto* part : parts) {
    part->schema = cohort.schema;
    part->diagnosis_vocab = cohort.diagnosis_vocab;
  }
  for (std::size_t i = 0; i < n; ++i) parts[assignment[i]]->records.push_back(cohort.records[i]);
  return out;
}

std::vector<CensusEntry> diagnosis_census(const Cohort& cohort, std::size_t min_patients,
                                          double min_mortality) {
  std::vector<CensusEntry> all(cohort.n_diagnoses());
  for (DiagnosisId d = 0; d < all.size(); ++d) all[d].diagnosis = d;
  for (const auto& r : cohort.records) {
    if (!r.diagnosis) continue;
    if (*r.diagnosis >= all.size()) {
      throw SchemaError("record " + r.id + " has diagnosis outside the vocabulary");
    }
    ++all[*r.diagnosis].count;
    all[*r.diagnosis].deaths += static_cast<std::size_t>(r.outcome);
  }
  std::vector<CensusEntry> out;
  for (auto& e : all) {
    e.mortality = e.count ? static_cast<double>(e.deaths) / static_cast<double>(e.count) : 0.0;
    if (e.count >= min_patients && e.mortality >= min_mortality) out.push_back(e);
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const CensusEntry& a, const CensusEntry& b) { return a.count > b.count; });
  return out;
}

Cohort concat(const Cohort& a, const Cohort& b) {
  if (a.schema.names != b.schema.names || a.diagnosis_vocab != b.diagnosis_vocab) {
    throw SchemaError("concat: cohorts do not share schema and vocabulary");
  }
  Cohort out = a;
  out.records.insert(out.records.end(), b.records.begin(), b.records.end());
  return out;
}

}  // namespace duacm::cohort

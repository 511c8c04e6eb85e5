#include "duacm/diagmodel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "duacm/error.hpp"
#include "duacm/metrics.hpp"
#include "duacm/random.hpp"
#include "duacm/simd/kernels.hpp"

namespace duacm::diag {
namespace {

using Layers = std::vector<DenseLayer>;

Layers zeros_like(const Layers& layers) {
  Layers out = layers;
  for (auto& l : out) {
    std::fill(l.weights.begin(), l.weights.end(), 0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
  return out;
}

double log_sum_exp(std::span<const double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// Per-sample scratch buffers: acts[l] is the input to layer l; acts.back()
// holds the logits.
struct Workspace {
  std::vector<std::vector<double>> acts;
  std::vector<double> delta;
  std::vector<double> back;

  explicit Workspace(const Layers& layers) {
    acts.emplace_back(layers.front().inputs);
    for (const auto& l : layers) acts.emplace_back(l.outputs);
  }
};

void forward(const Layers& layers, std::span<const double> z, Workspace& ws) {
  std::copy(z.begin(), z.end(), ws.acts[0].begin());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    auto& out = ws.acts[l + 1];
    simd::gemv(L.weights, ws.acts[l], L.bias, out);
    if (l + 1 < layers.size()) {
      for (double& v : out) v = std::tanh(v);
    }
  }
}

// Adds the gradient of (scale * cross-entropy) for one sample into `grad`,
// assuming `forward` was just run on it. Returns its cross-entropy.
double backward(const Layers& layers, std::size_t label, double scale, Workspace& ws,
                Layers& grad) {
  const auto& logits = ws.acts.back();
  const double lse = log_sum_exp(logits);
  ws.delta.resize(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) {
    ws.delta[k] = scale * (std::exp(logits[k] - lse) - (k == label ? 1.0 : 0.0));
  }
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& L = layers[l];
    auto& G = grad[l];
    simd::ger(1.0, ws.delta, ws.acts[l], G.weights);
    simd::axpy(1.0, ws.delta, G.bias);
    if (l == 0) break;
    ws.back.assign(L.inputs, 0.0);
    simd::gemv_t_acc(L.weights, ws.delta, ws.back);
    const auto& a = ws.acts[l];
    for (std::size_t j = 0; j < L.inputs; ++j) ws.back[j] *= 1.0 - a[j] * a[j];
    ws.delta.swap(ws.back);
  }
  return lse - logits[label];
}

double penalty(const Layers& layers) {
  double s = 0.0;
  for (const auto& l : layers) s += simd::dot(l.weights, l.weights);
  return 0.5 * s;
}

struct Dataset {
  std::size_t p = 0;
  std::vector<double> z;  // n x p, standardized
  std::vector<std::size_t> labels;
  std::size_t size() const { return labels.size(); }
  std::span<const double> row(std::size_t i) const { return {z.data() + i * p, p}; }
};

double mean_cross_entropy(const Layers& layers, const Dataset& data) {
  Workspace ws(layers);
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    forward(layers, data.row(i), ws);
    total += log_sum_exp(ws.acts.back()) - ws.acts.back()[data.labels[i]];
  }
  return total / static_cast<double>(data.size());
}

struct RunResult {
  Layers layers;
  double best_loss = 0.0;
  std::vector<double> trace;
  std::size_t halvings = 0;
};

// One training run. `monitor` drives the rollback/halving schedule.
RunResult train_run(const DiagnosisModel& init, const Dataset& train, const Dataset& monitor,
                    double learning_rate, double weight_decay, const MlpConfig& config) {
  RunResult res;
  Layers params = init.layers;
  Layers velocity = zeros_like(params);
  Layers grad = zeros_like(params);
  Layers saved_params = params;
  Layers saved_velocity = velocity;
  Workspace ws(params);
  Rng rng = make_rng(config.seed, 0x3a);

  double lr = learning_rate;
  double accepted = mean_cross_entropy(params, monitor);
  res.trace.push_back(accepted);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const std::size_t batch = std::max<std::size_t>(1, config.batch_size);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      const double scale = 1.0 / static_cast<double>(stop - start);
      for (auto& g : grad) {
        std::fill(g.weights.begin(), g.weights.end(), 0.0);
        std::fill(g.bias.begin(), g.bias.end(), 0.0);
      }
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t i = order[k];
        forward(params, train.row(i), ws);
        backward(params, train.labels[i], scale, ws, grad);
      }
      for (std::size_t l = 0; l < params.size(); ++l) {
        auto& P = params[l];
        auto& V = velocity[l];
        auto& G = grad[l];
        if (weight_decay > 0.0) simd::axpy(weight_decay, P.weights, G.weights);
        for (std::size_t j = 0; j < V.weights.size(); ++j) {
          V.weights[j] = config.momentum * V.weights[j] + G.weights[j];
        }
        for (std::size_t j = 0; j < V.bias.size(); ++j) {
          V.bias[j] = config.momentum * V.bias[j] + G.bias[j];
        }
        simd::axpy(-lr, V.weights, P.weights);
        simd::axpy(-lr, V.bias, P.bias);
      }
    }
    const double loss = mean_cross_entropy(params, monitor);
    if (!(loss <= accepted)) {
      params = saved_params;
      velocity = saved_velocity;
      lr *= 0.5;
      if (++res.halvings > config.max_halvings) break;
      continue;
    }
    accepted = loss;
    res.trace.push_back(loss);
    saved_params = params;
    saved_velocity = velocity;
  }
  res.layers = std::move(saved_params);
  res.best_loss = accepted;
  return res;
}

Dataset make_dataset(const cohort::Cohort& c, const Standardization& st,
                     const std::vector<DiagnosisId>& vocab, const char* which) {
  Dataset d;
  d.p = c.n_features();
  d.z.resize(c.size() * d.p);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& r = c.records[i];
    if (!r.diagnosis) {
      throw ValidationError(std::string("fit_mlp: ") + which + " record " + r.id +
                            " has no diagnosis");
    }
    for (double v : r.features) {
      if (!std::isfinite(v)) throw ValidationError("fit_mlp: non-finite feature in " + r.id);
    }
    auto it = std::lower_bound(vocab.begin(), vocab.end(), *r.diagnosis);
    if (it == vocab.end() || *it != *r.diagnosis) {
      throw ValidationError(std::string("fit_mlp: ") + which + " record " + r.id +
                            " has a diagnosis absent from training");
    }
    d.labels.push_back(static_cast<std::size_t>(it - vocab.begin()));
    st.apply(r.features, std::span<double>(d.z.data() + i * d.p, d.p));
  }
  return d;
}

std::vector<std::vector<double>> feature_rows(const cohort::Cohort& c) {
  std::vector<std::vector<double>> rows;
  rows.reserve(c.size());
  for (const auto& r : c.records) rows.push_back(r.features);
  return rows;
}

}  // namespace

double DiagnosisDistribution::probability_of(DiagnosisId d) const {
  for (std::size_t k = 0; k < diagnoses.size(); ++k) {
    if (diagnoses[k] == d) return probabilities[k];
  }
  return 0.0;
}

DiagnosisModel init_model(std::size_t n_features, std::vector<DiagnosisId> vocabulary,
                          const std::vector<std::size_t>& hidden, std::uint64_t seed) {
  if (n_features == 0) throw ValidationError("diagnosis model needs at least one feature");
  if (vocabulary.empty()) throw ValidationError("diagnosis model needs a nonempty vocabulary");
  DiagnosisModel m;
  m.vocabulary = std::move(vocabulary);
  m.standardization.mean.assign(n_features, 0.0);
  m.standardization.sd.assign(n_features, 1.0);
  Rng rng = make_rng(seed, 0x39);
  std::size_t inputs = n_features;
  std::vector<std::size_t> widths = hidden;
  widths.push_back(m.vocabulary.size());
  for (std::size_t w : widths) {
    if (w == 0) throw ValidationError("hidden layer width must be positive");
    DenseLayer layer;
    layer.inputs = inputs;
    layer.outputs = w;
    layer.weights.resize(w * inputs);
    layer.bias.assign(w, 0.0);
    const double a = std::sqrt(3.0 / static_cast<double>(inputs));
    for (double& v : layer.weights) v = a * (2.0 * uniform01(rng) - 1.0);
    m.layers.push_back(std::move(layer));
    inputs = w;
  }
  return m;
}

std::vector<double> forward_logits(const DiagnosisModel& model, std::span<const double> z) {
  if (z.size() != model.n_features()) throw ValidationError("forward: feature length mismatch");
  Workspace ws(model.layers);
  forward(model.layers, z, ws);
  return ws.acts.back();
}

std::vector<double> softmax(std::span<const double> logits) {
  const double lse = log_sum_exp(logits);
  std::vector<double> p(logits.size());
  for (std::size_t k = 0; k < p.size(); ++k) p[k] = std::exp(logits[k] - lse);
  return p;
}

DiagnosisDistribution predict_diagnosis(const DiagnosisModel& model,
                                        std::span<const double> features) {
  if (features.size() != model.n_features()) {
    throw ValidationError("predict_diagnosis: expected " + std::to_string(model.n_features()) +
                          " features, got " + std::to_string(features.size()));
  }
  for (double v : features) {
    if (!std::isfinite(v)) throw ValidationError("predict_diagnosis: non-finite feature value");
  }
  std::vector<double> z(features.size());
  model.standardization.apply(features, z);
  return {model.vocabulary, softmax(forward_logits(model, z))};
}

std::vector<DiagnosisId> sample_diagnoses(const DiagnosisDistribution& dist, std::size_t n,
                                          std::uint64_t seed) {
  if (n == 0) throw ValidationError("sample_diagnoses: n must be >= 1");
  if (dist.diagnoses.empty() || dist.diagnoses.size() != dist.probabilities.size()) {
    throw ValidationError("sample_diagnoses: malformed distribution");
  }
  std::vector<double> cum(dist.probabilities.size());
  double total = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t k = 0; k < cum.size(); ++k) {
    if (!(dist.probabilities[k] >= 0.0)) {
      throw ValidationError("sample_diagnoses: negative probability");
    }
    total += dist.probabilities[k];
    cum[k] = total;
    if (dist.probabilities[k] > 0.0) last_positive = k;
  }
  if (!(total > 0.0)) throw ValidationError("sample_diagnoses: distribution has no mass");
  Rng rng = make_rng(seed, 0x5a);
  std::vector<DiagnosisId> out(n);
  for (auto& d : out) {
    const double u = uniform01(rng) * total;
    std::size_t k = static_cast<std::size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
    d = dist.diagnoses[std::min(k, last_positive)];
  }
  return out;
}

std::vector<double> flatten_parameters(const DiagnosisModel& model) {
  std::vector<double> out;
  for (const auto& l : model.layers) {
    out.insert(out.end(), l.weights.begin(), l.weights.end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

void assign_parameters(DiagnosisModel& model, std::span<const double> params) {
  std::size_t pos = 0;
  for (auto& l : model.layers) {
    if (pos + l.weights.size() + l.bias.size() > params.size()) {
      throw ValidationError("assign_parameters: too few values");
    }
    std::copy_n(params.begin() + pos, l.weights.size(), l.weights.begin());
    pos += l.weights.size();
    std::copy_n(params.begin() + pos, l.bias.size(), l.bias.begin());
    pos += l.bias.size();
  }
  if (pos != params.size()) throw ValidationError("assign_parameters: too many values");
}

double loss_and_gradient(const DiagnosisModel& model, std::span<const double> z,
                         std::span<const std::size_t> labels, double weight_decay,
                         std::vector<double>* gradient) {
  const std::size_t p = model.n_features();
  if (labels.empty() || z.size() != labels.size() * p) {
    throw ValidationError("loss_and_gradient: input shape mismatch");
  }
  Layers grad = zeros_like(model.layers);
  Workspace ws(model.layers);
  const double scale = 1.0 / static_cast<double>(labels.size());
  double ce = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= model.n_classes()) throw ValidationError("loss_and_gradient: bad label");
    forward(model.layers, z.subspan(i * p, p), ws);
    ce += backward(model.layers, labels[i], scale, ws, grad);
  }
  if (gradient) {
    for (std::size_t l = 0; l < grad.size(); ++l) {
      simd::axpy(weight_decay, model.layers[l].weights, grad[l].weights);
    }
    DiagnosisModel shaped;
    shaped.layers = std::move(grad);
    *gradient = flatten_parameters(shaped);
  }
  return ce * scale + weight_decay * penalty(model.layers);
}

DiagnosisModel fit_mlp(const cohort::Cohort& train, const cohort::Cohort& valid,
                       const MlpConfig& config) {
  if (config.learning_rates.empty() || config.weight_decays.empty()) {
    throw ValidationError("fit_mlp: hyperparameter grid is empty");
  }
  if (train.empty()) throw ValidationError("fit_mlp: training cohort is empty");
  if (valid.empty()) throw ValidationError("fit_mlp: validation cohort is empty");
  if (valid.n_features() != train.n_features()) {
    throw ValidationError("fit_mlp: train and valid schemas differ");
  }
  for (double lr : config.learning_rates) {
    if (!(lr > 0.0)) throw ValidationError("fit_mlp: learning rates must be positive");
  }
  for (double wd : config.weight_decays) {
    if (!(wd >= 0.0)) throw ValidationError("fit_mlp: weight decays must be >= 0");
  }

  std::vector<DiagnosisId> vocab;
  for (const auto& r : train.records) {
    if (!r.diagnosis) throw ValidationError("fit_mlp: train record " + r.id + " has no diagnosis");
    vocab.push_back(*r.diagnosis);
  }
  std::sort(vocab.begin(), vocab.end());
  vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());

  const std::size_t p = train.n_features();
  const auto st = Standardization::fit(feature_rows(train), p);
  const Dataset tr = make_dataset(train, st, vocab, "train");
  const Dataset va = make_dataset(valid, st, vocab, "valid");
  const DiagnosisModel init = init_model(p, vocab, config.hidden, config.seed);

  MlpTrainingInfo info;
  std::size_t best = 0;
  for (double lr : config.learning_rates) {
    for (double wd : config.weight_decays) {
      const auto run = train_run(init, tr, va, lr, wd, config);
      info.grid.push_back({lr, wd, run.best_loss});
      if (run.best_loss < info.grid[best].valid_loss) best = info.grid.size() - 1;
    }
  }
  info.learning_rate = info.grid[best].learning_rate;
  info.weight_decay = info.grid[best].weight_decay;
  info.valid_loss = info.grid[best].valid_loss;
  info.epochs = config.epochs;

  const cohort::Cohort combined = cohort::concat(train, valid);
  DiagnosisModel model = init;
  model.standardization = Standardization::fit(feature_rows(combined), p);
  const Dataset all = make_dataset(combined, model.standardization, vocab, "combined");
  auto run = train_run(init, all, all, info.learning_rate, info.weight_decay, config);
  model.layers = std::move(run.layers);
  info.halvings = run.halvings;
  info.loss_trace = std::move(run.trace);
  model.info = std::move(info);
  return model;
}

OneVsAllAuc one_vs_all_auc(const std::vector<DiagnosisId>& vocabulary,
                           const std::vector<std::vector<double>>& scores,
                           const std::vector<DiagnosisId>& labels) {
  if (scores.size() != labels.size()) throw ValidationError("one_vs_all_auc: length mismatch");
  OneVsAllAuc out;
  std::vector<double> column(labels.size());
  std::vector<int> indicator(labels.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < vocabulary.size(); ++k) {
    ClassAuc c;
    c.diagnosis = vocabulary[k];
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (scores[i].size() != vocabulary.size()) {
        throw ValidationError("one_vs_all_auc: score row width mismatch");
      }
      column[i] = scores[i][k];
      indicator[i] = labels[i] == vocabulary[k] ? 1 : 0;
      c.positives += static_cast<std::size_t>(indicator[i]);
    }
    if (c.positives > 0 && c.positives < labels.size()) {
      c.auc = eval::auc(column, indicator).auc;
      sum += *c.auc;
      ++out.n_evaluable;
    }
    out.per_class.push_back(c);
  }
  if (out.n_evaluable > 0) out.macro_auc = sum / static_cast<double>(out.n_evaluable);
  return out;
}

OneVsAllAuc one_vs_all_auc(const DiagnosisModel& model, const cohort::Cohort& test) {
  std::vector<std::vector<double>> scores;
  std::vector<DiagnosisId> labels;
  for (const auto& r : test.records) {
    if (!r.diagnosis) throw ValidationError("one_vs_all_auc: test record " + r.id + " is unlabeled");
    scores.push_back(predict_diagnosis(model, r.features).probabilities);
    labels.push_back(*r.diagnosis);
  }
  return one_vs_all_auc(model.vocabulary, scores, labels);
}

}  // namespace duacm::diag

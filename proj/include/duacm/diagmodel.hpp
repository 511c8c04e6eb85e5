#pragma once

// Multiclass diagnosis classifier g(x): a feed-forward network
//   input -> tanh(64) -> tanh(64) -> softmax(K)
// on standardized inputs, trained by mini-batch SGD with momentum on the
// mean cross-entropy plus (weight_decay / 2) * |W|^2 (biases undecayed).
//
// Schedule: after each epoch the loss on a monitor set is measured. If it
// went up, the epoch is rolled back (parameters and velocity restored to the
// last accepted state) and the learning rate halved. The accepted loss trace
// is therefore non-increasing.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "duacm/cohort.hpp"
#include "duacm/standardize.hpp"

namespace duacm::diag {

struct DenseLayer {
  std::size_t inputs = 0;
  std::size_t outputs = 0;
  std::vector<double> weights;  // outputs x inputs, row-major
  std::vector<double> bias;     // outputs
  bool operator==(const DenseLayer&) const = default;
};

struct GridCell {
  double learning_rate = 0.0;
  double weight_decay = 0.0;
  double valid_loss = 0.0;
  bool operator==(const GridCell&) const = default;
};

struct MlpTrainingInfo {
  double learning_rate = 0.0;  // chosen initial rate
  double weight_decay = 0.0;
  double valid_loss = 0.0;     // of the chosen cell
  std::size_t epochs = 0;
  std::size_t halvings = 0;    // in the final refit
  std::vector<double> loss_trace;  // accepted monitor losses of the final refit
  std::vector<GridCell> grid;
  bool operator==(const MlpTrainingInfo&) const = default;
};

struct DiagnosisModel {
  std::vector<DenseLayer> layers;  // last layer is the logit layer
  Standardization standardization;
  std::vector<DiagnosisId> vocabulary;  // output k is vocabulary[k]
  MlpTrainingInfo info;

  std::size_t n_features() const { return layers.empty() ? 0 : layers.front().inputs; }
  std::size_t n_classes() const { return vocabulary.size(); }
  bool operator==(const DiagnosisModel&) const = default;
};

struct DiagnosisDistribution {
  std::vector<DiagnosisId> diagnoses;
  std::vector<double> probabilities;

  /// 0 for diagnoses outside the vocabulary.
  double probability_of(DiagnosisId d) const;
};

struct MlpConfig {
  std::vector<double> learning_rates = {0.1, 0.03, 0.01};
  std::vector<double> weight_decays = {0.0, 1e-4, 1e-3};
  std::size_t epochs = 200;
  std::size_t batch_size = 128;
  std::vector<std::size_t> hidden = {64, 64};
  double momentum = 0.9;
  std::size_t max_halvings = 20;  // training stops once exceeded
  std::uint64_t seed = 0;
};

/// Grid search on (train, valid), then a refit on train + valid with the
/// chosen cell. The vocabulary is the sorted set of training diagnoses.
DiagnosisModel fit_mlp(const cohort::Cohort& train, const cohort::Cohort& valid,
                       const MlpConfig& config = {});

/// Network with fan-in scaled uniform weights and zero biases.
DiagnosisModel init_model(std::size_t n_features, std::vector<DiagnosisId> vocabulary,
                          const std::vector<std::size_t>& hidden, std::uint64_t seed);

/// Logits for already-standardized inputs.
std::vector<double> forward_logits(const DiagnosisModel& model, std::span<const double> z);

std::vector<double> softmax(std::span<const double> logits);

DiagnosisDistribution predict_diagnosis(const DiagnosisModel& model,
                                        std::span<const double> features);

/// i.i.d. draws by inverse-CDF on uniform variates from the seeded stream.
std::vector<DiagnosisId> sample_diagnoses(const DiagnosisDistribution& dist, std::size_t n,
                                          std::uint64_t seed);

// Training internals exposed for gradient checking.

/// All parameters in layer order: W then b for each layer.
std::vector<double> flatten_parameters(const DiagnosisModel& model);
void assign_parameters(DiagnosisModel& model, std::span<const double> params);

/// Regularized loss on standardized inputs `z` (row-major, one row per
/// sample) with class indices `labels`. When `gradient` is non-null it
/// receives d(loss)/d(params) in flatten_parameters order.
double loss_and_gradient(const DiagnosisModel& model, std::span<const double> z,
                         std::span<const std::size_t> labels, double weight_decay,
                         std::vector<double>* gradient);

struct ClassAuc {
  DiagnosisId diagnosis = 0;
  std::optional<double> auc;  // absent when the class lacks positives or negatives
  std::size_t positives = 0;
};

struct OneVsAllAuc {
  std::vector<ClassAuc> per_class;  // vocabulary order
  std::optional<double> macro_auc;
  std::size_t n_evaluable = 0;
};

OneVsAllAuc one_vs_all_auc(const DiagnosisModel& model, const cohort::Cohort& test);

/// Same computation from explicit per-record class scores (rows follow
/// `test.records`, columns follow `vocabulary`).
OneVsAllAuc one_vs_all_auc(const std::vector<DiagnosisId>& vocabulary,
                           const std::vector<std::vector<double>>& scores,
                           const std::vector<DiagnosisId>& labels);

}  // namespace duacm::diag

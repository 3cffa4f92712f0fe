#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vamp/data.hpp"
#include "vamp/model.hpp"
#include "vamp/objective.hpp"

namespace vamp {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 4;
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  double beta = 1.0;
  bool beta_warmup = false;  // linear ramp of beta over the first 20% of steps
  AblationMode mode = AblationMode::kVariationalClassPrior;
  std::size_t samples = 10;  // Monte Carlo draws at inference
  bool prior_sampling = false;  // inference draws prompts from N(0, I) instead of the posterior
  std::uint64_t encoder_seed = 1;
  std::size_t threads = 1;

  void validate() const;
};

// Adam moments for a fixed, ordered parameter list.
struct AdamState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m, v;
};

struct AdamHyper {
  double lr = 1e-3;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Decoupled weight decay, then a bias-corrected Adam update. Parameters
// without a gradient are treated as having a zero gradient.
void adamw_step(std::span<Tensor* const> params, AdamState& state, const AdamHyper& hyper);

struct EpochMetrics {
  std::size_t epoch = 0;
  double nll = 0.0;
  double kl = 0.0;
  double total = 0.0;
  double base_train_acc = 0.0;
};

std::string history_csv(const std::vector<EpochMetrics>& history);

struct TrainResult {
  PrototypeTable prototypes;
  std::vector<EpochMetrics> history;
  double initial_total = 0.0;  // loss of the untrained model on the first epoch's noise
  std::uint64_t frozen_fingerprint = 0;
};

// Updates model in place. Only the active groups for model.mode change.
TrainResult train(const TrainConfig& config, const Dataset& data, ModelBundle& model);

// Noise epoch reserved for inference draws, disjoint from training epochs.
inline constexpr std::uint64_t kInferenceEpoch = 0xfeedf00dULL;

struct PredictOptions {
  std::size_t samples = 10;
  std::uint64_t seed = 0;
  bool prior_sampling = false;
  // When set, every draw reuses draw index 0 (identical samples).
  bool repeat_first_draw = false;
};

// Average of per-draw softmax distributions over the given classes.
std::vector<double> mc_predict(const ModelBundle& model, const ImageFeatures& features, std::uint64_t example_id,
                               std::span<const std::size_t> classes, const PredictOptions& options);

struct EvalResult {
  double accuracy = 0.0;
  std::size_t count = 0;
  std::map<std::size_t, double> per_class;
  std::vector<std::size_t> predictions;  // class ids, one per example
};

EvalResult evaluate(const ModelBundle& model, std::span<const Example> examples,
                    std::span<const std::size_t> classes, const PredictOptions& options, std::size_t threads = 1);

double harmonic_mean(double base, double novel);

struct AblationRow {
  AblationMode mode{};
  std::uint64_t seed = 0;
  double base_acc = 0.0;
  double novel_acc = 0.0;
  double harmonic = 0.0;
};

struct AblationOptions {
  std::vector<AblationMode> modes{kAllModes.begin(), kAllModes.end()};
  std::vector<std::uint64_t> seeds;
};

// One train + evaluate run per (mode, seed) on a shared dataset.
std::vector<AblationRow> ablate(const EncoderConfig& encoder, const TrainConfig& train_config, const Dataset& data,
                                const AblationOptions& options);
std::string ablation_csv(const std::vector<AblationRow>& rows);

// Paired-by-seed novel-accuracy comparison of two modes; a win is
// candidate >= baseline.
struct PairedComparison {
  AblationMode candidate{};
  AblationMode baseline{};
  std::size_t wins = 0;
  std::size_t pairs = 0;
  double mean_delta = 0.0;
};
PairedComparison compare_novel(const std::vector<AblationRow>& rows, AblationMode candidate, AblationMode baseline);
// The three orderings of the ablation study, in order.
std::vector<PairedComparison> standard_comparisons(const std::vector<AblationRow>& rows);

// Run seed s trains the model initialised from init seed s with noise seed s.
AblationRow run_one(const EncoderConfig& encoder, TrainConfig train_config, const Dataset& data,
                    AblationMode mode, std::uint64_t seed, ModelBundle* trained = nullptr);

}  // namespace vamp

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "vamp/data.hpp"
#include "vamp/encoders.hpp"
#include "vamp/variational.hpp"

namespace vamp {

// Which prompt pathway is trained and used for prediction.
enum class AblationMode {
  kTaskShared,             // fixed learned text prompts
  kSampleDeterministic,    // text prompts generated from the image feature
  kVariationalStdPrior,    // sampled prompts, KL to N(0, I)
  kVariationalClassPrior,  // sampled prompts, KL to the class-aware prior
};

inline constexpr std::array<AblationMode, 4> kAllModes = {
    AblationMode::kTaskShared, AblationMode::kSampleDeterministic, AblationMode::kVariationalStdPrior,
    AblationMode::kVariationalClassPrior};

std::string to_string(AblationMode mode);
AblationMode ablation_mode_from_string(const std::string& name);
inline bool is_variational(AblationMode m) {
  return m == AblationMode::kVariationalStdPrior || m == AblationMode::kVariationalClassPrior;
}

struct TrainableParams {
  std::vector<Tensor> text_prompts;    // task-shared, M x d_l per prompted layer
  std::vector<Tensor> vision_prompts;  // shared, M x d_v per prompted layer
  std::vector<MlpParams> generators;   // deterministic sample-specific prompts
  std::vector<MlpParams> posterior;    // q(z_i | x)
  std::vector<MlpParams> prior;        // p(z_i | o_y)

  std::vector<std::pair<std::string, Tensor*>> named();
};

struct ParamGroup {
  std::string name;
  std::vector<std::pair<std::string, Tensor*>> tensors;
};

struct BuildOptions {
  std::uint64_t encoder_seed = 1;  // frozen weights; fixed across runs
  std::uint64_t init_seed = 0;     // trainable initialisation
  bool calibrate = true;           // fit projection heads so image and text features align
  std::size_t calibration_pool = 256;
  double ridge = 1e-2;
};

class ModelBundle {
 public:
  EncoderConfig config;
  AblationMode mode = AblationMode::kVariationalClassPrior;
  FrozenEncoderParams frozen;
  TrainableParams trainable;
  std::size_t base_classes = 0;  // class ids [0, base_classes) are base, the rest novel

  std::size_t num_classes() const { return frozen.num_classes(); }
  std::vector<std::size_t> base_class_ids() const;
  std::vector<std::size_t> novel_class_ids() const;

  // Frozen and trainable tensors, in checkpoint order.
  std::vector<std::pair<std::string, Tensor*>> named_parameters();
  // Groups updated in the current mode.
  std::vector<ParamGroup> active_groups();
  std::vector<Tensor*> active_parameters();

  // Promptless text sequence entering layer J for a class.
  const Tensor& text_prefix(std::size_t class_id) const;
  void refresh_caches();
  void round_to_f32();
  // Deep copy; plain copies share tensor storage.
  ModelBundle clone() const;

 private:
  std::vector<Tensor> text_prefix_cache_;
};

ModelBundle build_model(const EncoderConfig& config, const SyntheticTask& task, AblationMode mode,
                        const BuildOptions& options = {});

// Correctly shaped model with placeholder values, to be filled from a checkpoint.
ModelBundle model_skeleton(const EncoderConfig& config, std::size_t num_classes, std::size_t base_classes,
                           AblationMode mode);

// Per-image quantities that do not depend on trainable parameters.
struct ImageFeatures {
  Tensor prefix;          // sequence entering layer J
  Tensor frozen_feature;  // promptless f_bar_x, 1 x d_vl
};
ImageFeatures image_features(const ModelBundle& model, const Tensor& patches);

class FeatureCache {
 public:
  const ImageFeatures& get(const ModelBundle& model, const Example& example);
  void clear() { cache_.clear(); }

 private:
  std::unordered_map<std::uint64_t, ImageFeatures> cache_;
};

// How reparameterisation noise is produced. Sampled noise for an example is
// drawn from the stream keyed by (seed, epoch, example id, draw).
struct NoiseSpec {
  enum class Kind { kSample, kZero, kPriorSample };
  Kind kind = Kind::kSample;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t draw = 0;
};

// Text prompts for one image under the model's mode.
struct TextPromptResult {
  std::vector<Tensor> prompts;
  std::vector<DiagGaussian> posterior;  // variational modes only
  std::vector<Tensor> eps;
};
TextPromptResult text_prompts_for(Tape* tape, const ModelBundle& model, const ImageFeatures& features,
                                  std::uint64_t example_id, const NoiseSpec& noise);

// f_x with the shared vision prompts.
Tensor prompted_image_feature(Tape* tape, const ModelBundle& model, const ImageFeatures& features);
// One row per class, C x d_vl.
Tensor text_features(Tape* tape, const ModelBundle& model, const std::vector<Tensor>& text_prompts,
                     std::span<const std::size_t> classes);

}  // namespace vamp

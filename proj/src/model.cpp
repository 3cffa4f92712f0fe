#include "vamp/model.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "vamp/container.hpp"
#include "vamp/ops.hpp"

namespace vamp {

namespace {

enum GroupSeed : std::uint64_t { kSeedText = 11, kSeedVision = 12, kSeedGen = 13, kSeedPost = 14, kSeedPrior = 15 };

bool prompts_active(const EncoderConfig& c) { return c.prompt_depth > 0 && c.prompt_tokens > 0; }

Tensor prompt_param(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t = gaussian_tensor({rows, cols}, kInitStd, rng);
  t.set_requires_grad(true);
  return t;
}

Eigen::MatrixXd to_eigen(const std::vector<std::vector<double>>& rows) {
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < rows[i].size(); ++j) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  }
  return m;
}

// W = (X'X + lambda I)^-1 X'Y with lambda scaled by the mean diagonal of X'X.
Tensor ridge_fit(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, double ridge) {
  Eigen::MatrixXd gram = x.transpose() * x;
  const double lambda = ridge * gram.trace() / static_cast<double>(gram.rows());
  gram.diagonal().array() += lambda;
  Eigen::MatrixXd w = gram.ldlt().solve(x.transpose() * y);
  std::vector<double> values(static_cast<std::size_t>(w.size()));
  for (Eigen::Index i = 0; i < w.rows(); ++i) {
    for (Eigen::Index j = 0; j < w.cols(); ++j) values[static_cast<std::size_t>(i * w.cols() + j)] = w(i, j);
  }
  return Tensor({static_cast<std::size_t>(w.rows()), static_cast<std::size_t>(w.cols())}, std::move(values));
}

// Refits both projection heads so random concepts land on a shared random
// embedding G u from either modality.
void calibrate(FrozenEncoderParams& p, const EncoderConfig& config, const SyntheticTask& task,
               const BuildOptions& options) {
  const std::size_t dc = task.spec.concept_dim, n = options.calibration_pool;
  if (n == 0) throw ConfigError("calibration pool must be positive");
  Rng rng(derive_seed({options.encoder_seed, 0xca11b7a7eULL}));
  const Tensor g = gaussian_tensor({dc, config.embed_dim}, 1.0 / std::sqrt(static_cast<double>(dc)), rng);
  std::normal_distribution<double> normal;
  std::vector<std::vector<double>> xi, xt, ys;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> u(dc);
    for (auto& v : u) v = normal(rng);
    Tensor patches = task.render(u, task.spec.noise, rng);
    xi.push_back(image_readout_state(patches, p, config).to_vector());
    Tensor emb = matmul(nullptr, Tensor({1, dc}, u), task.text_projection);
    xt.push_back(text_readout_state(emb, p, config).to_vector());
    ys.push_back(matmul(nullptr, Tensor({1, dc}, u), g).to_vector());
  }
  const Eigen::MatrixXd y = to_eigen(ys);
  p.image_proj = ridge_fit(to_eigen(xi), y, options.ridge);
  p.text_proj = ridge_fit(to_eigen(xt), y, options.ridge);
}

void round_all(std::vector<std::pair<std::string, Tensor*>> tensors) {
  for (auto& [name, t] : tensors) round_tensor_f32(*t);
}

void init_trainables(ModelBundle& m, const EncoderConfig& config, std::uint64_t init_seed) {
  if (prompts_active(config)) {
    const std::size_t mm = config.prompt_tokens, dl = config.text_width, dv = config.vision_width;
    const std::size_t dvl = config.embed_dim;
    for (std::size_t i = 0; i < config.prompt_depth; ++i) {
      Rng text_rng(derive_seed({init_seed, kSeedText, i}));
      Rng vision_rng(derive_seed({init_seed, kSeedVision, i}));
      Rng gen_rng(derive_seed({init_seed, kSeedGen, i}));
      Rng post_rng(derive_seed({init_seed, kSeedPost, i}));
      Rng prior_rng(derive_seed({init_seed, kSeedPrior, i}));
      m.trainable.text_prompts.push_back(prompt_param(mm, dl, text_rng));
      m.trainable.vision_prompts.push_back(prompt_param(mm, dv, vision_rng));
      m.trainable.generators.push_back(MlpParams::init(dvl, dvl, mm * dl, gen_rng));
      m.trainable.posterior.push_back(MlpParams::init(dvl, dvl, 2 * mm * dl, post_rng));
      m.trainable.prior.push_back(MlpParams::init(dvl, dvl, 2 * mm * dl, prior_rng));
    }
  }
}

}  // namespace

std::string to_string(AblationMode mode) {
  switch (mode) {
    case AblationMode::kTaskShared: return "TASK_SHARED";
    case AblationMode::kSampleDeterministic: return "SAMPLE_DETERMINISTIC";
    case AblationMode::kVariationalStdPrior: return "VARIATIONAL_STD_PRIOR";
    case AblationMode::kVariationalClassPrior: return "VARIATIONAL_CLASS_PRIOR";
  }
  return "VARIATIONAL_CLASS_PRIOR";
}

AblationMode ablation_mode_from_string(const std::string& name) {
  for (AblationMode m : kAllModes) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown ablation mode '" + name +
                    "' (expected TASK_SHARED, SAMPLE_DETERMINISTIC, VARIATIONAL_STD_PRIOR or "
                    "VARIATIONAL_CLASS_PRIOR)");
}

std::vector<std::pair<std::string, Tensor*>> TrainableParams::named() {
  std::vector<std::pair<std::string, Tensor*>> out;
  for (std::size_t i = 0; i < text_prompts.size(); ++i) out.emplace_back("prompt.text." + std::to_string(i), &text_prompts[i]);
  for (std::size_t i = 0; i < vision_prompts.size(); ++i) {
    out.emplace_back("prompt.vision." + std::to_string(i), &vision_prompts[i]);
  }
  for (std::size_t i = 0; i < generators.size(); ++i) generators[i].append_named(out, "gen." + std::to_string(i) + ".");
  for (std::size_t i = 0; i < posterior.size(); ++i) posterior[i].append_named(out, "post." + std::to_string(i) + ".");
  for (std::size_t i = 0; i < prior.size(); ++i) prior[i].append_named(out, "prior." + std::to_string(i) + ".");
  return out;
}

std::vector<std::size_t> ModelBundle::base_class_ids() const {
  std::vector<std::size_t> ids(base_classes);
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  return ids;
}

std::vector<std::size_t> ModelBundle::novel_class_ids() const {
  std::vector<std::size_t> ids;
  for (std::size_t c = base_classes; c < num_classes(); ++c) ids.push_back(c);
  return ids;
}

std::vector<std::pair<std::string, Tensor*>> ModelBundle::named_parameters() {
  auto out = frozen.named();
  for (auto& entry : trainable.named()) out.push_back(entry);
  return out;
}

std::vector<ParamGroup> ModelBundle::active_groups() {
  std::vector<ParamGroup> groups;
  // Tensor names match the checkpoint names.
  auto prompts = [](const std::string& group, const std::string& prefix, std::vector<Tensor>& ts) {
    ParamGroup g{group, {}};
    for (std::size_t i = 0; i < ts.size(); ++i) g.tensors.emplace_back(prefix + std::to_string(i), &ts[i]);
    return g;
  };
  auto mlps = [](const std::string& group, const std::string& prefix, std::vector<MlpParams>& nets) {
    ParamGroup g{group, {}};
    for (std::size_t i = 0; i < nets.size(); ++i) nets[i].append_named(g.tensors, prefix + std::to_string(i) + ".");
    return g;
  };
  switch (mode) {
    case AblationMode::kTaskShared:
      groups.push_back(prompts("text_prompts", "prompt.text.", trainable.text_prompts));
      break;
    case AblationMode::kSampleDeterministic: groups.push_back(mlps("generators", "gen.", trainable.generators)); break;
    case AblationMode::kVariationalStdPrior: groups.push_back(mlps("posterior", "post.", trainable.posterior)); break;
    case AblationMode::kVariationalClassPrior:
      groups.push_back(mlps("posterior", "post.", trainable.posterior));
      groups.push_back(mlps("prior", "prior.", trainable.prior));
      break;
  }
  groups.push_back(prompts("vision_prompts", "prompt.vision.", trainable.vision_prompts));
  std::erase_if(groups, [](const ParamGroup& g) { return g.tensors.empty(); });
  return groups;
}

std::vector<Tensor*> ModelBundle::active_parameters() {
  std::vector<Tensor*> out;
  for (auto& g : active_groups()) {
    for (auto& [name, t] : g.tensors) out.push_back(t);
  }
  return out;
}

const Tensor& ModelBundle::text_prefix(std::size_t class_id) const {
  if (class_id >= text_prefix_cache_.size()) {
    throw std::out_of_range("unknown class id " + std::to_string(class_id) + " (model has " +
                            std::to_string(text_prefix_cache_.size()) + " cached classes)");
  }
  return text_prefix_cache_[class_id];
}

void ModelBundle::refresh_caches() {
  text_prefix_cache_.clear();
  for (std::size_t c = 0; c < num_classes(); ++c) text_prefix_cache_.push_back(vamp::text_prefix(c, frozen, config));
}

void ModelBundle::round_to_f32() {
  round_all(named_parameters());
  refresh_caches();
}

ModelBundle ModelBundle::clone() const {
  ModelBundle out = *this;
  for (auto& [name, t] : out.named_parameters()) *t = t->clone();
  return out;
}

ModelBundle build_model(const EncoderConfig& config, const SyntheticTask& task, AblationMode mode,
                        const BuildOptions& options) {
  config.validate();
  if (task.spec.patches != config.patches || task.spec.patch_dim != config.patch_dim ||
      task.spec.text_width != config.text_width) {
    throw ConfigError("data spec (patches " + std::to_string(task.spec.patches) + "x" +
                      std::to_string(task.spec.patch_dim) + ", text width " + std::to_string(task.spec.text_width) +
                      ") does not match encoder config (" + std::to_string(config.patches) + "x" +
                      std::to_string(config.patch_dim) + ", " + std::to_string(config.text_width) + ")");
  }
  ModelBundle m;
  m.config = config;
  m.mode = mode;
  m.base_classes = task.spec.base_classes;
  m.frozen = init_frozen_encoders(config, task.class_text_embeddings(), options.encoder_seed);
  if (options.calibrate) calibrate(m.frozen, config, task, options);

  init_trainables(m, config, options.init_seed);
  m.round_to_f32();
  return m;
}

ModelBundle model_skeleton(const EncoderConfig& config, std::size_t num_classes, std::size_t base_classes,
                           AblationMode mode) {
  config.validate();
  if (base_classes > num_classes) throw ConfigError("more base classes than classes");
  ModelBundle m;
  m.config = config;
  m.mode = mode;
  m.base_classes = base_classes;
  m.frozen = init_frozen_encoders(config, Tensor({num_classes, config.text_width}, 0.0), 0);
  init_trainables(m, config, 0);
  m.refresh_caches();
  return m;
}

ImageFeatures image_features(const ModelBundle& model, const Tensor& patches) {
  ImageFeatures f;
  f.prefix = image_prefix(patches, model.frozen, model.config);
  f.frozen_feature = image_from_prefix(nullptr, f.prefix, model.frozen, model.config, nullptr);
  return f;
}

const ImageFeatures& FeatureCache::get(const ModelBundle& model, const Example& example) {
  auto it = cache_.find(example.id);
  if (it != cache_.end()) return it->second;
  return cache_.emplace(example.id, image_features(model, example.patches)).first->second;
}

TextPromptResult text_prompts_for(Tape* tape, const ModelBundle& model, const ImageFeatures& features,
                                  std::uint64_t example_id, const NoiseSpec& noise) {
  TextPromptResult r;
  const EncoderConfig& c = model.config;
  if (!prompts_active(c)) return r;
  switch (model.mode) {
    case AblationMode::kTaskShared:
      r.prompts = model.trainable.text_prompts;
      return r;
    case AblationMode::kSampleDeterministic:
      r.prompts = generate_prompts_deterministic(tape, features.frozen_feature, model.trainable.generators, c);
      return r;
    case AblationMode::kVariationalStdPrior:
    case AblationMode::kVariationalClassPrior: break;
  }
  const std::size_t mm = c.prompt_tokens, dl = c.text_width;
  if (noise.kind == NoiseSpec::Kind::kPriorSample) {
    Rng rng(derive_seed({noise.seed, noise.epoch, example_id, noise.draw}));
    for (std::size_t i = 0; i < c.prompt_depth; ++i) {
      r.eps.push_back(gaussian_tensor({mm, dl}, 1.0, rng));
      r.prompts.push_back(r.eps.back());
    }
    return r;
  }
  r.posterior = posterior_params(tape, features.frozen_feature, model.trainable.posterior, c);
  Rng rng(derive_seed({noise.seed, noise.epoch, example_id, noise.draw}));
  for (const auto& q : r.posterior) {
    Tensor eps = noise.kind == NoiseSpec::Kind::kZero ? Tensor({mm, dl}, 0.0) : gaussian_tensor({mm, dl}, 1.0, rng);
    r.prompts.push_back(reparam_with_noise(tape, q, eps));
    r.eps.push_back(std::move(eps));
  }
  return r;
}

Tensor prompted_image_feature(Tape* tape, const ModelBundle& model, const ImageFeatures& features) {
  if (!prompts_active(model.config)) {
    return image_from_prefix(tape, features.prefix, model.frozen, model.config, nullptr);
  }
  PromptStack stack;
  stack.first_layer = model.config.first_prompt_layer;
  stack.vision = model.trainable.vision_prompts;
  return image_from_prefix(tape, features.prefix, model.frozen, model.config, &stack);
}

Tensor text_features(Tape* tape, const ModelBundle& model, const std::vector<Tensor>& text_prompts,
                     std::span<const std::size_t> classes) {
  if (classes.empty()) throw DimensionError("text_features: no classes requested");
  PromptStack stack;
  stack.first_layer = model.config.first_prompt_layer;
  stack.text = text_prompts;
  const PromptStack* sp = text_prompts.empty() ? nullptr : &stack;
  std::vector<Tensor> rows;
  rows.reserve(classes.size());
  for (std::size_t c : classes) {
    rows.push_back(text_from_prefix(tape, model.text_prefix(c), model.frozen, model.config, sp));
  }
  return concat_rows(tape, rows);
}

}  // namespace vamp

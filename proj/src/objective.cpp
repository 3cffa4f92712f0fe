#include "vamp/objective.hpp"

#include <algorithm>
#include <cmath>

#include "vamp/ops.hpp"

namespace vamp {

namespace {

std::size_t label_position(std::span<const std::size_t> classes, std::size_t label) {
  auto it = std::find(classes.begin(), classes.end(), label);
  if (it == classes.end()) {
    throw MissingClassError("label " + std::to_string(label) + " is not among the scored classes");
  }
  return static_cast<std::size_t>(it - classes.begin());
}

double sample_sd(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  std::vector<double> sq(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - mean) * (v[i] - mean);
  return std::sqrt(pairwise_sum(sq) / static_cast<double>(v.size() - 1));
}

}  // namespace

const Tensor& PrototypeTable::at(std::size_t class_id) const {
  if (!has(class_id)) throw MissingClassError("no prototype for class " + std::to_string(class_id));
  return vectors[class_id];
}

double pairwise_sum(std::span<const double> values) {
  if (values.size() <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

PrototypeTable compute_class_prototypes(const ModelBundle& model, std::span<const Example> examples,
                                        std::span<const std::size_t> required, FeatureCache* cache) {
  const std::size_t classes = model.num_classes(), width = model.config.embed_dim;
  std::vector<std::vector<const Tensor*>> members(classes);
  std::vector<ImageFeatures> owned;
  owned.reserve(examples.size());
  for (const auto& e : examples) {
    if (e.label >= classes) throw MissingClassError("example label " + std::to_string(e.label) + " out of range");
    if (cache) {
      members[e.label].push_back(&cache->get(model, e).frozen_feature);
    } else {
      owned.push_back(image_features(model, e.patches));
      members[e.label].push_back(&owned.back().frozen_feature);
    }
  }
  PrototypeTable table;
  table.vectors.resize(classes);
  table.support.assign(classes, 0);
  for (std::size_t c = 0; c < classes; ++c) {
    const auto& m = members[c];
    if (m.empty()) continue;
    std::vector<double> proto(width), column(m.size());
    for (std::size_t j = 0; j < width; ++j) {
      for (std::size_t i = 0; i < m.size(); ++i) column[i] = m[i]->data()[j];
      std::sort(column.begin(), column.end());  // order-free, so permuted inputs give identical bits
      proto[j] = pairwise_sum(column) / static_cast<double>(m.size());
    }
    table.vectors[c] = Tensor({1, width}, std::move(proto));
    table.support[c] = m.size();
  }
  for (std::size_t c : required) {
    if (!table.has(c)) throw MissingClassError("class " + std::to_string(c) + " has no training examples");
  }
  return table;
}

LossBreakdown elbo_loss(Tape* tape, std::span<const Example> batch, const ModelBundle& model,
                        const PrototypeTable* prototypes, double beta, const NoiseSpec& noise,
                        std::span<const std::size_t> classes, FeatureCache* cache) {
  if (batch.empty()) throw DimensionError("elbo_loss: empty batch");
  if (!(beta >= 0.0)) throw ConfigError("beta must be >= 0");
  const EncoderConfig& cfg = model.config;
  const bool variational = is_variational(model.mode) && noise.kind != NoiseSpec::Kind::kPriorSample;
  const bool class_prior = model.mode == AblationMode::kVariationalClassPrior;
  if (variational && class_prior) {
    if (!prototypes) throw MissingClassError("class-aware prior needs a prototype table");
    for (const auto& e : batch) prototypes->at(e.label);
  }

  // Task-shared prompts do not depend on the image, so the class texts are shared by the batch.
  Tensor shared_texts;
  if (model.mode == AblationMode::kTaskShared) {
    shared_texts = text_features(tape, model, model.trainable.text_prompts, classes);
  }

  LossBreakdown out;
  out.beta = beta;
  Tensor nll_sum, kl_sum;
  for (const auto& e : batch) {
    const std::size_t target = label_position(classes, e.label);
    ImageFeatures local;
    const ImageFeatures& feats = cache ? cache->get(model, e) : (local = image_features(model, e.patches));
    Tensor f = prompted_image_feature(tape, model, feats);
    TextPromptResult tp;
    Tensor texts = shared_texts;
    if (!texts.defined()) {
      tp = text_prompts_for(tape, model, feats, e.id, noise);
      texts = text_features(tape, model, tp.prompts, classes);
    }
    Tensor logp = log_softmax_rows(tape, classify_logits(tape, f, texts, cfg.tau));
    if (argmax(logp.data()) == target) ++out.correct;
    Tensor nll = scale(tape, element(tape, logp, target), -1.0);
    nll_sum = nll_sum.defined() ? add(tape, nll_sum, nll) : nll;

    if (variational && !tp.posterior.empty()) {
      std::vector<DiagGaussian> priors;
      if (class_prior) priors = prior_params(tape, prototypes->at(e.label), model.trainable.prior, cfg);
      for (std::size_t i = 0; i < tp.posterior.size(); ++i) {
        const DiagGaussian& q = tp.posterior[i];
        const DiagGaussian p = class_prior ? priors[i] : DiagGaussian::standard(q.mu.rows(), q.mu.cols());
        Tensor kl = kl_diag_gaussians(tape, q, p);
        kl_sum = kl_sum.defined() ? add(tape, kl_sum, kl) : kl;
      }
    }
  }
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  Tensor nll_mean = scale(tape, nll_sum, inv_n);
  out.nll = nll_mean.item();
  if (kl_sum.defined()) {
    Tensor kl_mean = scale(tape, kl_sum, inv_n);
    out.kl = kl_mean.item();
    out.total = beta == 0.0 ? nll_mean : add(tape, nll_mean, scale(tape, kl_mean, beta));
  } else {
    out.total = nll_mean;
  }
  return out;
}

double JensenCheck::combined_se() const { return std::sqrt(elbo_se * elbo_se + mll_se * mll_se); }

JensenCheck marginal_log_likelihood_lower_bound_check(const ModelBundle& model, const Example& example,
                                                      std::span<const std::size_t> classes, std::size_t n_draws,
                                                      std::uint64_t seed) {
  if (n_draws == 0) throw ConfigError("need at least one draw");
  const std::size_t target = label_position(classes, example.label);
  const ImageFeatures feats = image_features(model, example.patches);
  const Tensor f = prompted_image_feature(nullptr, model, feats);
  std::vector<double> logp(n_draws);
  for (std::size_t s = 0; s < n_draws; ++s) {
    NoiseSpec noise{NoiseSpec::Kind::kSample, seed, 0, s};
    auto tp = text_prompts_for(nullptr, model, feats, example.id, noise);
    Tensor texts = text_features(nullptr, model, tp.prompts, classes);
    logp[s] = log_softmax_rows(nullptr, classify_logits(nullptr, f, texts, model.config.tau)).data()[target];
  }
  JensenCheck r;
  r.draws = n_draws;
  const double n = static_cast<double>(n_draws);
  r.elbo_est = pairwise_sum(logp) / n;
  r.elbo_se = sample_sd(logp, r.elbo_est) / std::sqrt(n);
  const double peak = *std::max_element(logp.begin(), logp.end());
  std::vector<double> w(n_draws);
  for (std::size_t s = 0; s < n_draws; ++s) w[s] = std::exp(logp[s] - peak);
  const double wmean = pairwise_sum(w) / n;
  r.mll_est = peak + std::log(wmean);
  // Delta method: se(log mean) = se(mean) / mean.
  r.mll_se = sample_sd(w, wmean) / (wmean * std::sqrt(n));
  return r;
}

}  // namespace vamp

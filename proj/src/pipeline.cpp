#include "vamp/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <thread>

#include "vamp/ops.hpp"

namespace vamp {

namespace {

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::string batch_diagnostics(std::span<const Example> batch, const LossBreakdown& loss, std::size_t epoch,
                              std::size_t step) {
  std::ostringstream os;
  os << "non-finite loss at epoch " << epoch << " step " << step << " (nll=" << loss.nll << ", kl=" << loss.kl
     << ", beta=" << loss.beta << "); batch:";
  for (const auto& e : batch) {
    double lo = INFINITY, hi = -INFINITY;
    for (double v : e.patches.data()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    os << " [id=" << e.id << " label=" << e.label << " patch range " << lo << ".." << hi << "]";
  }
  return os.str();
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train config: batch_size must be positive");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("train config: lr must be finite and >= 0");
  if (!(weight_decay >= 0.0) || !std::isfinite(weight_decay)) throw ConfigError("train config: weight_decay must be >= 0");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw ConfigError("train config: beta must be finite and >= 0");
  if (samples == 0) throw ConfigError("train config: samples must be >= 1");
  if (threads == 0) throw ConfigError("train config: threads must be >= 1");
}

void adamw_step(std::span<Tensor* const> params, AdamState& state, const AdamHyper& h) {
  if (state.m.empty()) {
    for (Tensor* p : params) {
      state.m.emplace_back(p->size(), 0.0);
      state.v.emplace_back(p->size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw DimensionError("adamw: optimizer state tracks a different parameter list");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(h.beta1, t), bc2 = 1.0 - std::pow(h.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != p.size()) throw DimensionError("adamw: state size mismatch for parameter " + std::to_string(k));
    const bool has = p.has_grad();
    std::span<const double> g = has ? p.grad() : std::span<const double>{};
    if (has && g.size() != p.size()) {
      throw DimensionError("adamw: gradient " + std::to_string(g.size()) + " for parameter " + shape_str(p.shape()));
    }
    auto x = p.mutable_data();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double gi = has ? g[i] : 0.0;
      x[i] -= h.lr * h.weight_decay * x[i];
      m[i] = h.beta1 * m[i] + (1.0 - h.beta1) * gi;
      v[i] = h.beta2 * v[i] + (1.0 - h.beta2) * gi * gi;
      x[i] -= h.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + h.eps);
    }
  }
}

std::string history_csv(const std::vector<EpochMetrics>& history) {
  std::string out = "epoch,nll,kl,total,base_train_acc\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + "," + fmt("%.17g", r.nll) + "," + fmt("%.17g", r.kl) + "," +
           fmt("%.17g", r.total) + "," + fmt("%.17g", r.base_train_acc) + "\n";
  }
  return out;
}

TrainResult train(const TrainConfig& config, const Dataset& data, ModelBundle& model) {
  config.validate();
  if (model.mode != config.mode) {
    throw ConfigError("model was built for " + to_string(model.mode) + " but the train config asks for " +
                      to_string(config.mode));
  }
  if (data.base_train.empty()) throw ConfigError("training split is empty");
  const auto classes = model.base_class_ids();
  FeatureCache cache;
  TrainResult result;
  result.prototypes = compute_class_prototypes(model, data.base_train, classes, &cache);
  result.frozen_fingerprint = model.frozen.fingerprint();

  const std::size_t n = data.base_train.size(), bs = config.batch_size;
  const std::size_t steps_per_epoch = (n + bs - 1) / bs;
  const double warmup_steps = 0.2 * static_cast<double>(steps_per_epoch * config.epochs);

  {
    const NoiseSpec noise{NoiseSpec::Kind::kSample, config.seed, 0, 0};
    double total = 0.0;
    for (std::size_t b = 0; b < n; b += bs) {
      const std::size_t e = std::min(n, b + bs);
      std::span<const Example> batch(data.base_train.data() + b, e - b);
      auto l = elbo_loss(nullptr, batch, model, &result.prototypes, config.beta, noise, classes, &cache);
      total += l.total.item() * static_cast<double>(e - b);
    }
    result.initial_total = total / static_cast<double>(n);
  }

  const auto params = model.active_parameters();
  AdamState state;
  const AdamHyper hyper{config.lr, config.weight_decay};
  std::size_t step = 0;
  std::vector<Example> batch;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(derive_seed({config.seed, epoch, 0x5e9f1e5ULL}));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    const NoiseSpec noise{NoiseSpec::Kind::kSample, config.seed, epoch, 0};
    EpochMetrics em;
    em.epoch = epoch;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < n; b += bs, ++step) {
      batch.clear();
      for (std::size_t i = b; i < std::min(n, b + bs); ++i) batch.push_back(data.base_train[order[i]]);
      double beta = config.beta;
      if (config.beta_warmup && warmup_steps > 0.0) {
        beta *= std::min(1.0, static_cast<double>(step + 1) / warmup_steps);
      }
      Tape tape;
      LossBreakdown loss = elbo_loss(&tape, batch, model, &result.prototypes, beta, noise, classes, &cache);
      const double total = loss.total.item();
      if (!std::isfinite(total) || !std::isfinite(loss.nll) || !std::isfinite(loss.kl)) {
        throw NumericError(batch_diagnostics(batch, loss, epoch, step));
      }
      for (Tensor* p : params) p->zero_grad();
      tape.backward(loss.total);
      adamw_step(params, state, hyper);
      if (model.frozen.fingerprint() != result.frozen_fingerprint) {
        throw std::logic_error("frozen encoder parameters changed during training");
      }
      const double w = static_cast<double>(batch.size());
      em.nll += loss.nll * w;
      em.kl += loss.kl * w;
      em.total += total * w;
      correct += loss.correct;
    }
    const double dn = static_cast<double>(n);
    em.nll /= dn;
    em.kl /= dn;
    em.total /= dn;
    em.base_train_acc = static_cast<double>(correct) / dn;
    result.history.push_back(em);
  }
  for (Tensor* p : params) p->zero_grad();
  model.round_to_f32();
  return result;
}

std::vector<double> mc_predict(const ModelBundle& model, const ImageFeatures& features, std::uint64_t example_id,
                               std::span<const std::size_t> classes, const PredictOptions& options) {
  if (options.samples == 0) throw ConfigError("need at least one Monte Carlo sample");
  const Tensor f = prompted_image_feature(nullptr, model, features);
  auto probs_for = [&](const NoiseSpec& noise) {
    auto tp = text_prompts_for(nullptr, model, features, example_id, noise);
    Tensor texts = text_features(nullptr, model, tp.prompts, classes);
    return softmax_rows(nullptr, classify_logits(nullptr, f, texts, model.config.tau)).to_vector();
  };
  if (!is_variational(model.mode)) return probs_for(NoiseSpec{NoiseSpec::Kind::kZero, 0, 0, 0});
  const auto kind = options.prior_sampling ? NoiseSpec::Kind::kPriorSample : NoiseSpec::Kind::kSample;
  // Running mean: identical draws reproduce the single-draw output exactly.
  std::vector<double> avg(classes.size(), 0.0);
  for (std::size_t s = 0; s < options.samples; ++s) {
    const std::uint64_t draw = options.repeat_first_draw ? 0 : s;
    const auto p = probs_for(NoiseSpec{kind, options.seed, kInferenceEpoch, draw});
    const double k = static_cast<double>(s + 1);
    for (std::size_t c = 0; c < avg.size(); ++c) avg[c] += (p[c] - avg[c]) / k;
  }
  return avg;
}

EvalResult evaluate(const ModelBundle& model, std::span<const Example> examples,
                    std::span<const std::size_t> classes, const PredictOptions& options, std::size_t threads) {
  if (examples.empty()) throw ConfigError("evaluation split is empty");
  if (classes.empty()) throw ConfigError("no classes to evaluate against");
  const std::size_t n = examples.size();
  std::vector<std::size_t> pred(n);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const ImageFeatures feats = image_features(model, examples[i].patches);
      const auto p = mc_predict(model, feats, examples[i].id, classes, options);
      pred[i] = classes[argmax(p)];
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    work(0, n);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(threads);
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          work(std::min(n, t * chunk), std::min(n, (t + 1) * chunk));
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
  }
  EvalResult r;
  r.count = n;
  r.predictions = pred;
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> tally;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto& [hit, total] = tally[examples[i].label];
    ++total;
    if (pred[i] == examples[i].label) {
      ++hit;
      ++correct;
    }
  }
  r.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  for (const auto& [c, ht] : tally) r.per_class[c] = static_cast<double>(ht.first) / static_cast<double>(ht.second);
  return r;
}

double harmonic_mean(double base, double novel) {
  if (base + novel == 0.0) return 0.0;
  return 2.0 * base * novel / (base + novel);
}

AblationRow run_one(const EncoderConfig& encoder, TrainConfig train_config, const Dataset& data, AblationMode mode,
                    std::uint64_t seed, ModelBundle* trained) {
  train_config.mode = mode;
  train_config.seed = seed;
  BuildOptions build;
  build.encoder_seed = train_config.encoder_seed;
  build.init_seed = seed;
  ModelBundle model = build_model(encoder, data.task, mode, build);
  train(train_config, data, model);
  const PredictOptions predict{train_config.samples, seed, train_config.prior_sampling, false};
  AblationRow row;
  row.mode = mode;
  row.seed = seed;
  row.base_acc = evaluate(model, data.base_test, model.base_class_ids(), predict, train_config.threads).accuracy;
  row.novel_acc = evaluate(model, data.novel_test, model.novel_class_ids(), predict, train_config.threads).accuracy;
  row.harmonic = harmonic_mean(row.base_acc, row.novel_acc);
  if (trained) *trained = std::move(model);
  return row;
}

std::vector<AblationRow> ablate(const EncoderConfig& encoder, const TrainConfig& train_config, const Dataset& data,
                                const AblationOptions& options) {
  std::vector<AblationRow> rows;
  for (AblationMode mode : options.modes) {
    for (std::uint64_t seed : options.seeds) rows.push_back(run_one(encoder, train_config, data, mode, seed));
  }
  return rows;
}

PairedComparison compare_novel(const std::vector<AblationRow>& rows, AblationMode candidate, AblationMode baseline) {
  PairedComparison pc;
  pc.candidate = candidate;
  pc.baseline = baseline;
  double delta = 0.0;
  for (const auto& a : rows) {
    if (a.mode != candidate) continue;
    for (const auto& b : rows) {
      if (b.mode != baseline || b.seed != a.seed) continue;
      ++pc.pairs;
      if (a.novel_acc >= b.novel_acc) ++pc.wins;
      delta += a.novel_acc - b.novel_acc;
    }
  }
  if (pc.pairs > 0) pc.mean_delta = delta / static_cast<double>(pc.pairs);
  return pc;
}

std::vector<PairedComparison> standard_comparisons(const std::vector<AblationRow>& rows) {
  return {compare_novel(rows, AblationMode::kSampleDeterministic, AblationMode::kTaskShared),
          compare_novel(rows, AblationMode::kVariationalStdPrior, AblationMode::kSampleDeterministic),
          compare_novel(rows, AblationMode::kVariationalClassPrior, AblationMode::kVariationalStdPrior)};
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "mode,seed,base_acc,novel_acc,harmonic_mean\n";
  for (const auto& r : rows) {
    out += to_string(r.mode) + "," + std::to_string(r.seed) + "," + fmt("%.6f", r.base_acc) + "," +
           fmt("%.6f", r.novel_acc) + "," + fmt("%.6f", r.harmonic) + "\n";
  }
  return out;
}

}  // namespace vamp

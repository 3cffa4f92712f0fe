#include "vamp/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "vamp/ops.hpp"

namespace vamp {

namespace {

std::string num(double v, const char* spec = "%.9g") {
  char buf[64];
  std::snprintf(buf, sizeof buf, spec, v);
  return buf;
}

std::vector<std::size_t> resolve_layers(const ModelBundle& model, const std::vector<std::size_t>& layers) {
  const auto& c = model.config;
  if (!is_variational(model.mode)) {
    throw ConfigError("mode " + to_string(model.mode) + " has no posterior to dump");
  }
  std::vector<std::size_t> out = layers;
  if (out.empty()) {
    for (std::size_t i = 0; i < c.prompt_depth; ++i) out.push_back(c.first_prompt_layer + i);
  }
  for (std::size_t l : out) {
    if (!c.is_prompted(l)) {
      throw ConfigError("layer " + std::to_string(l) + " is not prompted (prompted layers are " +
                        std::to_string(c.first_prompt_layer) + ".." +
                        std::to_string(c.first_prompt_layer + c.prompt_depth - 1) + ")");
    }
  }
  return out;
}

}  // namespace

bool GradcheckReport::pass() const {
  return !groups.empty() && std::all_of(groups.begin(), groups.end(), [](const GroupReport& g) { return g.pass; });
}

std::string GradcheckReport::format() const {
  std::ostringstream os;
  for (const auto& g : groups) {
    os << (g.pass ? "PASS " : "FAIL ") << to_string(g.mode) << " " << g.group << " checked=" << g.checked
       << " max_rel_err=" << num(g.max_rel_err, "%.3e") << " worst=" << g.worst << "\n";
  }
  os << (pass() ? "gradcheck: all groups passed" : "gradcheck: FAILED") << "\n";
  return os.str();
}

GradcheckReport gradcheck_model(ModelBundle& model, const Dataset& data, const GradcheckOptions& o) {
  const auto classes = model.base_class_ids();
  if (data.base_train.size() < o.batch) throw ConfigError("gradcheck: not enough training examples for the batch");
  // Spread the batch over classes: take every k-th example.
  std::vector<Example> batch;
  const std::size_t stride = data.base_train.size() / o.batch;
  for (std::size_t i = 0; i < o.batch; ++i) batch.push_back(data.base_train[i * stride]);
  FeatureCache cache;
  const PrototypeTable protos = compute_class_prototypes(model, data.base_train, classes, &cache);
  const NoiseSpec noise{NoiseSpec::Kind::kSample, o.seed, 0, 0};

  auto groups = model.active_groups();
  Rng rng(derive_seed({o.seed, 0x9c4ecULL}));
  std::normal_distribution<double> normal(0.0, o.perturb);
  for (auto& g : groups) {
    for (auto& [name, t] : g.tensors) {
      for (double& v : t->mutable_data()) v += normal(rng);
    }
  }

  Tape tape;
  auto loss = elbo_loss(&tape, batch, model, &protos, o.beta, noise, classes, &cache);
  for (auto& g : groups) {
    for (auto& [name, t] : g.tensors) t->zero_grad();
  }
  tape.backward(loss.total);
  auto eval = [&] { return elbo_loss(nullptr, batch, model, &protos, o.beta, noise, classes, &cache).total.item(); };

  GradcheckReport report;
  for (auto& g : groups) {
    GroupReport gr;
    gr.mode = model.mode;
    gr.group = g.name;
    for (auto& [name, t] : g.tensors) {
      const std::vector<double> analytic = t->has_grad() ? std::vector<double>(t->grad().begin(), t->grad().end())
                                                         : std::vector<double>(t->size(), 0.0);
      std::uniform_int_distribution<std::size_t> pick(0, t->size() - 1);
      const std::size_t k = std::min(o.coords_per_tensor, t->size());
      for (std::size_t c = 0; c < k; ++c) {
        const std::size_t idx = k == t->size() ? c : pick(rng);
        double& x = t->mutable_data()[idx];
        const double saved = x;
        x = saved + o.h;
        const double up = eval();
        x = saved - o.h;
        const double down = eval();
        x = saved;
        const double numeric = (up - down) / (2.0 * o.h);
        const double a = analytic[idx];
        const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), o.abs_floor});
        ++gr.checked;
        if (gr.worst.empty() || err > gr.max_rel_err) {
          gr.max_rel_err = err;
          gr.worst = name + "[" + std::to_string(idx) + "]";
        }
      }
    }
    gr.pass = gr.checked > 0 && gr.max_rel_err <= o.tolerance;
    report.groups.push_back(gr);
  }
  return report;
}

GradcheckReport run_gradcheck(const EncoderConfig& encoder, const Dataset& data, std::span<const AblationMode> modes,
                              const GradcheckOptions& options, std::uint64_t encoder_seed) {
  GradcheckReport all;
  for (AblationMode mode : modes) {
    BuildOptions build;
    build.encoder_seed = encoder_seed;
    build.init_seed = options.seed;
    ModelBundle model = build_model(encoder, data.task, mode, build);
    auto r = gradcheck_model(model, data, options);
    all.groups.insert(all.groups.end(), r.groups.begin(), r.groups.end());
  }
  return all;
}

std::vector<PosteriorRow> dump_posterior(const ModelBundle& model, std::span<const Example> examples,
                                         const std::vector<std::size_t>& layers) {
  const auto chosen = resolve_layers(model, layers);
  if (examples.empty()) throw ConfigError("no images to dump");
  const std::size_t j = model.config.first_prompt_layer;
  std::vector<std::vector<AggregatedPosterior>> per_image;
  for (const auto& e : examples) {
    const ImageFeatures f = image_features(model, e.patches);
    per_image.push_back(aggregate_posterior(posterior_params(nullptr, f.frozen_feature, model.trainable.posterior,
                                                             model.config)));
  }
  std::vector<PosteriorRow> rows;
  for (std::size_t layer : chosen) {
    const std::size_t li = layer - j;
    const std::size_t d = per_image.front()[li].mean.size();
    std::vector<double> coords(examples.size() * 2, 0.0);
    if (examples.size() >= 2) {
      std::vector<double> means;
      for (const auto& p : per_image) means.insert(means.end(), p[li].mean.begin(), p[li].mean.end());
      const auto pca = pca_project_2d(Tensor({examples.size(), d}, std::move(means)));
      coords = pca.coords.to_vector();
    }
    for (std::size_t i = 0; i < examples.size(); ++i) {
      PosteriorRow r;
      r.image_id = examples[i].id;
      r.label = examples[i].label;
      r.layer = layer;
      r.pc1 = coords[i * 2];
      r.pc2 = coords[i * 2 + 1];
      r.mean = per_image[i][li].mean;
      r.var = per_image[i][li].var;
      rows.push_back(std::move(r));
    }
  }
  return rows;
}

std::string posterior_csv(const std::vector<PosteriorRow>& rows) {
  std::string out = "image_id,label,layer,pc1,pc2";
  const std::size_t d = rows.empty() ? 0 : rows.front().mean.size();
  for (std::size_t k = 0; k < d; ++k) out += ",mu_agg_" + std::to_string(k);
  for (std::size_t k = 0; k < d; ++k) out += ",var_agg_" + std::to_string(k);
  out += "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.image_id) + "," + std::to_string(r.label) + "," + std::to_string(r.layer) + "," +
           num(r.pc1) + "," + num(r.pc2);
    for (double v : r.mean) out += "," + num(v);
    for (double v : r.var) out += "," + num(v);
    out += "\n";
  }
  return out;
}

std::string raw_posterior_csv(const ModelBundle& model, std::span<const Example> examples,
                              const std::vector<std::size_t>& layers) {
  const auto chosen = resolve_layers(model, layers);
  std::string out = "image_id,label,layer,token,coordinate,mu,log_var\n";
  for (const auto& e : examples) {
    const ImageFeatures f = image_features(model, e.patches);
    const auto dists = posterior_params(nullptr, f.frozen_feature, model.trainable.posterior, model.config);
    for (std::size_t layer : chosen) {
      const auto& q = dists[layer - model.config.first_prompt_layer];
      for (std::size_t t = 0; t < q.mu.rows(); ++t) {
        for (std::size_t c = 0; c < q.mu.cols(); ++c) {
          out += std::to_string(e.id) + "," + std::to_string(e.label) + "," + std::to_string(layer) + "," +
                 std::to_string(t) + "," + std::to_string(c) + "," + num(q.mu(t, c)) + "," + num(q.log_var(t, c)) +
                 "\n";
        }
      }
    }
  }
  return out;
}

}  // namespace vamp

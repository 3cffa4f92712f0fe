#include "vamp/variational.hpp"

#include <cmath>

#include "vamp/ops.hpp"

namespace vamp {

namespace {

void require_coverage(std::size_t nets, const EncoderConfig& config, const char* what) {
  if (nets != config.prompt_depth) {
    throw ConfigError(std::string(what) + ": " + std::to_string(nets) + " layer networks for " +
                      std::to_string(config.prompt_depth) + " prompted layers");
  }
}

std::vector<DiagGaussian> gaussian_heads(Tape* tape, const Tensor& input, const std::vector<MlpParams>& nets,
                                         const EncoderConfig& config, const char* what) {
  require_coverage(nets.size(), config, what);
  const std::size_t m = config.prompt_tokens, d = config.text_width;
  std::vector<DiagGaussian> out;
  out.reserve(nets.size());
  for (const auto& net : nets) {
    if (net.out_width() != 2 * m * d) {
      throw ConfigError(std::string(what) + ": network emits " + std::to_string(net.out_width()) +
                        " values, expected 2*M*d = " + std::to_string(2 * m * d));
    }
    Tensor raw = net.forward(tape, input);
    Tensor mu = reshape(tape, slice_cols(tape, raw, 0, m * d), {m, d});
    Tensor lv = reshape(tape, slice_cols(tape, raw, m * d, 2 * m * d), {m, d});
    out.push_back(DiagGaussian::from_raw(tape, std::move(mu), lv));
  }
  return out;
}

}  // namespace

MlpParams MlpParams::init(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng, double stddev) {
  MlpParams p;
  p.w1 = gaussian_tensor({in, hidden}, stddev, rng);
  p.b1 = Tensor({hidden}, 0.0);
  p.w2 = gaussian_tensor({hidden, out}, stddev, rng);
  p.b2 = Tensor({out}, 0.0);
  for (Tensor* t : {&p.w1, &p.b1, &p.w2, &p.b2}) t->set_requires_grad(true);
  return p;
}

MlpParams MlpParams::zeros(std::size_t in, std::size_t hidden, std::size_t out) {
  MlpParams p;
  p.w1 = Tensor({in, hidden}, 0.0);
  p.b1 = Tensor({hidden}, 0.0);
  p.w2 = Tensor({hidden, out}, 0.0);
  p.b2 = Tensor({out}, 0.0);
  for (Tensor* t : {&p.w1, &p.b1, &p.w2, &p.b2}) t->set_requires_grad(true);
  return p;
}

Tensor MlpParams::forward(Tape* tape, const Tensor& x) const {
  if (x.size() != in_width()) {
    throw DimensionError("mlp input " + shape_str(x.shape()) + " for input width " + std::to_string(in_width()));
  }
  Tensor row = x.rows() == 1 && x.rank() == 2 ? x : reshape(tape, x, {1, x.size()});
  Tensor h = gelu(tape, add_row_vector(tape, matmul(tape, row, w1), b1));
  return add_row_vector(tape, matmul(tape, h, w2), b2);
}

void MlpParams::append_named(std::vector<std::pair<std::string, Tensor*>>& out, const std::string& prefix) {
  out.emplace_back(prefix + "w1", &w1);
  out.emplace_back(prefix + "b1", &b1);
  out.emplace_back(prefix + "w2", &w2);
  out.emplace_back(prefix + "b2", &b2);
}

DiagGaussian DiagGaussian::from_raw(Tape* tape, Tensor mu, const Tensor& raw_log_var) {
  if (mu.shape() != raw_log_var.shape()) {
    throw DimensionError("gaussian mean " + shape_str(mu.shape()) + " vs log-variance " +
                         shape_str(raw_log_var.shape()));
  }
  return {std::move(mu), clamp(tape, raw_log_var, kLogVarMin, kLogVarMax)};
}

DiagGaussian DiagGaussian::standard(std::size_t rows, std::size_t cols) {
  return {Tensor({rows, cols}, 0.0), Tensor({rows, cols}, 0.0)};
}

Tensor DiagGaussian::sigma(Tape* tape) const { return exp(tape, scale(tape, log_var, 0.5)); }

std::vector<Tensor> generate_prompts_deterministic(Tape* tape, const Tensor& feature,
                                                   const std::vector<MlpParams>& generators,
                                                   const EncoderConfig& config) {
  require_coverage(generators.size(), config, "prompt generators");
  const std::size_t m = config.prompt_tokens, d = config.text_width;
  std::vector<Tensor> prompts;
  prompts.reserve(generators.size());
  for (const auto& g : generators) {
    if (g.out_width() != m * d) {
      throw ConfigError("prompt generator emits " + std::to_string(g.out_width()) + " values, expected M*d = " +
                        std::to_string(m * d));
    }
    prompts.push_back(reshape(tape, g.forward(tape, feature), {m, d}));
  }
  return prompts;
}

std::vector<DiagGaussian> posterior_params(Tape* tape, const Tensor& frozen_feature,
                                           const std::vector<MlpParams>& nets, const EncoderConfig& config) {
  return gaussian_heads(tape, frozen_feature, nets, config, "posterior networks");
}

std::vector<DiagGaussian> prior_params(Tape* tape, const Tensor& prototype, const std::vector<MlpParams>& nets,
                                       const EncoderConfig& config) {
  return gaussian_heads(tape, prototype, nets, config, "prior networks");
}

Tensor reparam_with_noise(Tape* tape, const DiagGaussian& dist, const Tensor& eps) {
  if (eps.shape() != dist.mu.shape()) {
    throw DimensionError("noise " + shape_str(eps.shape()) + " for latent " + shape_str(dist.mu.shape()));
  }
  return add(tape, dist.mu, mul(tape, dist.sigma(tape), eps));
}

ReparamDraw reparam_sample(Tape* tape, const DiagGaussian& dist, Rng& rng) {
  Tensor eps = gaussian_tensor(dist.mu.shape(), 1.0, rng);
  Tensor z = reparam_with_noise(tape, dist, eps);
  return {std::move(z), std::move(eps)};
}

LatentPromptSample sample_latent_prompts(Tape* tape, const std::vector<DiagGaussian>& dists, Rng& rng) {
  LatentPromptSample s;
  for (const auto& d : dists) {
    auto draw = reparam_sample(tape, d, rng);
    s.z.push_back(std::move(draw.z));
    s.eps.push_back(std::move(draw.eps));
  }
  return s;
}

Tensor kl_diag_gaussians(Tape* tape, const DiagGaussian& q, const DiagGaussian& p) {
  return gaussian_kl(tape, q.mu, q.log_var, p.mu, p.log_var);
}

std::vector<AggregatedPosterior> aggregate_posterior(const std::vector<DiagGaussian>& dists) {
  std::vector<AggregatedPosterior> out;
  out.reserve(dists.size());
  for (const auto& g : dists) {
    const std::size_t m = g.mu.rows(), d = g.mu.cols();
    if (m == 0) throw DimensionError("aggregate_posterior: no prompt tokens");
    AggregatedPosterior agg{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t c = 0; c < d; ++c) {
        agg.mean[c] += g.mu(j, c);
        agg.var[c] += std::exp(g.log_var(j, c));
      }
    }
    for (std::size_t c = 0; c < d; ++c) {
      agg.mean[c] /= static_cast<double>(m);
      agg.var[c] /= static_cast<double>(m);
    }
    out.push_back(std::move(agg));
  }
  return out;
}

}  // namespace vamp

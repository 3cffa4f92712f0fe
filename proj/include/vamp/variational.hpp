#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "vamp/encoders.hpp"
#include "vamp/rng.hpp"
#include "vamp/tensor.hpp"

namespace vamp {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;
inline constexpr double kInitStd = 0.02;

// Two affine layers with GELU between.
struct MlpParams {
  Tensor w1, b1;  // in x hidden, hidden
  Tensor w2, b2;  // hidden x out, out

  static MlpParams init(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng, double stddev = kInitStd);
  static MlpParams zeros(std::size_t in, std::size_t hidden, std::size_t out);

  std::size_t in_width() const { return w1.rows(); }
  std::size_t out_width() const { return w2.cols(); }
  Tensor forward(Tape* tape, const Tensor& x) const;
  void append_named(std::vector<std::pair<std::string, Tensor*>>& out, const std::string& prefix);
};

// Diagonal Gaussian over M x d prompt tokens, parameterised by log-variance
// clamped to [kLogVarMin, kLogVarMax].
struct DiagGaussian {
  Tensor mu;
  Tensor log_var;

  // Applies the clamp (differentiably) to raw_log_var.
  static DiagGaussian from_raw(Tape* tape, Tensor mu, const Tensor& raw_log_var);
  static DiagGaussian standard(std::size_t rows, std::size_t cols);

  Tensor sigma(Tape* tape) const;
};

// One reparameterised draw per prompted layer, with the noise that produced it.
struct LatentPromptSample {
  std::vector<Tensor> z;
  std::vector<Tensor> eps;
};

struct ReparamDraw {
  Tensor z;
  Tensor eps;
};

// One M x d_l prompt per prompted layer, mapped directly from the image feature.
std::vector<Tensor> generate_prompts_deterministic(Tape* tape, const Tensor& feature,
                                                   const std::vector<MlpParams>& generators,
                                                   const EncoderConfig& config);

// Image-conditioned posterior q(z_i | x), one per prompted layer.
std::vector<DiagGaussian> posterior_params(Tape* tape, const Tensor& frozen_feature,
                                           const std::vector<MlpParams>& nets, const EncoderConfig& config);

// Class-aware prior p(z_i | o_y) from a class prototype.
std::vector<DiagGaussian> prior_params(Tape* tape, const Tensor& prototype, const std::vector<MlpParams>& nets,
                                       const EncoderConfig& config);

// z = mu + sigma * eps, eps ~ N(0, I) drawn from rng.
ReparamDraw reparam_sample(Tape* tape, const DiagGaussian& dist, Rng& rng);
// Same transform with caller-supplied noise.
Tensor reparam_with_noise(Tape* tape, const DiagGaussian& dist, const Tensor& eps);
LatentPromptSample sample_latent_prompts(Tape* tape, const std::vector<DiagGaussian>& dists, Rng& rng);

// Scalar KL(q || p) summed over all coordinates.
Tensor kl_diag_gaussians(Tape* tape, const DiagGaussian& q, const DiagGaussian& p);

// Token-averaged mean and diagonal covariance of one layer's posterior.
struct AggregatedPosterior {
  std::vector<double> mean;
  std::vector<double> var;
};
std::vector<AggregatedPosterior> aggregate_posterior(const std::vector<DiagGaussian>& dists);

}  // namespace vamp

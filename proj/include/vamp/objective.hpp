#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "vamp/model.hpp"

namespace vamp {

class MissingClassError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Per-class mean of promptless frozen image features over the training set.
struct PrototypeTable {
  std::vector<Tensor> vectors;        // 1 x d_vl each; undefined for classes without support
  std::vector<std::uint64_t> support;

  std::size_t num_classes() const { return vectors.size(); }
  bool has(std::size_t class_id) const { return class_id < support.size() && support[class_id] > 0; }
  const Tensor& at(std::size_t class_id) const;
};

// Prototypes for every class in [0, num_classes). Classes listed in
// required must have at least one example.
PrototypeTable compute_class_prototypes(const ModelBundle& model, std::span<const Example> examples,
                                        std::span<const std::size_t> required, FeatureCache* cache = nullptr);

// Pairwise (cascade) sum; the accumulation order depends only on n.
double pairwise_sum(std::span<const double> values);

struct LossBreakdown {
  Tensor total;  // nll + beta * kl, on the tape
  double nll = 0.0;
  double kl = 0.0;
  double beta = 0.0;
  std::size_t correct = 0;  // argmax hits within the batch
};

// Negated single-draw ELBO averaged over the batch. Labels are scored among
// the given classes; the KL term is summed over prompted layers.
LossBreakdown elbo_loss(Tape* tape, std::span<const Example> batch, const ModelBundle& model,
                        const PrototypeTable* prototypes, double beta, const NoiseSpec& noise,
                        std::span<const std::size_t> classes, FeatureCache* cache = nullptr);

// Same draws give both an ELBO estimate (mean log-likelihood) and a
// Monte Carlo estimate of the marginal log-likelihood (log of the mean
// likelihood), each with a standard error.
struct JensenCheck {
  double elbo_est = 0.0;
  double mll_est = 0.0;
  double elbo_se = 0.0;
  double mll_se = 0.0;
  std::size_t draws = 0;

  double combined_se() const;
};
JensenCheck marginal_log_likelihood_lower_bound_check(const ModelBundle& model, const Example& example,
                                                      std::span<const std::size_t> classes, std::size_t n_draws,
                                                      std::uint64_t seed);

}  // namespace vamp

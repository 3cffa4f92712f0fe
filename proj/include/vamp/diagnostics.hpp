#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vamp/data.hpp"
#include "vamp/model.hpp"
#include "vamp/objective.hpp"

namespace vamp {

// Central finite differences against backward on the batch loss, with the
// reparameterisation noise held fixed.
struct GradcheckOptions {
  std::size_t batch = 4;
  std::size_t coords_per_tensor = 6;
  double h = 1e-5;
  double tolerance = 1e-4;
  double perturb = 0.1;      // moves trainables off their near-zero init
  double abs_floor = 1e-7;   // denominator floor for tiny gradients
  std::uint64_t seed = 0;
  double beta = 1.0;
};

struct GroupReport {
  AblationMode mode{};
  std::string group;
  std::size_t checked = 0;
  double max_rel_err = 0.0;
  std::string worst;  // tensor[index] with the largest error
  bool pass = false;
};

struct GradcheckReport {
  std::vector<GroupReport> groups;
  bool pass() const;
  std::string format() const;
};

GradcheckReport gradcheck_model(ModelBundle& model, const Dataset& data, const GradcheckOptions& options);
// Builds a fresh model per mode and checks every active group.
GradcheckReport run_gradcheck(const EncoderConfig& encoder, const Dataset& data, std::span<const AblationMode> modes,
                              const GradcheckOptions& options, std::uint64_t encoder_seed = 1);

// Token-averaged posterior for one image at one prompted layer, with its 2-D
// PCA coordinates across all dumped images of that layer.
struct PosteriorRow {
  std::uint64_t image_id = 0;
  std::size_t label = 0;
  std::size_t layer = 0;  // encoder block index
  double pc1 = 0.0, pc2 = 0.0;
  std::vector<double> mean, var;
};

// Layers are encoder block indices inside the prompted range; empty means all.
std::vector<PosteriorRow> dump_posterior(const ModelBundle& model, std::span<const Example> examples,
                                         const std::vector<std::size_t>& layers);
std::string posterior_csv(const std::vector<PosteriorRow>& rows);
// Per-coordinate posterior parameters: image_id,label,layer,token,coordinate,mu,log_var.
std::string raw_posterior_csv(const ModelBundle& model, std::span<const Example> examples,
                              const std::vector<std::size_t>& layers);

}  // namespace vamp

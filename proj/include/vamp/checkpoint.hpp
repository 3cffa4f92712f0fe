#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vamp/config.hpp"
#include "vamp/model.hpp"
#include "vamp/objective.hpp"

namespace vamp {

// Everything needed to reproduce predictions: the resolved run config, all
// model tensors (stored as float32), the run's rng key and the prototypes.
struct Checkpoint {
  RunConfig config;
  ModelBundle model;
  PrototypeTable prototypes;
  std::vector<std::uint64_t> rng_state;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace vamp

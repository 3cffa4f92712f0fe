#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "vamp/rng.hpp"
#include "vamp/tensor.hpp"

namespace vamp {

class InfeasibleSpecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Generator settings for a synthetic base/novel few-shot task.
struct SyntheticSpec {
  std::size_t base_classes = 6;
  std::size_t novel_classes = 4;
  std::size_t concept_dim = 8;
  double noise = 0.3;
  std::size_t patches = 4;
  std::size_t patch_dim = 16;
  std::size_t text_width = 32;
  std::size_t shots = 16;
  std::size_t test_per_class = 25;
  std::uint64_t seed = 7;

  std::size_t total_classes() const { return base_classes + novel_classes; }
  std::size_t pool_per_class() const { return shots + test_per_class; }
  void validate() const;
};

enum class Split { kPool, kBaseTrain, kBaseTest, kNovelTest };
std::string to_string(Split split);

struct Example {
  std::uint64_t id = 0;
  Tensor patches;  // B x patch_dim
  std::size_t label = 0;
  Split split = Split::kPool;
};

// Latent class concepts plus the maps that render them into patch grids and
// into class-embedding tokens. Text and vision share the concept vectors.
struct SyntheticTask {
  SyntheticSpec spec;
  Tensor concepts;         // C x concept_dim; rows [0, base) are base classes
  Tensor patch_maps;       // B x concept_dim x patch_dim
  Tensor patch_offsets;    // B x patch_dim
  Tensor text_projection;  // concept_dim x text_width

  // B x patch_dim grid for a concept vector, with per-patch Gaussian noise.
  Tensor render(std::span<const double> latent, double noise, Rng& rng) const;
  // C x text_width table of class-embedding tokens.
  Tensor class_text_embeddings() const;
  std::vector<std::size_t> base_class_ids() const;
  std::vector<std::size_t> novel_class_ids() const;
};

struct GeneratedTask {
  SyntheticTask task;
  std::vector<Example> pool;  // pool_per_class examples per class, ordered by class
};

struct Dataset {
  SyntheticTask task;
  std::vector<Example> base_train;
  std::vector<Example> base_test;
  std::vector<Example> novel_test;

  bool operator==(const Dataset& other) const;
};

GeneratedTask generate_task(const SyntheticSpec& spec);
// Disjoint splits: shot_count per base class for training, the rest of each
// base pool for base-test, and the same number per novel class for novel-test.
Dataset split_base_novel(const GeneratedTask& generated, std::size_t shot_count);
// generate_task + split_base_novel(spec.shots).
Dataset make_dataset(const SyntheticSpec& spec);

std::string spec_to_text(const SyntheticSpec& spec);
void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);
std::string encode_dataset(const Dataset& data);
Dataset decode_dataset(const std::string& bytes);

}  // namespace vamp

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vamp/ops.hpp"
#include "vamp/rng.hpp"
#include "vamp/tensor.hpp"

namespace vamp {

// Shape of the frozen dual encoder and of the prompting schedule.
// Prompts enter layers [first_prompt_layer, first_prompt_layer + prompt_depth).
struct EncoderConfig {
  std::size_t layers = 6;              // K
  std::size_t vision_width = 32;       // d_v
  std::size_t text_width = 32;         // d_l
  std::size_t embed_dim = 16;          // d_vl
  std::size_t patches = 4;             // B
  std::size_t patch_dim = 16;          // raw patch feature width
  std::size_t text_tokens = 4;         // N, template tokens plus the class token
  std::size_t heads = 4;
  std::size_t first_prompt_layer = 3;  // J
  std::size_t prompt_depth = 3;        // H
  std::size_t prompt_tokens = 4;       // M
  double tau = 0.07;

  void validate() const;
  bool prompting() const { return prompt_depth > 0; }
  bool is_prompted(std::size_t layer) const {
    return layer >= first_prompt_layer && layer < first_prompt_layer + prompt_depth;
  }

  static EncoderConfig toy();
  // K=12 with J=5, H=7, M=5 at toy widths.
  static EncoderConfig mmrl();
};

struct FrozenEncoderParams {
  Tensor patch_embed;       // patch_dim x d_v
  Tensor class_token;       // 1 x d_v
  Tensor vision_pos;        // (B + 1) x d_v
  std::vector<TransformerBlockParams> vision_layers;
  Tensor image_proj;        // d_v x d_vl
  Tensor template_tokens;   // (N - 1) x d_l
  Tensor class_embeddings;  // C x d_l
  Tensor text_pos;          // N x d_l
  std::vector<TransformerBlockParams> text_layers;
  Tensor text_proj;         // d_l x d_vl

  std::size_t num_classes() const { return class_embeddings.rows(); }

  std::vector<std::pair<std::string, Tensor*>> named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
  // FNV-1a over every value; used to assert frozen-ness.
  std::uint64_t fingerprint() const;
};

// Random frozen weights. The class-embedding table is supplied by the caller;
// projection heads start random and are normally refit by calibration.
FrozenEncoderParams init_frozen_encoders(const EncoderConfig& config, const Tensor& class_embeddings,
                                         std::uint64_t seed);

// Layer-indexed prompts; entry k applies to layer first_layer + k. An empty
// vector leaves that branch unprompted.
struct PromptStack {
  std::size_t first_layer = 0;
  std::vector<Tensor> text;    // each M x d_l
  std::vector<Tensor> vision;  // each M x d_v

  void validate(const EncoderConfig& config) const;
};

// Sequence entering each layer, captured for inspection.
struct EncoderTrace {
  std::vector<Tensor> layer_inputs;       // promptless part, one per layer, then the final output
  std::vector<std::size_t> seq_lengths;   // tokens fed to each block, prompts included
};

// Promptless sequence entering layer J; constant because everything below J is frozen.
Tensor image_prefix(const Tensor& patches, const FrozenEncoderParams& params, const EncoderConfig& config,
                    EncoderTrace* trace = nullptr);
Tensor image_from_prefix(Tape* tape, const Tensor& prefix, const FrozenEncoderParams& params,
                         const EncoderConfig& config, const PromptStack* prompts, EncoderTrace* trace = nullptr);
// f_x, shape 1 x d_vl. Vision prompts are appended and their outputs dropped.
Tensor encode_image(Tape* tape, const Tensor& patches, const FrozenEncoderParams& params,
                    const EncoderConfig& config, const PromptStack* prompts = nullptr,
                    EncoderTrace* trace = nullptr);

Tensor text_prefix(std::size_t class_id, const FrozenEncoderParams& params, const EncoderConfig& config,
                   EncoderTrace* trace = nullptr);
Tensor text_from_prefix(Tape* tape, const Tensor& prefix, const FrozenEncoderParams& params,
                        const EncoderConfig& config, const PromptStack* prompts, EncoderTrace* trace = nullptr);
// t, shape 1 x d_vl. Text prompts are prepended and their outputs dropped;
// the readout is the final (class) token.
Tensor encode_text(Tape* tape, std::size_t class_id, const FrozenEncoderParams& params,
                   const EncoderConfig& config, const PromptStack* prompts = nullptr,
                   EncoderTrace* trace = nullptr);

// Final readout states before the projection heads, promptless. The text
// variant takes an arbitrary class-token embedding (1 x d_l).
Tensor image_readout_state(const Tensor& patches, const FrozenEncoderParams& params, const EncoderConfig& config);
Tensor text_readout_state(const Tensor& class_embedding, const FrozenEncoderParams& params,
                          const EncoderConfig& config);

// cos(f_x, t_c) / tau for every row of texts. Result 1 x C.
Tensor classify_logits(Tape* tape, const Tensor& image_feature, const Tensor& texts, double tau);
// Lowest index wins ties.
std::size_t argmax(std::span<const double> values);

}  // namespace vamp

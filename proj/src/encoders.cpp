#include "vamp/encoders.hpp"

#include <cmath>
#include <cstring>

namespace vamp {

namespace {

TransformerBlockParams init_block(std::size_t d, Rng& rng) {
  const double s_in = 1.0 / std::sqrt(static_cast<double>(d));
  const double s_hidden = 1.0 / std::sqrt(static_cast<double>(4 * d));
  TransformerBlockParams p;
  p.ln1_gamma = Tensor({d}, 1.0);
  p.ln1_beta = Tensor({d}, 0.0);
  p.w_qkv = gaussian_tensor({d, 3 * d}, s_in, rng);
  p.b_qkv = Tensor({3 * d}, 0.0);
  p.w_out = gaussian_tensor({d, d}, s_in, rng);
  p.b_out = Tensor({d}, 0.0);
  p.ln2_gamma = Tensor({d}, 1.0);
  p.ln2_beta = Tensor({d}, 0.0);
  p.w_fc1 = gaussian_tensor({d, 4 * d}, s_in, rng);
  p.b_fc1 = Tensor({4 * d}, 0.0);
  p.w_fc2 = gaussian_tensor({4 * d, d}, s_hidden, rng);
  p.b_fc2 = Tensor({d}, 0.0);
  return p;
}

void append_block(std::vector<std::pair<std::string, Tensor*>>& out, const std::string& prefix,
                  TransformerBlockParams& b) {
  static const char* kNames[] = {"ln1_gamma", "ln1_beta", "w_qkv", "b_qkv", "w_out", "b_out",
                                 "ln2_gamma", "ln2_beta", "w_fc1", "b_fc1", "w_fc2", "b_fc2"};
  auto tensors = b.tensors();
  for (std::size_t i = 0; i < tensors.size(); ++i) out.emplace_back(prefix + kNames[i], tensors[i]);
}

// Runs blocks [from, to). Prompted layers concatenate their prompt and drop
// the prompt positions from the block output.
Tensor run_layers(Tape* tape, Tensor h, const std::vector<TransformerBlockParams>& blocks, std::size_t from,
                  std::size_t to, std::size_t heads, const std::vector<Tensor>* prompts,
                  std::size_t first_prompt_layer, bool prepend, EncoderTrace* trace) {
  for (std::size_t layer = from; layer < to; ++layer) {
    if (trace) trace->layer_inputs.push_back(h.detach());
    const Tensor* z = nullptr;
    if (prompts && !prompts->empty() && layer >= first_prompt_layer &&
        layer - first_prompt_layer < prompts->size()) {
      z = &(*prompts)[layer - first_prompt_layer];
      if (z->rows() == 0) z = nullptr;
    }
    if (z == nullptr) {
      if (trace) trace->seq_lengths.push_back(h.rows());
      h = attention_block(tape, h, blocks[layer], heads);
      continue;
    }
    const std::size_t len = h.rows(), m = z->rows();
    Tensor x = prepend ? concat_rows(tape, {*z, h}) : concat_rows(tape, {h, *z});
    if (trace) trace->seq_lengths.push_back(x.rows());
    Tensor y = attention_block(tape, x, blocks[layer], heads);
    h = prepend ? slice_rows(tape, y, m, m + len) : slice_rows(tape, y, 0, len);
  }
  return h;
}

}  // namespace

void EncoderConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError("encoder config: " + msg); };
  if (layers == 0) fail("layers must be positive");
  if (vision_width == 0 || text_width == 0 || embed_dim == 0 || patch_dim == 0) fail("widths must be positive");
  if (patches == 0) fail("patch count must be positive");
  if (text_tokens == 0) fail("text_tokens must be positive");
  if (heads == 0 || vision_width % heads != 0 || text_width % heads != 0) {
    fail("widths must be divisible by the head count");
  }
  if (first_prompt_layer + prompt_depth > layers) {
    fail("prompted layers [J, J+H) must lie within [0, K): J=" + std::to_string(first_prompt_layer) +
         " H=" + std::to_string(prompt_depth) + " K=" + std::to_string(layers));
  }
  if (!(tau > 0.0)) fail("tau must be positive");
}

EncoderConfig EncoderConfig::toy() { return EncoderConfig{}; }

EncoderConfig EncoderConfig::mmrl() {
  EncoderConfig c;
  c.layers = 12;
  c.first_prompt_layer = 5;
  c.prompt_depth = 7;
  c.prompt_tokens = 5;
  return c;
}

std::vector<std::pair<std::string, Tensor*>> FrozenEncoderParams::named() {
  std::vector<std::pair<std::string, Tensor*>> out;
  out.emplace_back("frozen.patch_embed", &patch_embed);
  out.emplace_back("frozen.class_token", &class_token);
  out.emplace_back("frozen.vision_pos", &vision_pos);
  for (std::size_t i = 0; i < vision_layers.size(); ++i) {
    append_block(out, "frozen.vision." + std::to_string(i) + ".", vision_layers[i]);
  }
  out.emplace_back("frozen.image_proj", &image_proj);
  out.emplace_back("frozen.template_tokens", &template_tokens);
  out.emplace_back("frozen.class_embeddings", &class_embeddings);
  out.emplace_back("frozen.text_pos", &text_pos);
  for (std::size_t i = 0; i < text_layers.size(); ++i) {
    append_block(out, "frozen.text." + std::to_string(i) + ".", text_layers[i]);
  }
  out.emplace_back("frozen.text_proj", &text_proj);
  return out;
}

std::vector<std::pair<std::string, const Tensor*>> FrozenEncoderParams::named() const {
  auto mut = const_cast<FrozenEncoderParams*>(this)->named();
  std::vector<std::pair<std::string, const Tensor*>> out;
  out.reserve(mut.size());
  for (auto& [name, t] : mut) out.emplace_back(name, t);
  return out;
}

std::uint64_t FrozenEncoderParams::fingerprint() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, t] : named()) {
    for (double v : t->data()) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

FrozenEncoderParams init_frozen_encoders(const EncoderConfig& config, const Tensor& class_embeddings,
                                         std::uint64_t seed) {
  config.validate();
  if (class_embeddings.cols() != config.text_width) {
    throw DimensionError("class embeddings " + shape_str(class_embeddings.shape()) + " for text width " +
                         std::to_string(config.text_width));
  }
  Rng rng(derive_seed({seed, 0xf402e11ULL}));
  const std::size_t dv = config.vision_width, dl = config.text_width;
  FrozenEncoderParams p;
  p.patch_embed = gaussian_tensor({config.patch_dim, dv}, 1.0 / std::sqrt(static_cast<double>(config.patch_dim)), rng);
  p.class_token = gaussian_tensor({1, dv}, 1.0, rng);
  p.vision_pos = gaussian_tensor({config.patches + 1, dv}, 0.1, rng);
  for (std::size_t i = 0; i < config.layers; ++i) p.vision_layers.push_back(init_block(dv, rng));
  p.image_proj = gaussian_tensor({dv, config.embed_dim}, 1.0 / std::sqrt(static_cast<double>(dv)), rng);
  p.template_tokens = gaussian_tensor({config.text_tokens - 1, dl}, 1.0, rng);
  p.class_embeddings = class_embeddings.detach();
  p.text_pos = gaussian_tensor({config.text_tokens, dl}, 0.1, rng);
  for (std::size_t i = 0; i < config.layers; ++i) p.text_layers.push_back(init_block(dl, rng));
  p.text_proj = gaussian_tensor({dl, config.embed_dim}, 1.0 / std::sqrt(static_cast<double>(dl)), rng);
  return p;
}

void PromptStack::validate(const EncoderConfig& config) const {
  auto check = [&](const std::vector<Tensor>& prompts, std::size_t width, const char* branch) {
    if (prompts.empty()) return;
    if (first_layer != config.first_prompt_layer || prompts.size() != config.prompt_depth) {
      throw ConfigError(std::string(branch) + " prompts cover layers [" + std::to_string(first_layer) + ", " +
                        std::to_string(first_layer + prompts.size()) + ") but the config prompts [" +
                        std::to_string(config.first_prompt_layer) + ", " +
                        std::to_string(config.first_prompt_layer + config.prompt_depth) + ")");
    }
    for (const auto& z : prompts) {
      if (z.rows() > 0 && z.cols() != width) {
        throw DimensionError(std::string(branch) + " prompt of shape " + shape_str(z.shape()) + " for width " +
                             std::to_string(width));
      }
    }
  };
  check(text, config.text_width, "text");
  check(vision, config.vision_width, "vision");
}

Tensor image_prefix(const Tensor& patches, const FrozenEncoderParams& params, const EncoderConfig& config,
                    EncoderTrace* trace) {
  if (patches.rows() != config.patches || patches.cols() != config.patch_dim) {
    throw DimensionError("image patches " + shape_str(patches.shape()) + " do not match grid " +
                         std::to_string(config.patches) + "x" + std::to_string(config.patch_dim));
  }
  Tensor e0 = matmul(nullptr, patches, params.patch_embed);
  Tensor h = add(nullptr, concat_rows(nullptr, {params.class_token, e0}), params.vision_pos);
  return run_layers(nullptr, h, params.vision_layers, 0, config.first_prompt_layer, config.heads, nullptr, 0,
                    false, trace);
}

Tensor image_from_prefix(Tape* tape, const Tensor& prefix, const FrozenEncoderParams& params,
                         const EncoderConfig& config, const PromptStack* prompts, EncoderTrace* trace) {
  if (prompts) prompts->validate(config);
  const std::vector<Tensor>* vp = prompts ? &prompts->vision : nullptr;
  Tensor h = run_layers(tape, prefix, params.vision_layers, config.first_prompt_layer, config.layers,
                        config.heads, vp, config.first_prompt_layer, false, trace);
  if (trace) trace->layer_inputs.push_back(h.detach());
  return matmul(tape, slice_rows(tape, h, 0, 1), params.image_proj);
}

Tensor encode_image(Tape* tape, const Tensor& patches, const FrozenEncoderParams& params,
                    const EncoderConfig& config, const PromptStack* prompts, EncoderTrace* trace) {
  return image_from_prefix(tape, image_prefix(patches, params, config, trace), params, config, prompts, trace);
}

Tensor text_prefix(std::size_t class_id, const FrozenEncoderParams& params, const EncoderConfig& config,
                   EncoderTrace* trace) {
  if (class_id >= params.num_classes()) {
    throw std::out_of_range("unknown class id " + std::to_string(class_id) + " (table has " +
                            std::to_string(params.num_classes()) + " classes)");
  }
  Tensor cls = slice_rows(nullptr, params.class_embeddings, class_id, class_id + 1);
  Tensor tokens = config.text_tokens > 1 ? concat_rows(nullptr, {params.template_tokens, cls}) : cls;
  Tensor h = add(nullptr, tokens, params.text_pos);
  return run_layers(nullptr, h, params.text_layers, 0, config.first_prompt_layer, config.heads, nullptr, 0, true,
                    trace);
}

Tensor text_from_prefix(Tape* tape, const Tensor& prefix, const FrozenEncoderParams& params,
                        const EncoderConfig& config, const PromptStack* prompts, EncoderTrace* trace) {
  if (prompts) prompts->validate(config);
  const std::vector<Tensor>* tp = prompts ? &prompts->text : nullptr;
  Tensor h = run_layers(tape, prefix, params.text_layers, config.first_prompt_layer, config.layers, config.heads,
                        tp, config.first_prompt_layer, true, trace);
  if (trace) trace->layer_inputs.push_back(h.detach());
  const std::size_t n = h.rows();
  return matmul(tape, slice_rows(tape, h, n - 1, n), params.text_proj);
}

Tensor encode_text(Tape* tape, std::size_t class_id, const FrozenEncoderParams& params,
                   const EncoderConfig& config, const PromptStack* prompts, EncoderTrace* trace) {
  return text_from_prefix(tape, text_prefix(class_id, params, config, trace), params, config, prompts, trace);
}

Tensor image_readout_state(const Tensor& patches, const FrozenEncoderParams& params, const EncoderConfig& config) {
  Tensor h = run_layers(nullptr, image_prefix(patches, params, config), params.vision_layers,
                        config.first_prompt_layer, config.layers, config.heads, nullptr, 0, false, nullptr);
  return slice_rows(nullptr, h, 0, 1);
}

Tensor text_readout_state(const Tensor& class_embedding, const FrozenEncoderParams& params,
                          const EncoderConfig& config) {
  if (class_embedding.size() != config.text_width) {
    throw DimensionError("class embedding " + shape_str(class_embedding.shape()) + " for text width " +
                         std::to_string(config.text_width));
  }
  Tensor cls = reshape(nullptr, class_embedding, {1, config.text_width});
  Tensor tokens = config.text_tokens > 1 ? concat_rows(nullptr, {params.template_tokens, cls}) : cls;
  Tensor h = run_layers(nullptr, add(nullptr, tokens, params.text_pos), params.text_layers, 0, config.layers,
                        config.heads, nullptr, 0, true, nullptr);
  return slice_rows(nullptr, h, h.rows() - 1, h.rows());
}

Tensor classify_logits(Tape* tape, const Tensor& image_feature, const Tensor& texts, double tau) {
  if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
  if (image_feature.size() != texts.cols()) {
    throw DimensionError("classify_logits: image feature " + shape_str(image_feature.shape()) + " vs texts " +
                         shape_str(texts.shape()));
  }
  Tensor f = normalize_rows(tape, reshape(tape, image_feature, {1, image_feature.size()}));
  Tensor t = normalize_rows(tape, texts);
  return scale(tape, matmul(tape, f, transpose(tape, t)), 1.0 / tau);
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw DimensionError("argmax of empty range");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

}  // namespace vamp

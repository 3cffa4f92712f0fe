#include "vamp/config.hpp"

#include <set>
#include <type_traits>

namespace vamp {

namespace {

// Reads known keys from one object and rejects everything else.
class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j_.is_object()) throw ConfigError(context_ + ": expected an object");
  }

  template <typename T>
  void get(const std::string& key, T& out) {
    allowed_.insert(key);
    if (!j_.contains(key)) return;
    const Json& v = j_.at(key);
    const std::string where = context_ + "." + key;
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + ": expected a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError(where + ": expected a non-negative integer");
      out = v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + ": expected a number");
      out = v.get<T>();
    } else {
      if (!v.is_string()) throw ConfigError(where + ": expected a string");
      out = v.get<T>();
    }
  }

  const Json* sub(const std::string& key) {
    allowed_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!allowed_.count(key)) throw ConfigError(context_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const Json& j_;
  std::string context_;
  std::set<std::string> allowed_;
};

SyntheticSpec read_spec(const Json& j, const std::string& ctx) {
  SyntheticSpec s;
  ObjectReader r(j, ctx);
  r.get("base_classes", s.base_classes);
  r.get("novel_classes", s.novel_classes);
  r.get("concept_dim", s.concept_dim);
  r.get("noise", s.noise);
  r.get("patches", s.patches);
  r.get("patch_dim", s.patch_dim);
  r.get("text_width", s.text_width);
  r.get("shots", s.shots);
  r.get("test_per_class", s.test_per_class);
  r.get("seed", s.seed);
  r.finish();
  s.validate();
  return s;
}

EncoderConfig read_encoder(const Json& j, const std::string& ctx) {
  EncoderConfig c;
  ObjectReader r(j, ctx);
  std::string preset = "toy";
  r.get("preset", preset);
  if (preset == "mmrl") {
    c = EncoderConfig::mmrl();
  } else if (preset != "toy") {
    throw ConfigError(ctx + ".preset: unknown preset '" + preset + "' (expected toy or mmrl)");
  }
  r.get("layers", c.layers);
  r.get("vision_width", c.vision_width);
  r.get("text_width", c.text_width);
  r.get("embed_dim", c.embed_dim);
  r.get("patches", c.patches);
  r.get("patch_dim", c.patch_dim);
  r.get("text_tokens", c.text_tokens);
  r.get("heads", c.heads);
  r.get("first_prompt_layer", c.first_prompt_layer);
  r.get("prompt_depth", c.prompt_depth);
  r.get("prompt_tokens", c.prompt_tokens);
  r.get("tau", c.tau);
  r.finish();
  c.validate();
  return c;
}

TrainConfig read_train(const Json& j, const std::string& ctx) {
  TrainConfig t;
  ObjectReader r(j, ctx);
  std::string mode = to_string(t.mode);
  r.get("epochs", t.epochs);
  r.get("batch_size", t.batch_size);
  r.get("lr", t.lr);
  r.get("weight_decay", t.weight_decay);
  r.get("seed", t.seed);
  r.get("beta", t.beta);
  r.get("beta_warmup", t.beta_warmup);
  r.get("mode", mode);
  r.get("samples", t.samples);
  r.get("prior_sampling", t.prior_sampling);
  r.get("encoder_seed", t.encoder_seed);
  r.get("threads", t.threads);
  r.finish();
  t.mode = ablation_mode_from_string(mode);
  t.validate();
  return t;
}

}  // namespace

Json to_json(const SyntheticSpec& s) {
  return Json{{"base_classes", s.base_classes}, {"novel_classes", s.novel_classes}, {"concept_dim", s.concept_dim},
              {"noise", s.noise},               {"patches", s.patches},             {"patch_dim", s.patch_dim},
              {"text_width", s.text_width},     {"shots", s.shots},                 {"test_per_class", s.test_per_class},
              {"seed", s.seed}};
}

Json to_json(const EncoderConfig& c) {
  return Json{{"layers", c.layers},
              {"vision_width", c.vision_width},
              {"text_width", c.text_width},
              {"embed_dim", c.embed_dim},
              {"patches", c.patches},
              {"patch_dim", c.patch_dim},
              {"text_tokens", c.text_tokens},
              {"heads", c.heads},
              {"first_prompt_layer", c.first_prompt_layer},
              {"prompt_depth", c.prompt_depth},
              {"prompt_tokens", c.prompt_tokens},
              {"tau", c.tau}};
}

Json to_json(const TrainConfig& t) {
  return Json{{"epochs", t.epochs},
              {"batch_size", t.batch_size},
              {"lr", t.lr},
              {"weight_decay", t.weight_decay},
              {"seed", t.seed},
              {"beta", t.beta},
              {"beta_warmup", t.beta_warmup},
              {"mode", to_string(t.mode)},
              {"samples", t.samples},
              {"prior_sampling", t.prior_sampling},
              {"encoder_seed", t.encoder_seed},
              {"threads", t.threads}};
}

SyntheticSpec synthetic_spec_from_json(const Json& j) { return read_spec(j, "data"); }
EncoderConfig encoder_config_from_json(const Json& j) { return read_encoder(j, "encoder"); }
TrainConfig train_config_from_json(const Json& j) { return read_train(j, "train"); }

Json RunConfig::to_json() const {
  return Json{{"encoder", vamp::to_json(encoder)}, {"train", vamp::to_json(train)}, {"data", vamp::to_json(data)}};
}

std::string RunConfig::canonical() const { return canonical_text(to_json()); }

RunConfig RunConfig::from_json(const Json& j) {
  RunConfig rc;
  ObjectReader r(j, "config");
  if (const Json* e = r.sub("encoder")) rc.encoder = read_encoder(*e, "encoder");
  if (const Json* t = r.sub("train")) rc.train = read_train(*t, "train");
  if (const Json* d = r.sub("data")) rc.data = read_spec(*d, "data");
  r.finish();
  return rc;
}

RunConfig RunConfig::from_text(const std::string& text) { return from_json(parse_json_text(text)); }

std::string canonical_text(const Json& j) { return j.dump(2) + "\n"; }

Json parse_json_text(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw ConfigError(std::string("malformed config text: ") + e.what());
  }
}

}  // namespace vamp

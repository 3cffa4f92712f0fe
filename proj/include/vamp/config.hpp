#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "vamp/data.hpp"
#include "vamp/encoders.hpp"
#include "vamp/pipeline.hpp"

// Structured text configuration. Every parser rejects unknown keys, and the
// canonical form (sorted keys, fixed indentation) is what gets embedded in
// output artifacts.
namespace vamp {

using Json = nlohmann::json;

Json to_json(const SyntheticSpec& spec);
Json to_json(const EncoderConfig& config);
Json to_json(const TrainConfig& config);

SyntheticSpec synthetic_spec_from_json(const Json& j);
EncoderConfig encoder_config_from_json(const Json& j);
TrainConfig train_config_from_json(const Json& j);

// Merged view of everything one run needs.
struct RunConfig {
  EncoderConfig encoder;
  TrainConfig train;
  SyntheticSpec data;

  Json to_json() const;
  std::string canonical() const;
  static RunConfig from_json(const Json& j);
  static RunConfig from_text(const std::string& text);
};

std::string canonical_text(const Json& j);
Json parse_json_text(const std::string& text);

}  // namespace vamp

#include <gtest/gtest.h>

#include "vamp/config.hpp"

using namespace vamp;

TEST(Config, UnknownKeysAreRejectedAtEveryLevel) {
  EXPECT_THROW(RunConfig::from_text(R"({"bogus": 1})"), ConfigError);
  EXPECT_THROW(RunConfig::from_text(R"({"train": {"epochs": 3, "lr_typo": 0.1}})"), ConfigError);
  EXPECT_THROW(RunConfig::from_text(R"({"encoder": {"layerz": 3}})"), ConfigError);
  EXPECT_THROW(RunConfig::from_text(R"({"data": {"shots": 4, "x": 0}})"), ConfigError);
}

TEST(Config, WrongTypesAreRejected) {
  EXPECT_THROW(RunConfig::from_text(R"({"train": {"epochs": "ten"}})"), ConfigError);
  EXPECT_THROW(RunConfig::from_text(R"({"train": {"epochs": -1}})"), ConfigError);
  EXPECT_THROW(RunConfig::from_text(R"({"train": {"mode": "NOT_A_MODE"}})"), ConfigError);
  EXPECT_THROW(RunConfig::from_text(R"({"encoder": {"preset": "huge"}})"), ConfigError);
  EXPECT_THROW(RunConfig::from_text("not json"), ConfigError);
  EXPECT_THROW(RunConfig::from_text("[1, 2]"), ConfigError);
}

TEST(Config, EmptyObjectGivesDefaults) {
  const RunConfig c = RunConfig::from_text("{}");
  EXPECT_EQ(c.train.epochs, 30u);
  EXPECT_EQ(c.train.mode, AblationMode::kVariationalClassPrior);
  EXPECT_EQ(c.encoder.layers, EncoderConfig::toy().layers);
  EXPECT_EQ(c.data.base_classes, 6u);
}

TEST(Config, CanonicalFormRoundTrips) {
  RunConfig c;
  c.train.epochs = 7;
  c.train.beta = 0.25;
  c.train.mode = AblationMode::kSampleDeterministic;
  c.encoder = EncoderConfig::mmrl();
  c.data.noise = 0.125;
  const std::string text = c.canonical();
  const RunConfig back = RunConfig::from_text(text);
  EXPECT_EQ(back.canonical(), text);
  EXPECT_EQ(back.train.mode, AblationMode::kSampleDeterministic);
  EXPECT_EQ(back.encoder.layers, 12u);
  EXPECT_EQ(back.encoder.first_prompt_layer, 5u);
  EXPECT_EQ(back.encoder.prompt_depth, 7u);
  EXPECT_EQ(back.encoder.prompt_tokens, 5u);
  EXPECT_EQ(text.back(), '\n');
}

TEST(Config, CanonicalFormIgnoresInputKeyOrderAndSpacing) {
  const RunConfig a = RunConfig::from_text(R"({"train":{"seed":3,"epochs":2}})");
  const RunConfig b = RunConfig::from_text("{\n  \"train\": { \"epochs\": 2,\n \"seed\": 3 } }");
  EXPECT_EQ(a.canonical(), b.canonical());
}

TEST(Config, PresetCanBeOverridden) {
  const RunConfig c = RunConfig::from_text(R"({"encoder": {"preset": "mmrl", "prompt_tokens": 2}})");
  EXPECT_EQ(c.encoder.layers, 12u);
  EXPECT_EQ(c.encoder.prompt_tokens, 2u);
}

TEST(Config, InvalidEncoderShapeIsConfigError) {
  EXPECT_THROW(RunConfig::from_text(R"({"encoder": {"first_prompt_layer": 5, "prompt_depth": 3}})"), ConfigError);
}

TEST(Config, ModeNamesRoundTrip) {
  for (AblationMode m : kAllModes) EXPECT_EQ(ablation_mode_from_string(to_string(m)), m);
  EXPECT_THROW(ablation_mode_from_string("task_shared"), ConfigError);
}

#include <gtest/gtest.h>

#include "stemm/config.hpp"
#include "stemm/errors.hpp"
#include "stemm/training.hpp"

using namespace stemm;
using nlohmann::json;

TEST(ModelConfigJson, RoundTrip) {
  ModelConfig c;
  c.vocab_size = 64;
  c.d_model = 64;
  c.heads = 4;
  c.dropout = 0.25;
  EXPECT_EQ(model_config_from_json(to_json(c)), c);
}

TEST(ModelConfigJson, FileValuesOverrideDefaults) {
  ModelConfig base;
  base.d_model = 32;
  base.heads = 4;
  const auto c = model_config_from_json(json{{"heads", 2}}, base);
  EXPECT_EQ(c.d_model, 32u);
  EXPECT_EQ(c.heads, 2u);
}

TEST(ModelConfigJson, RejectsUnknownKeysAndBadTypes) {
  try {
    model_config_from_json(json{{"d_modle", 64}});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("d_modle"), std::string::npos);
  }
  EXPECT_THROW(model_config_from_json(json{{"d_model", "wide"}}), ConfigError);
  EXPECT_THROW(model_config_from_json(json::array()), ConfigError);
  EXPECT_THROW(model_config_from_json(json{{"d_model", 30}, {"heads", 4}}), ConfigError);
}

TEST(TrainingConfigJson, RoundTripAndOverride) {
  TrainingConfig c;
  c.ratio = RatioStrategy::uncertainty();
  c.loss_terms = {true, true, false};
  c.lr = 1e-3;
  c.max_steps = 123;
  EXPECT_EQ(training_config_from_json(to_json(c)), c);

  const auto o = training_config_from_json(json{{"lr", 5e-4}, {"ratio", "static:0.2"}}, c);
  EXPECT_EQ(o.lr, 5e-4);
  EXPECT_EQ(o.ratio, RatioStrategy::fixed(0.2));
  EXPECT_EQ(o.max_steps, 123u);
}

TEST(TrainingConfigJson, RejectsUnknownAndInvalid) {
  EXPECT_THROW(training_config_from_json(json{{"learning_rate", 1.0}}), ConfigError);
  EXPECT_THROW(training_config_from_json(json{{"loss_terms", {{"kl", true}}}}), ConfigError);
  EXPECT_THROW(training_config_from_json(json{{"loss_terms", {{"mixup_ce", false}}}}), ConfigError);
  EXPECT_THROW(training_config_from_json(json{{"ratio", "static:2"}}), ConfigError);
  EXPECT_THROW(training_config_from_json(json{{"lr", -1.0}}), ConfigError);
  EXPECT_THROW(training_config_from_json(json{{"label_smoothing", 1.0}}), ConfigError);
}

TEST(StrictObject, TracksSeenKeys) {
  const json j{{"a", 1}, {"b", {{"c", 2}}}};
  StrictObject obj(j, "root");
  int a = 0;
  EXPECT_TRUE(obj.read("a", a));
  EXPECT_EQ(a, 1);
  int missing = 7;
  EXPECT_FALSE(obj.read("z", missing));
  EXPECT_EQ(missing, 7);
  EXPECT_THROW(obj.finish(), ConfigError);
  ASSERT_NE(obj.child("b"), nullptr);
  EXPECT_NO_THROW(obj.finish());
}

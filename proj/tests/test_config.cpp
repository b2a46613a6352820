#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "vlrm/config.hpp"

using namespace vlrm;

namespace {

std::string shipped(const std::string& name) { return std::string(VLRM_CONFIG_DIR) + "/" + name; }

}  // namespace

TEST(RunConfig, DefaultsRoundTrip) {
  const RunConfig c;
  EXPECT_EQ(RunConfig::from_json(c.to_json()).canonical(), c.canonical());
  EXPECT_EQ(RunConfig::parse("{}").hash(), c.hash());
}

TEST(RunConfig, UnknownKeysRejectedAtEveryLevel) {
  EXPECT_THROW(RunConfig::parse(R"({"trainr": {}})"), ConfigError);
  EXPECT_THROW(RunConfig::parse(R"({"trainer": {"lr": 1e-4, "momentum": 0.9}})"), ConfigError);
  EXPECT_THROW(RunConfig::parse(R"({"trainer": {"pretrain": {"epoch": 3}}})"), ConfigError);
  EXPECT_THROW(RunConfig::parse(R"({"model": {"hiden": 3}})"), ConfigError);
  EXPECT_THROW(RunConfig::parse(R"({"scorers": {"gamma": 3}})"), ConfigError);
  EXPECT_THROW(RunConfig::parse(R"({"eval": {"decode": {"beams": 3}}})"), ConfigError);
  EXPECT_THROW(RunConfig::parse(R"({"corpus": {"colour": []}})"), ConfigError);
}

TEST(RunConfig, MalformedInputIsAConfigError) {
  EXPECT_THROW(RunConfig::parse("{"), ConfigError);
  EXPECT_THROW(RunConfig::parse("[]"), ConfigError);
  EXPECT_THROW(RunConfig::parse(R"({"trainer": {"lr": "fast"}})"), ConfigError);
  EXPECT_THROW(RunConfig::parse(R"({"scorers": {"itm_variant": "cosine"}})"), ConfigError);
  EXPECT_THROW(RunConfig::parse(R"({"eval": {"ks": [0]}})"), ConfigError);
  EXPECT_THROW(RunConfig::load("/nonexistent/run.json"), ConfigError);
}

TEST(RunConfig, HashStableUnderKeyReordering) {
  const std::string a = R"({"trainer": {"lr": 3e-4, "batch_size": 16, "pretrain": {"epochs": 2}}, "model": {"hidden": 8}})";
  const std::string b = R"({"model": {"hidden": 8}, "trainer": {"pretrain": {"epochs": 2}, "batch_size": 16, "lr": 3e-4}})";
  EXPECT_EQ(RunConfig::parse(a).hash(), RunConfig::parse(b).hash());
}

TEST(RunConfig, HashStableUnderOmittedDefaults) {
  const std::string sparse = R"({"trainer": {"lr": 3e-4}})";
  const std::string explicit_defaults = R"({"trainer": {"lr": 3e-4, "warmup_steps": 20, "grad_clip": 1.0}})";
  EXPECT_EQ(RunConfig::parse(sparse).hash(), RunConfig::parse(explicit_defaults).hash());
}

TEST(RunConfig, HashSeparatesDifferentSettings) {
  EXPECT_NE(RunConfig::parse(R"({"trainer": {"lr": 3e-4}})").hash(),
            RunConfig::parse(R"({"trainer": {"lr": 3e-5}})").hash());
  EXPECT_NE(RunConfig::parse(R"({"trainer": {"flavor": "vlrm"}})").hash(),
            RunConfig::parse(R"({"trainer": {"flavor": "vlrm-rs"}})").hash());
}

TEST(RunConfig, ShippedConfigsLoad) {
  for (const char* name : {"default.json", "value_head_linear.json", "lr_1e-5.json"}) {
    const RunConfig c = RunConfig::load(shipped(name));
    EXPECT_EQ(RunConfig::parse(c.canonical()).canonical(), c.canonical()) << name;
  }
  const RunConfig d = RunConfig::load(shipped("default.json"));
  EXPECT_EQ(d.trainer.lr, 3e-4);
  EXPECT_EQ(d.pretrain.epochs, 5u);
  EXPECT_EQ(RunConfig::load(shipped("value_head_linear.json")).model.value_layers, 0);
  EXPECT_EQ(RunConfig::load(shipped("lr_1e-5.json")).trainer.lr, 1e-5);
}

TEST(RunConfig, EvalDefaultsAreTheInferenceSettings) {
  const RunConfig c;
  EXPECT_EQ(c.eval.decode.to_json(), DecodeConfig::inference().to_json());
  EXPECT_EQ(c.eval.ks, (std::vector<int>{1, 5, 10}));
}

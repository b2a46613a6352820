#pragma once

// Single run configuration with sections corpus, model, trainer, scorers and
// eval. Unknown keys are rejected; the hash is taken over the canonical dump
// with every default filled in, so key order and omitted defaults do not matter.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vlrm/decode.hpp"
#include "vlrm/error.hpp"
#include "vlrm/model.hpp"
#include "vlrm/scorers.hpp"
#include "vlrm/textcore.hpp"
#include "vlrm/trainer.hpp"
#include "vlrm/util.hpp"

namespace vlrm {

struct ScorerConfig {
  SimOracle oracle;
  ItmVariant itm_variant = ItmVariant::logit;
  int itm_queries = 32;
  int reflm_order = 3;
  double reflm_smoothing = 0.1;

  nlohmann::json to_json() const {
    return {{"alpha", oracle.alpha},
            {"beta", oracle.beta},
            {"scale", oracle.scale},
            {"itm_variant", itm_variant == ItmVariant::logit ? "logit" : "prob"},
            {"itm_queries", itm_queries},
            {"reflm_order", reflm_order},
            {"reflm_smoothing", reflm_smoothing}};
  }

  static ScorerConfig from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(
        j, {"alpha", "beta", "scale", "itm_variant", "itm_queries", "reflm_order", "reflm_smoothing"}, "scorers");
    ScorerConfig c;
    try {
      if (j.contains("alpha")) c.oracle.alpha = j.at("alpha").get<double>();
      if (j.contains("beta")) c.oracle.beta = j.at("beta").get<double>();
      if (j.contains("scale")) c.oracle.scale = j.at("scale").get<double>();
      if (j.contains("itm_variant")) {
        const auto v = j.at("itm_variant").get<std::string>();
        if (v != "logit" && v != "prob") throw ConfigError("itm_variant must be logit or prob");
        c.itm_variant = v == "logit" ? ItmVariant::logit : ItmVariant::prob;
      }
      if (j.contains("itm_queries")) c.itm_queries = j.at("itm_queries").get<int>();
      if (j.contains("reflm_order")) c.reflm_order = j.at("reflm_order").get<int>();
      if (j.contains("reflm_smoothing")) c.reflm_smoothing = j.at("reflm_smoothing").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("scorers: ") + e.what());
    }
    if (c.itm_queries < 1 || c.reflm_order < 1 || !(c.reflm_smoothing > 0.0))
      throw ConfigError("scorers: itm_queries, reflm_order and reflm_smoothing must be positive");
    return c;
  }
};

struct EvalConfig {
  DecodeConfig decode = DecodeConfig::inference();
  std::vector<int> ks{1, 5, 10};

  nlohmann::json to_json() const { return {{"decode", decode.to_json()}, {"ks", ks}}; }

  static EvalConfig from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(j, {"decode", "ks"}, "eval");
    EvalConfig c;
    try {
      if (j.contains("decode")) c.decode = DecodeConfig::from_json(j.at("decode"), c.decode);
      if (j.contains("ks")) c.ks = j.at("ks").get<std::vector<int>>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("eval: ") + e.what());
    }
    for (int k : c.ks)
      if (k < 1) throw ConfigError("eval: K must be >= 1");
    return c;
  }
};

struct RunConfig {
  CorpusConfig corpus = CorpusConfig::defaults();
  ModelConfig model;
  MleConfig pretrain;
  TrainConfig trainer;
  ScorerConfig scorers;
  EvalConfig eval;

  nlohmann::json to_json() const {
    nlohmann::json t = trainer.to_json();
    t["pretrain"] = pretrain.to_json();
    return {{"corpus", corpus.to_json()},
            {"model", model.to_json()},
            {"trainer", t},
            {"scorers", scorers.to_json()},
            {"eval", eval.to_json()}};
  }

  static RunConfig from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    detail::reject_unknown_keys(j, {"corpus", "model", "trainer", "scorers", "eval"}, "run config");
    RunConfig c;
    if (j.contains("corpus")) c.corpus = CorpusConfig::from_json(j.at("corpus"));
    if (j.contains("model")) c.model = ModelConfig::from_json(j.at("model"));
    if (j.contains("trainer")) {
      nlohmann::json t = j.at("trainer");
      if (!t.is_object()) throw ConfigError("trainer must be an object");
      if (t.contains("pretrain")) {
        c.pretrain = MleConfig::from_json(t.at("pretrain"));
        t.erase("pretrain");
      }
      c.trainer = TrainConfig::from_json(t);
    }
    if (j.contains("scorers")) c.scorers = ScorerConfig::from_json(j.at("scorers"));
    if (j.contains("eval")) c.eval = EvalConfig::from_json(j.at("eval"));
    return c;
  }

  static RunConfig parse(const std::string& text) {
    try {
      return from_json(nlohmann::json::parse(text));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(std::string("run config is not valid JSON: ") + e.what());
    }
  }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  /// Canonical text: sorted keys, defaults filled.
  std::string canonical() const { return to_json().dump(); }
  std::uint64_t hash() const { return fnv1a64(canonical()); }
};

}  // namespace vlrm

#pragma once

// Decoding over any autoregressive step model:
//
//   typename M::State                      copyable decoder state
//   Eigen::VectorXd M::next_logits(State&, int prev_token) const
//
// Scores are sums of log-softmax values at temperature 1, without length
// normalization; tokens banned by a rule are removed, not renormalized away.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "vlrm/error.hpp"
#include "vlrm/textcore.hpp"
#include "vlrm/util.hpp"

namespace vlrm {

template <typename M>
concept StepModel = std::copy_constructible<typename M::State> &&
                    requires(const M& m, typename M::State& s, int tok) {
                      { m.next_logits(s, tok) } -> std::convertible_to<Eigen::VectorXd>;
                    };

enum class DecodeMode { topk_sample, beam };

struct DecodeConfig {
  DecodeMode mode = DecodeMode::beam;
  int top_k = 6;
  double temperature = 2.0;
  int num_beams = 5;
  int min_new_tokens = 4;
  int max_new_tokens = 60;
  int no_repeat_ngram_size = 2;
  std::uint64_t seed = 0;

  /// Top-k sampling as used while collecting training captions.
  static DecodeConfig training_sampler() {
    DecodeConfig c;
    c.mode = DecodeMode::topk_sample;
    c.top_k = 6;
    c.temperature = 2.0;
    c.num_beams = 1;
    c.min_new_tokens = 1;
    c.max_new_tokens = 16;
    c.no_repeat_ngram_size = 0;
    return c;
  }

  /// Inference defaults: deterministic beam search.
  static DecodeConfig inference() { return DecodeConfig{}; }

  void validate() const {
    if (top_k < 1) throw ConfigError("top_k must be >= 1");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
    if (num_beams < 1) throw ConfigError("num_beams must be >= 1");
    if (min_new_tokens < 1 || max_new_tokens < min_new_tokens)
      throw ConfigError("need max_new_tokens >= min_new_tokens >= 1");
    if (no_repeat_ngram_size < 0) throw ConfigError("no_repeat_ngram_size must be >= 0");
  }

  nlohmann::json to_json() const {
    return {{"mode", mode == DecodeMode::beam ? "beam" : "topk-sample"},
            {"top_k", top_k},
            {"temperature", temperature},
            {"num_beams", num_beams},
            {"min_new_tokens", min_new_tokens},
            {"max_new_tokens", max_new_tokens},
            {"no_repeat_ngram_size", no_repeat_ngram_size},
            {"seed", seed}};
  }

  static DecodeConfig from_json(const nlohmann::json& j, DecodeConfig base) {
    detail::reject_unknown_keys(j, {"mode", "top_k", "temperature", "num_beams", "min_new_tokens", "max_new_tokens",
                                    "no_repeat_ngram_size", "seed"},
                                "decode config");
    try {
      if (j.contains("mode")) {
        const auto m = j.at("mode").get<std::string>();
        if (m == "beam")
          base.mode = DecodeMode::beam;
        else if (m == "topk-sample")
          base.mode = DecodeMode::topk_sample;
        else
          throw ConfigError("unknown decode mode '" + m + "'");
      }
      if (j.contains("top_k")) base.top_k = j.at("top_k").get<int>();
      if (j.contains("temperature")) base.temperature = j.at("temperature").get<double>();
      if (j.contains("num_beams")) base.num_beams = j.at("num_beams").get<int>();
      if (j.contains("min_new_tokens")) base.min_new_tokens = j.at("min_new_tokens").get<int>();
      if (j.contains("max_new_tokens")) base.max_new_tokens = j.at("max_new_tokens").get<int>();
      if (j.contains("no_repeat_ngram_size")) base.no_repeat_ngram_size = j.at("no_repeat_ngram_size").get<int>();
      if (j.contains("seed")) base.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("decode config: ") + e.what());
    }
    base.validate();
    return base;
  }
};

/// Token ids with structural meaning for the decoder.
struct TokenSpace {
  int bos = 1;
  int eos = 2;
  std::vector<int> never;  // ids that may never be emitted (bos, pad)

  static TokenSpace of(const Vocab& v) { return {v.bos(), v.eos(), {v.bos(), v.pad()}}; }
};

namespace detail {

inline Eigen::VectorXd log_softmax(const Eigen::VectorXd& z) {
  const double mx = z.maxCoeff();
  const double lse = mx + std::log((z.array() - mx).exp().sum());
  return (z.array() - lse).matrix();
}

/// Tokens that would complete an n-gram already present in `generated`.
inline std::vector<int> ngram_banned(const std::vector<int>& generated, int n) {
  std::vector<int> banned;
  if (n <= 0 || static_cast<int>(generated.size()) + 1 < n) return banned;
  const std::size_t len = generated.size();
  const std::size_t prefix = static_cast<std::size_t>(n - 1);
  for (std::size_t i = 0; i + prefix < len; ++i) {
    bool same = true;
    for (std::size_t j = 0; j < prefix && same; ++j) same = generated[i + j] == generated[len - prefix + j];
    if (same) banned.push_back(generated[i + prefix]);
  }
  return banned;
}

inline std::vector<bool> allowed_mask(int vocab_size, const std::vector<int>& generated, int step,
                                      const DecodeConfig& cfg, const TokenSpace& ts) {
  std::vector<bool> ok(static_cast<std::size_t>(vocab_size), true);
  for (int id : ts.never) ok[static_cast<std::size_t>(id)] = false;
  if (step < cfg.min_new_tokens) ok[static_cast<std::size_t>(ts.eos)] = false;
  for (int id : ngram_banned(generated, cfg.no_repeat_ngram_size)) ok[static_cast<std::size_t>(id)] = false;
  return ok;
}

}  // namespace detail

/// Restricted, renormalized sampling distribution of one step: the top_k
/// allowed tokens of logits / temperature. Ties break toward lower ids.
inline std::vector<std::pair<int, double>> topk_distribution(const Eigen::VectorXd& logits,
                                                             const std::vector<bool>& allowed, int top_k,
                                                             double temperature) {
  std::vector<int> ids;
  for (int i = 0; i < logits.size(); ++i)
    if (allowed[static_cast<std::size_t>(i)]) ids.push_back(i);
  if (ids.empty()) throw ContractError("no token is allowed at this step");
  const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(top_k), ids.size());
  std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(), [&](int a, int b) {
    return logits(a) != logits(b) ? logits(a) > logits(b) : a < b;
  });
  ids.resize(k);
  const double mx = logits(ids.front()) / temperature;
  std::vector<std::pair<int, double>> dist;
  double total = 0.0;
  for (int id : ids) {
    const double w = std::exp(logits(id) / temperature - mx);
    dist.emplace_back(id, w);
    total += w;
  }
  for (auto& d : dist) d.second /= total;
  return dist;
}

/// Top-k / temperature sampling; logprobs hold the log-probability of each
/// chosen token under the sampling distribution.
template <StepModel M>
TokenSeq sample(const M& model, typename M::State state, const DecodeConfig& cfg, const TokenSpace& ts, Rng& rng) {
  cfg.validate();
  TokenSeq out;
  int prev = ts.bos;
  for (int step = 0; step < cfg.max_new_tokens; ++step) {
    Eigen::VectorXd logits = model.next_logits(state, prev);
    auto allowed = detail::allowed_mask(static_cast<int>(logits.size()), out.ids, step, cfg, ts);
    auto dist = topk_distribution(logits, allowed, cfg.top_k, cfg.temperature);
    const double u = uniform01(rng);
    double acc = 0.0;
    std::size_t pick = dist.size() - 1;
    for (std::size_t i = 0; i < dist.size(); ++i) {
      acc += dist[i].second;
      if (u < acc) {
        pick = i;
        break;
      }
    }
    out.ids.push_back(dist[pick].first);
    out.logprobs.push_back(std::log(dist[pick].second));
    if (dist[pick].first == ts.eos) {
      out.has_eos = true;
      break;
    }
    prev = dist[pick].first;
  }
  return out;
}

/// Argmax decoding under the same rules as beam search.
template <StepModel M>
TokenSeq greedy_decode(const M& model, typename M::State state, const DecodeConfig& cfg, const TokenSpace& ts) {
  cfg.validate();
  TokenSeq out;
  int prev = ts.bos;
  for (int step = 0; step < cfg.max_new_tokens; ++step) {
    Eigen::VectorXd lsm = detail::log_softmax(model.next_logits(state, prev));
    auto allowed = detail::allowed_mask(static_cast<int>(lsm.size()), out.ids, step, cfg, ts);
    int best = -1;
    for (int i = 0; i < lsm.size(); ++i)
      if (allowed[static_cast<std::size_t>(i)] && (best < 0 || lsm(i) > lsm(best))) best = i;
    if (best < 0) break;
    out.ids.push_back(best);
    out.logprobs.push_back(lsm(best));
    if (best == ts.eos) {
      out.has_eos = true;
      break;
    }
    prev = best;
  }
  return out;
}

/// Sum of per-token log-probabilities recorded by greedy/beam decoding.
inline double sequence_score(const TokenSeq& seq) {
  double s = 0.0;
  for (double lp : seq.logprobs) s += lp;
  return s;
}

/// Beam search with eos suppressed before min_new_tokens and no-repeat
/// n-gram blocking. Each step expands every live beam, keeps the best
/// num_beams unfinished continuations, and retires eos candidates ranked
/// within the top num_beams. Stops once the best finished hypothesis
/// outscores every live one (scores never increase with length). The greedy path is kept as a candidate, so
/// the result never scores below greedy decoding.
template <StepModel M>
TokenSeq beam_decode(const M& model, typename M::State state, const DecodeConfig& cfg, const TokenSpace& ts) {
  cfg.validate();
  struct Hyp {
    std::vector<int> ids;
    std::vector<double> logprobs;
    double score = 0.0;
    typename M::State state;
    int prev = 0;
  };
  struct Candidate {
    std::size_t beam;
    int token;
    double score;
    double logprob;
  };

  TokenSeq greedy = greedy_decode(model, state, cfg, ts);
  std::vector<Hyp> live;
  live.push_back(Hyp{{}, {}, 0.0, std::move(state), ts.bos});
  std::vector<Hyp> finished;
  const std::size_t width = static_cast<std::size_t>(cfg.num_beams);

  for (int step = 0; step < cfg.max_new_tokens && !live.empty(); ++step) {
    std::vector<Candidate> cands;
    for (std::size_t b = 0; b < live.size(); ++b) {
      Eigen::VectorXd lsm = detail::log_softmax(model.next_logits(live[b].state, live[b].prev));
      auto allowed = detail::allowed_mask(static_cast<int>(lsm.size()), live[b].ids, step, cfg, ts);
      for (int tok = 0; tok < lsm.size(); ++tok)
        if (allowed[static_cast<std::size_t>(tok)] && std::isfinite(lsm(tok)))
          cands.push_back({b, tok, live[b].score + lsm(tok), lsm(tok)});
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) { return a.score > b.score; });

    std::vector<Hyp> next;
    for (std::size_t rank = 0; rank < cands.size() && next.size() < width; ++rank) {
      const Candidate& c = cands[rank];
      Hyp h{live[c.beam].ids, live[c.beam].logprobs, c.score, live[c.beam].state, c.token};
      h.ids.push_back(c.token);
      h.logprobs.push_back(c.logprob);
      if (c.token == ts.eos) {
        if (rank < width) finished.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    live = std::move(next);

    if (!finished.empty()) {
      double best_done = -std::numeric_limits<double>::infinity();
      for (const auto& f : finished) best_done = std::max(best_done, f.score);
      double best_live = -std::numeric_limits<double>::infinity();
      for (const auto& l : live) best_live = std::max(best_live, l.score);
      if (best_done >= best_live) break;
    }
  }

  const std::vector<Hyp>& pool = finished.empty() ? live : finished;
  if (pool.empty()) throw ContractError("beam search produced no hypothesis");
  std::size_t best = 0;
  for (std::size_t i = 1; i < pool.size(); ++i)
    if (pool[i].score > pool[best].score) best = i;
  TokenSeq out;
  out.ids = pool[best].ids;
  out.logprobs = pool[best].logprobs;
  out.has_eos = !finished.empty();
  if (greedy.has_eos >= out.has_eos && (greedy.has_eos > out.has_eos || sequence_score(greedy) > pool[best].score))
    return greedy;
  return out;
}

/// Dispatch on cfg.mode; the sampler draws from an engine seeded by cfg.seed.
template <StepModel M>
TokenSeq decode(const M& model, typename M::State state, const DecodeConfig& cfg, const TokenSpace& ts) {
  if (cfg.mode == DecodeMode::topk_sample) {
    Rng rng(cfg.seed);
    return sample(model, std::move(state), cfg, ts, rng);
  }
  return cfg.num_beams == 1 ? greedy_decode(model, std::move(state), cfg, ts)
                            : beam_decode(model, std::move(state), cfg, ts);
}

}  // namespace vlrm

#pragma once

// Text-to-scene retrieval over generated captions and descriptive caption
// statistics.

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "vlrm/decode.hpp"
#include "vlrm/error.hpp"
#include "vlrm/model.hpp"
#include "vlrm/rewardshape.hpp"
#include "vlrm/textcore.hpp"

namespace vlrm {

/// Normalized weighted bag of the caption's attribute words, in the scene
/// embedding basis. A caption without attribute words maps to the uniform
/// unit vector.
inline std::vector<double> embed_caption(const TokenSeq& caption, const Vocab& vocab) {
  const std::size_t d = static_cast<std::size_t>(vocab.attribute_dim());
  std::vector<double> e(d, 0.0);
  for (int id : caption.ids) {
    const int idx = vocab.attribute_index(id);
    if (idx != Vocab::kNoAttribute) e[static_cast<std::size_t>(idx)] += vocab.attribute_weight(id);
  }
  double n = 0.0;
  for (double x : e) n += x * x;
  if (n == 0.0) return std::vector<double>(d, 1.0 / std::sqrt(static_cast<double>(d)));
  n = std::sqrt(n);
  for (double& x : e) x /= n;
  return e;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

struct RetrievalReport {
  double mrr = 0.0;
  std::map<int, double> recall_at;
  std::size_t n_queries = 0;
  std::vector<std::size_t> ranks;

  nlohmann::json to_json() const {
    nlohmann::json r = nlohmann::json::object();
    for (const auto& [k, v] : recall_at) r[std::to_string(k)] = v;
    return {{"format", "vlrm-retrieval-report"}, {"version", 1}, {"mrr", mrr},
            {"recall_at", r}, {"n_queries", n_queries}, {"ranks", ranks}};
  }

  static RetrievalReport from_json(const nlohmann::json& j) {
    RetrievalReport rep;
    try {
      if (j.at("format") != "vlrm-retrieval-report" || j.at("version") != 1) throw IoError("not a retrieval report");
      rep.mrr = j.at("mrr").get<double>();
      for (auto it = j.at("recall_at").begin(); it != j.at("recall_at").end(); ++it)
        rep.recall_at[std::stoi(it.key())] = it.value().get<double>();
      rep.n_queries = j.at("n_queries").get<std::size_t>();
      rep.ranks = j.at("ranks").get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
      throw IoError(std::string("retrieval report: ") + e.what());
    }
    return rep;
  }

  bool operator==(const RetrievalReport&) const = default;
};

/// Summary statistics from 1-based ranks.
inline RetrievalReport report_from_ranks(std::vector<std::size_t> ranks, const std::vector<int>& ks) {
  RetrievalReport rep;
  rep.n_queries = ranks.size();
  for (int k : ks) rep.recall_at[k] = 0.0;
  if (ranks.empty()) return rep;
  for (std::size_t r : ranks) {
    rep.mrr += 1.0 / static_cast<double>(r);
    for (int k : ks)
      if (r <= static_cast<std::size_t>(k)) rep.recall_at[k] += 1.0;
  }
  const double n = static_cast<double>(ranks.size());
  rep.mrr /= n;
  for (auto& [k, v] : rep.recall_at) v /= n;
  rep.ranks = std::move(ranks);
  return rep;
}

/// Caption i queries all scenes; its rank is 1 + the number of scenes that
/// score higher, or equal with a smaller scene id.
inline RetrievalReport retrieval_eval(const std::vector<TokenSeq>& captions, const std::vector<Scene>& scenes,
                                      const std::vector<int>& ks, const Vocab& vocab) {
  if (captions.size() != scenes.size()) throw ContractError("captions and scenes differ in count");
  for (int k : ks)
    if (k < 1 || static_cast<std::size_t>(k) > scenes.size()) throw ContractError("K outside [1, number of scenes]");
  std::vector<std::size_t> ranks;
  ranks.reserve(captions.size());
  for (std::size_t i = 0; i < captions.size(); ++i) {
    const auto q = embed_caption(captions[i], vocab);
    const double own = dot(q, scenes[i].embedding);
    std::size_t rank = 1;
    for (std::size_t j = 0; j < scenes.size(); ++j) {
      if (j == i) continue;
      const double s = dot(q, scenes[j].embedding);
      if (s > own || (s == own && scenes[j].id < scenes[i].id)) ++rank;
    }
    ranks.push_back(rank);
  }
  return report_from_ranks(std::move(ranks), ks);
}

struct CaptionStats {
  std::size_t count = 0;
  double mean_length = 0.0;    // words, eos excluded
  double median_length = 0.0;
  double mean_colors = 0.0;    // color words per caption
  double bad_rate = 0.0;       // fraction of captions with a bad span
  double repeat_rate = 0.0;    // fraction of captions with a repeat flag
  double eos_rate = 0.0;

  nlohmann::json to_json() const {
    return {{"count", count}, {"mean_length", mean_length}, {"median_length", median_length},
            {"mean_colors", mean_colors}, {"bad_rate", bad_rate}, {"repeat_rate", repeat_rate},
            {"eos_rate", eos_rate}};
  }
};

inline CaptionStats caption_stats(const std::vector<TokenSeq>& captions, const Vocab& vocab, const BadPhraseSet& bps) {
  CaptionStats st;
  st.count = captions.size();
  if (captions.empty()) return st;
  std::vector<double> lengths;
  for (const auto& c : captions) {
    const double len = static_cast<double>(c.content_length());
    lengths.push_back(len);
    st.mean_length += len;
    for (int id : c.ids) st.mean_colors += vocab.is_color(id) ? 1.0 : 0.0;
    const auto bad = detect_bad(c, bps, vocab);
    const auto rep = detect_repeat(c, vocab);
    st.bad_rate += std::count(bad.begin(), bad.end(), 1) > 0 ? 1.0 : 0.0;
    st.repeat_rate += std::count(rep.begin(), rep.end(), 1) > 0 ? 1.0 : 0.0;
    st.eos_rate += c.has_eos ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(captions.size());
  st.mean_length /= n;
  st.mean_colors /= n;
  st.bad_rate /= n;
  st.repeat_rate /= n;
  st.eos_rate /= n;
  std::sort(lengths.begin(), lengths.end());
  const std::size_t m = lengths.size();
  st.median_length = m % 2 == 1 ? lengths[m / 2] : 0.5 * (lengths[m / 2 - 1] + lengths[m / 2]);
  return st;
}

/// Runs fn(i) for i in [0, n) on up to `workers` threads; each index is
/// handled by exactly one thread and results go to per-index slots.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t workers, Fn&& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  workers = std::min(workers, n);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  for (auto& t : pool) t.join();
}

/// Deterministic captions for a list of scenes.
inline std::vector<TokenSeq> generate_captions(const PolicyNet& policy, const std::vector<Scene>& scenes,
                                               const DecodeConfig& cfg, const Vocab& vocab, std::size_t workers = 1) {
  std::vector<TokenSeq> out(scenes.size());
  const TokenSpace ts = TokenSpace::of(vocab);
  parallel_for(scenes.size(), workers, [&](std::size_t i) {
    DecodeConfig c = cfg;
    c.seed = cfg.seed + static_cast<std::uint64_t>(scenes[i].id);
    out[i] = decode(policy, policy.start(scenes[i]), c, ts);
  });
  return out;
}

}  // namespace vlrm

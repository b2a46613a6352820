#pragma once

// Token-level penalties and the composite per-token return.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "vlrm/aho_corasick.hpp"
#include "vlrm/error.hpp"
#include "vlrm/textcore.hpp"
#include "vlrm/util.hpp"

namespace vlrm {

/// Word-aligned bad phrases plus the four-digit year rule.
class BadPhraseSet {
 public:
  struct Span {
    std::size_t begin;
    std::size_t end;
    int phrase;  // index into phrases(), or -1 for the year rule
  };

  BadPhraseSet() { compile(); }

  explicit BadPhraseSet(const std::vector<std::string>& phrases, bool year_rule = true) : year_rule_(year_rule) {
    std::set<std::string> seen;
    for (const auto& p : phrases) {
      auto words = split_words(p);
      if (words.empty()) continue;
      std::string norm;
      for (const auto& w : words) norm += (norm.empty() ? "" : " ") + w;
      if (!seen.insert(norm).second) continue;
      phrases_.push_back(std::move(words));
    }
    compile();
  }

  /// One phrase per line; blank lines and '#' comments are skipped.
  static BadPhraseSet parse(std::string_view text, bool year_rule = true) {
    std::vector<std::string> phrases;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      std::size_t nl = text.find('\n', pos);
      if (nl == std::string_view::npos) nl = text.size();
      std::string line = trim(text.substr(pos, nl - pos));
      if (!line.empty() && line[0] != '#') phrases.push_back(line);
      pos = nl + 1;
    }
    return BadPhraseSet(phrases, year_rule);
  }

  static BadPhraseSet load(const std::string& path, bool year_rule = true) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open bad-phrase file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), year_rule);
  }

  std::string serialize() const {
    std::string out;
    for (const auto& p : phrases_) {
      for (std::size_t i = 0; i < p.size(); ++i) out += (i ? " " : "") + p[i];
      out += '\n';
    }
    return out;
  }

  const std::vector<std::vector<std::string>>& phrases() const { return phrases_; }
  bool year_rule() const { return year_rule_; }

  static bool is_year(std::string_view w) {
    return w.size() == 4 && std::all_of(w.begin(), w.end(), [](char c) { return c >= '0' && c <= '9'; });
  }

  std::vector<Span> find_spans(const std::vector<std::string>& words) const {
    std::vector<int> symbols(words.size(), -1);
    for (std::size_t i = 0; i < words.size(); ++i) {
      auto it = symbol_of_.find(words[i]);
      if (it != symbol_of_.end()) symbols[i] = it->second;
    }
    std::vector<Span> spans;
    matcher_.scan(symbols, [&](const auto& m) { spans.push_back({m.begin, m.end, static_cast<int>(m.pattern)}); });
    if (year_rule_) {
      for (std::size_t i = 0; i < words.size(); ++i)
        if (is_year(words[i])) spans.push_back({i, i + 1, -1});
    }
    return spans;
  }

 private:
  void compile() {
    std::vector<std::vector<int>> encoded;
    for (const auto& p : phrases_) {
      std::vector<int> e;
      for (const auto& w : p) {
        auto [it, fresh] = symbol_of_.emplace(w, static_cast<int>(symbol_of_.size()));
        e.push_back(it->second);
      }
      encoded.push_back(std::move(e));
    }
    matcher_ = AhoCorasick<int>(encoded);
  }

  std::vector<std::vector<std::string>> phrases_;
  std::unordered_map<std::string, int> symbol_of_;
  AhoCorasick<int> matcher_;
  bool year_rule_ = true;
};

struct PenaltyFlags {
  std::vector<int> bad;
  std::vector<int> repeat;
  int noeos = 0;
};

inline std::vector<std::string> words_of(const TokenSeq& tokens, const Vocab& vocab) {
  std::vector<std::string> words;
  words.reserve(tokens.ids.size());
  for (int id : tokens.ids) words.push_back(vocab.token(id));
  return words;
}

inline std::vector<BadPhraseSet::Span> bad_spans(const TokenSeq& tokens, const BadPhraseSet& bps, const Vocab& vocab) {
  return bps.find_spans(words_of(tokens, vocab));
}

/// 1 on every token covered by a matched phrase or year.
inline std::vector<int> detect_bad(const TokenSeq& tokens, const BadPhraseSet& bps, const Vocab& vocab) {
  std::vector<int> flags(tokens.ids.size(), 0);
  for (const auto& s : bad_spans(tokens, bps, vocab))
    for (std::size_t i = s.begin; i < s.end; ++i) flags[i] = 1;
  return flags;
}

/// 1 on second and later occurrences of a word, except colors, prepositions and articles.
inline std::vector<int> detect_repeat(const TokenSeq& tokens, const Vocab& vocab) {
  std::vector<int> flags(tokens.ids.size(), 0);
  std::unordered_set<int> seen;
  for (std::size_t s = 0; s < tokens.ids.size(); ++s) {
    int id = tokens.ids[s];
    if (vocab.is_special(id)) continue;
    if (!seen.insert(id).second && !vocab.is_repeat_exempt(id)) flags[s] = 1;
  }
  return flags;
}

inline PenaltyFlags detect_penalties(const TokenSeq& tokens, const BadPhraseSet& bps, const Vocab& vocab) {
  return {detect_bad(tokens, bps, vocab), detect_repeat(tokens, vocab), tokens.has_eos ? 0 : 1};
}

/// Per-token returns for the tokens before eos, with the components kept.
struct ReturnVector {
  std::vector<double> returns;
  double sim = 0.0;
  double ref = 0.0;
  int noeos = 0;
  std::vector<double> bad_suffix_sums;
  std::vector<double> repeat_suffix_sums;
  double gamma = 1.0;
};

/// Terminal reward sim + ref - noeos lands on the last generated token;
/// penalties land on their own positions. With gamma = 1:
///   R(t_k) = sim + ref - noeos - sum_{s>=k} bad[s] - sum_{s>=k} repeat[s]
inline ReturnVector compute_returns(const TokenSeq& tokens, double sim, double ref, const PenaltyFlags& flags,
                                    double gamma = 1.0) {
  if (!(gamma > 0.0 && gamma <= 1.0)) throw ContractError("gamma must lie in (0, 1]");
  if (flags.bad.size() != tokens.ids.size() || flags.repeat.size() != tokens.ids.size())
    throw ContractError("penalty flags do not match token count");
  const std::size_t m = tokens.content_length();
  ReturnVector r;
  r.sim = sim;
  r.ref = ref;
  r.noeos = flags.noeos;
  r.gamma = gamma;
  r.returns.assign(m, 0.0);
  r.bad_suffix_sums.assign(m, 0.0);
  r.repeat_suffix_sums.assign(m, 0.0);
  const double terminal = sim + ref - static_cast<double>(flags.noeos);
  double bad_acc = 0.0, rep_acc = 0.0, discount = 1.0;
  for (std::size_t k = m; k-- > 0;) {
    bad_acc = static_cast<double>(flags.bad[k]) + gamma * bad_acc;
    rep_acc = static_cast<double>(flags.repeat[k]) + gamma * rep_acc;
    r.bad_suffix_sums[k] = bad_acc;
    r.repeat_suffix_sums[k] = rep_acc;
    // Integer penalty totals stay exact, so gamma = 1 returns are bit-exact.
    r.returns[k] = discount * terminal - (bad_acc + rep_acc);
    discount *= gamma;
  }
  return r;
}

}  // namespace vlrm

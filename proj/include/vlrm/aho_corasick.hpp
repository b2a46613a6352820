#pragma once

#include <cstddef>
#include <map>
#include <queue>
#include <vector>

namespace vlrm {

/// Aho-Corasick automaton over sequences of ordered symbols.
/// Reports every occurrence of every pattern, overlapping ones included.
template <typename Symbol>
class AhoCorasick {
 public:
  struct Match {
    std::size_t begin;    // first position of the occurrence
    std::size_t end;      // one past the last position
    std::size_t pattern;  // index in insertion order
  };

  AhoCorasick() { nodes_.emplace_back(); }

  template <typename Seq>
  explicit AhoCorasick(const std::vector<Seq>& patterns) : AhoCorasick() {
    for (const auto& p : patterns) add(p);
    build();
  }

  template <typename Seq>
  std::size_t add(const Seq& pattern) {
    std::size_t state = 0;
    for (const auto& sym : pattern) {
      auto it = nodes_[state].next.find(sym);
      if (it == nodes_[state].next.end()) {
        nodes_.emplace_back();
        nodes_.back().depth = nodes_[state].depth + 1;
        it = nodes_[state].next.emplace(sym, nodes_.size() - 1).first;
      }
      state = it->second;
    }
    const std::size_t index = lengths_.size();
    lengths_.push_back(nodes_[state].depth);
    if (nodes_[state].depth > 0) nodes_[state].outputs.push_back(index);
    built_ = false;
    return index;
  }

  void build() {
    std::queue<std::size_t> q;
    for (auto& [sym, child] : nodes_[0].next) {
      nodes_[child].fail = 0;
      nodes_[child].dict = kNone;
      q.push(child);
    }
    while (!q.empty()) {
      std::size_t u = q.front();
      q.pop();
      for (auto& [sym, child] : nodes_[u].next) {
        std::size_t f = nodes_[u].fail;
        while (f != 0 && !nodes_[f].next.count(sym)) f = nodes_[f].fail;
        auto it = nodes_[f].next.find(sym);
        std::size_t target = (it != nodes_[f].next.end() && it->second != child) ? it->second : 0;
        nodes_[child].fail = target;
        nodes_[child].dict = nodes_[target].outputs.empty() ? nodes_[target].dict : target;
        q.push(child);
      }
    }
    built_ = true;
  }

  std::size_t pattern_count() const { return lengths_.size(); }

  template <typename Seq, typename OnMatch>
  void scan(const Seq& text, OnMatch&& on_match) const {
    std::size_t state = 0;
    std::size_t pos = 0;
    for (const auto& sym : text) {
      for (;;) {
        auto it = nodes_[state].next.find(sym);
        if (it != nodes_[state].next.end()) {
          state = it->second;
          break;
        }
        if (state == 0) break;
        state = nodes_[state].fail;
      }
      ++pos;
      for (std::size_t s = nodes_[state].outputs.empty() ? nodes_[state].dict : state; s != kNone; s = nodes_[s].dict) {
        for (std::size_t p : nodes_[s].outputs) on_match(Match{pos - lengths_[p], pos, p});
      }
    }
  }

  template <typename Seq>
  std::vector<Match> find_all(const Seq& text) const {
    std::vector<Match> out;
    scan(text, [&](const Match& m) { out.push_back(m); });
    return out;
  }

  bool built() const { return built_; }

 private:
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  struct Node {
    std::map<Symbol, std::size_t> next;
    std::size_t fail = 0;
    std::size_t dict = kNone;  // nearest proper suffix state with outputs
    std::size_t depth = 0;
    std::vector<std::size_t> outputs;
  };

  std::vector<Node> nodes_;
  std::vector<std::size_t> lengths_;
  bool built_ = true;
};

}  // namespace vlrm

#pragma once

// Small policies for decoding tests.

#include <limits>
#include <map>

#include <Eigen/Dense>

#include "support/oracles.hpp"

namespace oracle {

/// Logits depend on (step, previous token) through a fixed table.
struct TableModel {
  struct State {
    int step = 0;
  };
  std::vector<Eigen::MatrixXd> table;  // [step](prev, next)

  Eigen::VectorXd next_logits(State& s, int prev) const {
    const std::size_t t = std::min(static_cast<std::size_t>(s.step), table.size() - 1);
    ++s.step;
    return table[t].row(prev).transpose();
  }
};

static_assert(vlrm::StepModel<TableModel>);

inline TableModel random_table(vlrm::Rng& rng, int v, int steps, double scale) {
  TableModel m;
  for (int s = 0; s < steps; ++s) {
    Eigen::MatrixXd t(v, v);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = scale * vlrm::detail::normal(rng);
    m.table.push_back(t);
  }
  return m;
}

// Token 0 plays bos, 1 eos; both are in range of the table.
inline const vlrm::TokenSpace kToySpace{0, 1, {0}};

inline vlrm::DecodeConfig toy_config(vlrm::DecodeMode mode, int max_new) {
  vlrm::DecodeConfig c;
  c.mode = mode;
  c.min_new_tokens = 1;
  c.max_new_tokens = max_new;
  c.no_repeat_ngram_size = 0;
  c.top_k = 100;
  c.temperature = 1.0;
  return c;
}

inline vlrm::PolicyNet random_policy(std::uint64_t seed, double scale, const vlrm::Vocab& vocab) {
  vlrm::ModelConfig mc;
  mc.hidden = 12;
  mc.init_seed = seed;
  vlrm::PolicyNet net = vlrm::PolicyNet::create(vocab.size(), vocab.attribute_dim(), mc);
  vlrm::Rng rng(seed);
  randomize(net, rng, scale);
  return net;
}

/// Highest-scoring finished sequence of at most `max_len` tokens, by walking
/// every path; eos is barred at the first step.
inline std::pair<double, std::vector<int>> best_finished(const TableModel& m, int v, std::size_t max_len) {
  double best = -std::numeric_limits<double>::infinity();
  std::vector<int> arg;
  std::vector<int> ids;
  std::function<void(TableModel::State, int, double)> walk = [&](TableModel::State s, int prev, double score) {
    const Eigen::VectorXd l = vlrm::detail::log_softmax(m.next_logits(s, prev));
    for (int tok = 1; tok < v; ++tok) {
      if (tok == kToySpace.eos && ids.empty()) continue;
      ids.push_back(tok);
      if (tok == kToySpace.eos) {
        if (score + l(tok) > best) best = score + l(tok), arg = ids;
      } else if (ids.size() < max_len) {
        walk(s, tok, score + l(tok));
      }
      ids.pop_back();
    }
  };
  walk(TableModel::State{}, kToySpace.bos, 0.0);
  return {best, arg};
}

/// Exact probability of every two-token outcome of top-k sampling.
inline std::map<std::vector<int>, double> two_step_topk(const TableModel& m, int v, int top_k, double temperature) {
  std::map<std::vector<int>, double> exact;
  TableModel::State s0;
  const Eigen::VectorXd z0 = m.next_logits(s0, kToySpace.bos);
  std::vector<bool> allowed(v, true);
  allowed[0] = false;
  std::vector<bool> first = allowed;
  first[1] = false;
  for (auto [a, pa] : vlrm::topk_distribution(z0, first, top_k, temperature)) {
    TableModel::State s1 = s0;
    const Eigen::VectorXd z1 = m.next_logits(s1, a);
    for (auto [b, pb] : vlrm::topk_distribution(z1, allowed, top_k, temperature)) exact[{a, b}] += pa * pb;
  }
  return exact;
}

}  // namespace oracle

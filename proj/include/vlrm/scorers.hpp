#pragma once

// Scalar scorers feeding the reward: attribute-coverage similarity, the
// two-class ITM aggregation, the n-gram reference LM, and the dual-softmax
// retrieval bonus used by the retrieval-specialized flavor.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <Eigen/Dense>

#include "vlrm/error.hpp"
#include "vlrm/textcore.hpp"
#include "vlrm/util.hpp"

namespace vlrm {

/// Stand-in for the positive ITM logit: rewards covered attributes,
/// punishes attribute words the scene does not contain.
struct SimOracle {
  double alpha = 1.0;  // coverage weight
  double beta = 1.0;   // hallucination weight
  double scale = 1.0;
};

struct MentionCounts {
  int correct = 0;
  int hallucinated = 0;
};

inline MentionCounts count_mentions(const Scene& scene, const TokenSeq& caption, const Vocab& vocab) {
  std::unordered_set<int> mentioned;
  for (int id : caption.ids)
    if (vocab.attribute_index(id) != Vocab::kNoAttribute) mentioned.insert(id);
  MentionCounts c;
  for (int id : mentioned) (scene.has_value(id) ? c.correct : c.hallucinated) += 1;
  return c;
}

inline double sim_score(const Scene& scene, const TokenSeq& caption, const SimOracle& oracle, const Vocab& vocab) {
  const MentionCounts c = count_mentions(scene, caption, vocab);
  return oracle.scale * (oracle.alpha * c.correct - oracle.beta * c.hallucinated);
}

/// Two-class linear classifier applied to each query embedding.
struct ItmHead {
  Eigen::MatrixXd weight;  // d x 2, column 0 is the positive ("match") class
  Eigen::Vector2d bias = Eigen::Vector2d::Zero();
  int queries = 32;

  int dim() const { return static_cast<int>(weight.rows()); }
};

struct ItmOutput {
  double probability = 0.0;  // mean over queries of softmax(FC(z_i))[0]
  double raw_logit = 0.0;    // mean over queries of FC(z_i)[0]
};

inline ItmOutput itm_aggregate(const Eigen::MatrixXd& query_embeddings, const ItmHead& head) {
  if (head.weight.cols() != 2) throw ContractError("ITM head must have two output classes");
  if (query_embeddings.cols() != head.weight.rows())
    throw ContractError("query embedding width does not match the ITM head");
  if (query_embeddings.rows() != head.queries || head.queries < 1)
    throw ContractError("query count does not match the ITM head");
  Eigen::MatrixXd logits = query_embeddings * head.weight;
  logits.rowwise() += head.bias.transpose();
  ItmOutput out;
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double d = logits(i, 1) - logits(i, 0);
    // softmax(l)[0] = 1 / (1 + exp(l1 - l0)), stable for large |d|
    out.probability += d > 0 ? std::exp(-d) / (1.0 + std::exp(-d)) : 1.0 / (1.0 + std::exp(d));
    out.raw_logit += logits(i, 0);
  }
  out.probability /= static_cast<double>(logits.rows());
  out.raw_logit /= static_cast<double>(logits.rows());
  return out;
}

/// Synthetic query embeddings for a (scene, caption) pair. Row i is
/// (c_i * covered, c_i * hallucinated, 1) with query gains c_i averaging 1,
/// and the matching head makes the mean positive logit equal to sim_score.
struct SyntheticItm {
  SimOracle oracle;
  int queries = 32;

  ItmHead head() const {
    ItmHead h;
    h.queries = queries;
    h.weight = Eigen::MatrixXd::Zero(3, 2);
    h.weight(0, 0) = oracle.scale * oracle.alpha;
    h.weight(1, 0) = -oracle.scale * oracle.beta;
    return h;
  }

  Eigen::MatrixXd query_embeddings(const Scene& scene, const TokenSeq& caption, const Vocab& vocab) const {
    const MentionCounts c = count_mentions(scene, caption, vocab);
    Eigen::MatrixXd z(queries, 3);
    for (int i = 0; i < queries; ++i) {
      double gain = 1.0;
      if (!(queries % 2 == 1 && i == queries - 1)) gain += (i % 2 == 0 ? 0.5 : -0.5);
      z(i, 0) = gain * c.correct;
      z(i, 1) = gain * c.hallucinated;
      z(i, 2) = 1.0;
    }
    return z;
  }

  ItmOutput score(const Scene& scene, const TokenSeq& caption, const Vocab& vocab) const {
    return itm_aggregate(query_embeddings(scene, caption, vocab), head());
  }
};

/// Additively smoothed n-gram model. Predicts every token except bos and pad;
/// contexts are the previous order-1 tokens, left-padded with bos.
class RefLM {
 public:
  struct ContextCounts {
    std::uint64_t total = 0;
    std::map<int, std::uint64_t> next;
  };

  RefLM() = default;

  static RefLM untrained(const Vocab& vocab, int order, double smoothing) {
    if (order < 1) throw ConfigError("n-gram order must be >= 1");
    if (!(smoothing > 0.0) || !std::isfinite(smoothing)) throw ConfigError("smoothing must be > 0");
    RefLM lm;
    lm.order_ = order;
    lm.smoothing_ = smoothing;
    lm.vocab_size_ = vocab.size();
    lm.vocab_hash_ = vocab.hash();
    lm.bos_ = vocab.bos();
    lm.pad_ = vocab.pad();
    return lm;
  }

  int order() const { return order_; }
  double smoothing() const { return smoothing_; }
  std::uint64_t vocab_hash() const { return vocab_hash_; }
  int support_size() const { return vocab_size_ - 2; }
  const std::map<std::vector<int>, ContextCounts>& table() const { return table_; }

  bool predictable(int id) const { return id >= 0 && id < vocab_size_ && id != bos_ && id != pad_; }

  void observe(const TokenSeq& seq) {
    std::vector<int> ctx(static_cast<std::size_t>(order_ - 1), bos_);
    for (int id : seq.ids) {
      auto& c = table_[ctx];
      c.total += 1;
      c.next[id] += 1;
      advance(ctx, id);
    }
  }

  double prob(const std::vector<int>& context, int id) const {
    if (!predictable(id)) return 0.0;
    double count = 0.0, total = 0.0;
    auto it = table_.find(context);
    if (it != table_.end()) {
      total = static_cast<double>(it->second.total);
      auto jt = it->second.next.find(id);
      if (jt != it->second.next.end()) count = static_cast<double>(jt->second);
    }
    return (count + smoothing_) / (total + smoothing_ * support_size());
  }

  /// Per-token log-probabilities of `seq`, eos included when present.
  std::vector<double> token_logprobs(const TokenSeq& seq) const {
    std::vector<int> ctx(static_cast<std::size_t>(order_ - 1), bos_);
    std::vector<double> out;
    out.reserve(seq.ids.size());
    for (int id : seq.ids) {
      out.push_back(std::log(prob(ctx, id)));
      advance(ctx, id);
    }
    return out;
  }

  std::string serialize() const {
    std::ostringstream os;
    char buf[64];
    os << "vlrm-reflm 1\n";
    os << "order " << order_ << "\n";
    std::snprintf(buf, sizeof buf, "%a", smoothing_);
    os << "smoothing " << buf << "\n";
    os << "vocab_size " << vocab_size_ << "\n";
    os << "bos " << bos_ << " pad " << pad_ << "\n";
    os << "vocab_hash " << hex64(vocab_hash_) << "\n";
    os << "contexts " << table_.size() << "\n";
    for (const auto& [ctx, c] : table_) {
      os << "ctx";
      for (int id : ctx) os << ' ' << id;
      os << " |";
      for (const auto& [id, n] : c.next) os << ' ' << id << ':' << n;
      os << "\n";
    }
    return os.str();
  }

  static RefLM deserialize(const std::string& text) {
    std::istringstream is(text);
    std::string tag, word;
    int version = 0;
    RefLM lm;
    auto expect = [&](const char* key) {
      if (!(is >> word) || word != key) throw IoError(std::string("reflm: expected '") + key + "'");
    };
    if (!(is >> tag >> version) || tag != "vlrm-reflm" || version != 1) throw IoError("not a reflm dump");
    expect("order");
    is >> lm.order_;
    expect("smoothing");
    is >> word;
    lm.smoothing_ = std::strtod(word.c_str(), nullptr);
    expect("vocab_size");
    is >> lm.vocab_size_;
    expect("bos");
    is >> lm.bos_;
    expect("pad");
    is >> lm.pad_;
    expect("vocab_hash");
    is >> word;
    lm.vocab_hash_ = parse_hex64(word);
    expect("contexts");
    std::size_t n = 0;
    is >> n;
    std::string line;
    std::getline(is, line);
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::getline(is, line)) throw IoError("reflm: truncated context table");
      std::istringstream ls(line);
      ls >> word;
      if (word != "ctx") throw IoError("reflm: malformed context line");
      std::vector<int> ctx;
      while (ls >> word && word != "|") ctx.push_back(std::stoi(word));
      ContextCounts c;
      while (ls >> word) {
        auto colon = word.find(':');
        if (colon == std::string::npos) throw IoError("reflm: malformed count");
        std::uint64_t cnt = std::stoull(word.substr(colon + 1));
        c.next[std::stoi(word.substr(0, colon))] = cnt;
        c.total += cnt;
      }
      lm.table_.emplace(std::move(ctx), std::move(c));
    }
    if (!is && !is.eof()) throw IoError("reflm: read failure");
    return lm;
  }

 private:
  void advance(std::vector<int>& ctx, int id) const {
    if (ctx.empty()) return;
    ctx.erase(ctx.begin());
    ctx.push_back(id);
  }

  int order_ = 1;
  double smoothing_ = 1.0;
  int vocab_size_ = 0;
  std::uint64_t vocab_hash_ = 0;
  int bos_ = 1;
  int pad_ = 0;
  std::map<std::vector<int>, ContextCounts> table_;
};

inline RefLM train_reflm(const std::vector<TokenSeq>& corpus, const Vocab& vocab, int order, double smoothing) {
  if (corpus.empty()) throw ContractError("reference LM corpus is empty");
  RefLM lm = RefLM::untrained(vocab, order, smoothing);
  for (const auto& seq : corpus) lm.observe(seq);
  return lm;
}

/// Mean per-token log-probability of the caption under the reference LM.
inline double ref_score(const TokenSeq& caption, const RefLM& lm) {
  if (caption.ids.empty()) throw ContractError("ref_score of an empty caption");
  double s = 0.0;
  for (double lp : lm.token_logprobs(caption)) s += lp;
  return s / static_cast<double>(caption.ids.size());
}

inline double perplexity(const std::vector<TokenSeq>& corpus, const RefLM& lm) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& seq : corpus) {
    for (double lp : lm.token_logprobs(seq)) s += lp;
    n += seq.ids.size();
  }
  if (n == 0) throw ContractError("perplexity of an empty corpus");
  return std::exp(-s / static_cast<double>(n));
}

struct RsRewardOutput {
  std::vector<double> reward;  // itm + weight * phi
  std::vector<double> diag;    // D
  std::vector<double> phi;     // standardized D
};

/// S_ij = cos(image_i, text_j); D = diag(softmax over i * softmax over j);
/// phi = (D - mean D) / (std D + eps) with the population std.
inline RsRewardOutput rs_reward_from_similarity(const Eigen::MatrixXd& sim, const std::vector<double>& itm_scores,
                                                double weight = 0.3, double eps = 1e-8) {
  const Eigen::Index b = sim.rows();
  if (b < 2) throw ContractError("retrieval reward needs a batch of at least 2");
  if (sim.cols() != b || static_cast<Eigen::Index>(itm_scores.size()) != b)
    throw ContractError("similarity matrix and scores must be B x B and B");
  Eigen::MatrixXd col_sm(b, b), row_sm(b, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    const double mx = sim.col(j).maxCoeff();
    Eigen::VectorXd e = (sim.col(j).array() - mx).exp();
    col_sm.col(j) = e / e.sum();
  }
  for (Eigen::Index i = 0; i < b; ++i) {
    const double mx = sim.row(i).maxCoeff();
    Eigen::RowVectorXd e = (sim.row(i).array() - mx).exp();
    row_sm.row(i) = e / e.sum();
  }
  RsRewardOutput out;
  out.diag.resize(static_cast<std::size_t>(b));
  double mean = 0.0;
  for (Eigen::Index k = 0; k < b; ++k) {
    out.diag[static_cast<std::size_t>(k)] = col_sm(k, k) * row_sm(k, k);
    mean += out.diag[static_cast<std::size_t>(k)];
  }
  mean /= static_cast<double>(b);
  double var = 0.0;
  for (double d : out.diag) var += (d - mean) * (d - mean);
  const double sd = std::sqrt(var / static_cast<double>(b));
  out.phi.resize(out.diag.size());
  out.reward.resize(out.diag.size());
  for (std::size_t k = 0; k < out.diag.size(); ++k) {
    out.phi[k] = (out.diag[k] - mean) / (sd + eps);
    out.reward[k] = itm_scores[k] + weight * out.phi[k];
  }
  return out;
}

inline RsRewardOutput rs_reward(const Eigen::MatrixXd& image_embs, const Eigen::MatrixXd& text_embs,
                                const std::vector<double>& itm_scores, double weight = 0.3, double eps = 1e-8) {
  if (image_embs.rows() < 2) throw ContractError("retrieval reward needs a batch of at least 2");
  if (image_embs.rows() != text_embs.rows() || image_embs.cols() != text_embs.cols())
    throw ContractError("image and text embedding batches differ in shape");
  constexpr double kTol = 1e-6;
  for (Eigen::Index i = 0; i < image_embs.rows(); ++i) {
    if (std::abs(image_embs.row(i).norm() - 1.0) > kTol || std::abs(text_embs.row(i).norm() - 1.0) > kTol)
      throw ContractError("embedding rows must be unit-normalized");
  }
  return rs_reward_from_similarity(image_embs * text_embs.transpose(), itm_scores, weight, eps);
}

}  // namespace vlrm

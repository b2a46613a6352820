#pragma once

// Captioning policy and value head.
//
// Policy: the scene embedding is projected to a prefix state p that seeds the
// recurrent core (h_0 = tanh p) and is added at every step:
//   h_t = tanh(E[x_t] W_in + h_{t-1} W_rec + p + b),  logits_t = h_t W_out + b_out
// The projection and output layers are the generative tunables; E, W_in,
// W_rec and b form the frozen core. Low-rank adapters on W_in and W_rec are
// used only on the value path, with zero-initialized up-projections.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "vlrm/decode.hpp"
#include "vlrm/error.hpp"
#include "vlrm/tape.hpp"
#include "vlrm/textcore.hpp"
#include "vlrm/util.hpp"

namespace vlrm {

struct ModelConfig {
  int hidden = 64;
  int adapter_rank = 4;
  int value_hidden = 64;
  int value_layers = 3;  // 0 gives a single linear layer
  std::uint64_t init_seed = 1;

  void validate() const {
    if (hidden < 1 || adapter_rank < 1 || value_hidden < 1 || value_layers < 0)
      throw ConfigError("model sizes must be positive");
  }

  nlohmann::json to_json() const {
    return {{"hidden", hidden}, {"adapter_rank", adapter_rank}, {"value_hidden", value_hidden},
            {"value_layers", value_layers}, {"init_seed", init_seed}};
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(j, {"hidden", "adapter_rank", "value_hidden", "value_layers", "init_seed"},
                                "model config");
    ModelConfig c;
    try {
      if (j.contains("hidden")) c.hidden = j.at("hidden").get<int>();
      if (j.contains("adapter_rank")) c.adapter_rank = j.at("adapter_rank").get<int>();
      if (j.contains("value_hidden")) c.value_hidden = j.at("value_hidden").get<int>();
      if (j.contains("value_layers")) c.value_layers = j.at("value_layers").get<int>();
      if (j.contains("init_seed")) c.init_seed = j.at("init_seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("model config: ") + e.what());
    }
    c.validate();
    return c;
  }
};

namespace detail {

inline double normal(Rng& rng) {
  // Box-Muller on the portable uniform so initialization is library-independent.
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

inline Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index c = 0; c < cols; ++c)
    for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = stddev * normal(rng);
  return m;
}

}  // namespace detail

/// Named parameters with stable order.
class ParameterList {
 public:
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }

  Parameter& param(std::string_view name) {
    for (auto& p : params_)
      if (p.name == name) return p;
    throw ContractError("no parameter named '" + std::string(name) + "'");
  }
  const Parameter& param(std::string_view name) const { return const_cast<ParameterList*>(this)->param(name); }

  std::size_t count(Partition part) const {
    std::size_t n = 0;
    for (const auto& p : params_)
      if (p.partition == part) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

 protected:
  Parameter& add(std::string name, Partition part, Matrix value) {
    params_.push_back(Parameter{std::move(name), part, std::move(value)});
    return params_.back();
  }

  std::vector<Parameter> params_;
};

class PolicyNet : public ParameterList {
 public:
  struct State {
    Eigen::RowVectorXd h;
    Eigen::RowVectorXd prefix;
  };

  static PolicyNet create(int vocab_size, int scene_dim, const ModelConfig& cfg) {
    cfg.validate();
    if (vocab_size < 1 || scene_dim < 1) throw ConfigError("vocab and scene sizes must be positive");
    PolicyNet net;
    net.vocab_size_ = vocab_size;
    net.scene_dim_ = scene_dim;
    net.hidden_ = cfg.hidden;
    net.rank_ = cfg.adapter_rank;
    Rng rng(cfg.init_seed);
    const int h = cfg.hidden, r = cfg.adapter_rank;
    const double inv_sqrt_h = 1.0 / std::sqrt(static_cast<double>(h));
    net.add("policy.scene_proj.weight", Partition::generative, detail::random_matrix(scene_dim, h, 1.0, rng));
    net.add("policy.scene_proj.bias", Partition::generative, Matrix::Zero(1, h));
    net.add("policy.out_proj.weight", Partition::generative, detail::random_matrix(h, vocab_size, inv_sqrt_h, rng));
    net.add("policy.out_proj.bias", Partition::generative, Matrix::Zero(1, vocab_size));
    net.add("policy.core.embedding", Partition::frozen_core, detail::random_matrix(vocab_size, h, 1.0, rng));
    net.add("policy.core.input", Partition::frozen_core, detail::random_matrix(h, h, inv_sqrt_h, rng));
    net.add("policy.core.recurrent", Partition::frozen_core, detail::random_matrix(h, h, 0.9 * inv_sqrt_h, rng));
    net.add("policy.core.bias", Partition::frozen_core, Matrix::Zero(1, h));
    net.add("policy.adapter.input.down", Partition::value_adapter, detail::random_matrix(h, r, inv_sqrt_h, rng));
    net.add("policy.adapter.input.up", Partition::value_adapter, Matrix::Zero(r, h));
    net.add("policy.adapter.recurrent.down", Partition::value_adapter, detail::random_matrix(h, r, inv_sqrt_h, rng));
    net.add("policy.adapter.recurrent.up", Partition::value_adapter, Matrix::Zero(r, h));
    return net;
  }

  int vocab_size() const { return vocab_size_; }
  int scene_dim() const { return scene_dim_; }
  int hidden() const { return hidden_; }

  const Parameter& scene_w() const { return params_[0]; }
  const Parameter& scene_b() const { return params_[1]; }
  const Parameter& out_w() const { return params_[2]; }
  const Parameter& out_b() const { return params_[3]; }
  const Parameter& embedding() const { return params_[4]; }
  const Parameter& core_in() const { return params_[5]; }
  const Parameter& core_rec() const { return params_[6]; }
  const Parameter& core_b() const { return params_[7]; }
  const Parameter& adapter_in_down() const { return params_[8]; }
  const Parameter& adapter_in_up() const { return params_[9]; }
  const Parameter& adapter_rec_down() const { return params_[10]; }
  const Parameter& adapter_rec_up() const { return params_[11]; }

  State start(std::span<const double> scene_embedding) const {
    if (static_cast<int>(scene_embedding.size()) != scene_dim_) throw ContractError("scene embedding size mismatch");
    Eigen::Map<const Eigen::RowVectorXd> e(scene_embedding.data(), static_cast<Eigen::Index>(scene_embedding.size()));
    State s;
    s.prefix = e * scene_w().value + scene_b().value;
    s.h = s.prefix.array().tanh().matrix();
    return s;
  }
  State start(const Scene& scene) const { return start(std::span<const double>(scene.embedding)); }

  /// Consumes `prev`, advances the state and returns next-token logits.
  Eigen::VectorXd next_logits(State& s, int prev) const {
    if (prev < 0 || prev >= vocab_size_) throw ContractError("token id out of range");
    Eigen::RowVectorXd pre = embedding().value.row(prev) * core_in().value + s.h * core_rec().value + s.prefix +
                             core_b().value;
    s.h = pre.array().tanh().matrix();
    return (s.h * out_w().value + out_b().value).transpose();
  }

 private:
  int vocab_size_ = 0;
  int scene_dim_ = 0;
  int hidden_ = 0;
  int rank_ = 0;
};

static_assert(StepModel<PolicyNet>);

/// Feed-forward value head: value_layers tanh layers of width value_hidden,
/// then a zero-initialized linear output.
class ValueHead : public ParameterList {
 public:
  static ValueHead create(int input_dim, const ModelConfig& cfg) {
    cfg.validate();
    ValueHead head;
    Rng rng(cfg.init_seed ^ 0x9e3779b97f4a7c15ULL);
    int in = input_dim;
    for (int l = 0; l < cfg.value_layers; ++l) {
      const std::string prefix = "value_head.layer" + std::to_string(l);
      head.add(prefix + ".weight", Partition::value_head,
               detail::random_matrix(in, cfg.value_hidden, 1.0 / std::sqrt(static_cast<double>(in)), rng));
      head.add(prefix + ".bias", Partition::value_head, Matrix::Zero(1, cfg.value_hidden));
      in = cfg.value_hidden;
    }
    head.add("value_head.out.weight", Partition::value_head, Matrix::Zero(in, 1));
    head.add("value_head.out.bias", Partition::value_head, Matrix::Zero(1, 1));
    head.layers_ = cfg.value_layers;
    return head;
  }

  int layers() const { return layers_; }

  double evaluate(const Eigen::RowVectorXd& hidden) const {
    Eigen::RowVectorXd x = hidden;
    for (int l = 0; l < layers_; ++l)
      x = (x * params_[2 * l].value + params_[2 * l + 1].value).array().tanh().matrix();
    return (x * params_[2 * layers_].value)(0, 0) + params_[2 * layers_ + 1].value(0, 0);
  }

 private:
  int layers_ = 0;
};

/// Teacher-forcing layout of a batch: step t feeds inputs[t] and predicts targets[t].
struct SequenceBatch {
  Matrix scenes;                          // B x scene_dim
  std::vector<std::vector<int>> inputs;   // [t][i]
  std::vector<std::vector<int>> targets;  // [t][i], -1 past the end of sequence i
  std::vector<std::size_t> lengths;       // tokens per sequence, eos included

  std::size_t batch() const { return lengths.size(); }
  std::size_t steps() const { return inputs.size(); }
};

inline SequenceBatch make_batch(std::span<const Scene* const> scenes, std::span<const TokenSeq> seqs, int bos, int pad) {
  if (scenes.size() != seqs.size() || scenes.empty()) throw ContractError("batch scenes and sequences differ");
  SequenceBatch b;
  const std::size_t n = scenes.size();
  const std::size_t d = scenes[0]->embedding.size();
  b.scenes.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  std::size_t steps = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (scenes[i]->embedding.size() != d) throw ContractError("scene embedding sizes differ");
    for (std::size_t k = 0; k < d; ++k) b.scenes(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = scenes[i]->embedding[k];
    b.lengths.push_back(seqs[i].ids.size());
    steps = std::max(steps, seqs[i].ids.size());
  }
  b.inputs.assign(steps, std::vector<int>(n, pad));
  b.targets.assign(steps, std::vector<int>(n, -1));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t t = 0; t < seqs[i].ids.size(); ++t) {
      b.inputs[t][i] = t == 0 ? bos : seqs[i].ids[t - 1];
      b.targets[t][i] = seqs[i].ids[t];
    }
  }
  return b;
}

struct PolicyTrace {
  std::vector<GradTape::Var> logits;  // per step, B x V
  std::vector<GradTape::Var> hidden;  // per step, B x h
};

/// Teacher-forced policy pass (no adapters).
inline PolicyTrace trace_policy(GradTape& tape, const PolicyNet& net, const SequenceBatch& batch) {
  using Var = GradTape::Var;
  if (batch.scenes.cols() != net.scene_dim()) throw ContractError("scene dimension mismatch");
  Var scenes = tape.constant(batch.scenes);
  Var prefix = tape.add_row(tape.matmul(scenes, tape.param(net.scene_w())), tape.param(net.scene_b()));
  Var h = tape.tanh(prefix);
  Var emb = tape.param(net.embedding()), w_in = tape.param(net.core_in()), w_rec = tape.param(net.core_rec());
  Var b = tape.param(net.core_b()), w_out = tape.param(net.out_w()), b_out = tape.param(net.out_b());
  PolicyTrace tr;
  for (std::size_t t = 0; t < batch.steps(); ++t) {
    Var x = tape.gather_rows(emb, batch.inputs[t]);
    Var pre = tape.add(tape.add(tape.matmul(x, w_in), tape.matmul(h, w_rec)), prefix);
    h = tape.tanh(tape.add_row(pre, b));
    tr.hidden.push_back(h);
    tr.logits.push_back(tape.add_row(tape.matmul(h, w_out), b_out));
  }
  return tr;
}

/// Hidden states of the core with value adapters active. The scene prefix
/// enters as a constant, so values never push gradient into generative weights.
inline std::vector<GradTape::Var> trace_value_hidden(GradTape& tape, const PolicyNet& net, const SequenceBatch& batch) {
  using Var = GradTape::Var;
  if (batch.scenes.cols() != net.scene_dim()) throw ContractError("scene dimension mismatch");
  Matrix prefix_value = batch.scenes * net.scene_w().value;
  prefix_value.rowwise() += net.scene_b().value.row(0);
  Var prefix = tape.constant(prefix_value);
  Var h = tape.constant(prefix_value.array().tanh().matrix());
  Var emb = tape.param(net.embedding()), w_in = tape.param(net.core_in()), w_rec = tape.param(net.core_rec());
  Var b = tape.param(net.core_b());
  Var in_down = tape.param(net.adapter_in_down()), in_up = tape.param(net.adapter_in_up());
  Var rec_down = tape.param(net.adapter_rec_down()), rec_up = tape.param(net.adapter_rec_up());
  std::vector<Var> hidden;
  for (std::size_t t = 0; t < batch.steps(); ++t) {
    Var x = tape.gather_rows(emb, batch.inputs[t]);
    Var xin = tape.add(tape.matmul(x, w_in), tape.matmul(tape.matmul(x, in_down), in_up));
    Var hrec = tape.add(tape.matmul(h, w_rec), tape.matmul(tape.matmul(h, rec_down), rec_up));
    h = tape.tanh(tape.add_row(tape.add(tape.add(xin, hrec), prefix), b));
    hidden.push_back(h);
  }
  return hidden;
}

/// Value head over each step's hidden states; one B x 1 column per step.
inline std::vector<GradTape::Var> trace_values(GradTape& tape, const ValueHead& head,
                                               const std::vector<GradTape::Var>& hidden) {
  using Var = GradTape::Var;
  const auto& ps = head.parameters();
  std::vector<Var> out;
  out.reserve(hidden.size());
  for (Var h : hidden) {
    Var x = h;
    for (int l = 0; l < head.layers(); ++l)
      x = tape.tanh(tape.add_row(tape.matmul(x, tape.param(ps[static_cast<std::size_t>(2 * l)])),
                                 tape.param(ps[static_cast<std::size_t>(2 * l + 1)])));
    out.push_back(tape.add_row(tape.matmul(x, tape.param(ps[static_cast<std::size_t>(2 * head.layers())])),
                               tape.param(ps[static_cast<std::size_t>(2 * head.layers() + 1)])));
  }
  return out;
}

struct ForwardResult {
  Matrix logits;  // one row per token position
  Matrix hidden;
};

/// Teacher-forced logits and hidden states for one caption.
inline ForwardResult forward(const PolicyNet& net, const Scene& scene, const TokenSeq& tokens, const Vocab& vocab) {
  tokens.validate(vocab);
  if (net.vocab_size() != vocab.size()) throw ContractError("policy vocabulary size mismatch");
  const Scene* sp = &scene;
  SequenceBatch batch = make_batch(std::span<const Scene* const>(&sp, 1), std::span<const TokenSeq>(&tokens, 1),
                                   vocab.bos(), vocab.pad());
  GradTape tape;
  PolicyTrace tr = trace_policy(tape, net, batch);
  ForwardResult r;
  r.logits.resize(static_cast<Eigen::Index>(tr.logits.size()), net.vocab_size());
  r.hidden.resize(static_cast<Eigen::Index>(tr.hidden.size()), net.hidden());
  for (std::size_t t = 0; t < tr.logits.size(); ++t) {
    r.logits.row(static_cast<Eigen::Index>(t)) = tape.value(tr.logits[t]).row(0);
    r.hidden.row(static_cast<Eigen::Index>(t)) = tape.value(tr.hidden[t]).row(0);
  }
  return r;
}

/// V_k for every token position of the caption, adapters active.
inline std::vector<double> values(const PolicyNet& net, const ValueHead& head, const Scene& scene,
                                  const TokenSeq& tokens, const Vocab& vocab) {
  tokens.validate(vocab);
  if (net.vocab_size() != vocab.size()) throw ContractError("policy vocabulary size mismatch");
  const Scene* sp = &scene;
  SequenceBatch batch = make_batch(std::span<const Scene* const>(&sp, 1), std::span<const TokenSeq>(&tokens, 1),
                                   vocab.bos(), vocab.pad());
  GradTape tape;
  auto v = trace_values(tape, head, trace_value_hidden(tape, net, batch));
  std::vector<double> out;
  for (auto var : v) out.push_back(tape.value(var)(0, 0));
  return out;
}

}  // namespace vlrm

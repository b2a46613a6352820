#pragma once

// Actor-critic fine-tuning. One iteration:
//   1. sample captions with all parameters frozen, score them, build returns;
//   2. regress values onto returns, updating only the value head and the
//      value adapters; advantages use the values from before that update;
//   3. normalize advantages over every valid token of the batch and update the
//      generative parameters with L_p = -(1/n) sum_k p_k M_k, M held constant.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "vlrm/checkpoint.hpp"
#include "vlrm/decode.hpp"
#include "vlrm/error.hpp"
#include "vlrm/eval.hpp"
#include "vlrm/model.hpp"
#include "vlrm/optim.hpp"
#include "vlrm/rewardshape.hpp"
#include "vlrm/scorers.hpp"
#include "vlrm/tape.hpp"
#include "vlrm/textcore.hpp"
#include "vlrm/util.hpp"

namespace vlrm {

enum class RewardFlavor { vlrm, vlrm_rs };
enum class PolicyLoss { prob, logprob };
enum class ItmVariant { logit, prob };

inline const char* flavor_name(RewardFlavor f) { return f == RewardFlavor::vlrm ? "vlrm" : "vlrm-rs"; }

inline RewardFlavor parse_flavor(const std::string& s) {
  if (s == "vlrm") return RewardFlavor::vlrm;
  if (s == "vlrm-rs") return RewardFlavor::vlrm_rs;
  throw ConfigError("unknown reward flavor '" + s + "'");
}

struct TrainConfig {
  std::uint64_t warmup_steps = 20;
  double lr = 1e-5;
  double value_lr = 0.0;  // 0 means "same as lr"
  std::size_t batch_size = 64;
  double grad_clip = 1.0;
  ClipMode clip_mode = ClipMode::clamp;
  double gamma = 1.0;
  RewardFlavor flavor = RewardFlavor::vlrm;
  double rs_weight = 0.3;
  double rs_eps = 1e-8;
  double adv_eps = 1e-8;
  PolicyLoss policy_loss = PolicyLoss::prob;
  std::uint64_t seed = 1;
  DecodeConfig sampler = DecodeConfig::training_sampler();

  double effective_value_lr() const { return value_lr > 0.0 ? value_lr : lr; }

  void validate() const {
    if (!(lr > 0.0) || value_lr < 0.0) throw ConfigError("learning rates must be positive");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(grad_clip > 0.0)) throw ConfigError("grad_clip must be positive");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("gamma must lie in (0, 1]");
    if (!(rs_weight >= 0.0) || !(rs_eps > 0.0) || !(adv_eps > 0.0)) throw ConfigError("weights and eps must be positive");
    if (sampler.mode != DecodeMode::topk_sample) throw ConfigError("training captions must be sampled");
    sampler.validate();
  }

  nlohmann::json to_json() const {
    return {{"warmup_steps", warmup_steps},
            {"lr", lr},
            {"value_lr", value_lr},
            {"batch_size", batch_size},
            {"grad_clip", grad_clip},
            {"clip_mode", clip_mode == ClipMode::clamp ? "clamp" : "norm"},
            {"gamma", gamma},
            {"flavor", flavor_name(flavor)},
            {"rs_weight", rs_weight},
            {"rs_eps", rs_eps},
            {"adv_eps", adv_eps},
            {"policy_loss", policy_loss == PolicyLoss::prob ? "prob" : "logprob"},
            {"seed", seed},
            {"sampler", sampler.to_json()}};
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(j, {"warmup_steps", "lr", "value_lr", "batch_size", "grad_clip", "clip_mode", "gamma",
                                    "flavor", "rs_weight", "rs_eps", "adv_eps", "policy_loss", "seed", "sampler"},
                                "trainer config");
    TrainConfig c;
    try {
      if (j.contains("warmup_steps")) c.warmup_steps = j.at("warmup_steps").get<std::uint64_t>();
      if (j.contains("lr")) c.lr = j.at("lr").get<double>();
      if (j.contains("value_lr")) c.value_lr = j.at("value_lr").get<double>();
      if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
      if (j.contains("grad_clip")) c.grad_clip = j.at("grad_clip").get<double>();
      if (j.contains("clip_mode")) {
        const auto m = j.at("clip_mode").get<std::string>();
        if (m != "clamp" && m != "norm") throw ConfigError("clip_mode must be clamp or norm");
        c.clip_mode = m == "clamp" ? ClipMode::clamp : ClipMode::norm;
      }
      if (j.contains("gamma")) c.gamma = j.at("gamma").get<double>();
      if (j.contains("flavor")) c.flavor = parse_flavor(j.at("flavor").get<std::string>());
      if (j.contains("rs_weight")) c.rs_weight = j.at("rs_weight").get<double>();
      if (j.contains("rs_eps")) c.rs_eps = j.at("rs_eps").get<double>();
      if (j.contains("adv_eps")) c.adv_eps = j.at("adv_eps").get<double>();
      if (j.contains("policy_loss")) {
        const auto p = j.at("policy_loss").get<std::string>();
        if (p != "prob" && p != "logprob") throw ConfigError("policy_loss must be prob or logprob");
        c.policy_loss = p == "prob" ? PolicyLoss::prob : PolicyLoss::logprob;
      }
      if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
      if (j.contains("sampler")) c.sampler = DecodeConfig::from_json(j.at("sampler"), c.sampler);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("trainer config: ") + e.what());
    }
    c.validate();
    return c;
  }
};

/// Everything needed to turn an (scene, caption) pair into a return.
struct RewardModel {
  const Vocab* vocab = nullptr;
  SimOracle oracle;
  ItmVariant itm_variant = ItmVariant::logit;
  int itm_queries = 32;
  const RefLM* lm = nullptr;
  const BadPhraseSet* bps = nullptr;

  double itm(const Scene& scene, const TokenSeq& caption) const {
    if (itm_variant == ItmVariant::logit) return sim_score(scene, caption, oracle, *vocab);
    return SyntheticItm{oracle, itm_queries}.score(scene, caption, *vocab).probability;
  }
};

struct GeneratedBatch {
  std::vector<const Scene*> scenes;
  std::vector<TokenSeq> captions;
  std::vector<PenaltyFlags> flags;
  std::vector<double> itm;
  std::vector<double> sim;  // itm, plus the retrieval bonus for vlrm-rs
  std::vector<double> ref;  // zero for vlrm-rs
  std::vector<ReturnVector> returns;
};

/// Sim, ref, flags and returns for already generated captions.
inline void score_batch(GeneratedBatch& g, const RewardModel& reward, const TrainConfig& cfg) {
  const std::size_t n = g.captions.size();
  if (n != g.scenes.size()) throw ContractError("captions and scenes differ in count");
  if (cfg.flavor == RewardFlavor::vlrm_rs && n < 2) throw ContractError("vlrm-rs needs a batch of at least 2");
  if (cfg.flavor == RewardFlavor::vlrm && reward.lm == nullptr) throw ContractError("vlrm needs a reference LM");
  const Vocab& vocab = *reward.vocab;
  static const BadPhraseSet kNoPhrases;
  const BadPhraseSet& bps = reward.bps ? *reward.bps : kNoPhrases;
  g.flags.resize(n);
  g.itm.resize(n);
  g.sim.resize(n);
  g.ref.assign(n, 0.0);
  g.returns.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    g.flags[i] = detect_penalties(g.captions[i], bps, vocab);
    g.itm[i] = reward.itm(*g.scenes[i], g.captions[i]);
    g.sim[i] = g.itm[i];
    if (cfg.flavor == RewardFlavor::vlrm) g.ref[i] = ref_score(g.captions[i], *reward.lm);
  }
  if (cfg.flavor == RewardFlavor::vlrm_rs) {
    const Eigen::Index d = vocab.attribute_dim();
    Eigen::MatrixXd img(static_cast<Eigen::Index>(n), d), txt(static_cast<Eigen::Index>(n), d);
    for (std::size_t i = 0; i < n; ++i) {
      const auto te = embed_caption(g.captions[i], vocab);
      for (Eigen::Index k = 0; k < d; ++k) {
        img(static_cast<Eigen::Index>(i), k) = g.scenes[i]->embedding[static_cast<std::size_t>(k)];
        txt(static_cast<Eigen::Index>(i), k) = te[static_cast<std::size_t>(k)];
      }
    }
    g.sim = rs_reward(img, txt, g.itm, cfg.rs_weight, cfg.rs_eps).reward;
  }
  for (std::size_t i = 0; i < n; ++i)
    g.returns[i] = compute_returns(g.captions[i], g.sim[i], g.ref[i], g.flags[i], cfg.gamma);
}

/// Step 1: sample one caption per scene and compute returns. No tape is
/// recorded. Caption i draws from an engine keyed by (base_seed, i), so the
/// result does not depend on the worker count.
inline GeneratedBatch rl_step1_generate(const PolicyNet& policy, std::vector<const Scene*> scenes,
                                        const RewardModel& reward, const TrainConfig& cfg, std::uint64_t base_seed,
                                        std::size_t workers = 1) {
  if (scenes.empty()) throw ContractError("empty batch");
  if (cfg.flavor == RewardFlavor::vlrm_rs && scenes.size() < 2)
    throw ContractError("vlrm-rs needs a batch of at least 2");
  GeneratedBatch g;
  g.scenes = std::move(scenes);
  g.captions.resize(g.scenes.size());
  const TokenSpace ts = TokenSpace::of(*reward.vocab);
  parallel_for(g.scenes.size(), workers, [&](std::size_t i) {
    Rng rng = derived_rng(base_seed, i);
    g.captions[i] = sample(policy, policy.start(*g.scenes[i]), cfg.sampler, ts, rng);
  });
  score_batch(g, reward, cfg);
  return g;
}

/// Batch-shaped returns, values and advantages; mask marks tokens that carry a return.
struct AdvantageBatch {
  Matrix returns;
  Matrix values;
  Matrix advantages;
  Matrix normalized;
  Matrix mask;
  double mean = 0.0;
  double stddev = 0.0;
};

inline std::pair<double, double> masked_mean_std(const Matrix& x, const Matrix& mask) {
  const double n = mask.sum();
  if (n == 0.0) return {0.0, 0.0};
  const double mean = (x.array() * mask.array()).sum() / n;
  const double var = ((x.array() - mean).square() * mask.array()).sum() / n;
  return {mean, std::sqrt(var)};
}

/// M = (A - mean A) / (std A + eps) over all masked positions of the batch.
inline AdvantageBatch make_advantages(const Matrix& returns, const Matrix& values, const Matrix& mask, double eps) {
  AdvantageBatch a;
  a.returns = returns;
  a.values = values;
  a.mask = mask;
  a.advantages = ((returns - values).array() * mask.array()).matrix();
  auto [mean, sd] = masked_mean_std(a.advantages, mask);
  a.mean = mean;
  a.stddev = sd;
  a.normalized = (((a.advantages.array() - mean) / (sd + eps)) * mask.array()).matrix();
  return a;
}

inline Matrix return_mask(const std::vector<TokenSeq>& captions, std::size_t steps) {
  Matrix mask = Matrix::Zero(static_cast<Eigen::Index>(captions.size()), static_cast<Eigen::Index>(steps));
  for (std::size_t i = 0; i < captions.size(); ++i)
    for (std::size_t t = 0; t < captions[i].content_length(); ++t)
      mask(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = 1.0;
  return mask;
}

inline Matrix return_matrix(const std::vector<ReturnVector>& returns, std::size_t steps) {
  Matrix r = Matrix::Zero(static_cast<Eigen::Index>(returns.size()), static_cast<Eigen::Index>(steps));
  for (std::size_t i = 0; i < returns.size(); ++i)
    for (std::size_t t = 0; t < returns[i].returns.size(); ++t)
      r(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = returns[i].returns[t];
  return r;
}

/// Weights realizing "mean over a sequence's tokens, then mean over sequences".
inline Matrix sequence_weights(const Matrix& mask) {
  Matrix w = Matrix::Zero(mask.rows(), mask.cols());
  const Eigen::VectorXd counts = mask.rowwise().sum();
  double seqs = 0.0;
  for (Eigen::Index i = 0; i < counts.size(); ++i) seqs += counts(i) > 0 ? 1.0 : 0.0;
  if (seqs == 0.0) return w;
  for (Eigen::Index i = 0; i < mask.rows(); ++i)
    if (counts(i) > 0) w.row(i) = mask.row(i) / (counts(i) * seqs);
  return w;
}

using Gradients = std::map<std::string, Matrix>;

struct LossResult {
  double loss = 0.0;
  Gradients grads;  // tracked parameters only
  Matrix values;    // B x T, value loss only
};

inline void collect_gradients(const GradTape& tape, const ParameterList& list, Gradients& out) {
  for (const auto& p : list.parameters())
    if (tape.trainable(p.partition)) out[p.name] = tape.gradient(p);
}

/// L_v = mean over sequences of (1/n) sum_k (R_k - V_k)^2.
inline LossResult value_loss(const PolicyNet& policy, const ValueHead& head, const SequenceBatch& batch,
                             const Matrix& returns, const Matrix& mask,
                             std::set<Partition> trainable = {Partition::value_adapter, Partition::value_head}) {
  GradTape tape(std::move(trainable));
  auto v = trace_values(tape, head, trace_value_hidden(tape, policy, batch));
  const Matrix w = sequence_weights(mask);
  LossResult r;
  r.values.resize(static_cast<Eigen::Index>(batch.batch()), static_cast<Eigen::Index>(batch.steps()));
  GradTape::Var total = tape.constant(Matrix::Zero(1, 1));
  for (std::size_t t = 0; t < v.size(); ++t) {
    const Eigen::Index ti = static_cast<Eigen::Index>(t);
    r.values.col(ti) = tape.value(v[t]).col(0);
    total = tape.add(total, tape.weighted_sq_error(v[t], returns.col(ti), w.col(ti)));
  }
  r.loss = tape.value(total)(0, 0);
  tape.backward(total);
  collect_gradients(tape, policy, r.grads);
  collect_gradients(tape, head, r.grads);
  return r;
}

/// L_p = -mean over sequences of (1/n) sum_k p_k M_k with M a constant;
/// p_k is the probability (or log-probability) of the sampled token.
inline LossResult policy_loss(const PolicyNet& policy, const SequenceBatch& batch, const Matrix& normalized,
                              const Matrix& mask, PolicyLoss kind,
                              std::set<Partition> trainable = {Partition::generative}) {
  GradTape tape(std::move(trainable));
  PolicyTrace tr = trace_policy(tape, policy, batch);
  const Matrix w = sequence_weights(mask);
  const Matrix coeff = -(normalized.array() * w.array()).matrix();
  GradTape::Var total = tape.constant(Matrix::Zero(1, 1));
  for (std::size_t t = 0; t < tr.logits.size(); ++t) {
    const Eigen::Index ti = static_cast<Eigen::Index>(t);
    std::vector<int> targets = batch.targets[t];
    for (std::size_t i = 0; i < targets.size(); ++i)
      if (mask(static_cast<Eigen::Index>(i), ti) == 0.0) targets[i] = -1;
    auto p = tape.token_prob(tr.logits[t], targets, kind == PolicyLoss::logprob);
    total = tape.add(total, tape.weighted_sum(p, coeff.col(ti)));
  }
  LossResult r;
  r.loss = tape.value(total)(0, 0);
  tape.backward(total);
  collect_gradients(tape, policy, r.grads);
  return r;
}

/// Mean token cross-entropy of the references (eos included).
inline LossResult mle_loss(const PolicyNet& policy, const SequenceBatch& batch,
                           std::set<Partition> trainable = {Partition::generative, Partition::frozen_core}) {
  GradTape tape(std::move(trainable));
  PolicyTrace tr = trace_policy(tape, policy, batch);
  double tokens = 0.0;
  for (std::size_t len : batch.lengths) tokens += static_cast<double>(len);
  GradTape::Var total = tape.constant(Matrix::Zero(1, 1));
  for (std::size_t t = 0; t < tr.logits.size(); ++t) {
    auto lp = tape.token_prob(tr.logits[t], batch.targets[t], true);
    total = tape.add(total, tape.weighted_sum(lp, Matrix::Constant(static_cast<Eigen::Index>(batch.batch()), 1, -1.0 / tokens)));
  }
  LossResult r;
  r.loss = tape.value(total)(0, 0);
  tape.backward(total);
  collect_gradients(tape, policy, r.grads);
  return r;
}

/// Clips `grads` jointly and applies one optimizer step to every parameter of
/// `lists` whose partition is in `parts`.
inline void apply_update(std::vector<ParameterList*> lists, const std::set<Partition>& parts, const Gradients& grads,
                         Adam& opt, double lr, double clip, ClipMode mode) {
  std::vector<Parameter*> params;
  std::vector<Matrix> g;
  for (ParameterList* list : lists)
    for (auto& p : list->parameters()) {
      if (!parts.count(p.partition)) continue;
      params.push_back(&p);
      auto it = grads.find(p.name);
      g.push_back(it != grads.end() ? it->second : Matrix::Zero(p.value.rows(), p.value.cols()));
    }
  for (const auto& m : g)
    if (!m.allFinite()) throw TrainingError("non-finite gradient");
  std::vector<Matrix*> ptrs;
  for (auto& m : g) ptrs.push_back(&m);
  if (clip > 0.0) clip_gradients(ptrs, clip, mode);
  opt.step(params, g, lr);
}

struct Step2Result {
  AdvantageBatch advantages;
  double value_loss = 0.0;
};

inline const std::set<Partition> kValuePartitions{Partition::value_adapter, Partition::value_head};
inline const std::set<Partition> kGenerativePartitions{Partition::generative};

/// Step 2: value regression. Advantages are computed from the values before the update.
inline Step2Result rl_step2_value(PolicyNet& policy, ValueHead& head, const SequenceBatch& batch,
                                  const std::vector<TokenSeq>& captions, const std::vector<ReturnVector>& returns,
                                  Adam& opt, double lr, const TrainConfig& cfg) {
  if (returns.size() != captions.size() || captions.size() != batch.batch())
    throw ContractError("returns are not aligned with captions");
  for (std::size_t i = 0; i < captions.size(); ++i)
    if (returns[i].returns.size() != captions[i].content_length()) throw ContractError("return length mismatch");
  const Matrix mask = return_mask(captions, batch.steps());
  const Matrix r = return_matrix(returns, batch.steps());
  LossResult lr_out = value_loss(policy, head, batch, r, mask);
  if (!std::isfinite(lr_out.loss)) throw TrainingError("non-finite value loss");
  Step2Result out;
  out.value_loss = lr_out.loss;
  out.advantages = make_advantages(r, lr_out.values, mask, cfg.adv_eps);
  apply_update({&policy, &head}, kValuePartitions, lr_out.grads, opt, lr, cfg.grad_clip, cfg.clip_mode);
  return out;
}

/// Step 3: policy update on the generative partition only.
inline double rl_step3_policy(PolicyNet& policy, const SequenceBatch& batch, const AdvantageBatch& adv, Adam& opt,
                              double lr, const TrainConfig& cfg) {
  if (!adv.normalized.allFinite()) throw ContractError("normalized advantages must be finite");
  LossResult out = policy_loss(policy, batch, adv.normalized, adv.mask, cfg.policy_loss);
  if (!std::isfinite(out.loss)) throw TrainingError("non-finite policy loss");
  apply_update({&policy}, kGenerativePartitions, out.grads, opt, lr, cfg.grad_clip, cfg.clip_mode);
  return out.loss;
}

struct StepMetrics {
  std::uint64_t step = 0;
  double lr = 0.0;
  double mean_return = 0.0;
  double mean_sim = 0.0;
  double mean_ref = 0.0;
  std::size_t bad_count = 0;
  std::size_t repeat_count = 0;
  std::size_t noeos_count = 0;
  double value_loss = 0.0;
  double policy_loss = 0.0;
  double wallclock = 0.0;
  double adv_std = 0.0;  // std of raw advantages
  double m_mean = 0.0;   // masked mean of normalized advantages
  double m_std = 0.0;    // masked std of normalized advantages
  double mean_length = 0.0;

  nlohmann::json to_json() const {
    return {{"step", step},           {"lr", lr},
            {"mean_return", mean_return}, {"mean_sim", mean_sim},
            {"mean_ref", mean_ref},   {"bad_count", bad_count},
            {"repeat_count", repeat_count}, {"noeos_count", noeos_count},
            {"L_v", value_loss},      {"L_p", policy_loss},
            {"wallclock", wallclock}, {"adv_std", adv_std},
            {"m_mean", m_mean},       {"m_std", m_std},
            {"mean_length", mean_length}};
  }
};

/// Owns the training state and runs iterations. Resuming from a checkpoint
/// continues the exact same trajectory.
class Trainer {
 public:
  /// New run from a warm-start checkpoint: fresh optimizers, RNG from cfg.seed.
  static Trainer start(TrainConfig cfg, RewardModel reward, Checkpoint warm, std::uint64_t config_hash) {
    cfg.validate();
    warm.policy_opt = Adam();
    warm.value_opt = Adam();
    warm.rng_state = rng_state(Rng(cfg.seed));
    warm.step = 0;
    warm.config_hash = config_hash;
    return Trainer(std::move(cfg), reward, std::move(warm));
  }

  static Trainer resume(TrainConfig cfg, RewardModel reward, Checkpoint ckpt, std::uint64_t config_hash) {
    cfg.validate();
    if (ckpt.config_hash != config_hash)
      throw ConfigError("checkpoint config hash " + hex64(ckpt.config_hash) + " does not match run config " +
                        hex64(config_hash) + "; refusing to resume");
    return Trainer(std::move(cfg), reward, std::move(ckpt));
  }

  const Checkpoint& checkpoint() const { return ckpt_; }
  Checkpoint& checkpoint() { return ckpt_; }
  const TrainConfig& config() const { return cfg_; }
  void set_workers(std::size_t w) { workers_ = w; }

  /// Last iteration's generated batch and advantages, for inspection.
  const GeneratedBatch& last_batch() const { return last_batch_; }
  const AdvantageBatch& last_advantages() const { return last_adv_; }

  StepMetrics step(const std::vector<Scene>& scenes) {
    if (scenes.empty()) throw ContractError("no training scenes");
    const auto t0 = std::chrono::steady_clock::now();
    Rng rng;
    restore_rng(rng, ckpt_.rng_state);
    const double lr = warmup_lr(ckpt_.step, cfg_.warmup_steps, cfg_.lr);
    const double vlr = warmup_lr(ckpt_.step, cfg_.warmup_steps, cfg_.effective_value_lr());

    std::vector<const Scene*> picked;
    picked.reserve(cfg_.batch_size);
    for (std::size_t i = 0; i < cfg_.batch_size; ++i) picked.push_back(&scenes[uniform_index(rng, scenes.size())]);
    const std::uint64_t base_seed = rng();

    GeneratedBatch g = rl_step1_generate(ckpt_.policy, picked, reward_, cfg_, base_seed, workers_);
    const Vocab& vocab = *reward_.vocab;
    SequenceBatch batch = make_batch(std::span<const Scene* const>(g.scenes), std::span<const TokenSeq>(g.captions),
                                     vocab.bos(), vocab.pad());

    Step2Result s2 = rl_step2_value(ckpt_.policy, ckpt_.head, batch, g.captions, g.returns, ckpt_.value_opt, vlr, cfg_);
    const double lp = rl_step3_policy(ckpt_.policy, batch, s2.advantages, ckpt_.policy_opt, lr, cfg_);

    StepMetrics m;
    m.step = ckpt_.step;
    m.lr = lr;
    m.value_loss = s2.value_loss;
    m.policy_loss = lp;
    m.adv_std = s2.advantages.stddev;
    std::tie(m.m_mean, m.m_std) = masked_mean_std(s2.advantages.normalized, s2.advantages.mask);
    const double tokens = s2.advantages.mask.sum();
    m.mean_return = tokens > 0 ? (s2.advantages.returns.array() * s2.advantages.mask.array()).sum() / tokens : 0.0;
    const double n = static_cast<double>(g.captions.size());
    for (std::size_t i = 0; i < g.captions.size(); ++i) {
      m.mean_sim += g.sim[i] / n;
      m.mean_ref += g.ref[i] / n;
      m.mean_length += static_cast<double>(g.captions[i].content_length()) / n;
      for (int f : g.flags[i].bad) m.bad_count += static_cast<std::size_t>(f);
      for (int f : g.flags[i].repeat) m.repeat_count += static_cast<std::size_t>(f);
      m.noeos_count += static_cast<std::size_t>(g.flags[i].noeos);
    }
    m.wallclock = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    ckpt_.step += 1;
    ckpt_.rng_state = rng_state(rng);
    last_batch_ = std::move(g);
    last_adv_ = std::move(s2.advantages);
    return m;
  }

 private:
  Trainer(TrainConfig cfg, RewardModel reward, Checkpoint ckpt)
      : cfg_(std::move(cfg)), reward_(reward), ckpt_(std::move(ckpt)) {}

  TrainConfig cfg_;
  RewardModel reward_;
  Checkpoint ckpt_;
  std::size_t workers_ = 1;
  GeneratedBatch last_batch_;
  AdvantageBatch last_adv_;
};

struct MleConfig {
  std::size_t epochs = 20;
  double lr = 3e-3;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;

  nlohmann::json to_json() const {
    return {{"epochs", epochs}, {"lr", lr}, {"batch_size", batch_size}, {"seed", seed}};
  }

  static MleConfig from_json(const nlohmann::json& j) {
    detail::reject_unknown_keys(j, {"epochs", "lr", "batch_size", "seed"}, "pretrain config");
    MleConfig c;
    try {
      if (j.contains("epochs")) c.epochs = j.at("epochs").get<std::size_t>();
      if (j.contains("lr")) c.lr = j.at("lr").get<double>();
      if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<std::size_t>();
      if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("pretrain config: ") + e.what());
    }
    if (!(c.lr > 0.0) || c.batch_size < 1) throw ConfigError("pretrain lr and batch_size must be positive");
    return c;
  }
};

struct MleResult {
  Checkpoint checkpoint;
  std::vector<double> epoch_losses;  // mean training loss seen during each epoch
};

/// Teacher-forced cross-entropy on the reference captions. Stands in for the
/// pretrained captioner, so the core is trained here and frozen afterwards.
inline MleResult mle_pretrain(Checkpoint init, const std::vector<CorpusItem>& corpus, const MleConfig& cfg,
                              const Vocab& vocab) {
  if (corpus.empty()) throw ContractError("pretraining corpus is empty");
  MleResult out{std::move(init), {}};
  Adam opt;
  Rng rng(cfg.seed);
  const std::set<Partition> parts{Partition::generative, Partition::frozen_core};
  std::vector<std::size_t> order(corpus.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const Scene*> scenes;
      std::vector<TokenSeq> refs;
      for (std::size_t k = start; k < end; ++k) {
        scenes.push_back(&corpus[order[k]].scene);
        refs.push_back(corpus[order[k]].reference);
      }
      SequenceBatch batch = make_batch(std::span<const Scene* const>(scenes), std::span<const TokenSeq>(refs),
                                       vocab.bos(), vocab.pad());
      LossResult l = mle_loss(out.checkpoint.policy, batch);
      if (!std::isfinite(l.loss))
        throw TrainingError("pretraining diverged at epoch " + std::to_string(epoch) + " (loss " +
                            std::to_string(l.loss) + ")");
      sum += l.loss;
      ++batches;
      apply_update({&out.checkpoint.policy}, parts, l.grads, opt, cfg.lr, 0.0, ClipMode::clamp);
    }
    out.epoch_losses.push_back(sum / static_cast<double>(batches));
  }
  return out;
}

/// Mean token cross-entropy of `items` under the policy, no update.
inline double mle_eval_loss(const PolicyNet& policy, const std::vector<CorpusItem>& items, const Vocab& vocab) {
  std::vector<const Scene*> scenes;
  std::vector<TokenSeq> refs;
  for (const auto& it : items) {
    scenes.push_back(&it.scene);
    refs.push_back(it.reference);
  }
  SequenceBatch batch = make_batch(std::span<const Scene* const>(scenes), std::span<const TokenSeq>(refs), vocab.bos(),
                                   vocab.pad());
  return mle_loss(policy, batch, {}).loss;
}

}  // namespace vlrm

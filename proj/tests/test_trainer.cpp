#include <gtest/gtest.h>

#include <cmath>

#include "support/oracles.hpp"
#include "vlrm/checkpoint.hpp"
#include "vlrm/trainer.hpp"

using namespace vlrm;

namespace {

struct World {
  Vocab vocab = build_vocab(CorpusConfig::defaults());
  std::vector<CorpusItem> corpus = generate_corpus(11, 200, vocab);
  std::vector<Scene> scenes;
  RefLM lm;
  BadPhraseSet bps = BadPhraseSet::load(std::string(VLRM_DATA_DIR) + "/bad_phrases.txt");
  ModelConfig model;

  World() {
    std::vector<TokenSeq> refs;
    for (const auto& it : corpus) {
      scenes.push_back(it.scene);
      refs.push_back(it.reference);
    }
    lm = train_reflm(refs, vocab, 3, 0.1);
    model.hidden = 16;
    model.adapter_rank = 2;
    model.value_hidden = 8;
    model.value_layers = 1;
  }

  RewardModel reward() const { return RewardModel{&vocab, SimOracle{}, ItmVariant::logit, 32, &lm, &bps}; }
  Checkpoint warm() const { return Checkpoint::fresh(vocab.size(), vocab.attribute_dim(), model); }

  TrainConfig config(RewardFlavor flavor = RewardFlavor::vlrm) const {
    TrainConfig c;
    c.batch_size = 8;
    c.lr = 1e-3;
    c.flavor = flavor;
    c.warmup_steps = 2;
    return c;
  }
};

const World& world() {
  static const World w;
  return w;
}

SequenceBatch batch_of(const std::vector<const Scene*>& scenes, const std::vector<TokenSeq>& captions) {
  return make_batch(std::span<const Scene* const>(scenes), std::span<const TokenSeq>(captions), world().vocab.bos(),
                    world().vocab.pad());
}

std::vector<Matrix> snapshot(const ParameterList& list, const std::set<Partition>& parts) {
  std::vector<Matrix> out;
  for (const auto& p : list.parameters())
    if (parts.count(p.partition)) out.push_back(p.value);
  return out;
}

}  // namespace

TEST(Schedule, WarmupReachesPeakLinearly) {
  EXPECT_EQ(warmup_lr(0, 20, 1e-5), 0.0);
  EXPECT_EQ(warmup_lr(10, 20, 1e-5), 0.5e-5);
  EXPECT_EQ(warmup_lr(20, 20, 1e-5), 1e-5);
  EXPECT_EQ(warmup_lr(100, 20, 1e-5), 1e-5);
  EXPECT_EQ(warmup_lr(0, 0, 1e-5), 1e-5);
}

TEST(Schedule, TrainerLogsTheScheduledRate) {
  TrainConfig cfg = world().config();
  cfg.warmup_steps = 4;
  cfg.batch_size = 2;
  Trainer t = Trainer::start(cfg, world().reward(), world().warm(), 1);
  for (std::uint64_t s = 0; s < 6; ++s) {
    const StepMetrics m = t.step(world().scenes);
    EXPECT_EQ(m.step, s);
    EXPECT_EQ(m.lr, warmup_lr(s, 4, cfg.lr));
  }
}

TEST(Clipping, ClampLimitsEachElement) {
  Matrix g(1, 3);
  g << 3.7, -3.7, 0.25;
  clip_gradients({&g}, 1.0, ClipMode::clamp);
  EXPECT_EQ(g(0, 0), 1.0);
  EXPECT_EQ(g(0, 1), -1.0);
  EXPECT_EQ(g(0, 2), 0.25);
}

TEST(Clipping, NormModeRescalesJointly) {
  Matrix a = Matrix::Constant(1, 1, 3.0), b = Matrix::Constant(1, 1, 4.0);
  clip_gradients({&a, &b}, 1.0, ClipMode::norm);
  EXPECT_NEAR(a(0, 0), 0.6, 1e-15);
  EXPECT_NEAR(b(0, 0), 0.8, 1e-15);
}

TEST(Clipping, OversizedGradientReachesTheOptimizerClamped) {
  PolicyNet net = PolicyNet::create(world().vocab.size(), world().vocab.attribute_dim(), world().model);
  Gradients grads;
  for (const auto& p : net.parameters())
    if (p.partition == Partition::generative) grads[p.name] = Matrix::Constant(p.value.rows(), p.value.cols(), 3.7);
  Adam opt;
  apply_update({&net}, kGenerativePartitions, grads, opt, 1e-3, 1.0, ClipMode::clamp);
  const double expect_m = (1.0 - opt.beta1) * 1.0;
  for (const auto& [name, mom] : opt.moments()) EXPECT_TRUE((mom.m.array() == expect_m).all()) << name;
}

TEST(Clipping, NonFiniteGradientAborts) {
  PolicyNet net = PolicyNet::create(world().vocab.size(), world().vocab.attribute_dim(), world().model);
  Gradients grads{{"policy.out_proj.bias", Matrix::Constant(1, world().vocab.size(), NAN)}};
  Adam opt;
  EXPECT_THROW(apply_update({&net}, kGenerativePartitions, grads, opt, 1e-3, 1.0, ClipMode::clamp), TrainingError);
}

TEST(ValueLoss, SingleTokenArithmetic) {
  const World& w = world();
  PolicyNet net = PolicyNet::create(w.vocab.size(), w.vocab.attribute_dim(), w.model);
  ValueHead head = ValueHead::create(w.model.hidden, w.model);
  const std::vector<const Scene*> sc{&w.scenes[0]};
  const std::vector<TokenSeq> cap{tokenize("dog", w.vocab)};
  const SequenceBatch b = batch_of(sc, cap);
  const Matrix mask = return_mask(cap, b.steps());
  ASSERT_EQ(mask.sum(), 1.0);
  Matrix r = Matrix::Zero(1, static_cast<Eigen::Index>(b.steps()));
  r(0, 0) = 2.0;
  EXPECT_EQ(value_loss(net, head, b, r, mask).loss, 4.0);
}

TEST(ValueLoss, ExactFitHasZeroLossAndGradient) {
  auto inst = oracle::small_instance(5, world().vocab);
  const LossResult first = value_loss(inst.policy, inst.head, inst.batch, inst.returns, inst.mask);
  const Matrix fitted = (first.values.array() * inst.mask.array()).matrix();
  const LossResult r = value_loss(inst.policy, inst.head, inst.batch, fitted, inst.mask);
  EXPECT_EQ(r.loss, 0.0);
  for (const auto& [name, g] : r.grads) EXPECT_TRUE(g.isZero(0.0)) << name;
}

TEST(ValueLoss, PerSequenceMeanThenBatchMean) {
  auto inst = oracle::small_instance(6, world().vocab, 4, 6);
  const LossResult r = value_loss(inst.policy, inst.head, inst.batch, inst.returns, inst.mask);
  double want = 0.0, seqs = 0.0;
  for (Eigen::Index i = 0; i < inst.mask.rows(); ++i) {
    const double n = inst.mask.row(i).sum();
    if (n == 0) continue;
    double s = 0.0;
    for (Eigen::Index t = 0; t < inst.mask.cols(); ++t)
      if (inst.mask(i, t) > 0) s += std::pow(inst.returns(i, t) - r.values(i, t), 2);
    want += s / n;
    seqs += 1;
  }
  EXPECT_NEAR(r.loss, want / seqs, 1e-12);
}

TEST(PolicyLoss, ZeroAdvantagesLeaveParametersUnchanged) {
  auto inst = oracle::small_instance(7, world().vocab);
  AdvantageBatch adv = make_advantages(inst.returns, inst.returns, inst.mask, 1e-8);
  ASSERT_TRUE(adv.normalized.isZero(0.0));
  const auto before = snapshot(inst.policy, kGenerativePartitions);
  Adam opt;
  rl_step3_policy(inst.policy, inst.batch, adv, opt, 1e-2, world().config());
  EXPECT_EQ(snapshot(inst.policy, kGenerativePartitions), before);
}

TEST(PolicyLoss, PositiveAdvantageRaisesTokenProbability) {
  const World& w = world();
  for (PolicyLoss kind : {PolicyLoss::prob, PolicyLoss::logprob}) {
    PolicyNet net = PolicyNet::create(w.vocab.size(), w.vocab.attribute_dim(), w.model);
    const std::vector<const Scene*> sc{&w.scenes[1]};
    const std::vector<TokenSeq> cap{tokenize("cat", w.vocab)};
    const SequenceBatch b = batch_of(sc, cap);
    AdvantageBatch adv;
    adv.mask = return_mask(cap, b.steps());
    adv.normalized = adv.mask;
    const int tok = w.vocab.id("cat");
    auto prob = [&] {
      auto st = net.start(*sc[0]);
      return std::exp(detail::log_softmax(net.next_logits(st, w.vocab.bos()))(tok));
    };
    const double before = prob();
    TrainConfig cfg = w.config();
    cfg.policy_loss = kind;
    Adam opt;
    rl_step3_policy(net, b, adv, opt, 1e-4, cfg);
    EXPECT_GT(prob(), before);
  }
}

TEST(PolicyLoss, LogitGradientSignOpposesAdvantage) {
  const World& w = world();
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    PolicyNet net = PolicyNet::create(w.vocab.size(), w.vocab.attribute_dim(), w.model);
    oracle::randomize(net, rng, 0.5);
    const std::vector<const Scene*> sc{&w.scenes[static_cast<std::size_t>(trial)]};
    const std::vector<TokenSeq> cap{oracle::random_caption(rng, w.vocab, 5)};
    const SequenceBatch b = batch_of(sc, cap);
    const Matrix full = return_mask(cap, b.steps());
    const Eigen::Index k = static_cast<Eigen::Index>(uniform_index(rng, cap[0].content_length()));
    Matrix mask = Matrix::Zero(full.rows(), full.cols());
    mask(0, k) = 1.0;
    const double m = trial % 2 ? 1.3 : -0.7;
    const Matrix normalized = mask * m;
    for (PolicyLoss kind : {PolicyLoss::prob, PolicyLoss::logprob}) {
      const LossResult r = policy_loss(net, b, normalized, mask, kind, kGenerativePartitions);
      // With one active position the output bias gradient is the logit gradient there.
      const double g = r.grads.at("policy.out_proj.bias")(0, cap[0].ids[static_cast<std::size_t>(k)]);
      ASSERT_NE(g, 0.0);
      ASSERT_EQ(std::signbit(g), !std::signbit(m));
    }
  }
}

TEST(PolicyLoss, EosPositionCarriesNoLoss) {
  auto inst = oracle::small_instance(9, world().vocab, 3, 4);
  Matrix shifted = inst.advantages;
  for (std::size_t i = 0; i < inst.captions.size(); ++i)
    if (inst.captions[i].has_eos)
      shifted(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(inst.captions[i].content_length())) = 50.0;
  const auto a = policy_loss(inst.policy, inst.batch, inst.advantages, inst.mask, PolicyLoss::prob);
  const auto b = policy_loss(inst.policy, inst.batch, shifted, inst.mask, PolicyLoss::prob);
  EXPECT_EQ(a.loss, b.loss);
}

TEST(Advantages, NormalizedToZeroMeanUnitStd) {
  Rng rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index rows = 1 + static_cast<Eigen::Index>(uniform_index(rng, 6));
    const Eigen::Index cols = 1 + static_cast<Eigen::Index>(uniform_index(rng, 9));
    Matrix r(rows, cols), v(rows, cols), mask = Matrix::Zero(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
      const Eigen::Index len = 1 + static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(cols)));
      mask.row(i).head(len).setOnes();
      for (Eigen::Index t = 0; t < cols; ++t) {
        r(i, t) = 5 * detail::normal(rng);
        v(i, t) = detail::normal(rng);
      }
    }
    const AdvantageBatch a = make_advantages(r, v, mask, 1e-8);
    if (!(a.stddev > 1e-8)) continue;
    const auto [mean, sd] = masked_mean_std(a.normalized, mask);
    ASSERT_LT(std::abs(mean), 1e-6);
    ASSERT_LT(std::abs(sd - 1.0), 1e-6);
    ASSERT_TRUE((a.normalized.array() * (1 - mask.array()) == 0).all());
  }
}

TEST(Advantages, ConstantAdvantagesNormalizeToZero) {
  const Matrix mask = Matrix::Ones(2, 3);
  const AdvantageBatch a = make_advantages(Matrix::Constant(2, 3, 4.0), Matrix::Constant(2, 3, 1.5), mask, 1e-8);
  EXPECT_TRUE(a.normalized.isZero(0.0));
}

TEST(Advantages, ShiftInvariance) {
  auto inst = oracle::small_instance(11, world().vocab, 4, 6);
  const Matrix values = Matrix::Zero(inst.mask.rows(), inst.mask.cols());
  const AdvantageBatch a = make_advantages(inst.returns, values, inst.mask, 1e-8);
  const AdvantageBatch b = make_advantages((inst.returns.array() + 3.25).matrix(), values, inst.mask, 1e-8);
  EXPECT_LT((a.normalized - b.normalized).cwiseAbs().maxCoeff(), 1e-12);
  const auto ga = policy_loss(inst.policy, inst.batch, a.normalized, inst.mask, PolicyLoss::prob).grads;
  const auto gb = policy_loss(inst.policy, inst.batch, b.normalized, inst.mask, PolicyLoss::prob).grads;
  for (const auto& [name, g] : ga) EXPECT_LT((g - gb.at(name)).cwiseAbs().maxCoeff(), 1e-12) << name;
}

TEST(Advantages, SequenceWeightsAverageWithinThenAcross) {
  Matrix mask(3, 4);
  mask << 1, 1, 0, 0, 1, 1, 1, 1, 0, 0, 0, 0;
  const Matrix w = sequence_weights(mask);
  EXPECT_DOUBLE_EQ(w(0, 0), 0.25);
  EXPECT_DOUBLE_EQ(w(1, 3), 0.125);
  EXPECT_EQ(w(0, 2), 0.0);
  EXPECT_EQ(w.row(2).sum(), 0.0);
  EXPECT_DOUBLE_EQ(w.sum(), 1.0);
}

TEST(Generate, RetrievalFlavorNeedsTwoCaptions) {
  const World& w = world();
  const PolicyNet net = PolicyNet::create(w.vocab.size(), w.vocab.attribute_dim(), w.model);
  EXPECT_THROW(rl_step1_generate(net, {&w.scenes[0]}, w.reward(), w.config(RewardFlavor::vlrm_rs), 1), ContractError);
  EXPECT_NO_THROW(rl_step1_generate(net, {&w.scenes[0]}, w.reward(), w.config(RewardFlavor::vlrm), 1));
  EXPECT_THROW(rl_step1_generate(net, {}, w.reward(), w.config(), 1), ContractError);
}

TEST(Generate, CleanCaptionReturnsEqualSimPlusRef) {
  const World& w = world();
  GeneratedBatch g;
  g.scenes = {&w.scenes[0]};
  g.captions = {tokenize("a dog in the park", w.vocab)};
  g.captions[0].ids.push_back(w.vocab.eos());
  g.captions[0].has_eos = true;
  score_batch(g, w.reward(), w.config());
  for (double r : g.returns[0].returns) EXPECT_EQ(r, g.sim[0] + g.ref[0]);
}

TEST(Generate, ReturnsReplayBitIdentically) {
  const World& w = world();
  const PolicyNet net = PolicyNet::create(w.vocab.size(), w.vocab.attribute_dim(), w.model);
  std::vector<const Scene*> sc;
  for (std::size_t i = 0; i < 16; ++i) sc.push_back(&w.scenes[i]);
  for (RewardFlavor f : {RewardFlavor::vlrm, RewardFlavor::vlrm_rs}) {
    const GeneratedBatch g = rl_step1_generate(net, sc, w.reward(), w.config(f), 42);
    for (std::size_t i = 0; i < g.captions.size(); ++i) {
      const ReturnVector again = compute_returns(g.captions[i], g.sim[i], g.ref[i], g.flags[i], 1.0);
      EXPECT_EQ(again.returns, g.returns[i].returns);
      if (f == RewardFlavor::vlrm_rs) {
        EXPECT_EQ(g.ref[i], 0.0);
      }
    }
  }
}

TEST(Generate, WorkerCountDoesNotChangeCaptions) {
  const World& w = world();
  const PolicyNet net = PolicyNet::create(w.vocab.size(), w.vocab.attribute_dim(), w.model);
  std::vector<const Scene*> sc;
  for (std::size_t i = 0; i < 20; ++i) sc.push_back(&w.scenes[i]);
  const GeneratedBatch a = rl_step1_generate(net, sc, w.reward(), w.config(), 9, 1);
  const GeneratedBatch b = rl_step1_generate(net, sc, w.reward(), w.config(), 9, 4);
  for (std::size_t i = 0; i < sc.size(); ++i) EXPECT_EQ(a.captions[i].ids, b.captions[i].ids);
}

TEST(Isolation, StepTwoTouchesOnlyValuePartitions) {
  const World& w = world();
  Checkpoint c = w.warm();
  std::vector<const Scene*> sc;
  for (std::size_t i = 0; i < 8; ++i) sc.push_back(&w.scenes[i]);
  const GeneratedBatch g = rl_step1_generate(c.policy, sc, w.reward(), w.config(), 3);
  const SequenceBatch b = batch_of(sc, g.captions);
  const std::set<Partition> fixed{Partition::generative, Partition::frozen_core};
  for (int rep = 0; rep < 5; ++rep) {
    const auto before = snapshot(c.policy, fixed);
    const auto value_before = snapshot(c.head, kValuePartitions);
    rl_step2_value(c.policy, c.head, b, g.captions, g.returns, c.value_opt, 1e-2, w.config());
    EXPECT_EQ(snapshot(c.policy, fixed), before);
    EXPECT_NE(snapshot(c.head, kValuePartitions), value_before);
  }
}

TEST(Isolation, StepThreeTouchesOnlyGenerativePartitions) {
  const World& w = world();
  Checkpoint c = w.warm();
  Rng rng(12);
  oracle::randomize(c.head, rng, 0.3);
  std::vector<const Scene*> sc;
  for (std::size_t i = 0; i < 8; ++i) sc.push_back(&w.scenes[i]);
  const GeneratedBatch g = rl_step1_generate(c.policy, sc, w.reward(), w.config(), 4);
  const SequenceBatch b = batch_of(sc, g.captions);
  const Matrix mask = return_mask(g.captions, b.steps());
  const AdvantageBatch adv = make_advantages(return_matrix(g.returns, b.steps()), Matrix::Zero(mask.rows(), mask.cols()),
                                             mask, 1e-8);
  const std::set<Partition> fixed{Partition::frozen_core, Partition::value_adapter};
  const auto before = snapshot(c.policy, fixed);
  const auto head_before = snapshot(c.head, kValuePartitions);
  const auto gen_before = snapshot(c.policy, kGenerativePartitions);
  rl_step3_policy(c.policy, b, adv, c.policy_opt, 1e-3, w.config());
  EXPECT_EQ(snapshot(c.policy, fixed), before);
  EXPECT_EQ(snapshot(c.head, kValuePartitions), head_before);
  EXPECT_NE(snapshot(c.policy, kGenerativePartitions), gen_before);
}

TEST(Trainer, BatchesSatisfyNormalizationInvariant) {
  const World& w = world();
  Trainer t = Trainer::start(w.config(), w.reward(), w.warm(), 1);
  for (int s = 0; s < 10; ++s) {
    const StepMetrics m = t.step(w.scenes);
    if (!(m.adv_std > 1e-8)) continue;
    EXPECT_LT(std::abs(m.m_mean), 1e-6);
    EXPECT_LT(std::abs(m.m_std - 1.0), 1e-6);
    EXPECT_EQ(t.last_batch().captions.size(), 8u);
  }
}

TEST(Trainer, DeterministicAcrossRunsAndWorkerCounts) {
  const World& w = world();
  auto run = [&](std::size_t workers) {
    Trainer t = Trainer::start(w.config(RewardFlavor::vlrm_rs), w.reward(), w.warm(), 1);
    t.set_workers(workers);
    for (int s = 0; s < 4; ++s) t.step(w.scenes);
    return t.checkpoint().serialize();
  };
  const std::string a = run(1);
  EXPECT_EQ(run(1), a);
  EXPECT_EQ(run(3), a);
}

TEST(Trainer, ResumeContinuesTheSameTrajectory) {
  const World& w = world();
  Trainer full = Trainer::start(w.config(), w.reward(), w.warm(), 77);
  for (int s = 0; s < 6; ++s) full.step(w.scenes);

  Trainer first = Trainer::start(w.config(), w.reward(), w.warm(), 77);
  for (int s = 0; s < 3; ++s) first.step(w.scenes);
  const std::string saved = first.checkpoint().serialize();
  Trainer second = Trainer::resume(w.config(), w.reward(), Checkpoint::deserialize(saved), 77);
  for (int s = 0; s < 3; ++s) second.step(w.scenes);
  EXPECT_EQ(second.checkpoint().serialize(), full.checkpoint().serialize());
  EXPECT_EQ(second.checkpoint().step, 6u);
}

TEST(Trainer, ResumeRefusesForeignConfigHash) {
  const World& w = world();
  Checkpoint c = w.warm();
  c.config_hash = 5;
  EXPECT_THROW(Trainer::resume(w.config(), w.reward(), c, 6), ConfigError);
}

TEST(Trainer, RetrievalFlavorLogsNoRefComponent) {
  const World& w = world();
  Trainer t = Trainer::start(w.config(RewardFlavor::vlrm_rs), w.reward(), w.warm(), 1);
  for (int s = 0; s < 3; ++s) EXPECT_EQ(t.step(w.scenes).mean_ref, 0.0);
  Trainer v = Trainer::start(w.config(RewardFlavor::vlrm), w.reward(), w.warm(), 1);
  EXPECT_LT(v.step(w.scenes).mean_ref, 0.0);
}

TEST(TrainConfig, JsonRoundTripAndValidation) {
  TrainConfig c = world().config(RewardFlavor::vlrm_rs);
  c.clip_mode = ClipMode::norm;
  c.policy_loss = PolicyLoss::logprob;
  EXPECT_EQ(TrainConfig::from_json(c.to_json()).to_json(), c.to_json());
  EXPECT_THROW(TrainConfig::from_json({{"learning_rate", 1.0}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"flavor", "ppo"}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"gamma", 1.5}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"sampler", {{"mode", "beam"}}}}), ConfigError);
  EXPECT_THROW(TrainConfig::from_json({{"lr", -1.0}}), ConfigError);
  EXPECT_EQ(TrainConfig{}.lr, 1e-5);
  EXPECT_EQ(TrainConfig{}.warmup_steps, 20u);
  EXPECT_EQ(TrainConfig{}.grad_clip, 1.0);
}

TEST(Pretrain, ZeroEpochsReturnInitialization) {
  const World& w = world();
  const Checkpoint init = w.warm();
  MleConfig cfg;
  cfg.epochs = 0;
  EXPECT_EQ(mle_pretrain(init, w.corpus, cfg, w.vocab).checkpoint.serialize(), init.serialize());
}

TEST(Pretrain, MemorizesASingleScene) {
  const World& w = world();
  const std::vector<CorpusItem> one{w.corpus[0]};
  MleConfig cfg;
  cfg.epochs = 300;
  cfg.batch_size = 1;
  cfg.lr = 1e-2;
  const MleResult r = mle_pretrain(w.warm(), one, cfg, w.vocab);
  EXPECT_LT(mle_eval_loss(r.checkpoint.policy, one, w.vocab), 0.01);
}

TEST(Pretrain, LossDecreasesAndBeatsUntrainedBaseline) {
  const World& w = world();
  const auto train = generate_corpus(21, 500, w.vocab);
  const auto held = generate_corpus(22, 200, w.vocab);
  MleConfig cfg;
  cfg.epochs = 3;
  const Checkpoint init = w.warm();
  const MleResult r = mle_pretrain(init, train, cfg, w.vocab);
  ASSERT_EQ(r.epoch_losses.size(), 3u);
  EXPECT_LT(r.epoch_losses[1], r.epoch_losses[0]);
  EXPECT_LT(r.epoch_losses[2], r.epoch_losses[1] * 1.01);

  MleConfig one = cfg;
  one.epochs = 1;
  const MleResult r1 = mle_pretrain(init, train, one, w.vocab);
  EXPECT_LT(mle_eval_loss(r1.checkpoint.policy, held, w.vocab), mle_eval_loss(init.policy, held, w.vocab));
}

TEST(Pretrain, EmptyCorpusIsAContractError) {
  EXPECT_THROW(mle_pretrain(world().warm(), {}, MleConfig{}, world().vocab), ContractError);
}

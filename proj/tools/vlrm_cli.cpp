// vlrm: corpus generation, warm-start pretraining, RL fine-tuning, evaluation
// and single-pair scoring.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
//
// Metrics log (metrics.jsonl), one JSON object per RL step:
//   step, lr, mean_return, mean_sim, mean_ref, bad_count, repeat_count,
//   noeos_count, L_v, L_p, wallclock (seconds), adv_std, m_mean, m_std,
//   mean_length.
// Report (report.json): format, version, mrr, recall_at {K: value},
//   n_queries, ranks, plus caption statistics and mean sim/ref.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "vlrm/vlrm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace vlrm;

#ifndef VLRM_DEFAULT_BAD_PHRASES
#define VLRM_DEFAULT_BAD_PHRASES ""
#endif

namespace {

struct UsageError : Error {
  explicit UsageError(const std::string& m) : Error("usage error: " + m) {}
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw UsageError("cannot read '" + p.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + p.string() + "'");
  out << text;
}

void require_dir(const fs::path& p) {
  if (!fs::is_directory(p)) throw UsageError("directory '" + p.string() + "' does not exist");
}

void require_file(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw UsageError("file '" + p.string() + "' does not exist");
}

RunConfig load_config(const std::string& path) { return path.empty() ? RunConfig{} : RunConfig::load(path); }

struct CorpusDir {
  Vocab vocab;
  std::vector<CorpusItem> items;
  std::optional<RefLM> lm;

  std::vector<Scene> scenes() const {
    std::vector<Scene> s;
    for (const auto& it : items) s.push_back(it.scene);
    return s;
  }
};

CorpusDir load_corpus_dir(const fs::path& dir) {
  require_dir(dir);
  require_file(dir / "vocab.json");
  require_file(dir / "corpus.jsonl");
  CorpusDir c{Vocab::from_json(json::parse(read_file(dir / "vocab.json"))), {}, std::nullopt};
  std::ifstream in(dir / "corpus.jsonl");
  c.items = read_corpus(in, c.vocab).items;
  if (fs::is_regular_file(dir / "reflm.txt")) c.lm = RefLM::deserialize(read_file(dir / "reflm.txt"));
  return c;
}

BadPhraseSet load_bad_phrases(const std::string& path) {
  if (path.empty()) return BadPhraseSet();
  require_file(path);
  return BadPhraseSet::load(path);
}

fs::path run_dir(const fs::path& root, const RunConfig& cfg) {
  const fs::path dir = root / hex64(cfg.hash());
  fs::create_directories(dir);
  write_file(dir / "config.json", cfg.to_json().dump(2) + "\n");
  return dir;
}

void check_model_fits(const Checkpoint& ck, const Vocab& vocab) {
  if (ck.vocab_size != vocab.size() || ck.scene_dim != vocab.attribute_dim())
    throw UsageError("checkpoint does not match the corpus vocabulary");
}

// gen-corpus ---------------------------------------------------------------

struct GenArgs {
  std::uint64_t seed = 0;
  std::size_t scenes = 0;
  std::int64_t first_id = 0;
  std::string out;
  std::string config;
};

int cmd_gen_corpus(const GenArgs& a) {
  if (a.scenes == 0) throw UsageError("--scenes must be >= 1");
  require_dir(a.out);
  const RunConfig cfg = load_config(a.config);
  const Vocab vocab = build_vocab(cfg.corpus);
  const auto items = generate_corpus(a.seed, a.scenes, vocab, a.first_id);
  std::ostringstream corpus;
  write_corpus(corpus, a.seed, items, vocab);
  std::vector<TokenSeq> refs;
  for (const auto& it : items) refs.push_back(it.reference);
  const RefLM lm = train_reflm(refs, vocab, cfg.scorers.reflm_order, cfg.scorers.reflm_smoothing);
  const fs::path dir(a.out);
  write_file(dir / "vocab.json", vocab.serialize());
  write_file(dir / "corpus.jsonl", corpus.str());
  write_file(dir / "reflm.txt", lm.serialize());
  std::cout << "wrote " << items.size() << " scenes to " << dir.string() << "\n";
  return 0;
}

// pretrain -----------------------------------------------------------------

struct PretrainArgs {
  std::string config;
  std::string corpus;
  std::string runs = "runs";
};

int cmd_pretrain(const PretrainArgs& a) {
  const RunConfig cfg = load_config(a.config);
  const CorpusDir corpus = load_corpus_dir(a.corpus);
  const fs::path dir = run_dir(a.runs, cfg);
  Checkpoint init = Checkpoint::fresh(corpus.vocab.size(), corpus.vocab.attribute_dim(), cfg.model);
  MleResult res = mle_pretrain(std::move(init), corpus.items, cfg.pretrain, corpus.vocab);
  res.checkpoint.config_hash = cfg.hash();
  res.checkpoint.save((dir / "pretrain.ckpt").string());
  std::ofstream log(dir / "pretrain_metrics.jsonl", std::ios::trunc);
  for (std::size_t e = 0; e < res.epoch_losses.size(); ++e)
    log << json{{"epoch", e}, {"loss", res.epoch_losses[e]}}.dump() << "\n";
  std::cout << (dir / "pretrain.ckpt").string() << "\n";
  return 0;
}

// rl-train -----------------------------------------------------------------

struct RlArgs {
  std::string config;
  std::string corpus;
  std::string runs = "runs";
  std::string init;
  std::string resume;
  std::string flavor;
  std::string bad_phrases = VLRM_DEFAULT_BAD_PHRASES;
  std::uint64_t steps = 0;
  std::uint64_t checkpoint_every = 0;
  std::size_t workers = 1;
};

int cmd_rl_train(const RlArgs& a) {
  RunConfig cfg = load_config(a.config);
  if (!a.flavor.empty()) cfg.trainer.flavor = parse_flavor(a.flavor);
  if (a.init.empty() == a.resume.empty()) throw UsageError("give exactly one of --init and --resume");
  if (a.workers < 1) throw UsageError("--workers must be >= 1");
  const CorpusDir corpus = load_corpus_dir(a.corpus);
  if (cfg.trainer.flavor == RewardFlavor::vlrm && !corpus.lm)
    throw UsageError("corpus directory has no reflm.txt; the vlrm flavor needs it");
  const BadPhraseSet bps = load_bad_phrases(a.bad_phrases);
  const fs::path dir = run_dir(a.runs, cfg);

  const std::string ckpt_path = a.resume.empty() ? a.init : a.resume;
  require_file(ckpt_path);
  Checkpoint ck = Checkpoint::load(ckpt_path);
  check_model_fits(ck, corpus.vocab);

  RewardModel reward;
  reward.vocab = &corpus.vocab;
  reward.oracle = cfg.scorers.oracle;
  reward.itm_variant = cfg.scorers.itm_variant;
  reward.itm_queries = cfg.scorers.itm_queries;
  reward.lm = corpus.lm ? &*corpus.lm : nullptr;
  reward.bps = &bps;

  const bool resuming = !a.resume.empty();
  Trainer trainer = resuming ? Trainer::resume(cfg.trainer, reward, std::move(ck), cfg.hash())
                             : Trainer::start(cfg.trainer, reward, std::move(ck), cfg.hash());
  trainer.set_workers(a.workers);
  const std::vector<Scene> scenes = corpus.scenes();

  std::ofstream log(dir / "metrics.jsonl", resuming ? std::ios::app : std::ios::trunc);
  if (!log) throw IoError("cannot write metrics log");
  const fs::path out = dir / "rl.ckpt";
  while (trainer.checkpoint().step < a.steps) {
    const StepMetrics m = trainer.step(scenes);
    log << m.to_json().dump() << "\n";
    log.flush();
    if (a.checkpoint_every > 0 && trainer.checkpoint().step % a.checkpoint_every == 0)
      trainer.checkpoint().save(out.string());
  }
  trainer.checkpoint().save(out.string());
  std::cout << out.string() << "\n";
  return 0;
}

// eval ---------------------------------------------------------------------

struct EvalArgs {
  std::string config;
  std::string checkpoint;
  std::string corpus;
  std::string reflm;
  std::string out;
  std::string decode;
  std::string bad_phrases = VLRM_DEFAULT_BAD_PHRASES;
  std::size_t workers = 1;
};

int cmd_eval(const EvalArgs& a) {
  const RunConfig cfg = load_config(a.config);
  require_file(a.checkpoint);
  const CorpusDir corpus = load_corpus_dir(a.corpus);
  const Checkpoint ck = Checkpoint::load(a.checkpoint);
  check_model_fits(ck, corpus.vocab);
  std::optional<RefLM> lm = corpus.lm;
  if (!a.reflm.empty()) lm = RefLM::deserialize(read_file(a.reflm));
  const BadPhraseSet bps = load_bad_phrases(a.bad_phrases);

  DecodeConfig dc = cfg.eval.decode;
  if (a.decode == "greedy") {
    dc.mode = DecodeMode::beam;
    dc.num_beams = 1;
  } else if (a.decode == "beam") {
    dc.mode = DecodeMode::beam;
  } else if (!a.decode.empty()) {
    throw UsageError("--decode must be beam or greedy");
  }
  dc.validate();

  const std::vector<Scene> scenes = corpus.scenes();
  const auto captions = generate_captions(ck.policy, scenes, dc, corpus.vocab, a.workers);
  std::vector<int> ks;
  for (int k : cfg.eval.ks)
    if (static_cast<std::size_t>(k) <= scenes.size()) ks.push_back(k);
  const RetrievalReport rep = retrieval_eval(captions, scenes, ks, corpus.vocab);
  const CaptionStats st = caption_stats(captions, corpus.vocab, bps);

  double sim = 0.0, ref = 0.0;
  std::ostringstream dump;
  for (std::size_t i = 0; i < captions.size(); ++i) {
    const double s = sim_score(scenes[i], captions[i], cfg.scorers.oracle, corpus.vocab);
    sim += s;
    json rec = {{"id", scenes[i].id},
                {"caption", detokenize(captions[i], corpus.vocab)},
                {"has_eos", captions[i].has_eos},
                {"sim", s},
                {"rank", rep.ranks[i]}};
    if (lm) {
      const double r = ref_score(captions[i], *lm);
      ref += r;
      rec["ref"] = r;
    }
    dump << rec.dump() << "\n";
  }
  const double n = static_cast<double>(captions.size());
  json report = rep.to_json();
  report["decode"] = dc.to_json();
  report["caption_stats"] = st.to_json();
  report["mean_sim"] = sim / n;
  if (lm) report["mean_ref"] = ref / n;

  const fs::path out = a.out.empty() ? fs::path(a.checkpoint).parent_path() : fs::path(a.out);
  require_dir(out);
  write_file(out / "report.json", report.dump(2) + "\n");
  write_file(out / "captions.jsonl", dump.str());
  char line[160];
  std::snprintf(line, sizeof line, "MRR %.4f  R@1 %.4f  mean_sim %.4f  mean_length %.2f\n", rep.mrr,
                rep.recall_at.count(1) ? rep.recall_at.at(1) : 0.0, sim / n, st.mean_length);
  std::cout << line;
  return 0;
}

// score --------------------------------------------------------------------

struct ScoreArgs {
  std::string config;
  std::string corpus;
  std::string reflm;
  std::string caption;
  std::string bad_phrases = VLRM_DEFAULT_BAD_PHRASES;
  std::string flavor;
  std::int64_t scene = -1;
  bool raw = false;
  bool json_out = false;
};

int cmd_score(const ScoreArgs& a) {
  RunConfig cfg = load_config(a.config);
  if (!a.flavor.empty()) cfg.trainer.flavor = parse_flavor(a.flavor);
  const CorpusDir corpus = load_corpus_dir(a.corpus);
  const Scene* scene = nullptr;
  for (const auto& it : corpus.items)
    if (it.scene.id == a.scene) scene = &it.scene;
  if (!scene) throw UsageError("unknown scene id " + std::to_string(a.scene));
  std::optional<RefLM> lm = corpus.lm;
  if (!a.reflm.empty()) lm = RefLM::deserialize(read_file(a.reflm));
  const BadPhraseSet bps = load_bad_phrases(a.bad_phrases);
  const Vocab& vocab = corpus.vocab;

  TokenSeq caption;
  try {
    caption = tokenize(a.caption, vocab, !a.raw);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  if (caption.ids.empty()) throw UsageError("caption is empty");
  const PenaltyFlags flags = detect_penalties(caption, bps, vocab);
  const double sim = sim_score(*scene, caption, cfg.scorers.oracle, vocab);
  const bool use_ref = cfg.trainer.flavor == RewardFlavor::vlrm && lm.has_value();
  const double ref = use_ref ? ref_score(caption, *lm) : 0.0;
  const ReturnVector rv = compute_returns(caption, sim, ref, flags, cfg.trainer.gamma);
  const auto spans = bad_spans(caption, bps, vocab);

  if (a.json_out) {
    json sp = json::array();
    for (const auto& s : spans) sp.push_back({s.begin, s.end});
    json j = {{"sim", sim}, {"ref", ref}, {"noeos", flags.noeos}, {"bad", flags.bad},
              {"repeat", flags.repeat}, {"returns", rv.returns}, {"bad_spans", sp},
              {"tokens", words_of(caption, vocab)}};
    std::cout << j.dump(2) << "\n";
    return 0;
  }
  char line[200];
  std::snprintf(line, sizeof line, "sim %.6f\nref %.6f\nnoeos %d\n", sim, ref, flags.noeos);
  std::cout << line;
  const auto words = words_of(caption, vocab);
  std::cout << "bad spans:";
  for (const auto& s : spans) {
    std::cout << " [";
    for (std::size_t k = s.begin; k < s.end; ++k) std::cout << (k > s.begin ? " " : "") << words[k];
    std::cout << "]";
  }
  std::cout << "\n";
  std::snprintf(line, sizeof line, "%-12s %4s %7s %12s\n", "token", "bad", "repeat", "R(t_k)");
  std::cout << line;
  for (std::size_t k = 0; k < words.size(); ++k) {
    if (k < rv.returns.size()) {
      std::snprintf(line, sizeof line, "%-12s %4d %7d %12.6f\n", words[k].c_str(), flags.bad[k], flags.repeat[k],
                    rv.returns[k]);
    } else {
      std::snprintf(line, sizeof line, "%-12s %4d %7s %12s\n", words[k].c_str(), flags.bad[k], "", "");
    }
    std::cout << line;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reward-model fine-tuning of a synthetic scene captioner"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-corpus", "Generate a synthetic scene corpus, vocabulary and reference LM");
  g->add_option("--seed", gen.seed, "Corpus seed")->required();
  g->add_option("--scenes", gen.scenes, "Number of scenes")->required();
  g->add_option("--first-id", gen.first_id, "Id of the first scene");
  g->add_option("-o,--out", gen.out, "Existing output directory")->required();
  g->add_option("--config", gen.config, "Run config JSON");

  PretrainArgs pre;
  auto* p = app.add_subcommand("pretrain", "MLE warm start on reference captions");
  p->add_option("--config", pre.config, "Run config JSON");
  p->add_option("--corpus", pre.corpus, "Corpus directory")->required();
  p->add_option("--runs", pre.runs, "Root of run directories");

  RlArgs rl;
  auto* r = app.add_subcommand("rl-train", "Actor-critic fine-tuning");
  r->add_option("--config", rl.config, "Run config JSON");
  r->add_option("--corpus", rl.corpus, "Training corpus directory")->required();
  r->add_option("--runs", rl.runs, "Root of run directories");
  r->add_option("--init", rl.init, "Warm-start checkpoint");
  r->add_option("--resume", rl.resume, "Checkpoint to resume from");
  r->add_option("--flavor", rl.flavor, "Reward flavor")->check(CLI::IsMember({"vlrm", "vlrm-rs"}));
  r->add_option("--steps", rl.steps, "Train until this step count")->required();
  r->add_option("--checkpoint-every", rl.checkpoint_every, "Save every N steps");
  r->add_option("--workers", rl.workers, "Caption generation threads");
  r->add_option("--bad-phrases", rl.bad_phrases, "Bad-phrase list");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Caption a corpus and run text-to-scene retrieval");
  e->add_option("--config", ev.config, "Run config JSON");
  e->add_option("--checkpoint", ev.checkpoint, "Checkpoint")->required();
  e->add_option("--corpus", ev.corpus, "Evaluation corpus directory")->required();
  e->add_option("--reflm", ev.reflm, "Reference LM dump for mean ref");
  e->add_option("-o,--out", ev.out, "Output directory (default: checkpoint directory)");
  e->add_option("--decode", ev.decode, "beam or greedy");
  e->add_option("--workers", ev.workers, "Decoding threads");
  e->add_option("--bad-phrases", ev.bad_phrases, "Bad-phrase list");

  ScoreArgs sc;
  auto* s = app.add_subcommand("score", "Reward breakdown for one scene and caption");
  s->add_option("--config", sc.config, "Run config JSON");
  s->add_option("--corpus", sc.corpus, "Corpus directory")->required();
  s->add_option("--reflm", sc.reflm, "Reference LM dump");
  s->add_option("--scene", sc.scene, "Scene id")->required();
  s->add_option("--caption", sc.caption, "Caption text")->required();
  s->add_option("--bad-phrases", sc.bad_phrases, "Bad-phrase list");
  s->add_option("--flavor", sc.flavor, "Reward flavor")->check(CLI::IsMember({"vlrm", "vlrm-rs"}));
  s->add_flag("--raw", sc.raw, "Do not append eos");
  s->add_flag("--json", sc.json_out, "Print JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*g) return cmd_gen_corpus(gen);
    if (*p) return cmd_pretrain(pre);
    if (*r) return cmd_rl_train(rl);
    if (*e) return cmd_eval(ev);
    if (*s) return cmd_score(sc);
  } catch (const UsageError& err) {
    std::cerr << "vlrm: " << err.what() << "\n";
    return 2;
  } catch (const ConfigError& err) {
    std::cerr << "vlrm: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "vlrm: " << err.what() << "\n";
    return 1;
  }
  return 2;
}

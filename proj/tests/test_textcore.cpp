#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "support/oracles.hpp"
#include "vlrm/textcore.hpp"

using namespace vlrm;

namespace {

const Vocab& vocab() {
  static const Vocab v = build_vocab(CorpusConfig::defaults());
  return v;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST(Vocab, SpecialsAreDistinctAndOutsideWordClasses) {
  const Vocab& v = vocab();
  EXPECT_NE(v.pad(), v.bos());
  EXPECT_NE(v.bos(), v.eos());
  EXPECT_NE(v.pad(), v.eos());
  for (int id : {v.pad(), v.bos(), v.eos()}) EXPECT_FALSE(v.is_repeat_exempt(id));
}

TEST(Vocab, TokenIdMappingIsABijection) {
  const Vocab& v = vocab();
  std::set<std::string> seen;
  for (int id = 0; id < v.size(); ++id) {
    EXPECT_TRUE(seen.insert(v.token(id)).second);
    EXPECT_EQ(v.id(v.token(id)), id);
  }
}

TEST(Vocab, WordClassesArePairwiseDisjoint) {
  const Vocab& v = vocab();
  for (int id = 0; id < v.size(); ++id)
    EXPECT_LE(int(v.is_color(id)) + int(v.is_preposition(id)) + int(v.is_article(id)), 1) << v.token(id);
}

TEST(Vocab, GreenIsAColor) {
  EXPECT_TRUE(vocab().is_color(vocab().id("green")));
  EXPECT_FALSE(vocab().is_color(vocab().id("shirt")));
}

TEST(Vocab, EmptyColorSetGivesNoColorExceptions) {
  CorpusConfig c = CorpusConfig::defaults();
  c.colors.clear();
  c.slots.erase(c.slots.begin());
  const Vocab v = build_vocab(c);
  EXPECT_TRUE(v.colors().empty());
  for (int id = 0; id < v.size(); ++id) EXPECT_FALSE(v.is_color(id));
}

TEST(Vocab, SameConfigSerializesIdentically) {
  EXPECT_EQ(build_vocab(CorpusConfig::defaults()).serialize(), build_vocab(CorpusConfig::defaults()).serialize());
}

TEST(Vocab, DuplicateTokenIsAConfigError) {
  CorpusConfig c = CorpusConfig::defaults();
  c.fillers.push_back("and");
  EXPECT_THROW(build_vocab(c), ConfigError);
  CorpusConfig d = CorpusConfig::defaults();
  d.prepositions.push_back("red");
  EXPECT_THROW(build_vocab(d), ConfigError);
}

TEST(Vocab, JsonRoundTrip) {
  const Vocab v = Vocab::from_json(nlohmann::json::parse(vocab().serialize()));
  EXPECT_EQ(v.serialize(), vocab().serialize());
  EXPECT_EQ(v.hash(), vocab().hash());
}

TEST(Vocab, UnknownConfigKeyRejected) {
  nlohmann::json j = CorpusConfig::defaults().to_json();
  j["colour"] = nlohmann::json::array();
  EXPECT_THROW(CorpusConfig::from_json(j), ConfigError);
}

TEST(Detokenize, StripsEos) {
  const Vocab& v = vocab();
  const TokenSeq s = TokenSeq::from_ids({v.id("a"), v.id("man"), v.eos()}, v);
  EXPECT_EQ(detokenize(s, v), "a man");
}

TEST(Detokenize, OutOfRangeIdIsAnError) {
  TokenSeq s;
  s.ids = {vocab().id("a"), vocab().size() + 3};
  EXPECT_THROW(detokenize(s, vocab()), DecodeError);
}

TEST(Tokenize, UnknownWordIsAnError) { EXPECT_THROW(tokenize("a zebra", vocab()), DecodeError); }

TEST(Tokenize, RoundTripOverRandomSequences) {
  Rng rng(5);
  for (int i = 0; i < 10000; ++i) {
    const TokenSeq s = oracle::random_caption(rng, vocab(), 12, true);
    const TokenSeq back = tokenize(detokenize(s, vocab()), vocab());
    ASSERT_EQ(back.ids, s.ids);
    ASSERT_TRUE(back.has_eos);
  }
}

TEST(TokenSeq, ValidateRejectsInteriorEosAndPad) {
  const Vocab& v = vocab();
  TokenSeq a;
  a.ids = {v.id("a"), v.eos(), v.id("man")};
  EXPECT_THROW(a.validate(v), ContractError);
  TokenSeq b;
  b.ids = {v.id("a"), v.pad(), v.id("man")};
  EXPECT_THROW(b.validate(v), ContractError);
  TokenSeq c;
  EXPECT_THROW(c.validate(v), ContractError);
}

TEST(Corpus, SingleSceneIsReproducible) {
  const auto a = generate_corpus(7, 1, vocab());
  const auto b = generate_corpus(7, 1, vocab());
  ASSERT_EQ(a.size(), 1u);
  EXPECT_EQ(a[0].scene, b[0].scene);
  EXPECT_EQ(a[0].reference, b[0].reference);
}

TEST(Corpus, ZeroScenesIsAnError) { EXPECT_THROW(generate_corpus(7, 0, vocab()), ContractError); }

TEST(Corpus, ReferencesMentionAStrictSubsetOfAttributes) {
  const auto items = generate_corpus(3, 1000, vocab());
  for (const auto& it : items) {
    ASSERT_EQ(it.scene.attributes.size(), 5u);
    std::set<int> mentioned;
    for (int id : it.reference.ids)
      if (vocab().attribute_index(id) != Vocab::kNoAttribute) mentioned.insert(id);
    std::set<int> attrs;
    for (const auto& a : it.scene.attributes) attrs.insert(a.value);
    for (int m : mentioned) ASSERT_TRUE(attrs.count(m)) << vocab().token(m);
    ASSERT_LE(mentioned.size(), 4u);
    ASSERT_LT(mentioned.size(), attrs.size());
  }
}

TEST(Corpus, ScenesAreUnitNormAndDisjointScenesAreOrthogonal) {
  const auto items = generate_corpus(4, 300, vocab());
  for (const auto& it : items) EXPECT_NEAR(cosine(it.scene.embedding, it.scene.embedding), 1.0, 1e-9);
  int disjoint = 0;
  for (std::size_t i = 0; i < items.size(); ++i)
    for (std::size_t j = i + 1; j < items.size(); ++j) {
      bool shared = false;
      for (const auto& a : items[i].scene.attributes) shared = shared || items[j].scene.has_value(a.value);
      if (shared) continue;
      ++disjoint;
      ASSERT_LT(cosine(items[i].scene.embedding, items[j].scene.embedding), 1e-12);
    }
  EXPECT_GT(disjoint, 0);
}

TEST(Corpus, SceneIsAPureFunctionOfSeedAndId) {
  const auto batch = generate_corpus(9, 20, vocab(), 100);
  for (const auto& it : batch) EXPECT_EQ(make_scene(9, it.scene.id, vocab()), it.scene);
}

TEST(Corpus, ReferencesAreValidAndEndWithEos) {
  for (const auto& it : generate_corpus(1, 200, vocab())) {
    EXPECT_NO_THROW(it.reference.validate(vocab()));
    EXPECT_TRUE(it.reference.has_eos);
  }
}

TEST(Corpus, FileRoundTripIsExact) {
  const auto items = generate_corpus(7, 50, vocab());
  std::stringstream ss;
  write_corpus(ss, 7, items, vocab());
  const std::string text = ss.str();
  const LoadedCorpus back = read_corpus(ss, vocab());
  EXPECT_EQ(back.seed, 7u);
  ASSERT_EQ(back.items.size(), items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    EXPECT_EQ(back.items[i].scene, items[i].scene);
    EXPECT_EQ(back.items[i].reference, items[i].reference);
  }
  std::stringstream again;
  write_corpus(again, 7, back.items, vocab());
  EXPECT_EQ(again.str(), text);
}

TEST(Corpus, ReadRejectsForeignVocabulary) {
  std::stringstream ss;
  write_corpus(ss, 7, generate_corpus(7, 3, vocab()), vocab());
  CorpusConfig c = CorpusConfig::defaults();
  c.fillers.push_back("extra");
  EXPECT_THROW(read_corpus(ss, build_vocab(c)), ConfigError);
}

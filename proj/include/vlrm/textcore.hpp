#pragma once

// Word-level vocabulary, token sequences and the synthetic scene/caption world
// that stands in for an image dataset with under-detailed reference captions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vlrm/error.hpp"
#include "vlrm/util.hpp"

namespace vlrm {

using json = nlohmann::json;

namespace detail {

inline void reject_unknown_keys(const json& j, std::initializer_list<std::string_view> known,
                                std::string_view where) {
  if (!j.is_object()) throw ConfigError(std::string(where) + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw ConfigError("unknown key '" + it.key() + "' in " + std::string(where));
  }
}

}  // namespace detail

/// One attribute slot of a scene, e.g. the object or its color.
/// `pattern` is the phrase that realizes the slot in a caption; "{}" marks the value.
struct SlotSpec {
  std::string name;
  std::vector<std::string> pattern{"{}"};
  std::vector<std::string> values;
  double weight = 1.0;
  bool required = false;
};

struct CorpusConfig {
  std::string pad = "<pad>";
  std::string bos = "<bos>";
  std::string eos = "<eos>";
  std::vector<std::string> lead;  // opens every template caption
  std::vector<std::string> articles;
  std::vector<std::string> prepositions;
  std::vector<std::string> colors;
  std::vector<std::string> fillers;
  std::vector<SlotSpec> slots;  // in caption order

  static CorpusConfig defaults() {
    CorpusConfig c;
    c.lead = {"a"};
    c.articles = {"a", "an", "the"};
    c.prepositions = {"in", "on", "with", "near", "of", "at", "about"};
    c.colors = {"red", "green", "blue", "yellow", "black", "white", "brown", "pink"};
    c.fillers = {"and", "is", "image", "talking", "shirt", "video", "photo", "picture",
                 "camera", "shows", "view", "1993", "2020"};
    c.slots = {
        {"color", {"{}"}, c.colors, 1.0, false},
        {"object", {"{}"}, {"man", "woman", "boy", "girl", "dog", "cat", "horse", "bird"}, 1.0, true},
        {"action", {"{}"}, {"running", "sitting", "standing", "jumping", "sleeping", "eating", "walking", "playing"}, 1.0, false},
        {"item", {"with", "a", "{}"}, {"ball", "box", "chair", "bike", "kite", "car", "hat", "bag"}, 1.0, false},
        {"place", {"in", "the", "{}"}, {"park", "beach", "street", "garden", "field", "kitchen", "forest", "river"}, 1.0, false},
    };
    return c;
  }

  json to_json() const {
    json slots_j = json::array();
    for (const auto& s : slots)
      slots_j.push_back({{"name", s.name}, {"pattern", s.pattern}, {"values", s.values},
                         {"weight", s.weight}, {"required", s.required}});
    return {{"pad", pad}, {"bos", bos}, {"eos", eos}, {"lead", lead},
            {"articles", articles}, {"prepositions", prepositions}, {"colors", colors},
            {"fillers", fillers}, {"slots", slots_j}};
  }

  // Missing keys keep their defaults; unknown keys are rejected.
  static CorpusConfig from_json(const json& j) {
    detail::reject_unknown_keys(j, {"pad", "bos", "eos", "lead", "articles", "prepositions", "colors",
                                    "fillers", "slots"},
                                "corpus lexicon");
    CorpusConfig c = defaults();
    try {
      if (j.contains("pad")) c.pad = j.at("pad").get<std::string>();
      if (j.contains("bos")) c.bos = j.at("bos").get<std::string>();
      if (j.contains("eos")) c.eos = j.at("eos").get<std::string>();
      if (j.contains("lead")) c.lead = j.at("lead").get<std::vector<std::string>>();
      if (j.contains("articles")) c.articles = j.at("articles").get<std::vector<std::string>>();
      if (j.contains("prepositions")) c.prepositions = j.at("prepositions").get<std::vector<std::string>>();
      if (j.contains("colors")) c.colors = j.at("colors").get<std::vector<std::string>>();
      if (j.contains("fillers")) c.fillers = j.at("fillers").get<std::vector<std::string>>();
      if (j.contains("slots")) {
        c.slots.clear();
        for (const auto& sj : j.at("slots")) {
          detail::reject_unknown_keys(sj, {"name", "pattern", "values", "weight", "required"}, "slot");
          SlotSpec s;
          s.name = sj.at("name").get<std::string>();
          if (sj.contains("pattern")) s.pattern = sj.at("pattern").get<std::vector<std::string>>();
          s.values = sj.at("values").get<std::vector<std::string>>();
          if (sj.contains("weight")) s.weight = sj.at("weight").get<double>();
          if (sj.contains("required")) s.required = sj.at("required").get<bool>();
          c.slots.push_back(std::move(s));
        }
      }
    } catch (const json::exception& e) {
      throw ConfigError(std::string("corpus lexicon: ") + e.what());
    }
    return c;
  }
};

/// Bijective word <-> id map plus the word classes and the attribute basis.
class Vocab {
 public:
  struct Slot {
    std::string name;
    std::vector<int> pattern;  // -1 marks the value position
    std::vector<int> values;
    double weight = 1.0;
    bool required = false;
  };

  static constexpr int kNoAttribute = -1;

  int size() const { return static_cast<int>(tokens_.size()); }
  int pad() const { return pad_; }
  int bos() const { return bos_; }
  int eos() const { return eos_; }
  bool is_special(int id) const { return id == pad_ || id == bos_ || id == eos_; }
  bool valid(int id) const { return id >= 0 && id < size(); }

  const std::string& token(int id) const {
    if (!valid(id)) throw DecodeError("token id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::optional<int> find(std::string_view word) const {
    auto it = index_.find(std::string(word));
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  int id(std::string_view word) const {
    if (auto f = find(word)) return *f;
    throw DecodeError("unknown word '" + std::string(word) + "'");
  }

  bool is_color(int id) const { return has_class(id, kColor); }
  bool is_preposition(int id) const { return has_class(id, kPreposition); }
  bool is_article(int id) const { return has_class(id, kArticle); }
  bool is_repeat_exempt(int id) const { return has_class(id, kColor | kPreposition | kArticle); }

  const std::vector<int>& colors() const { return colors_; }
  const std::vector<int>& prepositions() const { return prepositions_; }
  const std::vector<int>& articles() const { return articles_; }

  const std::vector<Slot>& slots() const { return slots_; }
  const std::vector<int>& lead() const { return lead_; }

  // Attribute basis shared by scene and caption embeddings.
  int attribute_dim() const { return static_cast<int>(attribute_ids_.size()); }
  int attribute_index(int id) const { return valid(id) ? attribute_index_[static_cast<std::size_t>(id)] : kNoAttribute; }
  int slot_of(int id) const { return valid(id) ? slot_of_[static_cast<std::size_t>(id)] : kNoAttribute; }
  double attribute_weight(int id) const {
    int s = slot_of(id);
    return s == kNoAttribute ? 0.0 : slots_[static_cast<std::size_t>(s)].weight;
  }
  const std::vector<int>& attribute_ids() const { return attribute_ids_; }

  const CorpusConfig& config() const { return config_; }
  const std::vector<std::string>& tokens() const { return tokens_; }

  json to_json() const {
    return {{"format", "vlrm-vocab"}, {"version", 1}, {"lexicon", config_.to_json()}, {"tokens", tokens_}};
  }
  std::string serialize() const { return to_json().dump(2) + "\n"; }
  std::uint64_t hash() const { return fnv1a64(to_json().dump()); }

  static Vocab from_json(const json& j);

 private:
  friend Vocab build_vocab(const CorpusConfig& config);

  enum ClassBits : unsigned { kArticle = 1, kPreposition = 2, kColor = 4 };
  bool has_class(int id, unsigned bits) const {
    return valid(id) && (classes_[static_cast<std::size_t>(id)] & bits) != 0;
  }

  CorpusConfig config_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  std::vector<unsigned> classes_;
  std::vector<int> attribute_index_;
  std::vector<int> slot_of_;
  std::vector<int> attribute_ids_;
  std::vector<int> colors_, prepositions_, articles_, lead_;
  std::vector<Slot> slots_;
  int pad_ = 0, bos_ = 1, eos_ = 2;
};

/// Ids are assigned in declaration order: specials, articles, prepositions,
/// colors, fillers, then new slot values. Slot values may reuse color words;
/// any other repeated string is a configuration error.
inline Vocab build_vocab(const CorpusConfig& config) {
  Vocab v;
  v.config_ = config;
  auto add = [&](const std::string& w, unsigned cls) {
    if (w.empty() || split_words(w).size() != 1) throw ConfigError("token '" + w + "' is not a single word");
    if (v.index_.count(w)) throw ConfigError("duplicate token '" + w + "'");
    int id = v.size();
    v.index_.emplace(w, id);
    v.tokens_.push_back(w);
    v.classes_.push_back(cls);
    return id;
  };
  v.pad_ = add(config.pad, 0);
  v.bos_ = add(config.bos, 0);
  v.eos_ = add(config.eos, 0);
  for (const auto& w : config.articles) v.articles_.push_back(add(w, Vocab::kArticle));
  for (const auto& w : config.prepositions) v.prepositions_.push_back(add(w, Vocab::kPreposition));
  for (const auto& w : config.colors) v.colors_.push_back(add(w, Vocab::kColor));
  for (const auto& w : config.fillers) add(w, 0);

  if (config.slots.empty()) throw ConfigError("at least one attribute slot is required");
  std::set<std::string> slot_names;
  bool any_optional = false;
  std::vector<std::pair<int, int>> slot_values;  // (slot, id)
  for (std::size_t s = 0; s < config.slots.size(); ++s) {
    const auto& spec = config.slots[s];
    if (!slot_names.insert(spec.name).second) throw ConfigError("duplicate slot '" + spec.name + "'");
    if (spec.values.empty()) throw ConfigError("slot '" + spec.name + "' has no values");
    if (!(spec.weight > 0.0)) throw ConfigError("slot '" + spec.name + "' weight must be positive");
    any_optional = any_optional || !spec.required;
    for (const auto& w : spec.values) {
      int id;
      if (auto f = v.find(w)) {
        if (!v.is_color(*f)) throw ConfigError("duplicate token '" + w + "'");
        id = *f;
      } else {
        id = add(w, 0);
      }
      slot_values.emplace_back(static_cast<int>(s), id);
    }
  }
  if (!any_optional) throw ConfigError("at least one slot must be optional");

  v.attribute_index_.assign(v.tokens_.size(), Vocab::kNoAttribute);
  v.slot_of_.assign(v.tokens_.size(), Vocab::kNoAttribute);
  for (auto [s, id] : slot_values) {
    if (v.slot_of_[static_cast<std::size_t>(id)] != Vocab::kNoAttribute)
      throw ConfigError("word '" + v.tokens_[static_cast<std::size_t>(id)] + "' belongs to two slots");
    v.slot_of_[static_cast<std::size_t>(id)] = s;
    v.attribute_index_[static_cast<std::size_t>(id)] = static_cast<int>(v.attribute_ids_.size());
    v.attribute_ids_.push_back(id);
  }

  for (std::size_t s = 0; s < config.slots.size(); ++s) {
    const auto& spec = config.slots[s];
    Vocab::Slot slot;
    slot.name = spec.name;
    slot.weight = spec.weight;
    slot.required = spec.required;
    int holes = 0;
    for (const auto& w : spec.pattern) {
      if (w == "{}") {
        slot.pattern.push_back(-1);
        ++holes;
      } else {
        auto f = v.find(w);
        if (!f || v.is_special(*f)) throw ConfigError("pattern word '" + w + "' is not a declared token");
        slot.pattern.push_back(*f);
      }
    }
    if (holes != 1) throw ConfigError("pattern of slot '" + spec.name + "' needs exactly one {}");
    for (const auto& w : spec.values) slot.values.push_back(v.id(w));
    v.slots_.push_back(std::move(slot));
  }
  for (const auto& w : config.lead) {
    auto f = v.find(w);
    if (!f || v.is_special(*f)) throw ConfigError("lead word '" + w + "' is not a declared token");
    v.lead_.push_back(*f);
  }
  return v;
}

inline Vocab Vocab::from_json(const json& j) {
  try {
    if (j.at("format") != "vlrm-vocab" || j.at("version") != 1) throw ConfigError("not a vocab file");
    Vocab v = build_vocab(CorpusConfig::from_json(j.at("lexicon")));
    if (j.contains("tokens") && j.at("tokens").get<std::vector<std::string>>() != v.tokens())
      throw ConfigError("vocab token list does not match its lexicon");
    return v;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("vocab: ") + e.what());
  }
}

/// A generated or reference caption.
struct TokenSeq {
  std::vector<int> ids;
  bool has_eos = false;
  std::vector<double> logprobs;  // optional, one per id when present

  std::size_t size() const { return ids.size(); }
  // Tokens before the terminating eos, i.e. positions that carry a return.
  std::size_t content_length() const { return has_eos ? ids.size() - 1 : ids.size(); }

  bool operator==(const TokenSeq& o) const { return ids == o.ids && has_eos == o.has_eos; }

  static TokenSeq from_ids(std::vector<int> ids, const Vocab& vocab) {
    TokenSeq t;
    t.has_eos = !ids.empty() && ids.back() == vocab.eos();
    t.ids = std::move(ids);
    t.validate(vocab);
    return t;
  }

  void validate(const Vocab& vocab) const {
    if (ids.empty()) throw ContractError("token sequence is empty");
    if (!logprobs.empty() && logprobs.size() != ids.size())
      throw ContractError("logprobs length does not match tokens");
    for (std::size_t i = 0; i < ids.size(); ++i) {
      int id = ids[i];
      if (!vocab.valid(id)) throw DecodeError("token id " + std::to_string(id) + " out of range");
      if (id == vocab.pad() || id == vocab.bos()) throw ContractError("pad/bos inside a token sequence");
      if (id == vocab.eos() && !(has_eos && i + 1 == ids.size()))
        throw ContractError("eos must appear once, as the last token");
    }
    if (has_eos && ids.back() != vocab.eos()) throw ContractError("has_eos set but last token is not eos");
  }
};

/// Whitespace tokenization; every word must be in the vocabulary.
inline TokenSeq tokenize(std::string_view text, const Vocab& vocab, bool append_eos = true) {
  TokenSeq t;
  for (const auto& w : split_words(text)) {
    int id = vocab.id(w);
    if (vocab.is_special(id)) throw DecodeError("special token '" + w + "' in caption text");
    t.ids.push_back(id);
  }
  if (append_eos) {
    t.ids.push_back(vocab.eos());
    t.has_eos = true;
  }
  if (t.ids.empty()) throw ContractError("empty caption");
  return t;
}

inline std::string detokenize(const TokenSeq& seq, const Vocab& vocab) {
  std::string out;
  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    int id = seq.ids[i];
    const std::string& w = vocab.token(id);
    if (id == vocab.eos() && i + 1 == seq.ids.size()) break;
    if (vocab.is_special(id)) throw DecodeError("special token '" + w + "' inside caption");
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

struct Attribute {
  int slot = 0;
  int value = 0;  // token id
  bool operator==(const Attribute&) const = default;
};

/// Synthetic stand-in for an image: one value per slot plus a unit embedding.
struct Scene {
  std::int64_t id = 0;
  std::vector<Attribute> attributes;  // ordered by slot
  std::vector<double> embedding;

  bool has_value(int token_id) const {
    return std::any_of(attributes.begin(), attributes.end(), [&](const Attribute& a) { return a.value == token_id; });
  }
  bool operator==(const Scene&) const = default;
};

/// Normalized weighted bag of attribute words.
inline std::vector<double> attribute_embedding(const std::vector<Attribute>& attrs, const Vocab& vocab) {
  std::vector<double> e(static_cast<std::size_t>(vocab.attribute_dim()), 0.0);
  for (const auto& a : attrs) {
    int idx = vocab.attribute_index(a.value);
    if (idx == Vocab::kNoAttribute) throw ContractError("attribute value is not an attribute word");
    e[static_cast<std::size_t>(idx)] += vocab.slots()[static_cast<std::size_t>(a.slot)].weight;
  }
  double n = 0.0;
  for (double x : e) n += x * x;
  n = std::sqrt(n);
  if (n == 0.0) throw ContractError("scene without attributes");
  for (double& x : e) x /= n;
  return e;
}

/// Template caption naming exactly the attributes of the included slots.
inline TokenSeq render_caption(const Scene& scene, const std::vector<bool>& include, const Vocab& vocab) {
  TokenSeq t;
  t.ids = vocab.lead();
  for (const auto& a : scene.attributes) {
    if (!include[static_cast<std::size_t>(a.slot)]) continue;
    for (int w : vocab.slots()[static_cast<std::size_t>(a.slot)].pattern) t.ids.push_back(w < 0 ? a.value : w);
  }
  t.ids.push_back(vocab.eos());
  t.has_eos = true;
  return t;
}

/// Caption that mentions every attribute of the scene.
inline TokenSeq full_caption(const Scene& scene, const Vocab& vocab) {
  return render_caption(scene, std::vector<bool>(vocab.slots().size(), true), vocab);
}

inline Scene make_scene(std::uint64_t seed, std::int64_t id, const Vocab& vocab) {
  Rng rng = derived_rng(seed, static_cast<std::uint64_t>(id));
  Scene s;
  s.id = id;
  for (std::size_t k = 0; k < vocab.slots().size(); ++k) {
    const auto& vals = vocab.slots()[k].values;
    s.attributes.push_back({static_cast<int>(k), vals[uniform_index(rng, vals.size())]});
  }
  s.embedding = attribute_embedding(s.attributes, vocab);
  return s;
}

struct CorpusItem {
  Scene scene;
  TokenSeq reference;
};

/// Scenes `first_id .. first_id + n_scenes - 1`, each with an under-detailed
/// reference: required slots always, optional slots by coin flip, never all slots.
inline std::vector<CorpusItem> generate_corpus(std::uint64_t seed, std::size_t n_scenes, const Vocab& vocab,
                                               std::int64_t first_id = 0) {
  if (n_scenes == 0) throw ContractError("n_scenes must be >= 1");
  std::vector<CorpusItem> out;
  out.reserve(n_scenes);
  const std::size_t n_slots = vocab.slots().size();
  for (std::size_t i = 0; i < n_scenes; ++i) {
    const std::int64_t id = first_id + static_cast<std::int64_t>(i);
    Scene scene = make_scene(seed, id, vocab);
    Rng rng = derived_rng(seed ^ 0x5bd1e9955bd1e995ULL, static_cast<std::uint64_t>(id));
    std::vector<bool> include(n_slots);
    std::vector<std::size_t> optional;
    for (std::size_t k = 0; k < n_slots; ++k) {
      include[k] = vocab.slots()[k].required || uniform01(rng) < 0.5;
      if (!vocab.slots()[k].required) optional.push_back(k);
    }
    if (std::all_of(include.begin(), include.end(), [](bool b) { return b; }))
      include[optional[uniform_index(rng, optional.size())]] = false;
    TokenSeq ref = render_caption(scene, include, vocab);
    out.push_back({std::move(scene), std::move(ref)});
  }
  return out;
}

/// Line-delimited corpus: a header record, then one scene + reference per line.
inline void write_corpus(std::ostream& os, std::uint64_t seed, const std::vector<CorpusItem>& items,
                         const Vocab& vocab) {
  json header = {{"format", "vlrm-corpus"}, {"version", 1}, {"seed", seed},
                 {"n_scenes", items.size()}, {"config_hash", hex64(vocab.hash())}};
  os << header.dump() << '\n';
  for (const auto& it : items) {
    json attrs = json::array();
    for (const auto& a : it.scene.attributes)
      attrs.push_back({vocab.slots()[static_cast<std::size_t>(a.slot)].name, vocab.token(a.value)});
    json rec = {{"id", it.scene.id}, {"attributes", attrs}, {"embedding", it.scene.embedding},
                {"reference", detokenize(it.reference, vocab)}};
    os << rec.dump() << '\n';
  }
}

struct LoadedCorpus {
  std::uint64_t seed = 0;
  std::vector<CorpusItem> items;
};

inline LoadedCorpus read_corpus(std::istream& is, const Vocab& vocab) {
  std::string line;
  if (!std::getline(is, line)) throw IoError("empty corpus file");
  LoadedCorpus out;
  try {
    json header = json::parse(line);
    if (header.at("format") != "vlrm-corpus" || header.at("version") != 1) throw IoError("not a corpus file");
    if (header.at("config_hash") != hex64(vocab.hash())) throw ConfigError("corpus was generated with another vocabulary");
    out.seed = header.at("seed").get<std::uint64_t>();
    while (std::getline(is, line)) {
      if (trim(line).empty()) continue;
      json rec = json::parse(line);
      CorpusItem item;
      item.scene.id = rec.at("id").get<std::int64_t>();
      for (const auto& a : rec.at("attributes")) {
        const std::string slot_name = a.at(0).get<std::string>();
        int slot = -1;
        for (std::size_t k = 0; k < vocab.slots().size(); ++k)
          if (vocab.slots()[k].name == slot_name) slot = static_cast<int>(k);
        if (slot < 0) throw ConfigError("unknown slot '" + slot_name + "'");
        item.scene.attributes.push_back({slot, vocab.id(a.at(1).get<std::string>())});
      }
      item.scene.embedding = rec.at("embedding").get<std::vector<double>>();
      item.reference = tokenize(rec.at("reference").get<std::string>(), vocab);
      out.items.push_back(std::move(item));
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("corpus: ") + e.what());
  }
  return out;
}

}  // namespace vlrm

#pragma once

// Versioned binary container: model configuration, every parameter with its
// partition, both optimizer states, the training RNG and the step counter.
// Doubles are stored as raw little-endian bytes, so load-then-save is byte-stable.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "vlrm/error.hpp"
#include "vlrm/model.hpp"
#include "vlrm/optim.hpp"
#include "vlrm/util.hpp"

namespace vlrm {

struct Checkpoint {
  ModelConfig model_config;
  int vocab_size = 0;
  int scene_dim = 0;
  PolicyNet policy;
  ValueHead head;
  Adam policy_opt;
  Adam value_opt;
  std::string rng_state;
  std::uint64_t config_hash = 0;
  std::uint64_t step = 0;

  static Checkpoint fresh(int vocab_size, int scene_dim, const ModelConfig& cfg) {
    Checkpoint c;
    c.model_config = cfg;
    c.vocab_size = vocab_size;
    c.scene_dim = scene_dim;
    c.policy = PolicyNet::create(vocab_size, scene_dim, cfg);
    c.head = ValueHead::create(cfg.hidden, cfg);
    c.rng_state = vlrm::rng_state(Rng(cfg.init_seed));
    return c;
  }

  std::string serialize() const;
  static Checkpoint deserialize(const std::string& bytes);

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint '" + path + "'");
    const std::string bytes = serialize();
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("failed writing checkpoint '" + path + "'");
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return deserialize(ss.str());
  }
};

namespace detail {

constexpr char kCheckpointMagic[8] = {'V', 'L', 'R', 'M', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCheckpointVersion = 1;

class ByteWriter {
 public:
  template <typename T>
  void pod(T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out_.append(buf, sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    out_ += s;
  }
  void matrix(const Matrix& m) {
    pod<std::uint32_t>(static_cast<std::uint32_t>(m.rows()));
    pod<std::uint32_t>(static_cast<std::uint32_t>(m.cols()));
    out_.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double));
  }
  void raw(const char* p, std::size_t n) { out_.append(p, n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& in) : in_(in) {}
  template <typename T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  Matrix matrix() {
    const auto r = pod<std::uint32_t>();
    const auto c = pod<std::uint32_t>();
    const std::size_t n = static_cast<std::size_t>(r) * c;
    need(n * sizeof(double));
    Matrix m(r, c);
    std::memcpy(m.data(), in_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return m;
  }
  void expect_raw(const char* p, std::size_t n) {
    need(n);
    if (in_.compare(pos_, n, p, n) != 0) throw IoError("checkpoint: bad magic");
    pos_ += n;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw IoError("checkpoint: truncated");
  }
  const std::string& in_;
  std::size_t pos_ = 0;
};

inline void write_adam(ByteWriter& w, const Adam& a) {
  w.pod<std::uint64_t>(a.steps());
  w.pod<std::uint32_t>(static_cast<std::uint32_t>(a.moments().size()));
  for (const auto& [name, mo] : a.moments()) {
    w.str(name);
    w.matrix(mo.m);
    w.matrix(mo.v);
  }
}

inline Adam read_adam(ByteReader& r) {
  Adam a;
  a.set_steps(r.pod<std::uint64_t>());
  const auto n = r.pod<std::uint32_t>();
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name = r.str();
    Matrix m = r.matrix();
    Matrix v = r.matrix();
    a.moments().emplace(std::move(name), Adam::Moments{std::move(m), std::move(v)});
  }
  return a;
}

inline void read_params_into(ByteReader& r, ParameterList& into, std::uint32_t count) {
  auto& ps = into.parameters();
  if (count != ps.size()) throw IoError("checkpoint: parameter count mismatch");
  for (auto& p : ps) {
    const std::string name = r.str();
    const auto part = static_cast<Partition>(r.pod<std::uint8_t>());
    Matrix value = r.matrix();
    if (name != p.name || part != p.partition || value.rows() != p.value.rows() || value.cols() != p.value.cols())
      throw IoError("checkpoint: parameter '" + name + "' does not match the model layout");
    p.value = std::move(value);
  }
}

}  // namespace detail

inline std::string Checkpoint::serialize() const {
  detail::ByteWriter w;
  w.raw(detail::kCheckpointMagic, sizeof detail::kCheckpointMagic);
  w.pod<std::uint32_t>(detail::kCheckpointVersion);
  w.pod<std::uint64_t>(config_hash);
  w.pod<std::uint64_t>(step);
  w.str(model_config.to_json().dump());
  w.pod<std::int32_t>(vocab_size);
  w.pod<std::int32_t>(scene_dim);
  w.str(rng_state);
  for (const ParameterList* list : {static_cast<const ParameterList*>(&policy), static_cast<const ParameterList*>(&head)}) {
    w.pod<std::uint32_t>(static_cast<std::uint32_t>(list->parameters().size()));
    for (const auto& p : list->parameters()) {
      w.str(p.name);
      w.pod<std::uint8_t>(static_cast<std::uint8_t>(p.partition));
      w.matrix(p.value);
    }
  }
  detail::write_adam(w, policy_opt);
  detail::write_adam(w, value_opt);
  return w.take();
}

inline Checkpoint Checkpoint::deserialize(const std::string& bytes) {
  detail::ByteReader r(bytes);
  r.expect_raw(detail::kCheckpointMagic, sizeof detail::kCheckpointMagic);
  if (r.pod<std::uint32_t>() != detail::kCheckpointVersion) throw IoError("checkpoint: unsupported version");
  const auto config_hash = r.pod<std::uint64_t>();
  const auto step = r.pod<std::uint64_t>();
  ModelConfig mc;
  try {
    mc = ModelConfig::from_json(nlohmann::json::parse(r.str()));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: model config: ") + e.what());
  }
  const auto vocab_size = r.pod<std::int32_t>();
  const auto scene_dim = r.pod<std::int32_t>();
  Checkpoint c = fresh(vocab_size, scene_dim, mc);
  c.config_hash = config_hash;
  c.step = step;
  c.rng_state = r.str();
  detail::read_params_into(r, c.policy, r.pod<std::uint32_t>());
  detail::read_params_into(r, c.head, r.pod<std::uint32_t>());
  c.policy_opt = detail::read_adam(r);
  c.value_opt = detail::read_adam(r);
  if (!r.done()) throw IoError("checkpoint: trailing bytes");
  return c;
}

}  // namespace vlrm

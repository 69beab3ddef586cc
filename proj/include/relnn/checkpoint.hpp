#pragma once

// Binary model checkpoints.
//
// Layout (all integers and floats little-endian):
//   "RNNK"            magic
//   u32               format version
//   char[4]           kind tag: BASE | GNET | FNET
//   u32 epochs, u64 seed, u32 n + n bytes config hash, f64 dropout rate
//   u32 layer count, then per layer: u32 out, u32 in, u8 activation
//   f64 payload: per layer weights (out*in, row-major) then bias (out)

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "relnn/errors.hpp"
#include "relnn/neuralcore.hpp"

namespace relnn {

enum class ModelKind { Base, GNet, FNet };

inline std::string kind_tag(ModelKind k) {
  switch (k) {
    case ModelKind::Base: return "BASE";
    case ModelKind::GNet: return "GNET";
    case ModelKind::FNet: return "FNET";
  }
  return "????";
}

struct CheckpointMeta {
  std::uint32_t epochs = 0;
  std::uint64_t seed = 0;
  std::string config_hash;

  friend bool operator==(const CheckpointMeta&, const CheckpointMeta&) = default;
};

struct Checkpoint {
  ModelKind kind = ModelKind::Base;
  MlpModel model;
  CheckpointMeta meta;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == data_.size(); }
  std::size_t remaining() const { return data_.size() - pos_; }

 private:
  void need(std::size_t n, const char* what) {
    if (data_.size() - pos_ < n) throw LoadError(std::string("checkpoint truncated while reading ") + what);
  }
  std::string data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(ModelKind kind, const MlpModel& model, const CheckpointMeta& meta) {
  model.validate();
  std::string buf = "RNNK";
  detail::put<std::uint32_t>(buf, kCheckpointVersion);
  buf += kind_tag(kind);
  detail::put<std::uint32_t>(buf, meta.epochs);
  detail::put<std::uint64_t>(buf, meta.seed);
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(meta.config_hash.size()));
  buf += meta.config_hash;
  detail::put<double>(buf, model.dropout_rate);
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(model.layers.size()));
  for (const auto& l : model.layers) {
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(l.out_dim()));
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(l.in_dim()));
    detail::put<std::uint8_t>(buf, static_cast<std::uint8_t>(l.activation));
  }
  for (const auto& l : model.layers) {
    for (double v : l.weights.data) detail::put<double>(buf, v);
    for (double v : l.bias.data) detail::put<double>(buf, v);
  }
  return buf;
}

inline Checkpoint decode_checkpoint(std::string bytes, ModelKind expected) {
  detail::Reader r(std::move(bytes));
  if (r.bytes(4, "magic") != "RNNK") throw LoadError("not a checkpoint: bad magic bytes");
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw LoadError("checkpoint version " + std::to_string(version) + " unsupported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
  }
  const std::string tag = r.bytes(4, "kind tag");
  if (tag != kind_tag(expected)) {
    throw LoadError("checkpoint holds a " + tag + " model, expected " + kind_tag(expected));
  }
  Checkpoint ck;
  ck.kind = expected;
  ck.meta.epochs = r.get<std::uint32_t>("epochs");
  ck.meta.seed = r.get<std::uint64_t>("seed");
  ck.meta.config_hash = r.bytes(r.get<std::uint32_t>("hash length"), "config hash");
  ck.model.dropout_rate = r.get<double>("dropout rate");
  const auto n_layers = r.get<std::uint32_t>("layer count");
  if (n_layers == 0 || n_layers > 64) throw LoadError("checkpoint declares an implausible layer count");
  std::vector<std::array<std::uint32_t, 3>> shapes;
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    const auto out = r.get<std::uint32_t>("layer shape");
    const auto in = r.get<std::uint32_t>("layer shape");
    const auto act = r.get<std::uint8_t>("activation");
    if (act > 2) throw LoadError("checkpoint has unknown activation code");
    shapes.push_back({out, in, act});
  }
  std::uint64_t payload = 0;
  for (const auto& [out, in, act] : shapes) payload += (static_cast<std::uint64_t>(out) * in + out) * sizeof(double);
  if (payload > r.remaining()) throw LoadError("checkpoint truncated while reading parameters");
  for (const auto& [out, in, act] : shapes) {
    Tensor w({out, in});
    Tensor b({out});
    for (double& v : w.data) v = r.get<double>("weights");
    for (double& v : b.data) v = r.get<double>("bias");
    ck.model.layers.emplace_back(std::move(w), std::move(b), static_cast<Activation>(act));
  }
  if (!r.at_end()) throw LoadError("checkpoint has trailing bytes");
  try {
    ck.model.validate();
  } catch (const std::exception& e) {
    throw LoadError(std::string("checkpoint shape table inconsistent: ") + e.what());
  }
  return ck;
}

inline void write_checkpoint(const std::string& path, ModelKind kind, const MlpModel& model,
                             const CheckpointMeta& meta) {
  const std::string bytes = encode_checkpoint(kind, model, meta);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline Checkpoint read_checkpoint(const std::string& path, ModelKind expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("missing checkpoint " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str(), expected);
}

}  // namespace relnn

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "bestow/model.hpp"

namespace bestow {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Layout (little-endian):
//   "BSTWCKPT" | u32 version | u64 config_len | config text (key=value lines)
//   | u64 n_tensors | per tensor: u32 name_len, name, u32 rank, u64 dims[rank],
//   f64 data[numel]
inline constexpr char kCheckpointMagic[8] = {'B', 'S', 'T', 'W', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T take(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw CheckpointError("truncated checkpoint");
  return v;
}

inline std::string take_string(std::istream& is, std::size_t n) {
  std::string s(n, '\0');
  if (n && !is.read(s.data(), static_cast<std::streamsize>(n))) throw CheckpointError("truncated checkpoint");
  return s;
}

}  // namespace detail

/// Serialises the model config and every parameter tensor. Round-trips
/// bit-exactly.
inline void save_checkpoint(const BestowModel& model, std::ostream& os, const KeyValues& extra = {}) {
  KeyValues kv = model.config().to_kv();
  kv.merge(extra);
  const std::string cfg = kv.to_text();
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put<std::uint32_t>(os, kCheckpointVersion);
  detail::put<std::uint64_t>(os, cfg.size());
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  detail::put<std::uint64_t>(os, model.params().size());
  for (const auto& [name, t] : model.params()) {
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) detail::put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
}

inline void save_checkpoint(const BestowModel& model, const std::string& path, const KeyValues& extra = {}) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot write checkpoint " + path);
  save_checkpoint(model, f, extra);
  if (!f) throw CheckpointError("failed writing checkpoint " + path);
}

struct LoadedCheckpoint {
  BestowModel model;
  KeyValues metadata;  // stored config plus any extra entries
};

inline LoadedCheckpoint load_checkpoint(std::istream& is) {
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0) {
    throw CheckpointError("not a checkpoint file (bad magic)");
  }
  const auto version = detail::take<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto cfg_len = detail::take<std::uint64_t>(is);
  KeyValues kv = KeyValues::parse(detail::take_string(is, cfg_len), "<checkpoint>");
  LoadedCheckpoint out{BestowModel::create(ModelConfig::from_kv(kv), 0), kv};
  auto& params = out.model.params();
  const auto n = detail::take<std::uint64_t>(is);
  if (n != params.size()) {
    throw CheckpointError("checkpoint has " + std::to_string(n) + " tensors, model expects " +
                          std::to_string(params.size()));
  }
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto name = detail::take_string(is, detail::take<std::uint32_t>(is));
    const auto rank = detail::take<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = detail::take<std::uint64_t>(is);
    if (!params.contains(name)) throw CheckpointError("unexpected tensor " + name);
    Tensor& p = params.get(name);
    if (p.shape() != shape) {
      throw CheckpointError("tensor " + name + " has shape " + shape_str(shape) + ", expected " +
                            shape_str(p.shape()));
    }
    auto dst = p.data_mut();
    if (!is.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.size() * sizeof(double)))) {
      throw CheckpointError("truncated tensor data for " + name);
    }
  }
  return out;
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path);
  return load_checkpoint(f);
}

}  // namespace bestow

#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

#include "bestow/tensor.hpp"

namespace bestow {

/// Seeded generator with named, independent sub-streams.
///
/// `Rng(seed).substream("init")` always yields the same sequence for the
/// same (seed, name), so e.g. K-sampling can change without perturbing
/// weight initialisation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) { reseed(seed, 0); }

  Rng substream(std::string_view name) const { return Rng(seed_, name_hash(name)); }
  Rng substream(std::uint64_t index) const { return Rng(seed_, index * 0x9E3779B97F4A7C15ULL + 1); }

  std::uint64_t seed() const { return seed_; }
  std::mt19937_64& engine() { return engine_; }

  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    return std::uniform_int_distribution<std::int64_t>(lo, hi)(engine_);
  }

  Tensor randn(Shape shape, double stddev = 1.0) {
    std::vector<double> d(shape_numel(shape));
    for (auto& v : d) v = normal(0.0, stddev);
    return Tensor::from_data(std::move(shape), std::move(d));
  }

 private:
  Rng(std::uint64_t seed, std::uint64_t stream) : seed_(seed ^ (stream * 0xBF58476D1CE4E5B9ULL)) {
    reseed(seed, stream);
  }

  void reseed(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    engine_.seed(seq);
  }

  // FNV-1a; stable across platforms, unlike std::hash.
  static std::uint64_t name_hash(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace bestow

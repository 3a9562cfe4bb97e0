#pragma once

#include <cstdint>
#include <cmath>
#include <numbers>
#include <vector>

#include "cldm/common.hpp"

namespace cldm {

// Deterministic counter-style generator (splitmix64). The standard library
// distributions are not bit-reproducible across implementations, and training,
// sampling and dataset generation all promise byte-identical reruns, so the
// whole project draws from this one engine.
//
// Substreams are derived by hashing (seed, tag, a, b); per-sample and
// per-chain streams therefore do not depend on execution order.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  static std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  static Rng substream(std::uint64_t seed, std::uint64_t tag, std::uint64_t a = 0,
                       std::uint64_t b = 0) {
    std::uint64_t s = mix(seed ^ mix(tag ^ mix(a ^ mix(b))));
    return Rng(s);
  }

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform in (0, 1].
  double uniform_pos() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller. Always consumes exactly two words.
  double normal() {
    double u1 = uniform_pos();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  Vec normal_vec(Eigen::Index n) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

// Substream tags. Fixed constants: changing any of them changes every
// checkpoint and CSV produced from a given seed.
namespace stream {
inline constexpr std::uint64_t kParamInit = 0x01;
inline constexpr std::uint64_t kEpochShuffle = 0x02;
inline constexpr std::uint64_t kTrainSample = 0x03;
inline constexpr std::uint64_t kSampleChain = 0x04;
inline constexpr std::uint64_t kDataSample = 0x05;
inline constexpr std::uint64_t kGridSearch = 0x06;
inline constexpr std::uint64_t kEvalSample = 0x07;
inline constexpr std::uint64_t kUncondSample = 0x08;
inline constexpr std::uint64_t kLatentProbe = 0x09;
}  // namespace stream

}  // namespace cldm

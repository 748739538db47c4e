#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tpgan/tensor.hpp"

namespace tpgan {

// Counter-free deterministic generator (xoshiro256++). All distributions are
// implemented explicitly so sequences are identical across platforms and can
// be resumed bit-exactly from a serialized state.
class SubStream {
 public:
  SubStream() : SubStream(0) {}
  explicit SubStream(uint64_t seed) {
    uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform() { return (double)(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n) by rejection (unbiased).
  Index uniform_index(Index n) {
    if (n <= 0) throw std::invalid_argument("uniform_index: n must be positive");
    const uint64_t un = (uint64_t)n;
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return (Index)(x % un);
  }

  // Box-Muller; consumes two uniforms per draw, no cached state.
  double normal() {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Marsaglia-Tsang, with the U^(1/k) boost for shape < 1.
  double gamma(double k) {
    if (!(k > 0)) throw std::invalid_argument("gamma: shape must be positive");
    if (k < 1.0) {
      const double u = 1.0 - uniform();  // (0, 1]
      return gamma(k + 1.0) * std::pow(u, 1.0 / k);
    }
    const double d = k - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = 1.0 - uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
  }

  double beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    return x / (x + y);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (Index i = (Index)v.size() - 1; i > 0; --i) {
      const Index j = uniform_index(i + 1);
      std::swap(v[(size_t)i], v[(size_t)j]);
    }
  }

  template <typename S>
  void fill_normal(TensorT<S>& t, double mean = 0.0, double stddev = 1.0) {
    for (Index i = 0; i < t.numel(); ++i) t[i] = (S)normal(mean, stddev);
  }
  template <typename S>
  void fill_uniform(TensorT<S>& t, double lo = 0.0, double hi = 1.0) {
    for (Index i = 0; i < t.numel(); ++i) t[i] = (S)uniform(lo, hi);
  }

  std::array<uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<uint64_t, 4>& s) { s_ = s; }

  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::array<uint64_t, 4> s_{};
};

// Master seed plus independently seeded named substreams. Substreams are
// created lazily; the canonical names used by the trainer are "noise",
// "mixup", "data-shuffle" and "init". Each substream is single-owner: one
// consumer at a time.
class RandomStream {
 public:
  explicit RandomStream(uint64_t seed = 0) : seed_(seed) {}

  uint64_t seed() const { return seed_; }

  SubStream& stream(const std::string& name) {
    auto it = streams_.find(name);
    if (it == streams_.end())
      it = streams_.emplace(name, SubStream(seed_ ^ fnv1a(name))).first;
    return it->second;
  }

  bool has_stream(const std::string& name) const { return streams_.count(name) > 0; }

  // Deterministic order (std::map) for serialization.
  const std::map<std::string, SubStream>& streams() const { return streams_; }
  std::map<std::string, SubStream>& streams() { return streams_; }

  static uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

 private:
  uint64_t seed_ = 0;
  std::map<std::string, SubStream> streams_;
};

}  // namespace tpgan

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "edgepop/common.hpp"

namespace edgepop {

// Splittable PRNG. A stream is identified by (seed, path); forking with a
// label derives a child key by hashing the label into the parent key, so the
// value sequence of "layer3/weights" does not depend on how many siblings
// were forked before it. The generator itself is xoshiro256++ seeded through
// splitmix64. All sampling is done from explicit bit manipulation (never
// std::*_distribution) so sequences are identical across platforms.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) : key_(mix64(seed ^ 0x6a09e667f3bcc908ull)) {
    path_ = "root";
    init_state();
  }

  RngStream fork(std::string_view label) const {
    RngStream child;
    child.key_ = mix64(key_ ^ fnv1a64(label));
    child.path_ = path_ + "/" + std::string(label);
    child.init_state();
    return child;
  }

  const std::string& path() const { return path_; }

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

  // [0, 1)
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller on explicit uniforms; the spare value is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  bool bernoulli(double p) { return uniform() < p; }

  // Unbiased integer in [0, n) by rejection.
  uint64_t next_below(uint64_t n) {
    if (n == 0) throw ParamError("next_below(0)");
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  template <typename Int>
  void shuffle(std::vector<Int>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(next_below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  RngStream() = default;

  void init_state() {
    uint64_t z = key_;
    for (auto& w : s_) {
      z = mix64(z + 0x9e3779b97f4a7c15ull);
      w = z;
    }
    has_spare_ = false;
  }

  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  uint64_t key_ = 0;
  uint64_t s_[4] = {};
  std::string path_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace edgepop

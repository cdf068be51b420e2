// Counter-based random number generation (Philox4x32-10).
//
// Every consumer receives an explicit RngStream derived from a master seed
// and a stream label, so draws are reproducible regardless of evaluation
// order and streams with distinct labels are statistically independent.
// Sub-streams for (cluster, purpose) pairs are derived by extending the
// label, e.g. stream("cluster", 3).
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ulab/common.hpp"

namespace ulab {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001B3ull;
  }
  return h;
}

struct PhiloxBlock {
  std::uint32_t v[4];
};

// Philox4x32-10 (Salmon et al.); counter = (ctr_lo, ctr_hi, stream_lo, stream_hi).
inline PhiloxBlock philox4x32(std::uint64_t counter, std::uint64_t stream,
                              std::uint32_t key0, std::uint32_t key1) {
  std::uint32_t c0 = static_cast<std::uint32_t>(counter);
  std::uint32_t c1 = static_cast<std::uint32_t>(counter >> 32);
  std::uint32_t c2 = static_cast<std::uint32_t>(stream);
  std::uint32_t c3 = static_cast<std::uint32_t>(stream >> 32);
  std::uint32_t k0 = key0, k1 = key1;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = 0xD2511F53ull * c0;
    const std::uint64_t p1 = 0xCD9E8D57ull * c2;
    const std::uint32_t hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const std::uint32_t lo0 = static_cast<std::uint32_t>(p0);
    const std::uint32_t hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const std::uint32_t lo1 = static_cast<std::uint32_t>(p1);
    const std::uint32_t n0 = hi1 ^ c1 ^ k0;
    const std::uint32_t n1 = lo1;
    const std::uint32_t n2 = hi0 ^ c3 ^ k1;
    const std::uint32_t n3 = lo0;
    c0 = n0; c1 = n1; c2 = n2; c3 = n3;
    k0 += 0x9E3779B9u;
    k1 += 0xBB67AE85u;
  }
  return PhiloxBlock{{c0, c1, c2, c3}};
}

}  // namespace detail

class RngStream {
 public:
  RngStream(std::uint64_t master_seed, std::uint64_t stream_id)
      : stream_(stream_id), counter_(0), buf_pos_(2), have_cached_normal_(false), cached_normal_(0.0) {
    const std::uint64_t k = detail::splitmix64(master_seed);
    key0_ = static_cast<std::uint32_t>(k);
    key1_ = static_cast<std::uint32_t>(k >> 32);
  }

  std::uint64_t next_u64() {
    if (buf_pos_ >= 2) refill();
    return buf_[buf_pos_++];
  }

  // Uniform on the open interval (0,1); never returns 0 or 1.
  double uniform() {
    const std::uint64_t bits = next_u64() >> 11;  // 53 bits
    return (static_cast<double>(bits) + 0.5) * 0x1.0p-53;
  }

  double normal();

  // Integer in [0, n) without modulo bias for the n used here (n << 2^64).
  std::uint64_t uniform_index(std::uint64_t n);

  std::uint64_t stream_id() const { return stream_; }

 private:
  void refill() {
    const detail::PhiloxBlock b = detail::philox4x32(counter_++, stream_, key0_, key1_);
    buf_[0] = (static_cast<std::uint64_t>(b.v[0]) << 32) | b.v[1];
    buf_[1] = (static_cast<std::uint64_t>(b.v[2]) << 32) | b.v[3];
    buf_pos_ = 0;
  }

  std::uint64_t stream_;
  std::uint64_t counter_;
  std::uint32_t key0_, key1_;
  std::uint64_t buf_[2];
  int buf_pos_;
  bool have_cached_normal_;
  double cached_normal_;
};

// Master seed with named sub-streams. Labels hash through FNV-1a; integer
// suffixes extend the label ("cluster/3").
class Rng {
 public:
  explicit Rng(std::uint64_t master_seed) : seed_(master_seed) {}

  RngStream stream(const std::string& label) const {
    return RngStream(seed_, detail::splitmix64(detail::fnv1a64(label) ^ seed_));
  }
  RngStream stream(const std::string& label, std::uint64_t index) const {
    return stream(label + "/" + std::to_string(index));
  }
  RngStream stream(const std::string& label, std::uint64_t i, std::uint64_t j) const {
    return stream(label + "/" + std::to_string(i) + "/" + std::to_string(j));
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

}  // namespace ulab

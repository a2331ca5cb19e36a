#pragma once

#include <array>
#include <cstdint>
#include <limits>

namespace dvlab {

/// SplitMix64 finalizer; used to derive stream keys.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Combines a parent key with a child id into a new stream id.
constexpr std::uint64_t stream_id(std::uint64_t parent, std::uint64_t child) {
  return mix64(parent ^ mix64(child + 0x632BE59BD9B4E019ULL));
}

/// Philox4x32-10 counter-based generator.
///
/// A stream is identified by (seed, stream); its key is hash(seed, stream),
/// so replicas and evaluation states get independent substreams whose
/// output does not depend on how work is scheduled across threads.
/// Satisfies std::uniform_random_bit_generator.
class Philox {
 public:
  using result_type = std::uint64_t;

  Philox(std::uint64_t seed, std::uint64_t stream) {
    const std::uint64_t key = stream_id(seed, stream);
    key_ = {static_cast<std::uint32_t>(key), static_cast<std::uint32_t>(key >> 32)};
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    if (buffered_ == 0) refill();
    --buffered_;
    const auto& b = block_;
    return buffered_ == 1
               ? (static_cast<std::uint64_t>(b[1]) << 32) | b[0]
               : (static_cast<std::uint64_t>(b[3]) << 32) | b[2];
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

  /// Uniform double in the open interval (0, 1).
  double uniform_open() {
    return (static_cast<double>((*this)() >> 11) + 0.5) * 0x1.0p-53;
  }

  std::uint64_t blocks_used() const { return counter_; }

  /// One Philox4x32-10 block: bijection of the counter under the key.
  static std::array<std::uint32_t, 4> generate(std::array<std::uint32_t, 4> c,
                                               std::array<std::uint32_t, 2> k) {
    for (int r = 0; r < 10; ++r) {
      round(c, k);
      k[0] += 0x9E3779B9u;
      k[1] += 0xBB67AE85u;
    }
    return c;
  }

 private:
  static void round(std::array<std::uint32_t, 4>& c, const std::array<std::uint32_t, 2>& k) {
    constexpr std::uint64_t kM0 = 0xD2511F53;
    constexpr std::uint64_t kM1 = 0xCD9E8D57;
    const std::uint64_t p0 = kM0 * c[0];
    const std::uint64_t p1 = kM1 * c[2];
    c = {static_cast<std::uint32_t>(p1 >> 32) ^ c[1] ^ k[0], static_cast<std::uint32_t>(p1),
         static_cast<std::uint32_t>(p0 >> 32) ^ c[3] ^ k[1], static_cast<std::uint32_t>(p0)};
  }

  void refill() {
    block_ = generate({static_cast<std::uint32_t>(counter_),
                       static_cast<std::uint32_t>(counter_ >> 32), 0u, 0u},
                      key_);
    ++counter_;
    buffered_ = 2;
  }

  std::array<std::uint32_t, 2> key_{};
  std::array<std::uint32_t, 4> block_{};
  std::uint64_t counter_ = 0;
  int buffered_ = 0;
};

using Rng = Philox;

}  // namespace dvlab

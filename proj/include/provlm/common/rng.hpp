#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace provlm {

/// SplitMix64 (Steele, Lea, Flood 2014). Used only to expand a 64-bit seed
/// into xoshiro256** state.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next();

 private:
  std::uint64_t state_;
};

/// xoshiro256** 1.0 (Blackman, Vigna). The state is four 64-bit words seeded
/// from four consecutive SplitMix64 outputs, so a (seed) fully determines the
/// stream on every platform.
class Xoshiro256 {
 public:
  using State = std::array<std::uint64_t, 4>;

  explicit Xoshiro256(std::uint64_t seed);
  static Xoshiro256 from_state(const State& s);

  std::uint64_t next();

  /// Unbiased integer in [0, bound) by rejecting draws below 2^64 mod bound.
  std::uint64_t bounded(std::uint64_t bound);

  /// Uniform double in [0, 1) from the top 53 bits.
  double uniform();

  /// Standard normal via Box-Muller (both variates consumed pairwise).
  double normal();

  const State& state() const { return s_; }

  std::vector<std::uint8_t> serialize() const;
  static Xoshiro256 deserialize(const std::vector<std::uint8_t>& bytes);

 private:
  Xoshiro256() = default;
  State s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// Derive an independent stream seed from a base seed and a label.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

}  // namespace provlm

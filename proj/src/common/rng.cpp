#include "provlm/common/rng.hpp"

#include <cmath>
#include <cstring>
#include <numbers>
#include <stdexcept>

namespace provlm {

namespace {
constexpr std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
}  // namespace

std::uint64_t SplitMix64::next() {
  state_ += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = state_;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Xoshiro256::Xoshiro256(std::uint64_t seed) {
  SplitMix64 sm(seed);
  for (auto& w : s_) w = sm.next();
}

Xoshiro256 Xoshiro256::from_state(const State& s) {
  Xoshiro256 r;
  r.s_ = s;
  return r;
}

std::uint64_t Xoshiro256::next() {
  const std::uint64_t result = rotl(s_[1] * 5, 7) * 9;
  const std::uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

std::uint64_t Xoshiro256::bounded(std::uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("bounded: bound must be positive");
  const std::uint64_t threshold = (0 - bound) % bound;
  for (;;) {
    const std::uint64_t r = next();
    if (r >= threshold) return r % bound;
  }
}

double Xoshiro256::uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

double Xoshiro256::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

std::vector<std::uint8_t> Xoshiro256::serialize() const {
  std::vector<std::uint8_t> out;
  out.reserve(41);
  for (std::uint64_t w : s_)
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(w >> (8 * b)));
  out.push_back(has_spare_ ? 1 : 0);
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(spare_));
  std::memcpy(&bits, &spare_, sizeof bits);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
  return out;
}

Xoshiro256 Xoshiro256::deserialize(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() != 41) throw std::invalid_argument("rng state must be 41 bytes");
  Xoshiro256 r;
  for (int i = 0; i < 4; ++i) {
    std::uint64_t w = 0;
    for (int b = 0; b < 8; ++b) w |= static_cast<std::uint64_t>(bytes[8 * i + b]) << (8 * b);
    r.s_[i] = w;
  }
  r.has_spare_ = bytes[32] != 0;
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[33 + b]) << (8 * b);
  std::memcpy(&r.spare_, &bits, sizeof bits);
  return r;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) {
  SplitMix64 sm(base ^ (stream * 0xD1B54A32D192ED03ULL));
  return sm.next();
}

}  // namespace provlm

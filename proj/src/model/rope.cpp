#include "provlm/model/rope.hpp"

#include <cmath>

#include "provlm/common/error.hpp"

namespace provlm::model {

std::vector<double> rope_inverse_frequencies(std::size_t head_dim, double fraction, double theta) {
  const double rot = fraction * static_cast<double>(head_dim);
  const auto rot_dims = static_cast<std::size_t>(std::llround(rot));
  if (std::abs(rot - static_cast<double>(rot_dims)) > 1e-9 || rot_dims % 2 != 0 || rot_dims == 0)
    throw ConfigError("fraction * head_dim must be a positive even integer");
  std::vector<double> inv(rot_dims / 2);
  for (std::size_t j = 0; j < inv.size(); ++j)
    inv[j] = std::pow(theta, -2.0 * static_cast<double>(j) / static_cast<double>(rot_dims));
  return inv;
}

RopeTable::RopeTable(std::size_t head_dim, double fraction, double theta, std::size_t max_positions)
    : head_dim_(head_dim), max_positions_(max_positions), inv_freq_(rope_inverse_frequencies(head_dim, fraction, theta)) {
  cos_.resize(max_positions * inv_freq_.size());
  sin_.resize(max_positions * inv_freq_.size());
  for (std::size_t p = 0; p < max_positions; ++p) {
    for (std::size_t j = 0; j < inv_freq_.size(); ++j) {
      const double angle = static_cast<double>(p) * inv_freq_[j];
      cos_[p * inv_freq_.size() + j] = std::cos(angle);
      sin_[p * inv_freq_.size() + j] = std::sin(angle);
    }
  }
}

}  // namespace provlm::model

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace provlm::model {

/// inv_freq[j] = theta^(-2j / rotary_dims) for j in [0, rotary_dims / 2),
/// where rotary_dims = fraction * head_dim. Always double precision.
std::vector<double> rope_inverse_frequencies(std::size_t head_dim, double fraction, double theta = 10000.0);

/// Precomputed cos/sin of pos * inv_freq[j] in double. Pairs are adjacent
/// dims (2j, 2j+1) of each head; dims at or beyond rotary_dims pass through.
class RopeTable {
 public:
  RopeTable(std::size_t head_dim, double fraction, double theta, std::size_t max_positions);

  std::size_t head_dim() const { return head_dim_; }
  std::size_t rotary_dims() const { return 2 * inv_freq_.size(); }
  std::size_t max_positions() const { return max_positions_; }
  const std::vector<double>& inverse_frequencies() const { return inv_freq_; }

  double cos(std::size_t pos, std::size_t pair) const { return cos_[pos * inv_freq_.size() + pair]; }
  double sin(std::size_t pos, std::size_t pair) const { return sin_[pos * inv_freq_.size() + pair]; }

  /// Rotates one head vector in place; `inverse` applies the transpose.
  template <class T>
  void apply(std::span<T> head, std::size_t pos, bool inverse = false) const {
    const std::size_t pairs = inv_freq_.size();
    for (std::size_t j = 0; j < pairs; ++j) {
      const double c = cos(pos, j);
      const double s = inverse ? -sin(pos, j) : sin(pos, j);
      const double x = head[2 * j];
      const double y = head[2 * j + 1];
      head[2 * j] = static_cast<T>(x * c - y * s);
      head[2 * j + 1] = static_cast<T>(x * s + y * c);
    }
  }

 private:
  std::size_t head_dim_;
  std::size_t max_positions_;
  std::vector<double> inv_freq_;
  std::vector<double> cos_, sin_;
};

/// Rotates every head of every row of `x` ([rows, n_heads * head_dim]);
/// row r sits at position positions[r].
template <class T>
void apply_rope(Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& x,
                std::span<const std::size_t> positions, const RopeTable& table, bool inverse = false) {
  const std::size_t d = table.head_dim();
  const std::size_t heads = static_cast<std::size_t>(x.cols()) / d;
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    T* row = x.data() + r * x.cols();
    for (std::size_t h = 0; h < heads; ++h) table.apply(std::span<T>(row + h * d, d), positions[r], inverse);
  }
}

}  // namespace provlm::model

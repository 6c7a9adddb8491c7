#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "provlm/trainer/plan.hpp"

namespace provlm::trainer {

/// AdamW moments, laid out like the flat parameter buffer.
template <class T>
struct OptimizerState {
  std::vector<T> m;
  std::vector<T> v;
  std::uint64_t t = 0;

  static OptimizerState zeros(std::size_t n) { return {std::vector<T>(n), std::vector<T>(n), 0}; }
  bool operator==(const OptimizerState&) const = default;
};

struct ClipResult {
  double pre_clip_norm = 0.0;
  bool clipped = false;
  bool finite = true;
};

/// Global L2 norm over all gradients (accumulated in double, index order).
/// When it exceeds clip_norm every gradient is scaled by clip_norm / norm.
/// A non-finite norm leaves the gradients untouched and sets finite = false.
template <class T>
ClipResult clip_gradients(std::span<T> grads, double clip_norm);

template <class T>
double global_norm(std::span<const T> grads);

/// One decoupled-weight-decay Adam update:
///   m <- b1 m + (1-b1) g;  v <- b2 v + (1-b2) g^2;  t <- t+1
///   p <- p - lr (m_hat / (sqrt(v_hat) + eps) + wd p)
/// Throws NumericalError, leaving everything unchanged, if any gradient is
/// non-finite.
template <class T>
void adamw_step(std::span<T> params, std::span<const T> grads, OptimizerState<T>& state, double lr,
                const TrainPlan& plan);

}  // namespace provlm::trainer

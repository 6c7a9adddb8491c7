#include "provlm/trainer/optimizer.hpp"

#include <cmath>

#include "provlm/common/error.hpp"

namespace provlm::trainer {

template <class T>
double global_norm(std::span<const T> grads) {
  double ss = 0.0;
  for (T g : grads) ss += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(ss);
}

template <class T>
ClipResult clip_gradients(std::span<T> grads, double clip_norm) {
  if (!(clip_norm > 0.0)) throw std::invalid_argument("clip_norm must be positive");
  ClipResult r;
  r.pre_clip_norm = global_norm(std::span<const T>(grads));
  if (!std::isfinite(r.pre_clip_norm)) {
    r.finite = false;
    return r;
  }
  if (r.pre_clip_norm > clip_norm) {
    const double s = clip_norm / r.pre_clip_norm;
    for (T& g : grads) g = static_cast<T>(g * s);
    r.clipped = true;
  }
  return r;
}

template <class T>
void adamw_step(std::span<T> params, std::span<const T> grads, OptimizerState<T>& state, double lr,
                const TrainPlan& plan) {
  if (params.size() != grads.size() || state.m.size() != params.size() || state.v.size() != params.size())
    throw std::invalid_argument("adamw_step: size mismatch");
  for (T g : grads)
    if (!std::isfinite(static_cast<double>(g))) throw NumericalError("adamw_step: non-finite gradient");

  const std::uint64_t t = state.t + 1;
  const double b1 = plan.beta1, b2 = plan.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i];
    const double m = b1 * state.m[i] + (1.0 - b1) * g;
    const double v = b2 * state.v[i] + (1.0 - b2) * g * g;
    state.m[i] = static_cast<T>(m);
    state.v[i] = static_cast<T>(v);
    const double update = (m / c1) / (std::sqrt(v / c2) + plan.eps) + plan.weight_decay * params[i];
    params[i] = static_cast<T>(params[i] - lr * update);
  }
  state.t = t;
}

template double global_norm<float>(std::span<const float>);
template double global_norm<double>(std::span<const double>);
template ClipResult clip_gradients<float>(std::span<float>, double);
template ClipResult clip_gradients<double>(std::span<double>, double);
template void adamw_step<float>(std::span<float>, std::span<const float>, OptimizerState<float>&, double,
                                const TrainPlan&);
template void adamw_step<double>(std::span<double>, std::span<const double>, OptimizerState<double>&, double,
                                 const TrainPlan&);

}  // namespace provlm::trainer

#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "provlm/model/config.hpp"

namespace provlm::model {

enum class DType : std::uint8_t { u8 = 0, f64 = 1, f32 = 2, bf16 = 3, u64 = 4 };

std::string to_string(DType d);

template <class T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }

inline constexpr std::size_t kAbsent = std::numeric_limits<std::size_t>::max();

enum class InitKind { normal, ones, zeros };

struct TensorSpec {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
  InitKind init = InitKind::normal;
};

struct LayerOffsets {
  std::size_t attn_norm_w = kAbsent, attn_norm_b = kAbsent;
  std::size_t wq = kAbsent, wk = kAbsent, wv = kAbsent, wo = kAbsent;
  std::size_t mlp_norm_w = kAbsent, mlp_norm_b = kAbsent;
  std::size_t w_gate = kAbsent, w_up = kAbsent, w_down = kAbsent;
};

/// Flat storage layout: every tensor is a contiguous row-major slice of one
/// buffer, so optimizer state and gradients share the same indexing.
struct ParameterLayout {
  std::vector<TensorSpec> tensors;
  std::size_t embedding = kAbsent;  // [vocab, hidden]
  std::vector<LayerOffsets> layers;
  std::size_t final_norm_w = kAbsent, final_norm_b = kAbsent;
  std::size_t head = kAbsent;  // [vocab, hidden]; aliases embedding when tied
  std::size_t total = 0;

  const TensorSpec& find(const std::string& name) const;
};

ParameterLayout make_layout(const ModelConfig& config);

/// Initialization std of matrices other than the output head.
inline constexpr double kInitStd = 0.02;

/// Output-head std: kInitStd / sqrt(hidden_size), so an untrained model
/// predicts a near-uniform next-token distribution.
double head_init_std(const ModelConfig& config);

template <class T>
struct ParameterSet {
  ModelConfig config;
  std::vector<T> values;

  std::span<T> tensor(const TensorSpec& t) { return std::span(values).subspan(t.offset, t.size); }
  std::span<const T> tensor(const TensorSpec& t) const { return std::span(values).subspan(t.offset, t.size); }
};

/// Tensors are initialized in layout order from one xoshiro256** stream:
/// norm gains 1, norm biases 0, matrices N(0, 0.02) except the output head
/// (see head_init_std). Draws are made in double then narrowed.
template <class T>
ParameterSet<T> init_parameters(const ModelConfig& config, std::uint64_t seed);

template <class To, class From>
ParameterSet<To> convert(const ParameterSet<From>& p) {
  ParameterSet<To> out{p.config, std::vector<To>(p.values.begin(), p.values.end())};
  return out;
}

}  // namespace provlm::model

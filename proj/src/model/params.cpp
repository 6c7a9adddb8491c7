#include "provlm/model/params.hpp"

#include <cmath>

#include "provlm/common/error.hpp"
#include "provlm/common/rng.hpp"

namespace provlm::model {

std::string to_string(DType d) {
  switch (d) {
    case DType::u8: return "u8";
    case DType::f64: return "f64";
    case DType::f32: return "f32";
    case DType::bf16: return "bf16";
    case DType::u64: return "u64";
  }
  return "?";
}

const TensorSpec& ParameterLayout::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t;
  throw ConfigError("no tensor named '" + name + "'");
}

ParameterLayout make_layout(const ModelConfig& c) {
  c.validate();
  ParameterLayout layout;
  const std::size_t h = c.hidden_size, i = c.intermediate_size, v = c.vocab_size;
  const bool ln = c.norm_kind == NormKind::layernorm;

  auto add = [&](std::string name, std::vector<std::size_t> shape, InitKind init) {
    TensorSpec t;
    t.name = std::move(name);
    t.size = 1;
    for (auto d : shape) t.size *= d;
    t.shape = std::move(shape);
    t.offset = layout.total;
    t.init = init;
    layout.total += t.size;
    layout.tensors.push_back(t);
    return t.offset;
  };

  layout.embedding = add("tok_embeddings", {v, h}, InitKind::normal);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    LayerOffsets o;
    o.attn_norm_w = add(p + "attn_norm.weight", {h}, InitKind::ones);
    if (ln) o.attn_norm_b = add(p + "attn_norm.bias", {h}, InitKind::zeros);
    o.wq = add(p + "attn.wq", {h, h}, InitKind::normal);
    o.wk = add(p + "attn.wk", {h, h}, InitKind::normal);
    o.wv = add(p + "attn.wv", {h, h}, InitKind::normal);
    o.wo = add(p + "attn.wo", {h, h}, InitKind::normal);
    o.mlp_norm_w = add(p + "mlp_norm.weight", {h}, InitKind::ones);
    if (ln) o.mlp_norm_b = add(p + "mlp_norm.bias", {h}, InitKind::zeros);
    o.w_gate = add(p + "mlp.w_gate", {i, h}, InitKind::normal);
    o.w_up = add(p + "mlp.w_up", {i, h}, InitKind::normal);
    o.w_down = add(p + "mlp.w_down", {h, i}, InitKind::normal);
    layout.layers.push_back(o);
  }
  layout.final_norm_w = add("final_norm.weight", {h}, InitKind::ones);
  if (ln) layout.final_norm_b = add("final_norm.bias", {h}, InitKind::zeros);
  layout.head = c.tie_embeddings ? layout.embedding : add("lm_head", {v, h}, InitKind::normal);
  return layout;
}

double head_init_std(const ModelConfig& config) {
  return kInitStd / std::sqrt(static_cast<double>(config.hidden_size));
}

template <class T>
ParameterSet<T> init_parameters(const ModelConfig& config, std::uint64_t seed) {
  const ParameterLayout layout = make_layout(config);
  ParameterSet<T> p{config, std::vector<T>(layout.total)};
  Xoshiro256 rng(seed);
  for (const auto& t : layout.tensors) {
    auto span = p.tensor(t);
    switch (t.init) {
      case InitKind::ones: std::fill(span.begin(), span.end(), T(1)); break;
      case InitKind::zeros: std::fill(span.begin(), span.end(), T(0)); break;
      case InitKind::normal: {
        const double std = t.name == "lm_head" ? head_init_std(config) : kInitStd;
        for (auto& x : span) x = static_cast<T>(std * rng.normal());
        break;
      }
    }
  }
  return p;
}

template ParameterSet<float> init_parameters<float>(const ModelConfig&, std::uint64_t);
template ParameterSet<double> init_parameters<double>(const ModelConfig&, std::uint64_t);

}  // namespace provlm::model

#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

namespace provlm::model {

enum class NormKind { rmsnorm, layernorm };

std::string to_string(NormKind k);
NormKind parse_norm_kind(const std::string& s);

struct ModelConfig {
  std::size_t hidden_size = 128;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t intermediate_size = 344;
  std::size_t vocab_size = 258;
  std::size_t max_seq_len = 64;
  NormKind norm_kind = NormKind::rmsnorm;
  double norm_eps = 1e-6;
  double rope_fraction = 1.0;  // share of each head's dims that are rotated
  double rope_theta = 10000.0;
  bool tie_embeddings = false;
  bool use_mup = false;  // reserved; no parameterization is implemented

  std::size_t head_dim() const { return hidden_size / n_heads; }
  std::size_t rotary_dims() const;

  /// Throws ConfigError describing the first violated invariant.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

/// The 7B LLaMA-style shape used for Amber.
ModelConfig amber_7b_config();

/// CrystalCoder-style variant: LayerNorm and RoPE on a quarter of each head.
ModelConfig crystal_coder_config();

/// Desk-scale config: hidden 128, 2 layers, 4 heads, intermediate 344, byte vocab.
ModelConfig toy_config();

/// Closed-form parameter count.
std::uint64_t parameter_count(const ModelConfig& c);

nlohmann::ordered_json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace provlm::model

#include "provlm/model/config.hpp"

#include <cmath>

#include "provlm/common/error.hpp"

namespace provlm::model {

std::string to_string(NormKind k) { return k == NormKind::rmsnorm ? "rmsnorm" : "layernorm"; }

NormKind parse_norm_kind(const std::string& s) {
  if (s == "rmsnorm") return NormKind::rmsnorm;
  if (s == "layernorm") return NormKind::layernorm;
  throw ConfigError("norm_kind must be 'rmsnorm' or 'layernorm', got '" + s + "'");
}

std::size_t ModelConfig::rotary_dims() const {
  return static_cast<std::size_t>(std::llround(rope_fraction * static_cast<double>(head_dim())));
}

void ModelConfig::validate() const {
  if (hidden_size == 0 || n_layers == 0 || n_heads == 0 || intermediate_size == 0 || vocab_size == 0 ||
      max_seq_len == 0)
    throw ConfigError("model dimensions must be positive");
  if (hidden_size % n_heads != 0) throw ConfigError("hidden_size must be divisible by n_heads");
  if (!(rope_fraction > 0.0 && rope_fraction <= 1.0)) throw ConfigError("rope_fraction must lie in (0, 1]");
  const double rot = rope_fraction * static_cast<double>(head_dim());
  if (std::abs(rot - std::round(rot)) > 1e-9 || static_cast<long long>(std::llround(rot)) % 2 != 0)
    throw ConfigError("rope_fraction * head_dim must be an even integer");
  if (!(norm_eps > 0.0)) throw ConfigError("norm_eps must be positive");
  if (!(rope_theta > 0.0)) throw ConfigError("rope_theta must be positive");
  if (use_mup) throw ConfigError("use_mup is reserved and not supported");
}

ModelConfig amber_7b_config() {
  ModelConfig c;
  c.hidden_size = 4096;
  c.n_layers = 32;
  c.n_heads = 32;
  c.intermediate_size = 11008;
  c.vocab_size = 32000;
  c.max_seq_len = 2048;
  c.norm_kind = NormKind::rmsnorm;
  c.norm_eps = 1e-6;
  c.rope_fraction = 1.0;
  return c;
}

ModelConfig crystal_coder_config() {
  ModelConfig c = amber_7b_config();
  c.vocab_size = 32032;  // embedding table padded past the 32000-token vocabulary
  c.norm_kind = NormKind::layernorm;
  c.rope_fraction = 0.25;
  return c;
}

ModelConfig toy_config() { return ModelConfig{}; }

std::uint64_t parameter_count(const ModelConfig& c) {
  const std::uint64_t h = c.hidden_size, i = c.intermediate_size, v = c.vocab_size, l = c.n_layers;
  const std::uint64_t norm = c.norm_kind == NormKind::layernorm ? 2 * h : h;
  const std::uint64_t per_layer = 4 * h * h + 3 * h * i + 2 * norm;
  const std::uint64_t head = c.tie_embeddings ? 0 : v * h;
  return v * h + l * per_layer + norm + head;
}

nlohmann::ordered_json to_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["hidden_size"] = c.hidden_size;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["intermediate_size"] = c.intermediate_size;
  j["vocab_size"] = c.vocab_size;
  j["max_seq_len"] = c.max_seq_len;
  j["norm_kind"] = to_string(c.norm_kind);
  j["norm_eps"] = c.norm_eps;
  j["rope_fraction"] = c.rope_fraction;
  j["rope_theta"] = c.rope_theta;
  j["tie_embeddings"] = c.tie_embeddings;
  j["use_mup"] = c.use_mup;
  return j;
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.hidden_size = j.value("hidden_size", c.hidden_size);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.intermediate_size = j.value("intermediate_size", c.intermediate_size);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    if (j.contains("norm_kind")) c.norm_kind = parse_norm_kind(j.at("norm_kind").get<std::string>());
    c.norm_eps = j.value("norm_eps", c.norm_eps);
    c.rope_fraction = j.value("rope_fraction", c.rope_fraction);
    c.rope_theta = j.value("rope_theta", c.rope_theta);
    c.tie_embeddings = j.value("tie_embeddings", c.tie_embeddings);
    c.use_mup = j.value("use_mup", c.use_mup);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  return c;
}

}  // namespace provlm::model

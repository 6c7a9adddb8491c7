#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "provlm/corpus/tokenizer.hpp"
#include "provlm/model/config.hpp"
#include "provlm/model/params.hpp"
#include "provlm/model/rope.hpp"

namespace provlm::model {

using corpus::TokenId;

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <class T>
struct NormCache {
  Mat<T> input;
  Mat<T> output;
  Vec<T> rstd;
  Vec<T> mean;  // layernorm only
};

template <class T>
struct LayerCache {
  NormCache<T> attn_norm;
  Mat<T> q, k, v;              // q and k after rotation
  std::vector<Mat<T>> probs;   // [batch * n_heads] causal softmax, seq x seq
  Mat<T> attn;                 // concatenated head outputs
  NormCache<T> mlp_norm;
  Mat<T> gate, up, act;        // act = silu(gate) * up
};

/// Activations retained by forward() for backward().
template <class T>
struct ForwardCache {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<TokenId> tokens;
  std::vector<LayerCache<T>> layers;
  NormCache<T> final_norm;
};

/// Pre-norm decoder-only transformer: norm -> causal MHA with RoPE on q/k ->
/// residual; norm -> SiLU-gated MLP -> residual; final norm; output head.
/// Stateless apart from the config and RoPE table; parameters are passed in.
template <class T>
class Transformer {
 public:
  explicit Transformer(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  const ParameterLayout& layout() const { return layout_; }
  const RopeTable& rope() const { return rope_; }

  /// tokens holds `batch` rows of equal length, row-major. Returns logits of
  /// shape [batch * seq, vocab]. Throws std::out_of_range on a token id
  /// outside the vocabulary and std::invalid_argument on an overlong row.
  Mat<T> forward(std::span<const T> params, std::span<const TokenId> tokens, std::size_t batch,
                 ForwardCache<T>* cache = nullptr) const;

  /// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(logits).
  void backward(std::span<const T> params, const ForwardCache<T>& cache, const Mat<T>& dlogits,
                std::span<T> grads) const;

  // Building blocks shared with the incremental decoder.
  void norm_forward(std::span<const T> params, std::size_t w, std::size_t b, const Mat<T>& x,
                    NormCache<T>& out) const;
  void norm_backward(std::span<const T> params, std::size_t w, std::size_t b, const NormCache<T>& c,
                     const Mat<T>& dy, Mat<T>& dx, std::span<T> grads) const;
  Mat<T> embed(std::span<const T> params, std::span<const TokenId> tokens) const;

 private:
  void check_tokens(std::span<const TokenId> tokens) const;

  ModelConfig config_;
  ParameterLayout layout_;
  RopeTable rope_;
};

extern template class Transformer<float>;
extern template class Transformer<double>;

}  // namespace provlm::model

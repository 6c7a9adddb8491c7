#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "provlm/model/transformer.hpp"

namespace provlm::model {

struct LossResult {
  double mean_nll = 0.0;
  std::size_t count = 0;
};

/// Mean of -log softmax(logits)[target] over rows with keep[r] != 0.
/// Throws std::invalid_argument when every row is masked.
template <class T>
LossResult cross_entropy_loss(const Mat<T>& logits, std::span<const TokenId> targets,
                              std::span<const std::uint8_t> keep);

/// Same, with the mask derived from targets (pad targets are dropped).
template <class T>
LossResult cross_entropy_loss(const Mat<T>& logits, std::span<const TokenId> targets);

/// Returns the summed NLL over kept rows and writes
/// dlogits = scale * (softmax - onehot) on kept rows, zero elsewhere.
template <class T>
double cross_entropy_backward(const Mat<T>& logits, std::span<const TokenId> targets,
                              std::span<const std::uint8_t> keep, double scale, Mat<T>& dlogits);

std::vector<std::uint8_t> pad_keep_mask(std::span<const TokenId> targets);

/// Next-token batch built from fixed-length windows: inputs are tokens
/// [0, L-1) and targets [1, L) of each window.
struct Batch {
  std::size_t rows = 0;
  std::size_t seq = 0;
  std::vector<TokenId> inputs;
  std::vector<TokenId> targets;
  std::vector<std::uint8_t> keep;

  std::size_t counted_tokens() const;
};

Batch make_batch(std::span<const std::span<const TokenId>> windows);

/// Forward + backward over one batch. `grads` must be zeroed by the caller;
/// gradients of (summed NLL / normalizer) are accumulated into it, where a
/// zero normalizer means the batch's own token count (the mean loss).
template <class T>
LossResult loss_and_grad(const Transformer<T>& model, std::span<const T> params, const Batch& batch,
                         std::span<T> grads, std::size_t normalizer = 0);

template <class T>
LossResult batch_loss(const Transformer<T>& model, std::span<const T> params, const Batch& batch);

}  // namespace provlm::model

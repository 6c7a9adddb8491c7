#pragma once

#include <span>
#include <vector>

#include "provlm/model/transformer.hpp"

namespace provlm::model {

/// Incremental decoder with a per-layer key/value cache. All rows advance in
/// lockstep, one token per step; logits match a full forward() pass.
template <class T>
class DecodeSession {
 public:
  DecodeSession(const Transformer<T>& model, std::span<const T> params, std::size_t batch);

  /// Feeds one token per row at the current position; returns [batch, vocab].
  Mat<T> step(std::span<const TokenId> tokens);

  std::size_t position() const { return pos_; }
  std::size_t batch() const { return batch_; }

 private:
  const Transformer<T>& model_;
  std::span<const T> params_;
  std::size_t batch_;
  std::size_t capacity_;
  std::size_t pos_ = 0;
  std::vector<Mat<T>> keys_, values_;  // per layer, [batch * capacity, hidden]
};

/// Index of the largest entry; ties go to the lowest index.
template <class T>
TokenId argmax_lowest(std::span<const T> row);

/// Greedy continuation of `length` tokens after `prompt`.
template <class T>
std::vector<TokenId> generate_greedy(const Transformer<T>& model, std::span<const T> params,
                                     std::span<const TokenId> prompt, std::size_t length);

/// Batched form; every prompt must have the same length.
template <class T>
std::vector<std::vector<TokenId>> generate_greedy_batch(const Transformer<T>& model, std::span<const T> params,
                                                        const std::vector<std::vector<TokenId>>& prompts,
                                                        std::size_t length);

extern template class DecodeSession<float>;
extern template class DecodeSession<double>;

}  // namespace provlm::model

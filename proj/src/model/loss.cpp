#include "provlm/model/loss.hpp"

#include <cmath>
#include <stdexcept>

namespace provlm::model {

namespace {

template <class T>
double row_log_sum_exp(const T* row, Eigen::Index n) {
  double mx = row[0];
  for (Eigen::Index c = 1; c < n; ++c) mx = std::max(mx, static_cast<double>(row[c]));
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (Eigen::Index c = 0; c < n; ++c) s += std::exp(static_cast<double>(row[c]) - mx);
  return mx + std::log(s);
}

}  // namespace

std::vector<std::uint8_t> pad_keep_mask(std::span<const TokenId> targets) {
  std::vector<std::uint8_t> keep(targets.size());
  for (std::size_t i = 0; i < targets.size(); ++i) keep[i] = targets[i] != corpus::kPad ? 1 : 0;
  return keep;
}

template <class T>
LossResult cross_entropy_loss(const Mat<T>& logits, std::span<const TokenId> targets,
                              std::span<const std::uint8_t> keep) {
  if (static_cast<std::size_t>(logits.rows()) != targets.size() || keep.size() != targets.size())
    throw std::invalid_argument("cross_entropy_loss: shape mismatch");
  double sum = 0.0;
  std::size_t count = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    if (!keep[r]) continue;
    const T* row = logits.data() + r * logits.cols();
    sum += row_log_sum_exp(row, logits.cols()) - static_cast<double>(row[targets[r]]);
    ++count;
  }
  if (count == 0) throw std::invalid_argument("cross_entropy_loss: every position is masked");
  return {sum / static_cast<double>(count), count};
}

template <class T>
LossResult cross_entropy_loss(const Mat<T>& logits, std::span<const TokenId> targets) {
  const auto keep = pad_keep_mask(targets);
  return cross_entropy_loss(logits, targets, keep);
}

template <class T>
double cross_entropy_backward(const Mat<T>& logits, std::span<const TokenId> targets,
                              std::span<const std::uint8_t> keep, double scale, Mat<T>& dlogits) {
  dlogits.setZero(logits.rows(), logits.cols());
  double sum = 0.0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    if (!keep[r]) continue;
    const T* row = logits.data() + r * logits.cols();
    T* drow = dlogits.data() + r * logits.cols();
    const double lse = row_log_sum_exp(row, logits.cols());
    sum += lse - static_cast<double>(row[targets[r]]);
    for (Eigen::Index c = 0; c < logits.cols(); ++c)
      drow[c] = static_cast<T>(scale * std::exp(static_cast<double>(row[c]) - lse));
    drow[targets[r]] -= static_cast<T>(scale);
  }
  return sum;
}

std::size_t Batch::counted_tokens() const {
  std::size_t n = 0;
  for (auto k : keep) n += k;
  return n;
}

Batch make_batch(std::span<const std::span<const TokenId>> windows) {
  Batch b;
  if (windows.empty()) return b;
  const std::size_t len = windows.front().size();
  if (len < 2) throw std::invalid_argument("make_batch: windows need at least 2 tokens");
  b.rows = windows.size();
  b.seq = len - 1;
  b.inputs.reserve(b.rows * b.seq);
  b.targets.reserve(b.rows * b.seq);
  for (const auto& w : windows) {
    if (w.size() != len) throw std::invalid_argument("make_batch: windows differ in length");
    b.inputs.insert(b.inputs.end(), w.begin(), w.end() - 1);
    b.targets.insert(b.targets.end(), w.begin() + 1, w.end());
  }
  b.keep = pad_keep_mask(b.targets);
  return b;
}

template <class T>
LossResult loss_and_grad(const Transformer<T>& model, std::span<const T> params, const Batch& batch,
                         std::span<T> grads, std::size_t normalizer) {
  const std::size_t count = batch.counted_tokens();
  if (count == 0) throw std::invalid_argument("loss_and_grad: batch has no unmasked targets");
  ForwardCache<T> cache;
  const Mat<T> logits = model.forward(params, batch.inputs, batch.rows, &cache);
  Mat<T> dlogits;
  const double sum = cross_entropy_backward(logits, batch.targets, batch.keep,
                                            1.0 / static_cast<double>(normalizer ? normalizer : count), dlogits);
  model.backward(params, cache, dlogits, grads);
  return {sum / static_cast<double>(count), count};
}

template <class T>
LossResult batch_loss(const Transformer<T>& model, std::span<const T> params, const Batch& batch) {
  const Mat<T> logits = model.forward(params, batch.inputs, batch.rows);
  return cross_entropy_loss(logits, batch.targets, batch.keep);
}

template LossResult cross_entropy_loss<float>(const Mat<float>&, std::span<const TokenId>, std::span<const std::uint8_t>);
template LossResult cross_entropy_loss<double>(const Mat<double>&, std::span<const TokenId>, std::span<const std::uint8_t>);
template LossResult cross_entropy_loss<float>(const Mat<float>&, std::span<const TokenId>);
template LossResult cross_entropy_loss<double>(const Mat<double>&, std::span<const TokenId>);
template double cross_entropy_backward<float>(const Mat<float>&, std::span<const TokenId>, std::span<const std::uint8_t>,
                                              double, Mat<float>&);
template double cross_entropy_backward<double>(const Mat<double>&, std::span<const TokenId>,
                                               std::span<const std::uint8_t>, double, Mat<double>&);
template LossResult loss_and_grad<float>(const Transformer<float>&, std::span<const float>, const Batch&, std::span<float>,
                                         std::size_t);
template LossResult loss_and_grad<double>(const Transformer<double>&, std::span<const double>, const Batch&,
                                          std::span<double>, std::size_t);
template LossResult batch_loss<float>(const Transformer<float>&, std::span<const float>, const Batch&);
template LossResult batch_loss<double>(const Transformer<double>&, std::span<const double>, const Batch&);

}  // namespace provlm::model

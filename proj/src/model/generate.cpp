#include "provlm/model/generate.hpp"

#include <cmath>
#include <stdexcept>

namespace provlm::model {

template <class T>
DecodeSession<T>::DecodeSession(const Transformer<T>& model, std::span<const T> params, std::size_t batch)
    : model_(model), params_(params), batch_(batch), capacity_(model.config().max_seq_len) {
  const auto rows = static_cast<Eigen::Index>(batch_ * capacity_);
  const auto h = static_cast<Eigen::Index>(model.config().hidden_size);
  keys_.assign(model.config().n_layers, Mat<T>(rows, h));
  values_.assign(model.config().n_layers, Mat<T>(rows, h));
}

template <class T>
Mat<T> DecodeSession<T>::step(std::span<const TokenId> tokens) {
  if (tokens.size() != batch_) throw std::invalid_argument("DecodeSession::step: one token per row expected");
  if (pos_ >= capacity_) throw std::invalid_argument("DecodeSession::step: max_seq_len reached");
  const ModelConfig& cfg = model_.config();
  const ParameterLayout& layout = model_.layout();
  const std::size_t h = cfg.hidden_size, inter = cfg.intermediate_size, v = cfg.vocab_size;
  const std::size_t heads = cfg.n_heads, d = cfg.head_dim();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  auto w = [&](std::size_t off, std::size_t r, std::size_t c) {
    return Eigen::Map<const Mat<T>>(params_.data() + off, static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
  };

  Mat<T> x = model_.embed(params_, tokens);
  const std::vector<std::size_t> positions(batch_, pos_);
  NormCache<T> nc;
  Mat<T> attn(static_cast<Eigen::Index>(batch_), static_cast<Eigen::Index>(h));
  std::vector<double> scores(pos_ + 1);

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const LayerOffsets& o = layout.layers[l];
    model_.norm_forward(params_, o.attn_norm_w, o.attn_norm_b, x, nc);
    Mat<T> q = nc.output * w(o.wq, h, h).transpose();
    Mat<T> k = nc.output * w(o.wk, h, h).transpose();
    Mat<T> val = nc.output * w(o.wv, h, h).transpose();
    apply_rope(q, positions, model_.rope());
    apply_rope(k, positions, model_.rope());
    for (std::size_t b = 0; b < batch_; ++b) {
      keys_[l].row(static_cast<Eigen::Index>(b * capacity_ + pos_)) = k.row(static_cast<Eigen::Index>(b));
      values_[l].row(static_cast<Eigen::Index>(b * capacity_ + pos_)) = val.row(static_cast<Eigen::Index>(b));
    }
    for (std::size_t b = 0; b < batch_; ++b) {
      const std::size_t base = b * capacity_;
      for (std::size_t hd = 0; hd < heads; ++hd) {
        const T* qh = q.data() + b * h + hd * d;
        double mx = -INFINITY;
        for (std::size_t j = 0; j <= pos_; ++j) {
          const T* kh = keys_[l].data() + (base + j) * h + hd * d;
          T dot = 0;
          for (std::size_t e = 0; e < d; ++e) dot += qh[e] * kh[e];
          scores[j] = static_cast<double>(static_cast<T>(dot * static_cast<T>(scale)));
          mx = std::max(mx, scores[j]);
        }
        T sum = 0;
        std::vector<T> p(pos_ + 1);
        for (std::size_t j = 0; j <= pos_; ++j) {
          p[j] = static_cast<T>(std::exp(scores[j] - mx));
          sum += p[j];
        }
        T* out = attn.data() + b * h + hd * d;
        std::fill(out, out + d, T(0));
        for (std::size_t j = 0; j <= pos_; ++j) {
          const T pj = p[j] / sum;
          const T* vh = values_[l].data() + (base + j) * h + hd * d;
          for (std::size_t e = 0; e < d; ++e) out[e] += pj * vh[e];
        }
      }
    }
    x.noalias() += attn * w(o.wo, h, h).transpose();

    model_.norm_forward(params_, o.mlp_norm_w, o.mlp_norm_b, x, nc);
    Mat<T> gate = nc.output * w(o.w_gate, inter, h).transpose();
    Mat<T> up = nc.output * w(o.w_up, inter, h).transpose();
    for (Eigen::Index i = 0; i < gate.size(); ++i) {
      const T g = gate.data()[i];
      gate.data()[i] = g / (T(1) + std::exp(-g)) * up.data()[i];
    }
    x.noalias() += gate * w(o.w_down, h, inter).transpose();
  }
  model_.norm_forward(params_, layout.final_norm_w, layout.final_norm_b, x, nc);
  ++pos_;
  return nc.output * w(layout.head, v, h).transpose();
}

template <class T>
TokenId argmax_lowest(std::span<const T> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i)
    if (row[i] > row[best]) best = i;
  return static_cast<TokenId>(best);
}

template <class T>
std::vector<std::vector<TokenId>> generate_greedy_batch(const Transformer<T>& model, std::span<const T> params,
                                                        const std::vector<std::vector<TokenId>>& prompts,
                                                        std::size_t length) {
  std::vector<std::vector<TokenId>> out(prompts.size());
  if (prompts.empty() || length == 0) return out;
  const std::size_t k = prompts.front().size();
  if (k == 0) throw std::invalid_argument("generate_greedy: prompt must be non-empty");
  for (const auto& p : prompts)
    if (p.size() != k) throw std::invalid_argument("generate_greedy: prompts differ in length");
  if (k + length > model.config().max_seq_len)
    throw std::invalid_argument("generate_greedy: prompt + continuation exceeds max_seq_len");

  DecodeSession<T> session(model, params, prompts.size());
  std::vector<TokenId> column(prompts.size());
  Mat<T> logits;
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t b = 0; b < prompts.size(); ++b) column[b] = prompts[b][t];
    logits = session.step(column);
  }
  const auto vocab = static_cast<std::size_t>(logits.cols());
  for (std::size_t i = 0; i < length; ++i) {
    for (std::size_t b = 0; b < prompts.size(); ++b) {
      column[b] = argmax_lowest(std::span<const T>(logits.data() + b * vocab, vocab));
      out[b].push_back(column[b]);
    }
    if (i + 1 < length) logits = session.step(column);
  }
  return out;
}

template <class T>
std::vector<TokenId> generate_greedy(const Transformer<T>& model, std::span<const T> params,
                                     std::span<const TokenId> prompt, std::size_t length) {
  if (prompt.empty()) throw std::invalid_argument("generate_greedy: prompt must be non-empty");
  std::vector<std::vector<TokenId>> prompts{std::vector<TokenId>(prompt.begin(), prompt.end())};
  return generate_greedy_batch(model, params, prompts, length).front();
}

template class DecodeSession<float>;
template class DecodeSession<double>;
template TokenId argmax_lowest<float>(std::span<const float>);
template TokenId argmax_lowest<double>(std::span<const double>);
template std::vector<TokenId> generate_greedy<float>(const Transformer<float>&, std::span<const float>,
                                                     std::span<const TokenId>, std::size_t);
template std::vector<TokenId> generate_greedy<double>(const Transformer<double>&, std::span<const double>,
                                                      std::span<const TokenId>, std::size_t);
template std::vector<std::vector<TokenId>> generate_greedy_batch<float>(const Transformer<float>&,
                                                                        std::span<const float>,
                                                                        const std::vector<std::vector<TokenId>>&,
                                                                        std::size_t);
template std::vector<std::vector<TokenId>> generate_greedy_batch<double>(const Transformer<double>&,
                                                                         std::span<const double>,
                                                                         const std::vector<std::vector<TokenId>>&,
                                                                         std::size_t);

}  // namespace provlm::model

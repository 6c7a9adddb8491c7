#include "provlm/model/transformer.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace provlm::model {

namespace {

template <class T>
using CMap = Eigen::Map<const Mat<T>>;
template <class T>
using MMap = Eigen::Map<Mat<T>>;

template <class T>
CMap<T> weight(std::span<const T> p, std::size_t offset, std::size_t rows, std::size_t cols) {
  return CMap<T>(p.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <class T>
MMap<T> grad(std::span<T> g, std::size_t offset, std::size_t rows, std::size_t cols) {
  return MMap<T>(g.data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <class T>
T sigmoid(T z) {
  return T(1) / (T(1) + std::exp(-z));
}

}  // namespace

template <class T>
Transformer<T>::Transformer(ModelConfig config)
    : config_(std::move(config)),
      layout_(make_layout(config_)),
      rope_(config_.head_dim(), config_.rope_fraction, config_.rope_theta, config_.max_seq_len) {}

template <class T>
void Transformer<T>::check_tokens(std::span<const TokenId> tokens) const {
  for (TokenId t : tokens)
    if (t >= config_.vocab_size)
      throw std::out_of_range("token id " + std::to_string(t) + " outside vocabulary of " +
                              std::to_string(config_.vocab_size));
}

template <class T>
Mat<T> Transformer<T>::embed(std::span<const T> params, std::span<const TokenId> tokens) const {
  check_tokens(tokens);
  const std::size_t h = config_.hidden_size;
  Mat<T> x(static_cast<Eigen::Index>(tokens.size()), static_cast<Eigen::Index>(h));
  for (std::size_t r = 0; r < tokens.size(); ++r)
    std::copy_n(params.data() + layout_.embedding + std::size_t{tokens[r]} * h, h, x.data() + r * h);
  return x;
}

template <class T>
void Transformer<T>::norm_forward(std::span<const T> params, std::size_t w, std::size_t b, const Mat<T>& x,
                                  NormCache<T>& out) const {
  const auto rows = x.rows();
  const auto h = x.cols();
  out.input = x;
  out.output.resize(rows, h);
  out.rstd.resize(rows);
  const bool ln = config_.norm_kind == NormKind::layernorm;
  if (ln) out.mean.resize(rows);
  const T* gain = params.data() + w;
  const T* bias = ln ? params.data() + b : nullptr;
  for (Eigen::Index r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * h;
    T* yr = out.output.data() + r * h;
    double mean = 0.0;
    if (ln) {
      for (Eigen::Index c = 0; c < h; ++c) mean += xr[c];
      mean /= static_cast<double>(h);
    }
    double ss = 0.0;
    for (Eigen::Index c = 0; c < h; ++c) {
      const double d = xr[c] - mean;
      ss += d * d;
    }
    const double rstd = 1.0 / std::sqrt(ss / static_cast<double>(h) + config_.norm_eps);
    out.rstd[r] = static_cast<T>(rstd);
    if (ln) out.mean[r] = static_cast<T>(mean);
    for (Eigen::Index c = 0; c < h; ++c) {
      const double xhat = (xr[c] - mean) * rstd;
      yr[c] = static_cast<T>(xhat * gain[c] + (ln ? bias[c] : T(0)));
    }
  }
}

template <class T>
void Transformer<T>::norm_backward(std::span<const T> params, std::size_t w, std::size_t b, const NormCache<T>& c,
                                   const Mat<T>& dy, Mat<T>& dx, std::span<T> grads) const {
  const auto rows = dy.rows();
  const auto h = dy.cols();
  const bool ln = config_.norm_kind == NormKind::layernorm;
  const T* gain = params.data() + w;
  T* dgain = grads.data() + w;
  T* dbias = ln ? grads.data() + b : nullptr;
  dx.resize(rows, h);
  std::vector<double> u(static_cast<std::size_t>(h)), xhat(static_cast<std::size_t>(h));
  for (Eigen::Index r = 0; r < rows; ++r) {
    const T* xr = c.input.data() + r * h;
    const T* dyr = dy.data() + r * h;
    T* dxr = dx.data() + r * h;
    const double rstd = c.rstd[r];
    const double mean = ln ? static_cast<double>(c.mean[r]) : 0.0;
    double sum_u = 0.0, sum_ux = 0.0;
    for (Eigen::Index k = 0; k < h; ++k) {
      xhat[k] = (xr[k] - mean) * rstd;
      u[k] = static_cast<double>(dyr[k]) * gain[k];
      sum_u += u[k];
      sum_ux += u[k] * xhat[k];
      dgain[k] += static_cast<T>(dyr[k] * xhat[k]);
      if (ln) dbias[k] += dyr[k];
    }
    const double inv_h = 1.0 / static_cast<double>(h);
    for (Eigen::Index k = 0; k < h; ++k) {
      const double centered = ln ? u[k] - sum_u * inv_h : u[k];
      dxr[k] = static_cast<T>(rstd * (centered - xhat[k] * sum_ux * inv_h));
    }
  }
}

template <class T>
Mat<T> Transformer<T>::forward(std::span<const T> params, std::span<const TokenId> tokens, std::size_t batch,
                               ForwardCache<T>* cache) const {
  if (batch == 0 || tokens.size() % batch != 0) throw std::invalid_argument("token count not divisible by batch");
  const std::size_t seq = tokens.size() / batch;
  if (seq == 0) throw std::invalid_argument("empty sequence");
  if (seq > config_.max_seq_len)
    throw std::invalid_argument("sequence length " + std::to_string(seq) + " exceeds max_seq_len");
  const std::size_t h = config_.hidden_size, inter = config_.intermediate_size, v = config_.vocab_size;
  const std::size_t heads = config_.n_heads, d = config_.head_dim();
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));

  Mat<T> x = embed(params, tokens);
  std::vector<std::size_t> positions(tokens.size());
  for (std::size_t r = 0; r < positions.size(); ++r) positions[r] = r % seq;

  ForwardCache<T> local;
  ForwardCache<T>& c = cache ? *cache : local;
  c.batch = batch;
  c.seq = seq;
  c.tokens.assign(tokens.begin(), tokens.end());
  c.layers.resize(config_.n_layers);

  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const LayerOffsets& o = layout_.layers[l];
    LayerCache<T>& lc = c.layers[l];

    norm_forward(params, o.attn_norm_w, o.attn_norm_b, x, lc.attn_norm);
    const Mat<T>& n1 = lc.attn_norm.output;
    lc.q.noalias() = n1 * weight(params, o.wq, h, h).transpose();
    lc.k.noalias() = n1 * weight(params, o.wk, h, h).transpose();
    lc.v.noalias() = n1 * weight(params, o.wv, h, h).transpose();
    apply_rope(lc.q, positions, rope_);
    apply_rope(lc.k, positions, rope_);

    lc.attn.setZero(x.rows(), x.cols());
    lc.probs.resize(batch * heads);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto r0 = static_cast<Eigen::Index>(b * seq);
      const auto s = static_cast<Eigen::Index>(seq);
      for (std::size_t hd = 0; hd < heads; ++hd) {
        const auto c0 = static_cast<Eigen::Index>(hd * d);
        const auto dd = static_cast<Eigen::Index>(d);
        Mat<T>& p = lc.probs[b * heads + hd];
        p.noalias() = lc.q.block(r0, c0, s, dd) * lc.k.block(r0, c0, s, dd).transpose();
        for (Eigen::Index i = 0; i < s; ++i) {
          T mx = -std::numeric_limits<T>::infinity();
          for (Eigen::Index j = 0; j <= i; ++j) {
            p(i, j) *= scale;
            mx = std::max(mx, p(i, j));
          }
          T sum = 0;
          for (Eigen::Index j = 0; j <= i; ++j) {
            p(i, j) = std::exp(p(i, j) - mx);
            sum += p(i, j);
          }
          for (Eigen::Index j = 0; j <= i; ++j) p(i, j) /= sum;
          for (Eigen::Index j = i + 1; j < s; ++j) p(i, j) = 0;
        }
        lc.attn.block(r0, c0, s, dd).noalias() = p * lc.v.block(r0, c0, s, dd);
      }
    }
    x.noalias() += lc.attn * weight(params, o.wo, h, h).transpose();

    norm_forward(params, o.mlp_norm_w, o.mlp_norm_b, x, lc.mlp_norm);
    const Mat<T>& n2 = lc.mlp_norm.output;
    lc.gate.noalias() = n2 * weight(params, o.w_gate, inter, h).transpose();
    lc.up.noalias() = n2 * weight(params, o.w_up, inter, h).transpose();
    lc.act.resize(lc.gate.rows(), lc.gate.cols());
    for (Eigen::Index i = 0; i < lc.gate.size(); ++i) {
      const T g = lc.gate.data()[i];
      lc.act.data()[i] = g * sigmoid(g) * lc.up.data()[i];
    }
    x.noalias() += lc.act * weight(params, o.w_down, h, inter).transpose();
  }

  norm_forward(params, layout_.final_norm_w, layout_.final_norm_b, x, c.final_norm);
  Mat<T> logits = c.final_norm.output * weight(params, layout_.head, v, h).transpose();
  return logits;
}

template <class T>
void Transformer<T>::backward(std::span<const T> params, const ForwardCache<T>& c, const Mat<T>& dlogits,
                              std::span<T> grads) const {
  const std::size_t h = config_.hidden_size, inter = config_.intermediate_size, v = config_.vocab_size;
  const std::size_t heads = config_.n_heads, d = config_.head_dim();
  const std::size_t batch = c.batch, seq = c.seq;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));
  std::vector<std::size_t> positions(batch * seq);
  for (std::size_t r = 0; r < positions.size(); ++r) positions[r] = r % seq;

  grad(grads, layout_.head, v, h).noalias() += dlogits.transpose() * c.final_norm.output;
  Mat<T> dn = dlogits * weight(params, layout_.head, v, h);
  Mat<T> dx;
  norm_backward(params, layout_.final_norm_w, layout_.final_norm_b, c.final_norm, dn, dx, grads);

  Mat<T> tmp;
  for (std::size_t li = config_.n_layers; li-- > 0;) {
    const LayerOffsets& o = layout_.layers[li];
    const LayerCache<T>& lc = c.layers[li];

    // MLP block.
    grad(grads, o.w_down, h, inter).noalias() += dx.transpose() * lc.act;
    Mat<T> dact = dx * weight(params, o.w_down, h, inter);
    Mat<T> dgate(dact.rows(), dact.cols()), dup(dact.rows(), dact.cols());
    for (Eigen::Index i = 0; i < dact.size(); ++i) {
      const T g = lc.gate.data()[i];
      const T sg = sigmoid(g);
      const T silu = g * sg;
      dup.data()[i] = dact.data()[i] * silu;
      dgate.data()[i] = dact.data()[i] * lc.up.data()[i] * sg * (T(1) + g * (T(1) - sg));
    }
    grad(grads, o.w_gate, inter, h).noalias() += dgate.transpose() * lc.mlp_norm.output;
    grad(grads, o.w_up, inter, h).noalias() += dup.transpose() * lc.mlp_norm.output;
    Mat<T> dn2 = dgate * weight(params, o.w_gate, inter, h);
    dn2.noalias() += dup * weight(params, o.w_up, inter, h);
    norm_backward(params, o.mlp_norm_w, o.mlp_norm_b, lc.mlp_norm, dn2, tmp, grads);
    dx += tmp;

    // Attention block.
    grad(grads, o.wo, h, h).noalias() += dx.transpose() * lc.attn;
    Mat<T> dattn = dx * weight(params, o.wo, h, h);
    Mat<T> dq = Mat<T>::Zero(dattn.rows(), dattn.cols());
    Mat<T> dk = Mat<T>::Zero(dattn.rows(), dattn.cols());
    Mat<T> dv = Mat<T>::Zero(dattn.rows(), dattn.cols());
    for (std::size_t b = 0; b < batch; ++b) {
      const auto r0 = static_cast<Eigen::Index>(b * seq);
      const auto s = static_cast<Eigen::Index>(seq);
      for (std::size_t hd = 0; hd < heads; ++hd) {
        const auto c0 = static_cast<Eigen::Index>(hd * d);
        const auto dd = static_cast<Eigen::Index>(d);
        const Mat<T>& p = lc.probs[b * heads + hd];
        const auto dO = dattn.block(r0, c0, s, dd);
        Mat<T> dp = dO * lc.v.block(r0, c0, s, dd).transpose();
        dv.block(r0, c0, s, dd).noalias() = p.transpose() * dO;
        // softmax backward restricted to the causal triangle
        for (Eigen::Index i = 0; i < s; ++i) {
          T dot = 0;
          for (Eigen::Index j = 0; j <= i; ++j) dot += dp(i, j) * p(i, j);
          for (Eigen::Index j = 0; j <= i; ++j) dp(i, j) = p(i, j) * (dp(i, j) - dot) * scale;
          for (Eigen::Index j = i + 1; j < s; ++j) dp(i, j) = 0;
        }
        dq.block(r0, c0, s, dd).noalias() = dp * lc.k.block(r0, c0, s, dd);
        dk.block(r0, c0, s, dd).noalias() = dp.transpose() * lc.q.block(r0, c0, s, dd);
      }
    }
    apply_rope(dq, positions, rope_, /*inverse=*/true);
    apply_rope(dk, positions, rope_, /*inverse=*/true);
    const Mat<T>& n1 = lc.attn_norm.output;
    grad(grads, o.wq, h, h).noalias() += dq.transpose() * n1;
    grad(grads, o.wk, h, h).noalias() += dk.transpose() * n1;
    grad(grads, o.wv, h, h).noalias() += dv.transpose() * n1;
    Mat<T> dn1 = dq * weight(params, o.wq, h, h);
    dn1.noalias() += dk * weight(params, o.wk, h, h);
    dn1.noalias() += dv * weight(params, o.wv, h, h);
    norm_backward(params, o.attn_norm_w, o.attn_norm_b, lc.attn_norm, dn1, tmp, grads);
    dx += tmp;
  }

  T* demb = grads.data() + layout_.embedding;
  for (std::size_t r = 0; r < c.tokens.size(); ++r) {
    T* row = demb + std::size_t{c.tokens[r]} * h;
    const T* src = dx.data() + r * h;
    for (std::size_t k = 0; k < h; ++k) row[k] += src[k];
  }
}

template class Transformer<float>;
template class Transformer<double>;

}  // namespace provlm::model

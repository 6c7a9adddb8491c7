#pragma once

// Straight-line scalar transformer used only as a test oracle. It shares no
// code with provlm::model::Transformer beyond the parameter layout, and
// rebuilds RoPE angles from first principles.

#include <cmath>
#include <vector>

#include "provlm/model/params.hpp"

namespace provlm::testing {

inline std::vector<std::vector<double>> reference_logits(const model::ParameterSet<double>& p,
                                                         const std::vector<int>& tokens) {
  using model::NormKind;
  const auto& c = p.config;
  const auto layout = model::make_layout(c);
  const std::size_t H = c.hidden_size, I = c.intermediate_size, V = c.vocab_size, nh = c.n_heads;
  const std::size_t d = H / nh;
  const std::size_t rot = static_cast<std::size_t>(std::llround(c.rope_fraction * d));
  const std::size_t n = tokens.size();
  const double* w = p.values.data();

  auto norm = [&](const std::vector<double>& x, std::size_t gw, std::size_t gb) {
    double mu = 0;
    if (c.norm_kind == NormKind::layernorm) {
      for (double v : x) mu += v;
      mu /= H;
    }
    double var = 0;
    for (double v : x) var += (v - mu) * (v - mu);
    var /= H;
    std::vector<double> y(H);
    for (std::size_t i = 0; i < H; ++i) {
      y[i] = (x[i] - mu) / std::sqrt(var + c.norm_eps) * w[gw + i];
      if (c.norm_kind == NormKind::layernorm) y[i] += w[gb + i];
    }
    return y;
  };
  auto matvec = [&](std::size_t off, std::size_t rows, std::size_t cols, const std::vector<double>& x) {
    std::vector<double> y(rows, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t k = 0; k < cols; ++k) y[r] += w[off + r * cols + k] * x[k];
    return y;
  };
  auto rotate = [&](std::vector<double>& v, std::size_t pos) {
    for (std::size_t hd = 0; hd < nh; ++hd) {
      for (std::size_t j = 0; j < rot / 2; ++j) {
        const double freq = 1.0 / std::pow(c.rope_theta, (2.0 * j) / rot);
        const double a = pos * freq;
        double& x = v[hd * d + 2 * j];
        double& y = v[hd * d + 2 * j + 1];
        const double nx = x * std::cos(a) - y * std::sin(a);
        const double ny = x * std::sin(a) + y * std::cos(a);
        x = nx;
        y = ny;
      }
    }
  };

  std::vector<std::vector<double>> x(n, std::vector<double>(H));
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t i = 0; i < H; ++i) x[t][i] = w[layout.embedding + tokens[t] * H + i];

  for (const auto& o : layout.layers) {
    std::vector<std::vector<double>> q(n), k(n), v(n);
    for (std::size_t t = 0; t < n; ++t) {
      auto h1 = norm(x[t], o.attn_norm_w, o.attn_norm_b);
      q[t] = matvec(o.wq, H, H, h1);
      k[t] = matvec(o.wk, H, H, h1);
      v[t] = matvec(o.wv, H, H, h1);
      rotate(q[t], t);
      rotate(k[t], t);
    }
    for (std::size_t t = 0; t < n; ++t) {
      std::vector<double> cat(H, 0.0);
      for (std::size_t hd = 0; hd < nh; ++hd) {
        std::vector<double> s(t + 1);
        double mx = -1e300;
        for (std::size_t j = 0; j <= t; ++j) {
          double dot = 0;
          for (std::size_t e = 0; e < d; ++e) dot += q[t][hd * d + e] * k[j][hd * d + e];
          s[j] = dot / std::sqrt(static_cast<double>(d));
          mx = std::max(mx, s[j]);
        }
        double z = 0;
        for (auto& sj : s) z += (sj = std::exp(sj - mx));
        for (std::size_t j = 0; j <= t; ++j)
          for (std::size_t e = 0; e < d; ++e) cat[hd * d + e] += s[j] / z * v[j][hd * d + e];
      }
      auto proj = matvec(o.wo, H, H, cat);
      for (std::size_t i = 0; i < H; ++i) x[t][i] += proj[i];
    }
    for (std::size_t t = 0; t < n; ++t) {
      auto h2 = norm(x[t], o.mlp_norm_w, o.mlp_norm_b);
      auto g = matvec(o.w_gate, I, H, h2);
      auto u = matvec(o.w_up, I, H, h2);
      for (std::size_t i = 0; i < I; ++i) g[i] = g[i] / (1.0 + std::exp(-g[i])) * u[i];
      auto down = matvec(o.w_down, H, I, g);
      for (std::size_t i = 0; i < H; ++i) x[t][i] += down[i];
    }
  }
  std::vector<std::vector<double>> logits(n);
  for (std::size_t t = 0; t < n; ++t) logits[t] = matvec(layout.head, V, H, norm(x[t], layout.final_norm_w, layout.final_norm_b));
  return logits;
}

}  // namespace provlm::testing

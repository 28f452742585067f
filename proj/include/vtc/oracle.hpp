#pragma once

// Brute-force reference implementations. Nothing here calls the tensor ops
// or the module code paths it is used to check: these are plain loops over
// raw element arrays, written from the definitions.

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "vtc/pvtc.hpp"
#include "vtc/rvtc.hpp"

namespace vtc::oracle {

using Rows = std::vector<std::vector<double>>;

/// Textbook triple loop, sum starting at +0.0.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> c(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += a[i * k + t] * b[t * n + j];
      c[i * n + j] = s;
    }
  return Tensor({m, n}, std::move(c));
}

namespace detail {

inline double gelu(double x) {
  const double c = std::sqrt(2.0 / 3.14159265358979323846);
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * std::pow(x, 3))));
}

inline std::vector<double> affine(const std::vector<double>& x, const Linear& l) {
  const std::size_t in = l.weight.dim(0), out = l.weight.dim(1);
  std::vector<double> y(out);
  for (std::size_t o = 0; o < out; ++o) {
    double s = 0.0;
    for (std::size_t i = 0; i < in; ++i) s += x[i] * l.weight[i * out + o];
    y[o] = l.bias.empty() ? s : s + l.bias[o];
  }
  return y;
}

inline std::vector<double> mlp(const std::vector<double>& x, const Mlp& m) {
  std::vector<double> h = affine(x, m.fc1);
  if (!m.fc2) return h;
  for (double& v : h) v = gelu(v);
  return affine(h, *m.fc2);
}

inline std::vector<double> vecmat(const std::vector<double>& x, const Tensor& w) {
  const std::size_t in = w.dim(0), out = w.dim(1);
  std::vector<double> y(out, 0.0);
  for (std::size_t o = 0; o < out; ++o)
    for (std::size_t i = 0; i < in; ++i) y[o] += x[i] * w[i * out + o];
  return y;
}

inline std::vector<double> norm(const std::vector<double>& x) {
  double mean = 0.0, var = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  for (double v : x) var += (v - mean) * (v - mean);
  var /= static_cast<double>(x.size());
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mean) / std::sqrt(var + 1e-5);
  return y;
}

/// Full cross-attention of every query over every grid cell, with the
/// block-diagonal window mask: query w may only see cells (r, c) with
/// (r / M) * N + c / M == w.
inline Rows masked_full_attention(const Rows& queries, const Rows& keys_raster, std::size_t S, std::size_t M,
                                  const AttentionProj& p, std::size_t heads, bool qk_norm) {
  const std::size_t N = S / M, D = p.wq.dim(0), dh = D / heads;
  Rows kproj(keys_raster.size()), vproj(keys_raster.size());
  for (std::size_t c = 0; c < keys_raster.size(); ++c) {
    const auto k = qk_norm ? norm(keys_raster[c]) : keys_raster[c];
    kproj[c] = vecmat(k, p.wk);
    vproj[c] = vecmat(k, p.wv);
  }
  Rows out(queries.size());
  for (std::size_t w = 0; w < queries.size(); ++w) {
    const auto qn = qk_norm ? norm(queries[w]) : queries[w];
    const auto q = vecmat(qn, p.wq);
    std::vector<double> ctx(D, 0.0);
    for (std::size_t h = 0; h < heads; ++h) {
      std::vector<double> logit(S * S, -std::numeric_limits<double>::infinity());
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t cell = 0; cell < S * S; ++cell) {
        const std::size_t r = cell / S, c = cell % S;
        if ((r / M) * N + c / M != w) continue;
        double s = 0.0;
        for (std::size_t d = h * dh; d < (h + 1) * dh; ++d) s += q[d] * kproj[cell][d];
        logit[cell] = s / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, logit[cell]);
      }
      double z = 0.0;
      for (auto& l : logit) {
        l = std::exp(l - mx);
        z += l;
      }
      for (std::size_t cell = 0; cell < S * S; ++cell)
        for (std::size_t d = h * dh; d < (h + 1) * dh; ++d) ctx[d] += logit[cell] / z * vproj[cell][d];
    }
    out[w] = vecmat(ctx, p.wo);
  }
  return out;
}

}  // namespace detail

/// End-to-end compressed tokens {N^2, D} computed from the definitions:
/// window queries, masked full attention with residual updates, fusion.
inline Tensor pvtc_reference(const VisualFeatures& vf, const PvtcConfig& cfg, const PvtcParams& params) {
  const std::size_t S = vf.side(), C = vf.width(), M = cfg.M, N = S / M, D = cfg.D;
  auto cell = [&](std::size_t r, std::size_t c) {
    return std::vector<double>(vf.grid.values().begin() + static_cast<std::ptrdiff_t>((r * S + c) * C),
                               vf.grid.values().begin() + static_cast<std::ptrdiff_t>((r * S + c + 1) * C));
  };
  Rows keys(S * S);
  for (std::size_t r = 0; r < S; ++r)
    for (std::size_t c = 0; c < S; ++c) keys[r * S + c] = detail::mlp(cell(r, c), params.mlp_kv);

  Rows local(N * N), global(N * N);
  const auto cls_q = detail::mlp(std::vector<double>(vf.cls.values()), params.mlp_cls);
  for (std::size_t u = 0; u < N; ++u)
    for (std::size_t v = 0; v < N; ++v) {
      std::vector<double> packed;
      for (std::size_t a = 0; a < M; ++a)
        for (std::size_t b = 0; b < M; ++b) {
          const auto x = cell(u * M + a, v * M + b);
          packed.insert(packed.end(), x.begin(), x.end());
        }
      local[u * N + v] = detail::mlp(packed, params.mlp_local);
      global[u * N + v] = cls_q;
      if (cfg.use_cls_scale)
        for (std::size_t d = 0; d < D; ++d) global[u * N + v][d] *= params.cls_scale[(u * N + v) * D + d];
    }
  auto refine = [&](Rows q, const std::vector<AttentionProj>& layers) {
    for (std::size_t l = 0; l < cfg.L; ++l) {
      const Rows a = detail::masked_full_attention(q, keys, S, M, layers[l], cfg.heads, cfg.qk_norm);
      for (std::size_t w = 0; w < q.size(); ++w)
        for (std::size_t d = 0; d < D; ++d) q[w][d] += a[w][d];
    }
    return q;
  };
  Rows fused;
  if (cfg.use_local && cfg.use_global) {
    fused = refine(local, params.attn_local);
    const Rows g = refine(global, params.attn_global);
    for (std::size_t w = 0; w < fused.size(); ++w)
      for (std::size_t d = 0; d < D; ++d) fused[w][d] += g[w][d];
  } else if (cfg.use_global) {
    fused = refine(global, params.attn_global);
  } else {
    fused = refine(local, params.attn_local);
  }
  std::vector<double> flat;
  for (const auto& r : fused) flat.insert(flat.end(), r.begin(), r.end());
  return Tensor({N * N, D}, std::move(flat));
}

/// Exhaustive grid search with floating logs. Candidates whose distance is
/// within a relative 1e-12 band of the best count as tied; among the tied,
/// the choice is the largest (product, cols) whose cols*rows*unit^2 is below
/// twice the image area, else the smallest.
inline Grid exhaustive_grid(const ImageDims& d, std::uint64_t R, std::uint64_t unit) {
  struct Cand {
    std::uint64_t c, r;
    long double dist;
  };
  std::vector<Cand> all;
  const long double aspect = std::log(static_cast<long double>(d.width) / static_cast<long double>(d.height));
  for (std::uint64_t c = 1; c <= R; ++c)
    for (std::uint64_t r = 1; c * r <= R; ++r)
      all.push_back({c, r, std::fabs(aspect - std::log(static_cast<long double>(c) / static_cast<long double>(r)))});
  long double best = all.front().dist;
  for (const auto& x : all) best = std::min(best, x.dist);
  std::vector<Cand> tied;
  for (const auto& x : all)
    if (x.dist - best <= 1e-12L * (1.0L + best)) tied.push_back(x);
  auto before = [](const Cand& a, const Cand& b) { return a.c * a.r != b.c * b.r ? a.c * a.r < b.c * b.r : a.c < b.c; };
  Cand lo = tied.front(), hi{0, 0, 0};
  bool any = false;
  const long double area = static_cast<long double>(d.width) * static_cast<long double>(d.height);
  for (const auto& x : tied) {
    if (before(x, lo)) lo = x;
    const bool fits = 2.0L * area > static_cast<long double>(unit) * static_cast<long double>(unit) * static_cast<long double>(x.c * x.r);
    if (fits && (!any || before(hi, x))) {
      hi = x;
      any = true;
    }
  }
  // The smallest tied candidate is the starting point and never needs the area test.
  const Cand pick = (any && before(lo, hi)) ? hi : lo;
  return {pick.c, pick.r};
}

/// Patch cap straight from the formulas, in long double with ceil().
inline std::uint64_t effective_cap(const ImageDims& d, const SlicePolicy& p) {
  const long double u = static_cast<long double>(p.unit);
  long double cap = static_cast<long double>(p.max_patches);
  if (p.strategy == SliceStrategy::area) {
    cap = std::min(cap, std::ceil(static_cast<long double>(d.width) * static_cast<long double>(d.height) / (u * u)));
  } else if (p.strategy == SliceStrategy::edge) {
    cap = std::min(cap, std::ceil(static_cast<long double>(d.width) / u) * std::ceil(static_cast<long double>(d.height) / u));
  }
  return static_cast<std::uint64_t>(cap);
}

/// T-shaped schedule cost by layer counts rather than per-layer summation:
/// k * block(N1^2 + t) + (L - k) * block(N2^2 + t), in 128-bit arithmetic.
inline unsigned __int128 t_shape_flops(std::uint64_t n_layers, std::uint64_t k, std::uint64_t lr_tokens,
                                       std::uint64_t hr_tokens, std::uint64_t n_text, std::uint64_t d,
                                       std::uint64_t d_ff) {
  using u = unsigned __int128;
  auto block = [&](u n) { return 8 * n * d * d + 4 * n * n * d + 4 * n * d * d_ff; };
  return u(k) * block(lr_tokens + n_text) + u(n_layers - k) * block(hr_tokens + n_text);
}

}  // namespace vtc::oracle

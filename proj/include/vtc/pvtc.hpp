#pragma once

// Dual-query projector: a local query per window (pixel-shuffle + MLP) and a
// global query per window (CLS token through an MLP, broadcast and scaled
// per position), each refined by L layers of point-to-region cross-attention
// over the same window-partitioned key/value grid, then summed.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vtc/config_json.hpp"
#include "vtc/layers.hpp"
#include "vtc/rng.hpp"
#include "vtc/tensor.hpp"
#include "vtc/vtf.hpp"

namespace vtc {

/// Encoder output: patch grid {S, S, C} plus CLS token {1, C}.
struct VisualFeatures {
  Tensor grid;
  Tensor cls;

  std::size_t side() const { return grid.dim(0); }
  std::size_t width() const { return grid.dim(2); }

  void validate() const {
    if (grid.rank() != 3 || grid.dim(0) != grid.dim(1)) {
      throw ShapeError("visual grid must be {S,S,C}, got " + shape_str(grid.shape()));
    }
    if (cls.shape() != Shape{1, grid.dim(2)}) {
      throw ShapeError("CLS token must be {1," + std::to_string(grid.dim(2)) + "}, got " + shape_str(cls.shape()));
    }
  }

  /// Uniform [-1, 1) features from named streams "grid" and "cls".
  static VisualFeatures random(std::size_t S, std::size_t C, std::uint64_t seed) {
    const SplitMix64 root(seed);
    SplitMix64 g = root.fork("grid");
    SplitMix64 c = root.fork("cls");
    return {Tensor::uniform({S, S, C}, g, -1.0, 1.0), Tensor::uniform({1, C}, c, -1.0, 1.0)};
  }

  std::vector<vtf::NamedTensor> to_archive() const { return {{"grid", grid}, {"cls", cls}}; }

  static VisualFeatures from_archive(const std::vector<vtf::NamedTensor>& set) {
    VisualFeatures vf{vtf::find(set, "grid"), vtf::find(set, "cls")};
    vf.validate();
    return vf;
  }
};

struct PvtcConfig {
  std::size_t M = 2;        // window side; N = S / M
  std::size_t L = 1;        // attention layers per query path
  std::size_t D = 16;       // output (LLM) width
  std::size_t heads = 1;
  bool use_local = true;
  bool use_global = true;
  bool use_cls_scale = true;
  int mlp_depth = 2;        // 1: single affine, 2: affine-gelu-affine
  bool mlp_bias = true;
  bool qk_norm = false;     // parameter-free layer norm on query stream and keys/values
  std::uint64_t seed = 0;

  /// Checks everything that depends on the grid the config is applied to.
  void validate(std::size_t S) const {
    if (M == 0) throw ConfigError("M must be >= 1");
    if (S % M != 0) {
      throw ConfigError("divisibility: S=" + std::to_string(S) + " is not divisible by M=" + std::to_string(M));
    }
    if (D == 0) throw ConfigError("D must be >= 1");
    if (heads == 0 || D % heads != 0) {
      throw ConfigError("heads=" + std::to_string(heads) + " must divide D=" + std::to_string(D));
    }
    if (mlp_depth != 1 && mlp_depth != 2) throw ConfigError("mlp_depth must be 1 or 2");
    if (!use_local && !use_global && L > 0) {
      throw ConfigError("both query paths disabled with L=" + std::to_string(L) + " > 0");
    }
  }

  std::size_t compressed_side(std::size_t S) const { return S / M; }

  static PvtcConfig from_json(const nlohmann::json& j) {
    PvtcConfig c;
    StrictReader r(j, "pvtc config");
    r.read("M", c.M);
    r.read("L", c.L);
    r.read("D", c.D);
    r.read("heads", c.heads);
    r.read("use_local", c.use_local);
    r.read("use_global", c.use_global);
    r.read("use_cls_scale", c.use_cls_scale);
    r.read("mlp_depth", c.mlp_depth);
    r.read("mlp_bias", c.mlp_bias);
    r.read("qk_norm", c.qk_norm);
    r.read("seed", c.seed);
    r.finish();
    return c;
  }

  nlohmann::json to_json() const {
    return {{"M", M},
            {"L", L},
            {"D", D},
            {"heads", heads},
            {"use_local", use_local},
            {"use_global", use_global},
            {"use_cls_scale", use_cls_scale},
            {"mlp_depth", mlp_depth},
            {"mlp_bias", mlp_bias},
            {"qk_norm", qk_norm},
            {"seed", seed}};
  }
};

/// Query/key/value/output projections of one cross-attention layer, each {D, D}, bias-free.
struct AttentionProj {
  Tensor wq, wk, wv, wo;

  static AttentionProj init(const SplitMix64& root, const std::string& name, std::size_t D) {
    return {init_uniform(root, name + ".wq", {D, D}, D), init_uniform(root, name + ".wk", {D, D}, D),
            init_uniform(root, name + ".wv", {D, D}, D), init_uniform(root, name + ".wo", {D, D}, D)};
  }
};

struct PvtcParams {
  Mlp mlp_local;  // C*M^2 -> D
  Mlp mlp_kv;     // C -> D
  Mlp mlp_cls;    // C -> D
  Tensor cls_scale;  // {N, N, D}, ones at init
  std::vector<AttentionProj> attn_local;
  std::vector<AttentionProj> attn_global;

  /// Everything is drawn from named streams of `cfg.seed`.
  static PvtcParams init(const PvtcConfig& cfg, std::size_t S, std::size_t C) {
    cfg.validate(S);
    const SplitMix64 root(cfg.seed);
    const std::size_t N = S / cfg.M;
    PvtcParams p;
    p.mlp_local = Mlp::init(root, "mlp_local", C * cfg.M * cfg.M, cfg.D, cfg.mlp_depth, cfg.mlp_bias);
    p.mlp_kv = Mlp::init(root, "mlp_kv", C, cfg.D, cfg.mlp_depth, cfg.mlp_bias);
    p.mlp_cls = Mlp::init(root, "mlp_cls", C, cfg.D, cfg.mlp_depth, cfg.mlp_bias);
    p.cls_scale = Tensor::full({N, N, cfg.D}, 1.0);
    for (std::size_t l = 0; l < cfg.L; ++l) {
      p.attn_local.push_back(AttentionProj::init(root, "attn_local." + std::to_string(l), cfg.D));
      p.attn_global.push_back(AttentionProj::init(root, "attn_global." + std::to_string(l), cfg.D));
    }
    return p;
  }

  std::vector<vtf::NamedTensor> to_archive() const {
    std::vector<vtf::NamedTensor> out;
    mlp_local.export_to(out, "mlp_local");
    mlp_kv.export_to(out, "mlp_kv");
    mlp_cls.export_to(out, "mlp_cls");
    out.push_back({"cls_scale", cls_scale});
    auto put = [&](const std::vector<AttentionProj>& layers, const std::string& prefix) {
      for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string n = prefix + "." + std::to_string(l);
        out.push_back({n + ".wq", layers[l].wq});
        out.push_back({n + ".wk", layers[l].wk});
        out.push_back({n + ".wv", layers[l].wv});
        out.push_back({n + ".wo", layers[l].wo});
      }
    };
    put(attn_local, "attn_local");
    put(attn_global, "attn_global");
    return out;
  }

  /// Loads weights into a parameter skeleton shaped by (cfg, S, C).
  static PvtcParams from_archive(const PvtcConfig& cfg, std::size_t S, std::size_t C,
                                 const std::vector<vtf::NamedTensor>& set) {
    PvtcParams p = init(cfg, S, C);
    p.mlp_local.import_from(set, "mlp_local");
    p.mlp_kv.import_from(set, "mlp_kv");
    p.mlp_cls.import_from(set, "mlp_cls");
    p.cls_scale = vtf::find(set, "cls_scale");
    auto get = [&](std::vector<AttentionProj>& layers, const std::string& prefix) {
      for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::string n = prefix + "." + std::to_string(l);
        layers[l] = {vtf::find(set, n + ".wq"), vtf::find(set, n + ".wk"), vtf::find(set, n + ".wv"),
                     vtf::find(set, n + ".wo")};
      }
    };
    get(p.attn_local, "attn_local");
    get(p.attn_global, "attn_global");
    return p;
  }
};

struct CompressedTokens {
  Tensor tokens;  // {N^2, D}
  std::size_t N = 0;
};

/// {S, S, C} -> {N, N, C*M^2}. Output cell (u, v) is the concatenation of the
/// window's cells (a, b) in row-major order: channel (a*M + b)*C + c holds
/// grid(u*M + a, v*M + b, c).
inline Tensor pixel_shuffle(const Tensor& grid, std::size_t M) {
  detail::require_rank(grid, 3, "pixel_shuffle");
  const std::size_t S = grid.dim(0), C = grid.dim(2);
  if (grid.dim(1) != S) throw ShapeError("pixel_shuffle: grid must be square, got " + shape_str(grid.shape()));
  if (M == 0 || S % M != 0) {
    throw ConfigError("divisibility: S=" + std::to_string(S) + " is not divisible by M=" + std::to_string(M));
  }
  const std::size_t N = S / M;
  Tensor out({N, N, C * M * M});
  for (std::size_t u = 0; u < N; ++u)
    for (std::size_t v = 0; v < N; ++v)
      for (std::size_t a = 0; a < M; ++a)
        for (std::size_t b = 0; b < M; ++b)
          for (std::size_t c = 0; c < C; ++c) out(u, v, (a * M + b) * C + c) = grid(u * M + a, v * M + b, c);
  return out;
}

/// Inverse permutation of pixel_shuffle: {N, N, C*M^2} -> {N*M, N*M, C}.
inline Tensor inverse_pixel_shuffle(const Tensor& shuffled, std::size_t M) {
  detail::require_rank(shuffled, 3, "inverse_pixel_shuffle");
  const std::size_t N = shuffled.dim(0);
  if (M == 0 || shuffled.dim(2) % (M * M) != 0) {
    throw ConfigError("divisibility: channel count " + std::to_string(shuffled.dim(2)) + " is not a multiple of M^2");
  }
  const std::size_t C = shuffled.dim(2) / (M * M);
  Tensor out({N * M, N * M, C});
  for (std::size_t u = 0; u < N; ++u)
    for (std::size_t v = 0; v < N; ++v)
      for (std::size_t a = 0; a < M; ++a)
        for (std::size_t b = 0; b < M; ++b)
          for (std::size_t c = 0; c < C; ++c) out(u * M + a, v * M + b, c) = shuffled(u, v, (a * M + b) * C + c);
  return out;
}

/// {S, S, D} -> {N^2, M^2, D}; slot w = u*N + v, in-window index a*M + b.
inline Tensor window_partition(const Tensor& kv, std::size_t M) {
  detail::require_rank(kv, 3, "window_partition");
  const std::size_t S = kv.dim(0), D = kv.dim(2);
  if (kv.dim(1) != S) throw ShapeError("window_partition: grid must be square, got " + shape_str(kv.shape()));
  if (M == 0 || S % M != 0) {
    throw ConfigError("divisibility: S=" + std::to_string(S) + " is not divisible by M=" + std::to_string(M));
  }
  const std::size_t N = S / M;
  Tensor out({N * N, M * M, D});
  for (std::size_t u = 0; u < N; ++u)
    for (std::size_t v = 0; v < N; ++v)
      for (std::size_t a = 0; a < M; ++a)
        for (std::size_t b = 0; b < M; ++b)
          for (std::size_t d = 0; d < D; ++d) out(u * N + v, a * M + b, d) = kv(u * M + a, v * M + b, d);
  return out;
}

/// Cross-attention of one query per window over that window's M^2 keys.
/// q is {W, 1, D}, kv is {W, P, D}; returns the output-projected context
/// {W, 1, D}. Windows never see each other.
inline Tensor point_to_region_attention(const Tensor& q, const Tensor& kv, const AttentionProj& proj,
                                        std::size_t heads, bool qk_norm = false) {
  detail::require_rank(q, 3, "point_to_region_attention");
  detail::require_rank(kv, 3, "point_to_region_attention");
  const std::size_t W = q.dim(0), D = q.dim(2), P = kv.dim(1);
  if (q.dim(1) != 1 || kv.dim(0) != W || kv.dim(2) != D) {
    throw ShapeError("point_to_region_attention: q " + shape_str(q.shape()) + " incompatible with kv " +
                     shape_str(kv.shape()));
  }
  if (heads == 0 || D % heads != 0) {
    throw ConfigError("heads=" + std::to_string(heads) + " must divide D=" + std::to_string(D));
  }
  const std::size_t dh = D / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor out({W, 1, D});
  for (std::size_t w = 0; w < W; ++w) {
    Tensor qw = q.slice_rows(w, w + 1).reshape({1, D});
    Tensor kvw = kv.slice_rows(w, w + 1).reshape({P, D});
    if (qk_norm) {
      qw = layer_norm_rows(qw);
      kvw = layer_norm_rows(kvw);
    }
    const Tensor Q = matmul(qw, proj.wq);
    const Tensor K = matmul(kvw, proj.wk);
    const Tensor V = matmul(kvw, proj.wv);
    Tensor ctx({1, D});
    for (std::size_t h = 0; h < heads; ++h) {
      const Tensor scores = scale(matmul(slice_cols(Q, h * dh, (h + 1) * dh), transpose2d(slice_cols(K, h * dh, (h + 1) * dh))), inv_sqrt);
      assign_cols(ctx, matmul(softmax_rows(scores), slice_cols(V, h * dh, (h + 1) * dh)), h * dh);
    }
    const Tensor o = matmul(ctx, proj.wo);
    for (std::size_t d = 0; d < D; ++d) out(w, 0, d) = o(0, d);
  }
  return out;
}

/// mlp_kv over every grid cell, window-partitioned: {N^2, M^2, D}.
inline Tensor key_value_windows(const VisualFeatures& vf, const PvtcConfig& cfg, const PvtcParams& params) {
  const std::size_t S = vf.side();
  const Tensor kv = params.mlp_kv(vf.grid.reshape({S * S, vf.width()}));
  return window_partition(kv.reshape({S, S, cfg.D}), cfg.M);
}

namespace detail {

/// q <- q + attn_l(q, kv) for each layer.
inline Tensor refine_queries(Tensor q, const Tensor& kv, const std::vector<AttentionProj>& layers,
                             const PvtcConfig& cfg) {
  for (std::size_t l = 0; l < cfg.L; ++l) q = add(q, point_to_region_attention(q, kv, layers.at(l), cfg.heads, cfg.qk_norm));
  return q;
}

}  // namespace detail

/// Local query F_LQ = mlp_local(pixel_shuffle(grid)), refined over the
/// windows: {N^2, 1, D}. With L = 0 this is the plain pixel-shuffle projector.
inline Tensor local_path(const VisualFeatures& vf, const PvtcConfig& cfg, const PvtcParams& params) {
  vf.validate();
  cfg.validate(vf.side());
  const std::size_t N = cfg.compressed_side(vf.side());
  const Tensor shuffled = pixel_shuffle(vf.grid, cfg.M).reshape({N * N, vf.width() * cfg.M * cfg.M});
  Tensor q = params.mlp_local(shuffled).reshape({N * N, 1, cfg.D});
  if (cfg.L == 0) return q;
  return detail::refine_queries(std::move(q), key_value_windows(vf, cfg, params), params.attn_local, cfg);
}

/// Global query: mlp_cls(CLS) broadcast to every window, optionally scaled
/// per position by cls_scale, refined over the same windows: {N^2, 1, D}.
inline Tensor global_path(const VisualFeatures& vf, const PvtcConfig& cfg, const PvtcParams& params) {
  vf.validate();
  cfg.validate(vf.side());
  const std::size_t N = cfg.compressed_side(vf.side());
  Tensor q = expand_rows(params.mlp_cls(vf.cls), N * N);
  if (cfg.use_cls_scale) q = hadamard(q, params.cls_scale.reshape({N * N, cfg.D}));
  q = q.reshape({N * N, 1, cfg.D});
  if (cfg.L == 0) return q;
  return detail::refine_queries(std::move(q), key_value_windows(vf, cfg, params), params.attn_global, cfg);
}

/// F_C = flatten(F_L + F_G). A single enabled path passes through unchanged;
/// with both disabled (only legal at L = 0) the result is the pixel-shuffle
/// projector output.
inline CompressedTokens pvtc_forward(const VisualFeatures& vf, const PvtcConfig& cfg, const PvtcParams& params) {
  vf.validate();
  cfg.validate(vf.side());
  const std::size_t N = cfg.compressed_side(vf.side());
  const Shape flat{N * N, cfg.D};
  if (cfg.use_local && cfg.use_global) {
    // KV windows are shared; compute them once.
    const std::size_t S = vf.side();
    Tensor lq = params.mlp_local(pixel_shuffle(vf.grid, cfg.M).reshape({N * N, vf.width() * cfg.M * cfg.M}))
                    .reshape({N * N, 1, cfg.D});
    Tensor gq = expand_rows(params.mlp_cls(vf.cls), N * N);
    if (cfg.use_cls_scale) gq = hadamard(gq, params.cls_scale.reshape(flat));
    gq = gq.reshape({N * N, 1, cfg.D});
    if (cfg.L > 0) {
      const Tensor kv = window_partition(params.mlp_kv(vf.grid.reshape({S * S, vf.width()})).reshape({S, S, cfg.D}), cfg.M);
      lq = detail::refine_queries(std::move(lq), kv, params.attn_local, cfg);
      gq = detail::refine_queries(std::move(gq), kv, params.attn_global, cfg);
    }
    return {add(lq, gq).reshape(flat), N};
  }
  if (cfg.use_global) return {global_path(vf, cfg, params).reshape(flat), N};
  return {local_path(vf, cfg, params).reshape(flat), N};
}

}  // namespace vtc

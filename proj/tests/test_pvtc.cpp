#include <catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>

#include "vtc/oracle.hpp"
#include "vtc/pvtc.hpp"

using namespace vtc;

namespace {

PvtcConfig config(std::size_t M, std::size_t D, std::size_t L, std::size_t heads = 1, std::uint64_t seed = 0) {
  PvtcConfig c;
  c.M = M;
  c.D = D;
  c.L = L;
  c.heads = heads;
  c.seed = seed;
  return c;
}

Tensor row(const Tensor& t, std::size_t r) { return t.slice_rows(r, r + 1); }

}  // namespace

TEST_CASE("pixel_shuffle with M=1 is the identity") {
  const auto vf = VisualFeatures::random(5, 3, 1);
  CHECK(pixel_shuffle(vf.grid, 1) == vf.grid);
}

TEST_CASE("pixel_shuffle concatenates a 2x2 window row-major") {
  const Tensor g({2, 2, 1}, {1, 2, 3, 4});  // [[a,b],[c,d]]
  CHECK(pixel_shuffle(g, 2) == Tensor({1, 1, 4}, {1, 2, 3, 4}));
}

TEST_CASE("pixel_shuffle round trip") {
  SplitMix64 rng(5);
  const Tensor x = Tensor::uniform({8, 8, 3}, rng, -1, 1);
  CHECK(inverse_pixel_shuffle(pixel_shuffle(x, 4), 4) == x);
  CHECK_THROWS_AS(pixel_shuffle(x, 3), ConfigError);
  CHECK_THROWS_AS(pixel_shuffle(Tensor::zeros({4, 2, 1}), 2), ShapeError);
}

TEST_CASE("window_partition layouts") {
  const std::size_t S = 4;
  Tensor g({S, S, 1});
  for (std::size_t i = 0; i < S * S; ++i) g[i] = static_cast<double>(i);  // cell (r,c) holds r*S + c

  SECTION("M = S is one window in raster order") {
    const Tensor w = window_partition(g, S);
    CHECK(w.shape() == Shape{1, S * S, 1});
    for (std::size_t i = 0; i < S * S; ++i) CHECK(w[i] == static_cast<double>(i));
  }
  SECTION("M = 1 keeps every cell in order") {
    const Tensor w = window_partition(g, 1);
    CHECK(w.shape() == Shape{S * S, 1, 1});
    CHECK(w.values() == g.values());
  }
  SECTION("S=4, M=2 slot 0 holds the top-left block") {
    const Tensor w = window_partition(g, 2);
    CHECK(w.shape() == Shape{4, 4, 1});
    CHECK(w(0, 0, 0) == 0);   // (0,0)
    CHECK(w(0, 1, 0) == 1);   // (0,1)
    CHECK(w(0, 2, 0) == 4);   // (1,0)
    CHECK(w(0, 3, 0) == 5);   // (1,1)
    CHECK(w(3, 0, 0) == 10);  // (2,2)
  }
}

TEST_CASE("single-key attention returns the key's value") {
  const std::size_t W = 5, D = 4;
  SplitMix64 rng(8);
  const Tensor q = Tensor::uniform({W, 1, D}, rng, -1, 1), kv = Tensor::uniform({W, 1, D}, rng, -1, 1);
  AttentionProj p{Tensor::uniform({D, D}, rng, -1, 1), Tensor::uniform({D, D}, rng, -1, 1), Tensor::identity(D),
                  Tensor::identity(D)};
  for (std::size_t heads : {1u, 2u, 4u}) CHECK(max_abs_diff(point_to_region_attention(q, kv, p, heads), kv) <= 1e-15);
}

TEST_CASE("point_to_region_attention is equivariant under window permutations") {
  const std::size_t W = 6, P = 4, D = 8;
  SplitMix64 rng(9);
  const Tensor q = Tensor::uniform({W, 1, D}, rng, -1, 1), kv = Tensor::uniform({W, P, D}, rng, -1, 1);
  const AttentionProj p = AttentionProj::init(SplitMix64(3), "a", D);
  std::vector<std::size_t> perm(W);
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());
  std::swap(perm[1], perm[4]);
  Tensor qp({W, 1, D}), kvp({W, P, D});
  for (std::size_t w = 0; w < W; ++w) {
    for (std::size_t d = 0; d < D; ++d) qp(w, 0, d) = q(perm[w], 0, d);
    for (std::size_t k = 0; k < P; ++k)
      for (std::size_t d = 0; d < D; ++d) kvp(w, k, d) = kv(perm[w], k, d);
  }
  const Tensor out = point_to_region_attention(q, kv, p, 2), outp = point_to_region_attention(qp, kvp, p, 2);
  for (std::size_t w = 0; w < W; ++w)
    for (std::size_t d = 0; d < D; ++d) CHECK(outp(w, 0, d) == out(perm[w], 0, d));
}

TEST_CASE("point_to_region_attention shape errors") {
  const AttentionProj p = AttentionProj::init(SplitMix64(3), "a", 4);
  CHECK_THROWS_AS(point_to_region_attention(Tensor::zeros({2, 1, 4}), Tensor::zeros({3, 4, 4}), p, 1), ShapeError);
  CHECK_THROWS_AS(point_to_region_attention(Tensor::zeros({2, 1, 4}), Tensor::zeros({2, 4, 4}), p, 3), ConfigError);
}

TEST_CASE("local path with L=0 is the pixel-shuffle projector") {
  const auto vf = VisualFeatures::random(8, 3, 2);
  auto cfg = config(2, 8, 0);
  const auto params = PvtcParams::init(cfg, 8, 3);
  const Tensor lq = params.mlp_local(pixel_shuffle(vf.grid, 2).reshape({16, 12})).reshape({16, 1, 8});
  CHECK(local_path(vf, cfg, params) == lq);
  cfg.use_global = false;
  CHECK(pvtc_forward(vf, cfg, params).tokens == lq.reshape({16, 8}));
  cfg.use_local = false;
  CHECK(pvtc_forward(vf, cfg, params).tokens == lq.reshape({16, 8}));
}

TEST_CASE("local path with L=1 composes shuffle, MLPs and one attention") {
  const auto vf = VisualFeatures::random(8, 3, 4);
  const auto cfg = config(2, 8, 1, 2, 7);
  const auto params = PvtcParams::init(cfg, 8, 3);
  const Tensor lq = params.mlp_local(pixel_shuffle(vf.grid, 2).reshape({16, 12})).reshape({16, 1, 8});
  const Tensor kv = window_partition(params.mlp_kv(vf.grid.reshape({64, 3})).reshape({8, 8, 8}), 2);
  const Tensor expected = add(lq, point_to_region_attention(lq, kv, params.attn_local[0], 2));
  CHECK(local_path(vf, cfg, params) == expected);
}

TEST_CASE("bias-free linear path scales with the input") {
  auto vf = VisualFeatures::random(4, 2, 5);
  auto cfg = config(2, 6, 0);
  cfg.mlp_depth = 1;
  cfg.mlp_bias = false;
  const auto params = PvtcParams::init(cfg, 4, 2);
  const Tensor once = local_path(vf, cfg, params);
  vf.grid = scale(vf.grid, 2.0);
  CHECK(local_path(vf, cfg, params) == scale(once, 2.0));
}

TEST_CASE("global path and cls_scale") {
  const auto vf = VisualFeatures::random(8, 3, 6);
  auto cfg = config(2, 8, 1);
  auto params = PvtcParams::init(cfg, 8, 3);
  const Tensor with_ones = global_path(vf, cfg, params);
  cfg.use_cls_scale = false;
  CHECK(global_path(vf, cfg, params) == with_ones);

  SECTION("broadcast at L=0") {
    cfg.L = 0;
    cfg.use_cls_scale = true;
    const Tensor g = global_path(vf, cfg, params).reshape({16, 8});
    for (std::size_t w = 1; w < 16; ++w) CHECK(row(g, w) == row(g, 0));
  }
  SECTION("distinct scales give distinct tokens") {
    cfg.L = 0;
    cfg.use_cls_scale = true;
    SplitMix64 rng(1);
    params.cls_scale = Tensor::uniform({4, 4, 8}, rng, 0.5, 1.5);
    const Tensor g = global_path(vf, cfg, params).reshape({16, 8});
    for (std::size_t a = 0; a < 16; ++a)
      for (std::size_t b = a + 1; b < 16; ++b) CHECK(row(g, a) != row(g, b));
  }
}

TEST_CASE("window locality") {
  const std::size_t S = 8, M = 2, N = 4, C = 3;
  const auto full = VisualFeatures::random(S, C, 10);
  for (bool bias : {false, true}) {
    auto cfg = config(M, 8, 1, 2, 3);
    cfg.mlp_bias = bias;
    const auto params = PvtcParams::init(cfg, S, C);
    VisualFeatures zero{Tensor::zeros({S, S, C}), full.cls};
    const Tensor base = pvtc_forward(zero, cfg, params).tokens;
    for (std::size_t w : {0u, 5u, 15u}) {
      VisualFeatures only = zero;
      const std::size_t u = w / N, v = w % N;
      for (std::size_t a = 0; a < M; ++a)
        for (std::size_t b = 0; b < M; ++b)
          for (std::size_t c = 0; c < C; ++c) only.grid(u * M + a, v * M + b, c) = full.grid(u * M + a, v * M + b, c);
      const Tensor out = pvtc_forward(only, cfg, params).tokens;
      for (std::size_t t = 0; t < N * N; ++t) {
        if (t == w) {
          CHECK(row(out, t) != row(base, t));
        } else {
          CHECK(row(out, t) == row(base, t));
        }
      }
    }
  }
}

TEST_CASE("token count is S^2 / M^2") {
  for (std::size_t S : {1u, 2u, 4u, 6u, 8u, 12u})
    for (std::size_t M = 1; M <= S; ++M) {
      if (S % M != 0) continue;
      const auto cfg = config(M, 4, 1);
      const auto out = pvtc_forward(VisualFeatures::random(S, 2, S), cfg, PvtcParams::init(cfg, S, 2));
      CHECK(out.tokens.shape() == Shape{S * S / (M * M), 4});
      CHECK(out.N == S / M);
    }
}

TEST_CASE("S=32, M=2 gives 256 tokens") {
  const auto cfg = config(2, 16, 1);
  const auto out = pvtc_forward(VisualFeatures::random(32, 4, 0), cfg, PvtcParams::init(cfg, 32, 4));
  CHECK(out.tokens.dim(0) == 256);
}

TEST_CASE("forward matches the masked full-attention oracle") {
  for (std::size_t L : {0u, 1u, 2u})
    for (std::size_t heads : {1u, 2u})
      for (bool qk : {false, true}) {
        auto cfg = config(2, 16, L, heads, 100 + L);
        cfg.qk_norm = qk;
        const auto vf = VisualFeatures::random(8, 3, 7 * L + heads);
        auto params = PvtcParams::init(cfg, 8, 3);
        SplitMix64 rng(L);
        params.cls_scale = Tensor::uniform({4, 4, 16}, rng, 0.5, 1.5);
        CHECK(max_abs_diff(pvtc_forward(vf, cfg, params).tokens, oracle::pvtc_reference(vf, cfg, params)) <= 1e-9);
      }
}

TEST_CASE("oracle agreement for single-path configurations") {
  for (int mode = 0; mode < 2; ++mode) {
    auto cfg = config(4, 8, 2, 2, 11);
    cfg.use_local = mode == 0;
    cfg.use_global = mode == 1;
    cfg.mlp_depth = 1;
    const auto vf = VisualFeatures::random(8, 2, 12);
    const auto params = PvtcParams::init(cfg, 8, 2);
    CHECK(max_abs_diff(pvtc_forward(vf, cfg, params).tokens, oracle::pvtc_reference(vf, cfg, params)) <= 1e-9);
  }
}

TEST_CASE("forward is deterministic and parameters survive an archive round trip") {
  const auto vf = VisualFeatures::random(8, 3, 1);
  const auto cfg = config(2, 8, 2, 2, 5);
  const auto p1 = PvtcParams::init(cfg, 8, 3), p2 = PvtcParams::init(cfg, 8, 3);
  CHECK(pvtc_forward(vf, cfg, p1).tokens == pvtc_forward(vf, cfg, p2).tokens);
  const auto back = PvtcParams::from_archive(cfg, 8, 3, vtf::decode_archive(vtf::encode_archive(p1.to_archive())));
  CHECK(pvtc_forward(vf, cfg, back).tokens == pvtc_forward(vf, cfg, p1).tokens);
  auto other = cfg;
  other.seed = 6;
  CHECK(pvtc_forward(vf, other, PvtcParams::init(other, 8, 3)).tokens != pvtc_forward(vf, cfg, p1).tokens);
}

TEST_CASE("config validation and strict parsing") {
  CHECK_THROWS_AS(config(3, 8, 1).validate(32), ConfigError);
  CHECK_THROWS_AS(config(2, 8, 1, 3).validate(8), ConfigError);
  auto both_off = config(2, 8, 1);
  both_off.use_local = both_off.use_global = false;
  CHECK_THROWS_AS(both_off.validate(8), ConfigError);
  both_off.L = 0;
  CHECK_NOTHROW(both_off.validate(8));

  const auto c = PvtcConfig::from_json(nlohmann::json{{"M", 4}, {"D", 32}, {"heads", 2}, {"qk_norm", true}});
  CHECK(c.M == 4);
  CHECK(c.D == 32);
  CHECK(c.qk_norm);
  CHECK(PvtcConfig::from_json(c.to_json()).to_json() == c.to_json());
  CHECK_THROWS_AS(PvtcConfig::from_json(nlohmann::json{{"Mm", 2}}), ConfigError);
  CHECK_THROWS_AS(PvtcConfig::from_json(nlohmann::json{{"M", -2}}), ConfigError);
  CHECK_THROWS_AS(PvtcConfig::from_json(nlohmann::json{{"M", "2"}}), ConfigError);
}

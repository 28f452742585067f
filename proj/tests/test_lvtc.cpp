#include <catch_amalgamated.hpp>

#include <set>

#include "vtc/lvtc.hpp"

using namespace vtc;

namespace {

LvtcConfig small(std::size_t n_layers, std::size_t k, std::size_t T, std::size_t s, std::size_t i) {
  LvtcConfig c;
  c.n_layers = n_layers;
  c.k = k;
  c.T = T;
  c.s = s;
  c.i = i;
  c.d_model = 8;
  c.d_ff = 16;
  c.heads = 2;
  return c;
}

struct Setup {
  VisualFeatures vf;
  Tensor text;
  ProjectorBank bank;
};

Setup make(const LvtcConfig& cfg, std::size_t S, std::size_t C, std::size_t n_text, std::uint64_t seed) {
  return {VisualFeatures::random(S, C, seed), synthetic_text(n_text, cfg.d_model, seed), ProjectorBank::init(cfg, C, seed)};
}

}  // namespace

TEST_CASE("2B-scale schedule: 256 then 1024 tokens, one injection at layer 4") {
  const LvtcConfig cfg;  // defaults: 24 layers, M1=2, M2=1, k=17, T=2, s=4, i=4
  const TokenSchedule s = build_schedule(cfg, 32);
  REQUIRE(s.n_layers() == 24);
  for (std::size_t l = 0; l < 24; ++l) CHECK(s.per_layer_visual_tokens[l] == (l < 17 ? 256u : 1024u));
  REQUIRE(s.events.size() == 2);
  CHECK(s.events[0] == ScheduleEvent{4, EventKind::inject_lr, 1});
  CHECK(s.events[1] == ScheduleEvent{17, EventKind::expand_hr, 0});
}

TEST_CASE("schedule constraint violations") {
  const std::size_t S = 8;
  auto c = small(6, 4, 2, 1, 1);
  CHECK_NOTHROW(build_schedule(c, S));
  auto bad = c;
  bad.M1 = bad.M2 = 2;
  CHECK_THROWS_AS(build_schedule(bad, S), ConfigError);
  bad = c;
  bad.M1 = 1;
  bad.M2 = 2;
  CHECK_THROWS_AS(build_schedule(bad, S), ConfigError);
  bad = c;
  bad.M1 = 3;
  CHECK_THROWS_AS(build_schedule(bad, S), ConfigError);
  bad = c;
  bad.k = 6;
  CHECK_THROWS_AS(build_schedule(bad, S), ConfigError);
  CHECK(build_cost_schedule(bad, S).events.size() == 1);  // injection only, never expands
  bad = c;
  bad.T = 3;
  bad.s = 2;
  bad.i = 2;  // second injection at layer 4 == k
  CHECK_THROWS_AS(build_schedule(bad, S), ConfigError);
  bad = c;
  bad.i = 0;
  CHECK_THROWS_AS(build_schedule(bad, S), ConfigError);
  bad = c;
  bad.T = 0;
  CHECK_THROWS_AS(build_schedule(bad, S), ConfigError);
  // M1=4, M2=3 on S=12: N1=3 and N2=4 are not nested.
  bad = c;
  bad.M1 = 4;
  bad.M2 = 3;
  CHECK_THROWS_AS(build_schedule(bad, 12), ConfigError);
}

TEST_CASE("default expansion layer sits at three quarters of the depth") {
  CHECK(LvtcConfig::default_expansion_layer(24) == 17);
  CHECK(LvtcConfig::default_expansion_layer(32) == 23);
  const auto sim = LvtcSimConfig::from_json(nlohmann::json{{"n_layers", 32}});
  CHECK(sim.model.k == 23);
  CHECK(LvtcSimConfig::from_json(nlohmann::json{{"n_layers", 32}, {"k", 5}}).model.k == 5);
  CHECK_THROWS_AS(LvtcSimConfig::from_json(nlohmann::json{{"layers", 32}}), ConfigError);
}

TEST_CASE("upsample2d") {
  const Tensor x = Tensor::matrix({{1, 10}, {2, 20}, {3, 30}, {4, 40}});
  CHECK(upsample2d(x, 2, 2) == x);
  CHECK(upsample2d(Tensor::matrix({{7, 8}}), 1, 2) == Tensor::matrix({{7, 8}, {7, 8}, {7, 8}, {7, 8}}));

  const Tensor y = upsample2d(Tensor::matrix({{1}, {2}, {3}, {4}}), 2, 4);
  const double expected[4][4] = {{1, 1, 2, 2}, {1, 1, 2, 2}, {3, 3, 4, 4}, {3, 3, 4, 4}};
  for (std::size_t u = 0; u < 4; ++u)
    for (std::size_t v = 0; v < 4; ++v) CHECK(y(u * 4 + v, 0) == expected[u][v]);
  CHECK_THROWS_AS(upsample2d(x, 2, 3), ConfigError);
  CHECK_THROWS_AS(upsample2d(x, 3, 6), ShapeError);
}

TEST_CASE("trace matches the closed-form schedule") {
  struct Case {
    std::size_t n, k, T, s, i;
  };
  for (const Case& t : {Case{4, 2, 1, 0, 1}, Case{6, 4, 2, 1, 1}, Case{8, 7, 4, 1, 2}, Case{5, 0, 1, 3, 3},
                        Case{10, 9, 3, 0, 4}}) {
    const auto cfg = small(t.n, t.k, t.T, t.s, t.i);
    const std::size_t n_text = 3;
    const auto in = make(cfg, 8, 2, n_text, t.n);
    const auto dec = Decoder::init(cfg, 64 + n_text, 1);
    const auto run = lvtc_forward(in.vf, in.text, cfg, in.bank, dec);
    const auto observed = schedule_from_trace(run.trace), closed = build_schedule(cfg, 8);
    if (t.k > 0) {
      CHECK(observed == closed);
    } else {
      CHECK(observed.per_layer_visual_tokens == closed.per_layer_visual_tokens);
      CHECK(observed.events == closed.events);
      CHECK(observed.hr_tokens == closed.hr_tokens);
    }
    for (const auto& r : run.trace) CHECK(r.seq_len == r.visual_tokens + n_text);
    CHECK(run.hidden.shape() == Shape{64 + n_text, 8});
  }
}

TEST_CASE("toy 4-layer trace lengths") {
  const auto cfg = small(4, 2, 1, 0, 1);
  const auto in = make(cfg, 8, 2, 5, 3);
  const auto run = lvtc_forward(in.vf, in.text, cfg, in.bank, Decoder::init(cfg, 69, 3));
  std::vector<std::size_t> lens;
  for (const auto& r : run.trace) lens.push_back(r.seq_len);
  CHECK(lens == std::vector<std::size_t>{16 + 5, 16 + 5, 64 + 5, 64 + 5});
  CHECK(run.trace[2].event == "expand_hr");
}

TEST_CASE("injections are each used exactly once") {
  for (std::size_t T = 1; T <= 5; ++T)
    for (std::size_t s = 0; s <= 2; ++s)
      for (std::size_t i = 1; i <= 3; ++i) {
        const std::size_t k = T >= 2 ? s + i * (T - 2) + 1 : 0;
        const auto cfg = small(k + 2, k, T, s, i);
        const auto in = make(cfg, 4, 2, 1, T);
        const auto run = lvtc_forward(in.vf, in.text, cfg, in.bank, Decoder::init(cfg, 17, 0));
        std::multiset<std::string> seen;
        for (const auto& r : run.trace)
          if (r.event.rfind("inject_lr:", 0) == 0) seen.insert(r.event);
        CHECK(seen.size() == T - 1);
        for (std::size_t j = 1; j < T; ++j) CHECK(seen.count("inject_lr:" + std::to_string(j)) == 1);
      }
}

TEST_CASE("null decoder exposes the residual bookkeeping") {
  auto cfg = small(7, 5, 3, 1, 2);  // injections at 1 and 3, expansion at 5
  const auto in = make(cfg, 8, 3, 4, 21);
  const auto run = lvtc_forward(in.vf, in.text, cfg, in.bank, Decoder::null(cfg));
  Tensor lr = lr_project(in.vf, in.bank, 0);
  for (std::size_t j = 1; j < cfg.T; ++j) lr = add(lr, lr_project(in.vf, in.bank, j));
  const Tensor expected = add(upsample2d(lr, 4, 8), hr_project(in.vf, in.bank));
  CHECK(max_abs_diff(run.hidden.slice_rows(0, 64), expected) <= 1e-12);
  CHECK(run.hidden.slice_rows(64, 68) == in.text);

  SECTION("learned positions are removed and re-added around the expansion") {
    cfg.positions = true;
    const Decoder with_pos = [&] {
      Decoder d = Decoder::null(cfg);
      SplitMix64 rng(4);
      d.positions = Tensor::uniform({68, 8}, rng, -1, 1);
      return d;
    }();
    const auto run2 = lvtc_forward(in.vf, in.text, cfg, in.bank, with_pos);
    Tensor vis_pos = add(expected, with_pos.positions.slice_rows(0, 64));
    CHECK(max_abs_diff(run2.hidden.slice_rows(0, 64), vis_pos) <= 1e-12);
    // Text rows sit at new indices after the expansion, so they carry the
    // positions of those indices.
    CHECK(max_abs_diff(run2.hidden.slice_rows(64, 68),
                       add(in.text, with_pos.positions.slice_rows(64, 68))) <= 1e-12);
  }
}

TEST_CASE("expanding before the first block equals a plain decoder run") {
  const auto cfg = small(4, 0, 1, 0, 1);
  const auto in = make(cfg, 8, 2, 3, 8);
  const auto dec = Decoder::init(cfg, 67, 8);
  const auto run = lvtc_forward(in.vf, in.text, cfg, in.bank, dec);
  const Tensor x = concat_rows(add(upsample2d(lr_project(in.vf, in.bank, 0), 4, 8), hr_project(in.vf, in.bank)), in.text);
  CHECK(run.hidden == dec.run(x));
}

TEST_CASE("events never touch the text rows") {
  const auto cfg = small(9, 6, 3, 2, 2);
  const auto in = make(cfg, 8, 2, 5, 30);
  std::size_t checked = 0;
  const auto hook = [&](std::size_t, const Tensor& before, const Tensor& after) {
    const std::size_t t = 5;
    CHECK(before.slice_rows(before.dim(0) - t, before.dim(0)) == after.slice_rows(after.dim(0) - t, after.dim(0)));
    ++checked;
  };
  lvtc_forward(in.vf, in.text, cfg, in.bank, Decoder::init(cfg, 69, 30), hook);
  CHECK(checked == cfg.n_layers);
}

TEST_CASE("decoder blocks are causal") {
  auto cfg = small(3, 1, 1, 0, 1);
  const auto dec = Decoder::init(cfg, 32, 17);
  SplitMix64 rng(17);
  const Tensor x = Tensor::uniform({20, 8}, rng, -1, 1);
  const Tensor y = dec.run(x);
  for (std::size_t t : {0u, 7u, 18u}) {
    Tensor xp = x;
    for (std::size_t r = t + 1; r < 20; ++r)
      for (std::size_t c = 0; c < 8; ++c) xp(r, c) += rng.uniform(-1, 1);
    const Tensor yp = dec.run(xp);
    CHECK(yp.slice_rows(0, t + 1) == y.slice_rows(0, t + 1));
    CHECK(yp.slice_rows(t + 1, 20) != y.slice_rows(t + 1, 20));
  }
}

TEST_CASE("low-rank projectors") {
  const auto vf = VisualFeatures::random(8, 2, 2);
  SplitMix64 rng(2);
  const Tensor w = Tensor::uniform({8, 6}, rng, -1, 1), b = Tensor::uniform({1, 6}, rng, -1, 1);
  const auto full = Projector::full(2, w, b);
  const auto fact = Projector::factored(2, w, Tensor::identity(6), b);
  CHECK(fact(vf) == full(vf));
  CHECK(fact.is_low_rank());
  CHECK(fact.rank() == std::optional<std::size_t>(6));

  CHECK(Projector::low_rank_weight_count(4096, 8, 256) == 4096 * 8 + 8 * 256);
  CHECK(Projector::low_rank_weight_count(4096, 8, 256) < Projector::full_weight_count(4096, 256));

  LvtcConfig cfg = small(4, 2, 2, 0, 1);
  cfg.low_rank = 3;
  const auto bank = ProjectorBank::init(cfg, 2, 1);
  CHECK(bank.hr.rank() == std::optional<std::size_t>(3));
  CHECK(bank.lr[1].weight_count() == Projector::low_rank_weight_count(8, 3, 8));
}

TEST_CASE("HR projector with M2=1 lifts every cell") {
  const LvtcConfig cfg;
  const auto bank = ProjectorBank::init(cfg, 4, 0);
  const auto vf = VisualFeatures::random(32, 4, 0);
  CHECK(hr_project(vf, bank).shape() == Shape{1024, cfg.d_model});
  CHECK(lr_project(vf, bank, 0).shape() == Shape{256, cfg.d_model});
  CHECK(bank.hr.factor() == 1);
  CHECK(bank.hr.in() == 4);
}

TEST_CASE("forward rejects mismatched inputs") {
  const auto cfg = small(4, 2, 2, 0, 1);
  const auto in = make(cfg, 8, 2, 2, 1);
  const auto dec = Decoder::init(cfg, 66, 1);
  CHECK_THROWS_AS(lvtc_forward(in.vf, Tensor::zeros({2, 5}), cfg, in.bank, dec), ShapeError);
  auto other = cfg;
  other.T = 3;
  other.k = 3;
  CHECK_THROWS_AS(lvtc_forward(in.vf, in.text, other, in.bank, dec), ConfigError);
  auto bad = cfg;
  bad.s = 2;  // injection at 2 == k
  CHECK_THROWS_AS(lvtc_forward(in.vf, in.text, bad, in.bank, dec), ConfigError);
  CHECK_NOTHROW(lvtc_forward(in.vf, Tensor{}, cfg, in.bank, dec));
}

TEST_CASE("trace records round-trip through JSON") {
  const TraceRecord r{3, 70, 64, "inject_lr:2"};
  CHECK(TraceRecord::from_json(r.to_json()) == r);
  CHECK_THROWS_AS(TraceRecord::from_json(nlohmann::json{{"layer", 1}, {"extra", 2}}), ConfigError);
  CHECK_THROWS_AS(schedule_from_trace({{0, 5, 4, "explode"}}), FormatError);
  CHECK_THROWS_AS(schedule_from_trace({{1, 5, 4, "none"}}), FormatError);
  CHECK_THROWS_AS(schedule_from_trace({}), InputError);
}

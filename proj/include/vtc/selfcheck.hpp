#pragma once

// Embedded oracle suite behind `vtc selfcheck`. Each check compares an
// implementation path against a brute-force oracle and reports the first
// mismatching element or field.
//
// Fault hook: SelfcheckOptions::fault = "pvtc-weight" negates the first
// element of the implementation-side attn_local[0].wq before the PVTC
// equivalence check; the oracle keeps the original weights, so that check
// must fail.

#include <chrono>
#include <functional>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "vtc/analyzer.hpp"
#include "vtc/lvtc.hpp"
#include "vtc/oracle.hpp"
#include "vtc/pvtc.hpp"
#include "vtc/rvtc.hpp"

namespace vtc {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct SelfcheckOptions {
  std::string fault;  // "" or "pvtc-weight"
  std::uint64_t seed = 1;
};

namespace detail {

inline std::string first_diff(const Tensor& got, const Tensor& want, double tol) {
  if (got.shape() != want.shape()) return "shape " + shape_str(got.shape()) + " vs " + shape_str(want.shape());
  for (std::size_t i = 0; i < got.size(); ++i) {
    if (!(std::abs(got[i] - want[i]) <= tol)) {
      std::ostringstream os;
      os << std::setprecision(17) << "element " << i << ": got " << got[i] << ", expected " << want[i]
         << " (|diff| " << std::abs(got[i] - want[i]) << " > " << tol << ")";
      return os.str();
    }
  }
  return {};
}

inline std::string check_matmul(std::uint64_t seed) {
  SplitMix64 rng(seed);
  for (int rep = 0; rep < 20; ++rep) {
    const auto m = rng.between(1, 9), k = rng.between(1, 9), n = rng.between(1, 9);
    const Tensor a = Tensor::uniform({m, k}, rng, -1, 1), b = Tensor::uniform({k, n}, rng, -1, 1);
    if (auto d = first_diff(matmul(a, b), oracle::matmul(a, b), 0.0); !d.empty()) return d;
  }
  return {};
}

inline std::string check_softmax(std::uint64_t seed) {
  SplitMix64 rng(seed);
  for (int rep = 0; rep < 20; ++rep) {
    const Tensor x = Tensor::uniform({4, 6}, rng, -50, 50);
    const Tensor p = softmax_rows(x);
    for (std::size_t i = 0; i < 4; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < 6; ++j) {
        if (p(i, j) < 0) return "negative probability in row " + std::to_string(i);
        s += p(i, j);
      }
      if (std::abs(s - 1.0) > 1e-12) return "row " + std::to_string(i) + " sums to " + std::to_string(s);
    }
  }
  return {};
}

inline std::string check_pixel_shuffle(std::uint64_t seed) {
  SplitMix64 rng(seed);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t M = std::size_t{1} << rng.between(0, 3);
    const std::size_t S = M * rng.between(1, 32 / M), C = rng.between(1, 8);
    const Tensor x = Tensor::uniform({S, S, C}, rng, -1, 1);
    const Tensor y = inverse_pixel_shuffle(pixel_shuffle(x, M), M);
    if (auto d = first_diff(y, x, 0.0); !d.empty()) return "S=" + std::to_string(S) + " M=" + std::to_string(M) + ": " + d;
  }
  return {};
}

inline std::string check_pvtc(std::uint64_t seed, bool inject_fault) {
  struct Case {
    std::size_t S, M, D, L, heads;
  };
  const Case cases[] = {{8, 2, 16, 1, 1}, {8, 2, 16, 2, 2}, {8, 4, 8, 1, 2}, {4, 1, 6, 2, 1}, {8, 8, 4, 1, 1}, {6, 2, 4, 0, 1}};
  std::uint64_t n = 0;
  for (const auto& c : cases) {
    PvtcConfig cfg;
    cfg.M = c.M;
    cfg.D = c.D;
    cfg.L = c.L;
    cfg.heads = c.heads;
    cfg.seed = seed + n;
    const VisualFeatures vf = VisualFeatures::random(c.S, 3, seed + 100 + n);
    PvtcParams params = PvtcParams::init(cfg, c.S, 3);
    SplitMix64 rng(seed + 200 + n++);
    params.cls_scale = Tensor::uniform(params.cls_scale.shape(), rng, 0.5, 1.5);
    PvtcParams impl = params;
    if (inject_fault && !impl.attn_local.empty()) impl.attn_local[0].wq[0] = -impl.attn_local[0].wq[0];
    const Tensor got = pvtc_forward(vf, cfg, impl).tokens;
    const Tensor want = oracle::pvtc_reference(vf, cfg, params);
    if (auto d = first_diff(got, want, 1e-9); !d.empty()) {
      return "S=" + std::to_string(c.S) + " M=" + std::to_string(c.M) + " D=" + std::to_string(c.D) +
             " L=" + std::to_string(c.L) + " heads=" + std::to_string(c.heads) + ": " + d;
    }
  }
  return {};
}

inline std::string check_schedule(std::uint64_t seed) {
  LvtcConfig cfg;
  cfg.n_layers = 6;
  cfg.M1 = 4;
  cfg.M2 = 2;
  cfg.k = 4;
  cfg.T = 3;
  cfg.s = 1;
  cfg.i = 2;
  cfg.d_model = 8;
  cfg.d_ff = 16;
  const std::size_t S = 8;
  const VisualFeatures vf = VisualFeatures::random(S, 2, seed);
  const auto run = lvtc_forward(vf, synthetic_text(3, cfg.d_model, seed), cfg, ProjectorBank::init(cfg, 2, seed),
                                Decoder::init(cfg, 16 + 3, seed));
  const TokenSchedule closed = build_schedule(cfg, S);
  const TokenSchedule observed = schedule_from_trace(run.trace);
  if (observed.per_layer_visual_tokens != closed.per_layer_visual_tokens) return "per-layer visual tokens differ from closed form";
  if (observed.events != closed.events) return "event list differs from closed form";
  for (const auto& r : run.trace)
    if (r.seq_len != r.visual_tokens + 3) return "seq_len != visual + text at layer " + std::to_string(r.layer);

  // 2B-scale configuration: 24 layers, 256 -> 1024 tokens at k = 17, one injection at 4.
  LvtcConfig big;
  const TokenSchedule s = build_schedule(big, 32);
  for (std::size_t l = 0; l < 24; ++l)
    if (s.per_layer_visual_tokens[l] != (l < 17 ? 256u : 1024u)) return "24-layer schedule wrong at layer " + std::to_string(l);
  if (s.events.size() != 2 || s.events[0] != ScheduleEvent{4, EventKind::inject_lr, 1}) return "expected one injection at layer 4";
  return {};
}

inline std::string check_null_decoder(std::uint64_t seed) {
  LvtcConfig cfg;
  cfg.n_layers = 8;
  cfg.M1 = 4;
  cfg.M2 = 1;
  cfg.k = 6;
  cfg.T = 3;
  cfg.s = 1;
  cfg.i = 2;
  cfg.d_model = 8;
  cfg.d_ff = 8;
  const VisualFeatures vf = VisualFeatures::random(8, 2, seed);
  const ProjectorBank bank = ProjectorBank::init(cfg, 2, seed);
  const auto run = lvtc_forward(vf, synthetic_text(2, cfg.d_model, seed), cfg, bank, Decoder::null(cfg));
  Tensor acc = lr_project(vf, bank, 0);
  for (std::size_t j = 1; j < cfg.T; ++j) acc = add(acc, lr_project(vf, bank, j));
  // nearest neighbour by hand: 2x2 -> 8x8
  const Tensor vhr = hr_project(vf, bank);
  Tensor want({64, cfg.d_model});
  for (std::size_t u = 0; u < 8; ++u)
    for (std::size_t v = 0; v < 8; ++v)
      for (std::size_t c = 0; c < cfg.d_model; ++c) want(u * 8 + v, c) = acc((u / 4) * 2 + v / 4, c) + vhr(u * 8 + v, c);
  return first_diff(run.hidden.slice_rows(0, 64), want, 1e-12);
}

inline std::string check_rvtc(std::uint64_t seed) {
  struct Example {
    ImageDims d;
    SliceStrategy s;
    Grid g;
  };
  const Example ex[] = {{{80, 20}, SliceStrategy::ratio, {4, 1}},  {{345, 372}, SliceStrategy::ratio, {1, 1}},
                        {{80, 20}, SliceStrategy::area, {1, 1}},   {{80, 20}, SliceStrategy::edge, {1, 1}},
                        {{896, 896}, SliceStrategy::area, {2, 2}}, {{800, 400}, SliceStrategy::edge, {2, 1}}};
  for (const auto& e : ex) {
    SlicePolicy p;
    p.strategy = e.s;
    const SlicePlan plan = plan_slices(e.d, p);
    if (plan.grid_cols != e.g.cols || plan.grid_rows != e.g.rows) {
      return std::string(to_string(e.s)) + " " + std::to_string(e.d.width) + "x" + std::to_string(e.d.height) + ": grid " +
             std::to_string(plan.grid_cols) + "x" + std::to_string(plan.grid_rows) + ", expected " +
             std::to_string(e.g.cols) + "x" + std::to_string(e.g.rows);
    }
  }
  SplitMix64 rng(seed);
  for (int n = 0; n < 2000; ++n) {
    const ImageDims d{rng.between(1, 5000), rng.between(1, 5000)};
    for (auto s : {SliceStrategy::ratio, SliceStrategy::area, SliceStrategy::edge}) {
      SlicePolicy p;
      p.strategy = s;
      const SlicePlan plan = plan_slices(d, p);
      const std::uint64_t cap = oracle::effective_cap(d, p);
      const Grid want = oracle::exhaustive_grid(d, cap, p.unit);
      if (plan.effective_max_patches != cap || plan.grid_cols != want.cols || plan.grid_rows != want.rows) {
        return std::string(to_string(s)) + " " + std::to_string(d.width) + "x" + std::to_string(d.height) + ": plan grid " +
               std::to_string(plan.grid_cols) + "x" + std::to_string(plan.grid_rows) + " (cap " +
               std::to_string(plan.effective_max_patches) + "), oracle " + std::to_string(want.cols) + "x" +
               std::to_string(want.rows) + " (cap " + std::to_string(cap) + ")";
      }
    }
  }
  return {};
}

inline std::string check_analyzer() {
  LvtcConfig cfg;  // 24 layers, k = 17
  cfg.d_model = 2048;
  cfg.d_ff = 8192;
  for (std::uint64_t n_text : {0u, 64u}) {
    const FlopReport rep = schedule_cost(build_schedule(cfg, 32), n_text, CostModel::of(cfg));
    const auto want = oracle::t_shape_flops(24, 17, 256, 1024, n_text, 2048, 8192);
    const auto base = oracle::t_shape_flops(24, 0, 256, 1024, n_text, 2048, 8192);
    if (rep.total != want) return "T-shape total " + std::to_string(rep.total) + " != closed form";
    if (rep.baseline_total != base) return "flat baseline total differs from closed form";
    if (!(rep.total < rep.baseline_total)) return "T-shape not cheaper than flat";
  }
  return {};
}

}  // namespace detail

inline std::vector<CheckResult> run_selfcheck(const SelfcheckOptions& opt = {}) {
  const bool fault = opt.fault == "pvtc-weight";
  if (!opt.fault.empty() && !fault) throw ConfigError("unknown fault \"" + opt.fault + "\" (known: pvtc-weight)");
  const std::vector<std::pair<std::string, std::function<std::string()>>> checks = {
      {"tensor.matmul-vs-triple-loop", [&] { return detail::check_matmul(opt.seed); }},
      {"tensor.softmax-row-stochastic", [&] { return detail::check_softmax(opt.seed); }},
      {"pvtc.pixel-shuffle-round-trip", [&] { return detail::check_pixel_shuffle(opt.seed); }},
      {"pvtc.masked-attention-equivalence", [&] { return detail::check_pvtc(opt.seed, fault); }},
      {"lvtc.schedule-closed-form", [&] { return detail::check_schedule(opt.seed); }},
      {"lvtc.null-decoder-residuals", [&] { return detail::check_null_decoder(opt.seed); }},
      {"rvtc.exhaustive-search-agreement", [&] { return detail::check_rvtc(opt.seed); }},
      {"analyzer.closed-form-totals", [] { return detail::check_analyzer(); }},
  };
  std::vector<CheckResult> out;
  for (const auto& [name, fn] : checks) {
    const auto t0 = std::chrono::steady_clock::now();
    CheckResult r{name, false, {}, 0.0};
    try {
      r.detail = fn();
      r.passed = r.detail.empty();
    } catch (const std::exception& e) {
      r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(r));
  }
  return out;
}

inline void print_selfcheck(std::ostream& os, const std::vector<CheckResult>& results) {
  for (const auto& r : results) {
    os << (r.passed ? "PASS  " : "FAIL  ") << std::left << std::setw(40) << r.name << std::right << std::fixed
       << std::setprecision(3) << std::setw(8) << r.seconds << "s";
    if (!r.passed) os << "  " << r.detail;
    os << '\n';
  }
}

}  // namespace vtc

#pragma once

// Theoretical compute model. All costs count 2 FLOPs per multiply-add:
//
//   attn(n)  = 8 n d^2 + 4 n^2 d   Q/K/V/O projections, scores and weighted sum
//   ffn(n)   = 4 n d d_ff          two feed-forward matmuls
//   block(n) = attn(n) + ffn(n)
//
// with n = visual tokens at that layer + text tokens. Totals are exact
// unsigned 64-bit integers; floats appear only in reported ratios.

#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vtc/config_json.hpp"
#include "vtc/lvtc.hpp"
#include "vtc/pvtc.hpp"
#include "vtc/rvtc.hpp"

namespace vtc {

namespace detail {

inline std::uint64_t mul(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r;
  if (__builtin_mul_overflow(a, b, &r)) throw ConfigError("FLOP count overflows 64 bits");
  return r;
}

inline std::uint64_t plus(std::uint64_t a, std::uint64_t b) {
  std::uint64_t r;
  if (__builtin_add_overflow(a, b, &r)) throw ConfigError("FLOP count overflows 64 bits");
  return r;
}

}  // namespace detail

struct CostModel {
  std::uint64_t d_model = 2048;
  std::uint64_t d_ff = 8192;
  std::uint64_t n_layers = 24;

  void validate() const {
    if (d_model < 1 || d_ff < 1 || n_layers < 1) throw ConfigError("cost model parameters must be >= 1");
  }

  static CostModel of(const LvtcConfig& cfg) { return {cfg.d_model, cfg.d_ff, cfg.n_layers}; }

  std::uint64_t attn(std::uint64_t n) const {
    using detail::mul;
    return detail::plus(mul(8, mul(n, mul(d_model, d_model))), mul(4, mul(mul(n, n), d_model)));
  }
  std::uint64_t ffn(std::uint64_t n) const { return detail::mul(4, detail::mul(n, detail::mul(d_model, d_ff))); }
  std::uint64_t block(std::uint64_t n) const { return detail::plus(attn(n), ffn(n)); }
};

struct FlopReport {
  std::vector<std::uint64_t> per_layer;
  std::uint64_t total = 0;
  std::uint64_t baseline_total = 0;
  double ratio = 0.0;
  Fraction ratio_exact;
  std::optional<std::uint64_t> projector_flops;  // reported beside, never inside, total

  nlohmann::json to_json() const {
    nlohmann::json j{{"per_layer", per_layer},
                     {"total", total},
                     {"baseline_total", baseline_total},
                     {"ratio", ratio},
                     {"ratio_exact", ratio_exact.str()}};
    j["projector_flops"] = projector_flops ? nlohmann::json(*projector_flops) : nlohmann::json(nullptr);
    return j;
  }

  std::string to_csv() const {
    std::ostringstream os;
    os << "layer,flops\n";
    for (std::size_t l = 0; l < per_layer.size(); ++l) os << l << ',' << per_layer[l] << '\n';
    os << "total," << total << '\n' << "baseline_total," << baseline_total << '\n';
    os << "ratio_exact," << ratio_exact.str() << '\n';
    if (projector_flops) os << "projector_flops," << *projector_flops << '\n';
    return os.str();
  }
};

inline std::uint64_t schedule_total(const TokenSchedule& schedule, std::uint64_t n_text, const CostModel& model) {
  std::uint64_t t = 0;
  for (std::size_t v : schedule.per_layer_visual_tokens) t = detail::plus(t, model.block(v + n_text));
  return t;
}

/// Cost of `schedule` against an explicit baseline schedule.
inline FlopReport schedule_cost(const TokenSchedule& schedule, std::uint64_t n_text, const CostModel& model,
                                const TokenSchedule& baseline) {
  model.validate();
  if (schedule.n_layers() != model.n_layers || baseline.n_layers() != model.n_layers) {
    throw ConfigError("schedule length " + std::to_string(schedule.n_layers()) + " != cost model n_layers " +
                      std::to_string(model.n_layers));
  }
  FlopReport r;
  for (std::size_t v : schedule.per_layer_visual_tokens) {
    r.per_layer.push_back(model.block(v + n_text));
    r.total = detail::plus(r.total, r.per_layer.back());
  }
  r.baseline_total = schedule_total(baseline, n_text, model);
  r.ratio_exact = Fraction::reduced(r.total, r.baseline_total);
  r.ratio = static_cast<double>(r.total) / static_cast<double>(r.baseline_total);
  return r;
}

/// Baseline: the schedule's high-resolution token count at every layer.
inline FlopReport schedule_cost(const TokenSchedule& schedule, std::uint64_t n_text, const CostModel& model) {
  return schedule_cost(schedule, n_text, model, TokenSchedule::flat(schedule.n_layers(), schedule.hr_tokens));
}

/// Projector-side cost of an LVTC bank: T LR projections producing N1^2
/// tokens and one HR projection producing N2^2, each an (optionally
/// factored) affine map from C*factor^2 to d_model.
inline std::uint64_t projector_flops(const LvtcConfig& cfg, std::uint64_t S, std::uint64_t C) {
  using detail::mul;
  auto one = [&](std::uint64_t factor) {
    const std::uint64_t n = (S / factor) * (S / factor);
    const std::uint64_t in = C * factor * factor;
    const std::uint64_t macs =
        cfg.low_rank ? Projector::low_rank_weight_count(in, *cfg.low_rank, cfg.d_model) : Projector::full_weight_count(in, cfg.d_model);
    return mul(2, mul(n, macs));
  };
  return detail::plus(mul(cfg.T, one(cfg.M1)), one(cfg.M2));
}

/// Projector cost of one dual-query compression of an S x S x C grid.
inline std::uint64_t pvtc_flops(std::uint64_t S, std::uint64_t C, const PvtcConfig& cfg) {
  using detail::mul;
  using detail::plus;
  const std::uint64_t N2 = (S / cfg.M) * (S / cfg.M), P = cfg.M * cfg.M, D = cfg.D;
  auto mlp = [&](std::uint64_t rows, std::uint64_t in) {
    std::uint64_t f = mul(2, mul(rows, mul(in, D)));
    return cfg.mlp_depth == 2 ? plus(f, mul(2, mul(rows, mul(D, D)))) : f;
  };
  std::uint64_t f = plus(mlp(N2, C * P), mlp(1, C));
  if (cfg.L > 0) f = plus(f, mlp(S * S, C));  // key/value lift, shared by both paths
  const std::uint64_t paths = (cfg.use_local ? 1 : 0) + (cfg.use_global ? 1 : 0);
  // per layer and path: q and o projections on N^2 queries, k and v on S^2
  // keys, then scores and weighted sum over M^2 keys per query
  const std::uint64_t layer = plus(plus(mul(4, mul(N2, mul(D, D))), mul(4, mul(S * S, mul(D, D)))), mul(4, mul(N2, mul(P, D))));
  return plus(f, mul(mul(paths, cfg.L), layer));
}

enum class SweepAxis { T, s, i, k, M1, M2, L, strategy };

inline SweepAxis parse_axis(const std::string& s) {
  static const std::pair<const char*, SweepAxis> names[] = {
      {"T", SweepAxis::T},   {"s", SweepAxis::s},   {"i", SweepAxis::i}, {"k", SweepAxis::k},
      {"M1", SweepAxis::M1}, {"M2", SweepAxis::M2}, {"L", SweepAxis::L}, {"strategy", SweepAxis::strategy}};
  for (const auto& [n, a] : names)
    if (s == n) return a;
  throw ConfigError("unknown sweep axis \"" + s + "\"");
}

/// Fixed settings every sweep point starts from.
struct SweepContext {
  LvtcSimConfig lvtc;
  PvtcConfig pvtc;
  SlicePolicy policy;
  std::vector<ImageDims> manifest;

  /// {"lvtc": {...}, "pvtc": {...}, "slicing": {...}}, each optional.
  static SweepContext from_json(const nlohmann::json& j) {
    SweepContext c;
    StrictReader r(j, "sweep config");
    nlohmann::json sub;
    r.read("lvtc", sub);
    if (!sub.is_null()) c.lvtc = LvtcSimConfig::from_json(sub);
    sub = nullptr;
    r.read("pvtc", sub);
    if (!sub.is_null()) c.pvtc = PvtcConfig::from_json(sub);
    sub = nullptr;
    r.read("slicing", sub);
    if (!sub.is_null()) c.policy = SlicePolicy::from_json(sub);
    r.finish();
    return c;
  }
};

struct SweepRow {
  std::string value;
  bool skipped = false;
  std::string reason;
  std::string unit;  // "flops" or "tokens"
  std::uint64_t cost = 0;
  std::uint64_t baseline_cost = 0;
  Fraction ratio;
  std::optional<std::uint64_t> projector_flops;
  std::uint64_t first_layer_visual = 0;
  std::uint64_t last_layer_visual = 0;
  Fraction mean_visual_tokens;
  std::optional<CorpusStats> corpus;

  nlohmann::json to_json() const {
    nlohmann::json j{{"value", value}, {"skipped", skipped}};
    if (skipped) {
      j["reason"] = reason;
      return j;
    }
    j["unit"] = unit;
    j["cost"] = cost;
    j["baseline_cost"] = baseline_cost;
    j["ratio"] = ratio.value();
    j["ratio_exact"] = ratio.str();
    j["projector_flops"] = projector_flops ? nlohmann::json(*projector_flops) : nlohmann::json(nullptr);
    j["first_layer_visual"] = first_layer_visual;
    j["last_layer_visual"] = last_layer_visual;
    j["mean_visual_tokens"] = mean_visual_tokens.to_json();
    if (corpus) j["corpus"] = corpus->to_json();
    return j;
  }
};

namespace detail {

inline std::uint64_t parse_axis_value(const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos || v.size() > 18) {
    throw ConfigError("sweep value \"" + v + "\" is not a non-negative integer");
  }
  return std::stoull(v);
}

inline SweepRow schedule_row(const std::string& value, const LvtcSimConfig& sim) {
  SweepRow row;
  row.value = value;
  row.unit = "flops";
  const TokenSchedule sched = build_cost_schedule(sim.model, sim.S);
  const FlopReport rep = schedule_cost(sched, sim.n_text, CostModel::of(sim.model));
  row.cost = rep.total;
  row.baseline_cost = rep.baseline_total;
  row.ratio = rep.ratio_exact;
  row.projector_flops = projector_flops(sim.model, sim.S, sim.C);
  row.first_layer_visual = sched.per_layer_visual_tokens.front();
  row.last_layer_visual = sched.per_layer_visual_tokens.back();
  std::uint64_t sum = 0;
  for (auto v : sched.per_layer_visual_tokens) sum += v;
  row.mean_visual_tokens = Fraction::reduced(sum, sched.n_layers());
  return row;
}

}  // namespace detail

/// One row per requested value, in request order. Values that violate a
/// module invariant come back as skipped rows carrying the reason.
inline std::vector<SweepRow> sweep(SweepAxis axis, const std::vector<std::string>& values, const SweepContext& ctx) {
  std::vector<SweepRow> rows;
  std::optional<CorpusStats> reference;
  for (const std::string& v : values) {
    try {
      switch (axis) {
        case SweepAxis::strategy: {
          if (ctx.manifest.empty()) throw InputError("strategy sweep needs a non-empty manifest");
          SlicePolicy p = ctx.policy;
          p.strategy = parse_strategy(v);
          if (!reference) {
            SlicePolicy rp = ctx.policy;
            rp.strategy = SliceStrategy::ratio;
            reference = corpus_stats(ctx.manifest, rp);
          }
          SweepRow row;
          row.value = v;
          row.unit = "tokens";
          row.corpus = corpus_stats(ctx.manifest, p);
          row.cost = row.corpus->sum_tokens;
          row.baseline_cost = reference->sum_tokens;
          row.ratio = Fraction::reduced(row.cost, row.baseline_cost);
          row.mean_visual_tokens = row.corpus->avg_tokens();
          rows.push_back(std::move(row));
          break;
        }
        case SweepAxis::L: {
          PvtcConfig c = ctx.pvtc;
          c.L = detail::parse_axis_value(v);
          c.validate(ctx.lvtc.S);
          PvtcConfig base = c;
          base.L = 0;
          SweepRow row;
          row.value = v;
          row.unit = "flops";
          row.cost = pvtc_flops(ctx.lvtc.S, ctx.lvtc.C, c);
          row.baseline_cost = pvtc_flops(ctx.lvtc.S, ctx.lvtc.C, base);
          row.ratio = Fraction::reduced(row.cost, row.baseline_cost);
          const std::uint64_t n = c.compressed_side(ctx.lvtc.S);
          row.first_layer_visual = row.last_layer_visual = n * n;
          row.mean_visual_tokens = Fraction{n * n, 1};
          rows.push_back(std::move(row));
          break;
        }
        default: {
          LvtcSimConfig sim = ctx.lvtc;
          const std::uint64_t x = detail::parse_axis_value(v);
          switch (axis) {
            case SweepAxis::T: sim.model.T = x; break;
            case SweepAxis::s: sim.model.s = x; break;
            case SweepAxis::i: sim.model.i = x; break;
            case SweepAxis::k: sim.model.k = x; break;
            case SweepAxis::M1: sim.model.M1 = x; break;
            case SweepAxis::M2: sim.model.M2 = x; break;
            default: break;
          }
          rows.push_back(detail::schedule_row(v, sim));
        }
      }
    } catch (const ConfigError& e) {
      SweepRow row;
      row.value = v;
      row.skipped = true;
      row.reason = e.what();
      rows.push_back(std::move(row));
    }
  }
  bool any = false;
  for (const auto& r : rows) any = any || !r.skipped;
  if (!any) throw InputError("sweep has no valid points");
  return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "value,skipped,unit,cost,baseline_cost,ratio_exact,ratio,projector_flops,first_layer_visual,last_layer_visual,mean_visual_tokens,reason\n";
  for (const auto& r : rows) {
    if (r.skipped) {
      os << r.value << ",1,,,,,,,,,,\"" << r.reason << "\"\n";
      continue;
    }
    os << r.value << ",0," << r.unit << ',' << r.cost << ',' << r.baseline_cost << ',' << r.ratio.str() << ','
       << nlohmann::json(r.ratio.value()).dump() << ',' << (r.projector_flops ? std::to_string(*r.projector_flops) : "") << ','
       << r.first_layer_visual << ',' << r.last_layer_visual << ',' << nlohmann::json(r.mean_visual_tokens.value()).dump() << ",\n";
  }
  return os.str();
}

/// Two-column plot data: the axis value and the cost (FLOPs or tokens).
/// Skipped rows are left out.
inline std::string plot_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "x,y\n";
  for (const auto& r : rows)
    if (!r.skipped) os << r.value << ',' << r.cost << '\n';
  return os.str();
}

}  // namespace vtc

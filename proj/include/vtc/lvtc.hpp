#pragma once

// Layer-wise token schedule. The decoder sees N1^2 low-resolution visual
// tokens in its shallow layers; at layer k the visual prefix is upsampled to
// N2^2 tokens and a high-resolution projection is added residually. Extra LR
// projections are added to the visual prefix at layers s, s+i, ... before k.

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vtc/config_json.hpp"
#include "vtc/layers.hpp"
#include "vtc/pvtc.hpp"
#include "vtc/rng.hpp"
#include "vtc/tensor.hpp"

namespace vtc {

struct LvtcConfig {
  std::size_t n_layers = 24;
  std::size_t M1 = 2;   // LR side factor
  std::size_t M2 = 1;   // HR side factor
  std::size_t k = 17;   // expansion layer
  std::size_t T = 2;    // LR projector count
  std::size_t s = 4;    // first injection layer
  std::size_t i = 4;    // injection interval
  std::size_t d_model = 32;
  std::size_t d_ff = 64;
  std::size_t heads = 1;
  std::optional<std::size_t> low_rank;
  bool positions = false;  // learned absolute positions, rebuilt after expansion

  std::size_t lr_side(std::size_t S) const { return S / M1; }
  std::size_t hr_side(std::size_t S) const { return S / M2; }

  /// Throws ConfigError naming the first violated constraint. With
  /// `allow_no_expansion`, k == n_layers is accepted and means the sequence
  /// never grows.
  void validate(std::size_t S, bool allow_no_expansion = false) const {
    auto fail = [](const std::string& m) { throw ConfigError("lvtc config: " + m); };
    if (n_layers == 0) fail("n_layers must be >= 1");
    if (M2 < 1) fail("M2 must be >= 1");
    if (!(M1 > M2)) fail("M1 > M2 required, got M1=" + std::to_string(M1) + " M2=" + std::to_string(M2));
    if (S == 0 || S % M1 != 0) fail("divisibility: S=" + std::to_string(S) + " not divisible by M1=" + std::to_string(M1));
    if (S % M2 != 0) fail("divisibility: S=" + std::to_string(S) + " not divisible by M2=" + std::to_string(M2));
    if (hr_side(S) % lr_side(S) != 0) {
      fail("divisibility: N2=" + std::to_string(hr_side(S)) + " not a multiple of N1=" + std::to_string(lr_side(S)));
    }
    if (allow_no_expansion ? k > n_layers : k >= n_layers) {
      fail("k=" + std::to_string(k) + (allow_no_expansion ? " must be <= n_layers=" : " must be < n_layers=") +
           std::to_string(n_layers));
    }
    if (T < 1) fail("T must be >= 1");
    if (i < 1) fail("i must be >= 1");
    if (T >= 2) {
      const std::size_t last = s + i * (T - 2);
      if (last >= k) {
        fail("injection layer " + std::to_string(last) + " (s + i*(T-2)) must be < k=" + std::to_string(k));
      }
    }
    if (d_model == 0 || d_ff == 0) fail("d_model and d_ff must be >= 1");
    if (heads == 0 || d_model % heads != 0) fail("heads must divide d_model");
    if (low_rank && *low_rank == 0) fail("low_rank must be >= 1");
  }

  /// Reads model keys from `r`; `k` defaults to the 3/4-depth layer.
  void read(StrictReader& r) {
    r.read("n_layers", n_layers);
    r.read("M1", M1);
    r.read("M2", M2);
    std::optional<std::size_t> expand_at;
    r.read("k", expand_at);
    k = expand_at ? *expand_at : default_expansion_layer(n_layers);
    r.read("T", T);
    r.read("s", s);
    r.read("i", i);
    r.read("d_model", d_model);
    r.read("d_ff", d_ff);
    r.read("heads", heads);
    r.read("low_rank", low_rank);
    r.read("positions", positions);
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"n_layers", n_layers}, {"M1", M1}, {"M2", M2}, {"k", k}, {"T", T}, {"s", s}, {"i", i},
                     {"d_model", d_model}, {"d_ff", d_ff}, {"heads", heads}, {"positions", positions}};
    j["low_rank"] = low_rank ? nlohmann::json(*low_rank) : nlohmann::json(nullptr);
    return j;
  }

  /// 0-based index of the layer three quarters of the way down: 17 of 24, 23 of 32.
  static std::size_t default_expansion_layer(std::size_t n_layers) {
    return n_layers >= 4 ? 3 * n_layers / 4 - 1 : 0;
  }
};

enum class EventKind { inject_lr, expand_hr };

struct ScheduleEvent {
  std::size_t layer = 0;
  EventKind kind = EventKind::inject_lr;
  std::size_t projector = 0;  // LR projector index for inject_lr (>= 1)

  friend bool operator==(const ScheduleEvent&, const ScheduleEvent&) = default;
};

inline std::string event_label(const ScheduleEvent* e) {
  if (!e) return "none";
  return e->kind == EventKind::expand_hr ? "expand_hr" : "inject_lr:" + std::to_string(e->projector);
}

struct TokenSchedule {
  std::size_t lr_tokens = 0;  // N1^2
  std::size_t hr_tokens = 0;  // N2^2
  std::vector<std::size_t> per_layer_visual_tokens;
  std::vector<ScheduleEvent> events;  // ascending layer

  std::size_t n_layers() const { return per_layer_visual_tokens.size(); }

  const ScheduleEvent* event_at(std::size_t layer) const {
    for (const auto& e : events)
      if (e.layer == layer) return &e;
    return nullptr;
  }

  /// Same visual token count at every layer, no events.
  static TokenSchedule flat(std::size_t n_layers, std::size_t tokens) {
    return {tokens, tokens, std::vector<std::size_t>(n_layers, tokens), {}};
  }

  friend bool operator==(const TokenSchedule&, const TokenSchedule&) = default;
};

namespace detail {

inline TokenSchedule make_schedule(const LvtcConfig& cfg, std::size_t S, bool allow_no_expansion) {
  cfg.validate(S, allow_no_expansion);
  const std::size_t n1 = cfg.lr_side(S), n2 = cfg.hr_side(S);
  TokenSchedule sched;
  sched.lr_tokens = n1 * n1;
  sched.hr_tokens = n2 * n2;
  sched.per_layer_visual_tokens.resize(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    sched.per_layer_visual_tokens[l] = l < cfg.k ? sched.lr_tokens : sched.hr_tokens;
  }
  // VLR[0] enters at the input; VLR[j], j >= 1, is injected at s + i*(j-1).
  for (std::size_t j = 1; j < cfg.T; ++j) sched.events.push_back({cfg.s + cfg.i * (j - 1), EventKind::inject_lr, j});
  if (cfg.k < cfg.n_layers) sched.events.push_back({cfg.k, EventKind::expand_hr, 0});
  return sched;
}

}  // namespace detail

/// Closed-form schedule for a validated config (0 <= k < n_layers).
inline TokenSchedule build_schedule(const LvtcConfig& cfg, std::size_t S) {
  return detail::make_schedule(cfg, S, false);
}

/// As build_schedule, but k == n_layers is legal and yields a schedule that
/// never expands. Used by cost sweeps over the full k range.
inline TokenSchedule build_cost_schedule(const LvtcConfig& cfg, std::size_t S) {
  return detail::make_schedule(cfg, S, true);
}

/// Nearest-neighbour expansion of an implicit n1 x n1 token grid to n2 x n2:
/// output cell (u, v) copies input cell (u*n1/n2, v*n1/n2).
inline Tensor upsample2d(const Tensor& tokens, std::size_t n1, std::size_t n2) {
  detail::require_rank(tokens, 2, "upsample2d");
  if (tokens.dim(0) != n1 * n1) {
    throw ShapeError("upsample2d: expected " + std::to_string(n1 * n1) + " tokens, got " + shape_str(tokens.shape()));
  }
  if (n1 == 0 || n2 % n1 != 0) {
    throw ConfigError("divisibility: upsample scale " + std::to_string(n2) + "/" + std::to_string(n1) + " is not an integer");
  }
  const std::size_t d = tokens.dim(1);
  Tensor out({n2 * n2, d});
  for (std::size_t u = 0; u < n2; ++u)
    for (std::size_t v = 0; v < n2; ++v) {
      const std::size_t src = (u * n1 / n2) * n1 + (v * n1 / n2);
      for (std::size_t c = 0; c < d; ++c) out(u * n2 + v, c) = tokens(src, c);
    }
  return out;
}

/// Pixel-shuffle by `factor`, then an affine map to d_model, either full
/// rank (x W + b) or factored through rank r (x A B + b).
class Projector {
 public:
  Projector() = default;

  static Projector full(std::size_t factor, Tensor weight, Tensor bias) {
    Projector p;
    p.factor_ = factor;
    p.weight_ = std::move(weight);
    p.bias_ = std::move(bias);
    return p;
  }

  static Projector factored(std::size_t factor, Tensor down, Tensor up, Tensor bias) {
    if (down.dim(1) != up.dim(0)) throw ShapeError("factored projector: rank mismatch " + shape_str(down.shape()) + " vs " + shape_str(up.shape()));
    Projector p;
    p.factor_ = factor;
    p.down_ = std::move(down);
    p.up_ = std::move(up);
    p.bias_ = std::move(bias);
    return p;
  }

  static Projector init(const SplitMix64& root, const std::string& name, std::size_t C, std::size_t factor,
                        std::size_t d_model, std::optional<std::size_t> rank) {
    const std::size_t in = C * factor * factor;
    Tensor bias = init_uniform(root, name + ".bias", {1, d_model}, in);
    if (rank) {
      return factored(factor, init_uniform(root, name + ".down", {in, *rank}, in),
                      init_uniform(root, name + ".up", {*rank, d_model}, *rank), std::move(bias));
    }
    return full(factor, init_uniform(root, name + ".weight", {in, d_model}, in), std::move(bias));
  }

  std::size_t factor() const { return factor_; }
  bool is_low_rank() const { return !down_.empty(); }
  std::size_t in() const { return is_low_rank() ? down_.dim(0) : weight_.dim(0); }
  std::size_t out() const { return is_low_rank() ? up_.dim(1) : weight_.dim(1); }
  std::optional<std::size_t> rank() const {
    return is_low_rank() ? std::optional<std::size_t>(down_.dim(1)) : std::nullopt;
  }

  /// Weight entries, bias excluded.
  std::size_t weight_count() const {
    return is_low_rank() ? low_rank_weight_count(in(), down_.dim(1), out()) : full_weight_count(in(), out());
  }

  static constexpr std::size_t full_weight_count(std::size_t in, std::size_t out) { return in * out; }
  static constexpr std::size_t low_rank_weight_count(std::size_t in, std::size_t r, std::size_t out) {
    return in * r + r * out;
  }

  /// {(S/factor)^2, d_model}
  Tensor operator()(const VisualFeatures& vf) const {
    vf.validate();
    const std::size_t S = vf.side();
    if (factor_ == 0 || S % factor_ != 0) {
      throw ConfigError("divisibility: S=" + std::to_string(S) + " is not divisible by projector factor " + std::to_string(factor_));
    }
    const std::size_t n = S / factor_;
    const Tensor x = pixel_shuffle(vf.grid, factor_).reshape({n * n, vf.width() * factor_ * factor_});
    if (x.dim(1) != in()) {
      throw ShapeError("projector expects input width " + std::to_string(in()) + ", got " + std::to_string(x.dim(1)));
    }
    const Tensor y = is_low_rank() ? matmul(matmul(x, down_), up_) : matmul(x, weight_);
    return bias_.empty() ? y : add_row(y, bias_);
  }

 private:
  std::size_t factor_ = 1;
  Tensor weight_;
  Tensor down_, up_;
  Tensor bias_;
};

struct ProjectorBank {
  std::vector<Projector> lr;  // T projectors, factor M1
  Projector hr;               // factor M2

  static ProjectorBank init(const LvtcConfig& cfg, std::size_t C, std::uint64_t seed) {
    const SplitMix64 root = SplitMix64(seed).fork("projectors");
    ProjectorBank bank;
    for (std::size_t j = 0; j < cfg.T; ++j) {
      bank.lr.push_back(Projector::init(root, "lr." + std::to_string(j), C, cfg.M1, cfg.d_model, cfg.low_rank));
    }
    bank.hr = Projector::init(root, "hr", C, cfg.M2, cfg.d_model, cfg.low_rank);
    return bank;
  }
};

inline Tensor lr_project(const VisualFeatures& vf, const ProjectorBank& bank, std::size_t which) {
  if (which >= bank.lr.size()) throw ConfigError("LR projector index " + std::to_string(which) + " out of range");
  return bank.lr[which](vf);
}

inline Tensor hr_project(const VisualFeatures& vf, const ProjectorBank& bank) { return bank.hr(vf); }

/// Pre-norm block: h = x + attn(ln1(x)); y = h + ff2(gelu(ff1(ln2(h)))).
struct DecoderBlock {
  Tensor ln1_gamma, ln1_beta;
  Tensor wq, wk, wv, wo;
  Tensor ln2_gamma, ln2_beta;
  Linear ff1, ff2;
};

/// Causal multi-head self-attention over the rows of x (already normalized).
inline Tensor causal_self_attention(const Tensor& x, const Tensor& wq, const Tensor& wk, const Tensor& wv,
                                    const Tensor& wo, std::size_t heads) {
  const std::size_t n = x.dim(0), d = x.dim(1), dh = d / heads;
  const Tensor Q = matmul(x, wq), K = matmul(x, wk), V = matmul(x, wv);
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor ctx({n, d});
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor scores = scale(matmul(slice_cols(Q, h * dh, (h + 1) * dh), transpose2d(slice_cols(K, h * dh, (h + 1) * dh))), inv_sqrt);
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = r + 1; c < n; ++c) scores(r, c) = -std::numeric_limits<double>::infinity();
    assign_cols(ctx, matmul(softmax_rows(scores), slice_cols(V, h * dh, (h + 1) * dh)), h * dh);
  }
  return matmul(ctx, wo);
}

struct Decoder {
  std::vector<DecoderBlock> blocks;
  std::size_t heads = 1;
  Tensor positions;  // {max_len, d_model} or empty

  static Decoder init(const LvtcConfig& cfg, std::size_t max_len, std::uint64_t seed) {
    const SplitMix64 root = SplitMix64(seed).fork("decoder");
    const std::size_t d = cfg.d_model;
    Decoder dec;
    dec.heads = cfg.heads;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      const std::string n = "block." + std::to_string(l);
      DecoderBlock b;
      b.ln1_gamma = Tensor::full({1, d}, 1.0);
      b.ln1_beta = Tensor::zeros({1, d});
      b.ln2_gamma = Tensor::full({1, d}, 1.0);
      b.ln2_beta = Tensor::zeros({1, d});
      b.wq = init_uniform(root, n + ".wq", {d, d}, d);
      b.wk = init_uniform(root, n + ".wk", {d, d}, d);
      b.wv = init_uniform(root, n + ".wv", {d, d}, d);
      b.wo = init_uniform(root, n + ".wo", {d, d}, d);
      b.ff1 = Linear::init(root, n + ".ff1", d, cfg.d_ff, true);
      b.ff2 = Linear::init(root, n + ".ff2", cfg.d_ff, d, true);
      dec.blocks.push_back(std::move(b));
    }
    if (cfg.positions) dec.positions = init_uniform(root, "positions", {max_len, d}, d);
    return dec;
  }

  /// Every weight, gain and bias zero: each block is the identity map.
  static Decoder null(const LvtcConfig& cfg) {
    const std::size_t d = cfg.d_model;
    Decoder dec;
    dec.heads = cfg.heads;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
      DecoderBlock b;
      b.ln1_gamma = b.ln1_beta = b.ln2_gamma = b.ln2_beta = Tensor::zeros({1, d});
      b.wq = b.wk = b.wv = b.wo = Tensor::zeros({d, d});
      b.ff1 = {Tensor::zeros({d, cfg.d_ff}), Tensor::zeros({1, cfg.d_ff})};
      b.ff2 = {Tensor::zeros({cfg.d_ff, d}), Tensor::zeros({1, d})};
      dec.blocks.push_back(std::move(b));
    }
    return dec;
  }

  Tensor block(std::size_t l, const Tensor& x) const {
    const DecoderBlock& b = blocks.at(l);
    const Tensor h = add(x, causal_self_attention(layer_norm_rows(x, b.ln1_gamma, b.ln1_beta), b.wq, b.wk, b.wv, b.wo, heads));
    return add(h, b.ff2(gelu(b.ff1(layer_norm_rows(h, b.ln2_gamma, b.ln2_beta)))));
  }

  /// Runs blocks [0, n) with no schedule events.
  Tensor run(const Tensor& x) const {
    Tensor h = x;
    for (std::size_t l = 0; l < blocks.size(); ++l) h = block(l, h);
    return h;
  }

  Tensor add_positions(const Tensor& x, double sign) const {
    if (positions.empty()) return x;
    if (x.dim(0) > positions.dim(0)) throw ShapeError("sequence longer than position table");
    return add(x, scale(positions.slice_rows(0, x.dim(0)), sign));
  }
};

/// Seeded synthetic text embeddings, U[-1, 1). Zero tokens gives an empty tensor.
inline Tensor synthetic_text(std::size_t n_text, std::size_t d_model, std::uint64_t seed) {
  if (n_text == 0) return {};
  SplitMix64 rng = SplitMix64(seed).fork("text");
  return Tensor::uniform({n_text, d_model}, rng, -1.0, 1.0);
}

struct TraceRecord {
  std::size_t layer = 0;
  std::size_t seq_len = 0;  // rows entering the block
  std::size_t visual_tokens = 0;
  std::string event;        // "none", "inject_lr:<j>", "expand_hr"

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;

  nlohmann::json to_json() const {
    return {{"layer", layer}, {"seq_len", seq_len}, {"visual_tokens", visual_tokens}, {"event", event}};
  }

  static TraceRecord from_json(const nlohmann::json& j) {
    TraceRecord t;
    StrictReader r(j, "trace record");
    r.read("layer", t.layer);
    r.read("seq_len", t.seq_len);
    r.read("visual_tokens", t.visual_tokens);
    r.read("event", t.event);
    r.finish();
    return t;
  }
};

struct LvtcRun {
  Tensor hidden;  // {N2^2 + n_text, d_model}
  std::size_t visual_tokens = 0;
  std::vector<TraceRecord> trace;
};

/// Called at every layer with the sequence before and after that layer's
/// schedule event (identical tensors when there is none).
using LayerHook = std::function<void(std::size_t layer, const Tensor& before_event, const Tensor& after_event)>;

/// The layer loop, taken literally: at idx == k expand and add VHR; else if
/// s <= idx < s + i*len(VLR) and (idx - s) % i == 0 add VLR[(idx - s) / i],
/// where VLR has already lost its first entry to the input sequence.
inline LvtcRun lvtc_forward(const VisualFeatures& vf, const Tensor& text, const LvtcConfig& cfg,
                            const ProjectorBank& bank, const Decoder& decoder, const LayerHook& hook = {}) {
  vf.validate();
  const std::size_t S = vf.side();
  cfg.validate(S);
  if (!text.empty()) detail::require_rank(text, 2, "lvtc_forward");
  if (!text.empty() && text.dim(1) != cfg.d_model) {
    throw ShapeError("text width " + std::to_string(text.dim(1)) + " != d_model " + std::to_string(cfg.d_model));
  }
  if (bank.lr.size() != cfg.T) throw ConfigError("projector bank has " + std::to_string(bank.lr.size()) + " LR projectors, config T=" + std::to_string(cfg.T));
  if (decoder.blocks.size() != cfg.n_layers) throw ConfigError("decoder depth does not match n_layers");

  const std::size_t n1 = cfg.lr_side(S), n2 = cfg.hr_side(S);
  std::vector<Tensor> vlr;
  for (std::size_t j = 0; j < cfg.T; ++j) vlr.push_back(lr_project(vf, bank, j));
  const Tensor vhr = hr_project(vf, bank);
  if (vhr.dim(0) != n2 * n2 || vlr.front().dim(0) != n1 * n1) throw ShapeError("projector output counts do not match the schedule");

  Tensor x = decoder.add_positions(text.empty() ? vlr.front() : concat_rows(vlr.front(), text), +1.0);
  vlr.erase(vlr.begin());
  std::size_t n_vis = n1 * n1;

  LvtcRun run;
  for (std::size_t idx = 0; idx < cfg.n_layers; ++idx) {
    std::string event = "none";
    const Tensor before = hook ? x : Tensor{};
    if (idx == cfg.k) {
      const Tensor raw = decoder.add_positions(x, -1.0);
      const Tensor expanded = add(upsample2d(raw.slice_rows(0, n_vis), n1, n2), vhr);
      x = raw.dim(0) > n_vis ? concat_rows(expanded, raw.slice_rows(n_vis, raw.dim(0))) : expanded;
      x = decoder.add_positions(x, +1.0);
      n_vis = n2 * n2;
      event = "expand_hr";
    } else if (idx >= cfg.s && idx < cfg.s + cfg.i * vlr.size() && (idx - cfg.s) % cfg.i == 0) {
      const std::size_t j = (idx - cfg.s) / cfg.i;
      const Tensor& inj = vlr[j];
      for (std::size_t r = 0; r < n_vis; ++r)
        for (std::size_t c = 0; c < cfg.d_model; ++c) x(r, c) += inj(r, c);
      event = "inject_lr:" + std::to_string(j + 1);
    }
    if (hook) hook(idx, before, x);
    run.trace.push_back({idx, x.dim(0), n_vis, event});
    x = decoder.block(idx, x);
  }
  run.hidden = std::move(x);
  run.visual_tokens = n_vis;
  return run;
}

/// Schedule reconstructed from an observed trace. The low-resolution count
/// is the first one observed, so with k = 0 it reads as N2^2.
inline TokenSchedule schedule_from_trace(const std::vector<TraceRecord>& trace) {
  TokenSchedule s;
  if (trace.empty()) throw InputError("empty trace");
  s.lr_tokens = trace.front().visual_tokens;
  s.hr_tokens = trace.back().visual_tokens;
  for (std::size_t l = 0; l < trace.size(); ++l) {
    const auto& r = trace[l];
    if (r.layer != l) throw FormatError("trace records out of order at layer " + std::to_string(l));
    s.per_layer_visual_tokens.push_back(r.visual_tokens);
    if (r.event == "expand_hr") {
      s.events.push_back({l, EventKind::expand_hr, 0});
    } else if (r.event.rfind("inject_lr:", 0) == 0) {
      const std::string j = r.event.substr(10);
      if (j.empty() || j.size() > 9 || j.find_first_not_of("0123456789") != std::string::npos) {
        throw FormatError("bad trace event \"" + r.event + "\"");
      }
      s.events.push_back({l, EventKind::inject_lr, std::stoul(j)});
    } else if (r.event != "none") {
      throw FormatError("unknown trace event \"" + r.event + "\"");
    }
  }
  return s;
}

/// Everything lvtc-sim needs: the model config plus synthetic input sizes.
struct LvtcSimConfig {
  LvtcConfig model;
  std::size_t S = 32;
  std::size_t C = 16;
  std::size_t n_text = 8;
  std::uint64_t seed = 0;

  static LvtcSimConfig from_json(const nlohmann::json& j) {
    LvtcSimConfig c;
    StrictReader r(j, "lvtc config");
    c.model.read(r);
    r.read("S", c.S);
    r.read("C", c.C);
    r.read("n_text", c.n_text);
    r.read("seed", c.seed);
    r.finish();
    if (c.S == 0 || c.C == 0) throw ConfigError("lvtc config: S and C must be >= 1");
    return c;
  }

  nlohmann::json to_json() const {
    nlohmann::json j = model.to_json();
    j["S"] = S;
    j["C"] = C;
    j["n_text"] = n_text;
    j["seed"] = seed;
    return j;
  }
};

}  // namespace vtc

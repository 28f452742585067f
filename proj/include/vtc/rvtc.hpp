#pragma once

// High-resolution slicing planner. Ratio matching picks the candidate grid
// whose aspect ratio is closest to the image's. Area and edge matching first
// cap the patch budget by the image's size in base tiles, then run the same
// selection over the smaller candidate set.

#include <algorithm>
#include <cstdint>
#include <istream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "vtc/config_json.hpp"
#include "vtc/error.hpp"

namespace vtc {

struct ImageDims {
  std::uint64_t width = 1;
  std::uint64_t height = 1;

  void validate() const {
    if (width < 1 || height < 1) throw InputError("image dims must be >= 1, got " + std::to_string(width) + "x" + std::to_string(height));
    // Keeps every aspect cross-product inside 128 bits.
    if (width > kMaxSide || height > kMaxSide) throw InputError("image side exceeds 2^31 pixels");
  }

  static constexpr std::uint64_t kMaxSide = std::uint64_t{1} << 31;
};

enum class SliceStrategy { ratio, area, edge };

inline const char* to_string(SliceStrategy s) {
  switch (s) {
    case SliceStrategy::ratio: return "ratio";
    case SliceStrategy::area: return "area";
    case SliceStrategy::edge: return "edge";
  }
  return "?";
}

inline SliceStrategy parse_strategy(const std::string& s) {
  if (s == "ratio") return SliceStrategy::ratio;
  if (s == "area") return SliceStrategy::area;
  if (s == "edge") return SliceStrategy::edge;
  throw ConfigError("unknown slicing strategy \"" + s + "\" (expected ratio, area or edge)");
}

struct SlicePolicy {
  std::uint64_t unit = 448;
  std::uint64_t max_patches = 6;
  SliceStrategy strategy = SliceStrategy::ratio;
  bool thumbnail = true;
  std::uint64_t tokens_per_tile = 256;

  void validate() const {
    if (unit < 1) throw ConfigError("unit must be >= 1");
    if (max_patches < 1) throw ConfigError("max_patches must be >= 1");
    if (max_patches > kMaxPatches) throw ConfigError("max_patches must be <= " + std::to_string(kMaxPatches));
    if (tokens_per_tile < 1) throw ConfigError("tokens_per_tile must be >= 1");
  }

  static constexpr std::uint64_t kMaxPatches = 1024;

  static SlicePolicy from_json(const nlohmann::json& j) {
    SlicePolicy p;
    StrictReader r(j, "slicing policy");
    std::string strategy = to_string(p.strategy);
    r.read("unit", p.unit);
    r.read("max_patches", p.max_patches);
    r.read("strategy", strategy);
    r.read("thumbnail", p.thumbnail);
    r.read("tokens_per_tile", p.tokens_per_tile);
    r.finish();
    p.strategy = parse_strategy(strategy);
    p.validate();
    return p;
  }
};

struct Grid {
  std::uint64_t cols = 1;
  std::uint64_t rows = 1;

  std::uint64_t product() const { return cols * rows; }
  friend bool operator==(const Grid&, const Grid&) = default;
};

struct SlicePlan {
  SliceStrategy strategy = SliceStrategy::ratio;
  std::uint64_t grid_cols = 1;
  std::uint64_t grid_rows = 1;
  std::uint64_t patches = 1;
  std::uint64_t effective_max_patches = 1;
  bool thumbnail_added = false;
  std::uint64_t tokens_per_tile = 256;
  std::uint64_t total_tokens = 0;

  nlohmann::json to_json() const {
    return {{"strategy", to_string(strategy)},
            {"grid", {grid_cols, grid_rows}},
            {"patches", patches},
            {"thumbnail", thumbnail_added},
            {"total_tokens", total_tokens}};
  }
};

/// Every (cols, rows) with cols*rows <= R, ordered by product then cols.
inline std::vector<Grid> candidate_grids(std::uint64_t R) {
  std::vector<Grid> out;
  for (std::uint64_t p = 1; p <= R; ++p)
    for (std::uint64_t c = 1; c <= p; ++c)
      if (p % c == 0) out.push_back({c, p / c});
  return out;
}

namespace detail {

using u128 = unsigned __int128;

/// |log(W/H) - log(c/r)| = log(max(Wr, Hc) / min(Wr, Hc)); kept as the
/// fraction hi/lo so comparisons are exact.
struct AspectGap {
  u128 hi, lo;
};

inline AspectGap aspect_gap(const ImageDims& d, const Grid& g) {
  const u128 a = static_cast<u128>(d.width) * g.rows;
  const u128 b = static_cast<u128>(d.height) * g.cols;
  return a >= b ? AspectGap{a, b} : AspectGap{b, a};
}

/// -1, 0, 1 as x <, ==, > y.
inline int compare(const AspectGap& x, const AspectGap& y) {
  const u128 l = x.hi * y.lo, r = y.hi * x.lo;
  return l < r ? -1 : (l > r ? 1 : 0);
}

inline std::uint64_t ceil_div(u128 a, u128 b) { return static_cast<std::uint64_t>((a + b - 1) / b); }

}  // namespace detail

/// Closest aspect ratio among candidates with product <= R. An exact tie
/// moves to the later (larger) candidate only when the image covers more
/// than half of that grid's tile area.
inline Grid select_grid(const ImageDims& dims, std::uint64_t R, std::uint64_t unit) {
  const auto cands = candidate_grids(R);
  Grid best = cands.front();
  auto best_gap = detail::aspect_gap(dims, best);
  const detail::u128 twice_area = 2 * static_cast<detail::u128>(dims.width) * dims.height;
  const detail::u128 tile = static_cast<detail::u128>(unit) * unit;
  for (std::size_t n = 1; n < cands.size(); ++n) {
    const auto gap = detail::aspect_gap(dims, cands[n]);
    const int c = detail::compare(gap, best_gap);
    if (c < 0 || (c == 0 && twice_area > tile * cands[n].product())) {
      best = cands[n];
      best_gap = gap;
    }
  }
  return best;
}

/// Patch cap for the policy's strategy: R, min(R, ceil(WH/unit^2)) or
/// min(R, ceil(W/unit) * ceil(H/unit)).
inline std::uint64_t effective_max_patches(const ImageDims& d, const SlicePolicy& p) {
  using detail::u128;
  switch (p.strategy) {
    case SliceStrategy::ratio: return p.max_patches;
    case SliceStrategy::area: {
      const auto tiles = detail::ceil_div(static_cast<u128>(d.width) * d.height, static_cast<u128>(p.unit) * p.unit);
      return std::min(p.max_patches, tiles);
    }
    case SliceStrategy::edge: {
      const u128 tiles = static_cast<u128>(detail::ceil_div(d.width, p.unit)) * detail::ceil_div(d.height, p.unit);
      return tiles < p.max_patches ? static_cast<std::uint64_t>(tiles) : p.max_patches;
    }
  }
  return p.max_patches;
}

inline SlicePlan plan_slices(const ImageDims& dims, const SlicePolicy& policy) {
  dims.validate();
  policy.validate();
  SlicePlan plan;
  plan.strategy = policy.strategy;
  plan.effective_max_patches = effective_max_patches(dims, policy);
  const Grid g = select_grid(dims, plan.effective_max_patches, policy.unit);
  plan.grid_cols = g.cols;
  plan.grid_rows = g.rows;
  plan.patches = g.product();
  plan.thumbnail_added = policy.thumbnail && plan.patches > 1;
  plan.tokens_per_tile = policy.tokens_per_tile;
  plan.total_tokens = (plan.patches + (plan.thumbnail_added ? 1 : 0)) * policy.tokens_per_tile;
  return plan;
}

inline SlicePlan ratio_match(const ImageDims& d, SlicePolicy p) {
  p.strategy = SliceStrategy::ratio;
  return plan_slices(d, p);
}

inline SlicePlan area_match(const ImageDims& d, SlicePolicy p) {
  p.strategy = SliceStrategy::area;
  return plan_slices(d, p);
}

inline SlicePlan edge_match(const ImageDims& d, SlicePolicy p) {
  p.strategy = SliceStrategy::edge;
  return plan_slices(d, p);
}

struct Fraction {
  std::uint64_t num = 0;
  std::uint64_t den = 1;

  static Fraction reduced(std::uint64_t n, std::uint64_t d) {
    const std::uint64_t g = std::gcd(n, d);
    return g ? Fraction{n / g, d / g} : Fraction{0, 1};
  }
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }
  nlohmann::json to_json() const { return {{"exact", str()}, {"value", value()}}; }
  friend bool operator==(const Fraction&, const Fraction&) = default;
};

struct CorpusStats {
  SliceStrategy strategy = SliceStrategy::ratio;
  std::uint64_t count = 0;
  std::uint64_t sum_patches = 0;
  std::uint64_t sum_thumbnails = 0;
  std::uint64_t sum_tokens = 0;
  std::uint64_t tokens_per_tile = 256;
  std::map<std::uint64_t, std::uint64_t> histogram;  // patches -> images

  Fraction avg_patches() const { return Fraction::reduced(sum_patches, count); }
  Fraction avg_thumbnails() const { return Fraction::reduced(sum_thumbnails, count); }
  Fraction avg_tokens() const { return Fraction::reduced(sum_tokens, count); }

  nlohmann::json to_json() const {
    nlohmann::json hist = nlohmann::json::object();
    for (const auto& [p, n] : histogram) hist[std::to_string(p)] = n;
    return {{"strategy", to_string(strategy)},        {"images", count},
            {"avg_patches", avg_patches().to_json()}, {"avg_thumbnails", avg_thumbnails().to_json()},
            {"avg_tokens", avg_tokens().to_json()},   {"tokens_per_tile", tokens_per_tile},
            {"histogram", hist}};
  }
};

/// Streaming fold over plans. Integer sums, so merging partial results in
/// any order gives identical statistics.
class CorpusAccumulator {
 public:
  explicit CorpusAccumulator(const SlicePolicy& policy) {
    stats_.strategy = policy.strategy;
    stats_.tokens_per_tile = policy.tokens_per_tile;
  }

  void add(const SlicePlan& plan) {
    ++stats_.count;
    stats_.sum_patches += plan.patches;
    stats_.sum_thumbnails += plan.thumbnail_added ? 1 : 0;
    stats_.sum_tokens += plan.total_tokens;
    ++stats_.histogram[plan.patches];
  }

  void merge(const CorpusAccumulator& other) {
    stats_.count += other.stats_.count;
    stats_.sum_patches += other.stats_.sum_patches;
    stats_.sum_thumbnails += other.stats_.sum_thumbnails;
    stats_.sum_tokens += other.stats_.sum_tokens;
    for (const auto& [p, n] : other.stats_.histogram) stats_.histogram[p] += n;
  }

  /// Throws InputError when nothing was added.
  CorpusStats finish() const {
    if (stats_.count == 0) throw InputError("empty manifest");
    if (stats_.sum_tokens != (stats_.sum_patches + stats_.sum_thumbnails) * stats_.tokens_per_tile) {
      throw Error("token accounting drifted from (patches + thumbnails) * tokens_per_tile");
    }
    return stats_;
  }

 private:
  CorpusStats stats_;
};

template <class Range>
CorpusStats corpus_stats(const Range& manifest, const SlicePolicy& policy) {
  CorpusAccumulator acc(policy);
  for (const ImageDims& d : manifest) acc.add(plan_slices(d, policy));
  return acc.finish();
}

/// Parses one manifest line: `width,height` or {"w":..,"h":..}. Returns false
/// for blank lines, '#' comments and a `width,height` header.
inline bool parse_manifest_line(const std::string& raw, std::size_t line_no, ImageDims& out) {
  const auto b = raw.find_first_not_of(" \t\r");
  if (b == std::string::npos || raw[b] == '#') return false;
  const std::string line = raw.substr(b, raw.find_last_not_of(" \t\r") - b + 1);
  auto bad = [&](const std::string& why) {
    return InputError("manifest line " + std::to_string(line_no) + ": " + why);
  };
  if (line[0] == '{') {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      throw bad("invalid JSON");
    }
    if (!j.is_object() || j.size() != 2 || !j.contains("w") || !j.contains("h") || !j["w"].is_number_unsigned() ||
        !j["h"].is_number_unsigned()) {
      throw bad("expected {\"w\":<int>,\"h\":<int>}");
    }
    out = {j["w"].get<std::uint64_t>(), j["h"].get<std::uint64_t>()};
  } else {
    if (line == "width,height" || line == "w,h") return false;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw bad("expected width,height");
    auto num = [&](std::string s) -> std::uint64_t {
      const auto f = s.find_first_not_of(" \t"), l = s.find_last_not_of(" \t");
      if (f == std::string::npos) throw bad("missing number");
      s = s.substr(f, l - f + 1);
      if (s.find_first_not_of("0123456789") != std::string::npos || s.size() > 18) throw bad("not a positive integer: \"" + s + "\"");
      return std::stoull(s);
    };
    out = {num(line.substr(0, comma)), num(line.substr(comma + 1))};
  }
  if (out.width < 1 || out.height < 1) throw bad("dims must be >= 1");
  return true;
}

/// Calls `fn(ImageDims)` for every entry of a CSV or JSON-lines manifest.
template <class Fn>
void for_each_manifest_entry(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    ImageDims d;
    if (parse_manifest_line(line, n, d)) fn(d);
  }
}

inline std::vector<ImageDims> parse_manifest(const std::string& text) {
  std::istringstream in(text);
  std::vector<ImageDims> out;
  for_each_manifest_entry(in, [&](const ImageDims& d) { out.push_back(d); });
  return out;
}

}  // namespace vtc

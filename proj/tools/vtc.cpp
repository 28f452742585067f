// vtc: command-line driver for the token-compression toolkit.
//
// Exit codes: 0 success, 2 configuration/shape error, 3 input/format error.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "vtc/selfcheck.hpp"
#include "vtc/vtc.hpp"

namespace {

using nlohmann::json;

nlohmann::json load_json_file(const std::string& path) {
  return vtc::parse_json_text(vtc::vtf::read_file(path), path);
}

/// --seed, then the config's own "seed", then $VTC_SEED, then 0.
std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, const json& config) {
  if (flag) return *flag;
  if (config.is_object() && config.contains("seed")) return config.at("seed").get<std::uint64_t>();
  if (const char* env = std::getenv("VTC_SEED")) {
    const std::string s(env);
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos || s.size() > 19) {
      throw vtc::ConfigError("VTC_SEED must be a non-negative integer, got \"" + s + "\"");
    }
    return std::stoull(s);
  }
  return 0;
}

void emit(const std::string& text, const std::string& path) {
  if (path.empty()) {
    std::cout << text;
  } else {
    vtc::vtf::write_file(path, text);
  }
}

vtc::VisualFeatures load_features(const std::string& path) {
  const std::string bytes = vtc::vtf::read_file(path);
  if (bytes.size() >= 4 && bytes.compare(0, 4, "VTFA") == 0) {
    return vtc::VisualFeatures::from_archive(vtc::vtf::decode_archive(bytes));
  }
  const auto first = bytes.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && bytes[first] == '{') {
    const json j = vtc::parse_json_text(bytes, path);
    if (!j.is_object() || !j.contains("grid") || !j.contains("cls") || j.size() != 2) {
      throw vtc::FormatError(path + ": JSON features must be {\"grid\":<tensor>,\"cls\":<tensor>}");
    }
    vtc::VisualFeatures vf{vtc::vtf::from_json(j["grid"]), vtc::vtf::from_json(j["cls"])};
    vf.validate();
    return vf;
  }
  throw vtc::FormatError(path + ": bad fixture magic (expected VTFA archive or JSON)");
}

struct GenFixtureArgs {
  std::size_t S = 32, C = 16;
  std::optional<std::uint64_t> seed;
  std::string output;
  bool as_json = false;
};

int cmd_gen_fixture(const GenFixtureArgs& a) {
  if (a.S == 0 || a.C == 0) throw vtc::ConfigError("S and C must be >= 1");
  const auto vf = vtc::VisualFeatures::random(a.S, a.C, resolve_seed(a.seed, json()));
  if (a.as_json) {
    vtc::vtf::write_file(a.output, json{{"grid", vtc::vtf::to_json(vf.grid)}, {"cls", vtc::vtf::to_json(vf.cls)}}.dump() + "\n");
  } else {
    vtc::vtf::write_file(a.output, vtc::vtf::encode_archive(vf.to_archive()));
  }
  return 0;
}

struct PvtcArgs {
  std::string config, input, output, params_out, summary;
  std::optional<std::uint64_t> seed;
};

int cmd_pvtc(const PvtcArgs& a) {
  const json cj = load_json_file(a.config);
  vtc::PvtcConfig cfg = vtc::PvtcConfig::from_json(cj);
  cfg.seed = resolve_seed(a.seed, cj);
  const auto vf = load_features(a.input);
  cfg.validate(vf.side());
  const auto params = vtc::PvtcParams::init(cfg, vf.side(), vf.width());
  const auto out = vtc::pvtc_forward(vf, cfg, params);
  const std::string bytes = vtc::vtf::encode(out.tokens);
  vtc::vtf::write_file(a.output, bytes);
  if (!a.params_out.empty()) vtc::vtf::write_file(a.params_out, vtc::vtf::encode_archive(params.to_archive()));
  const json summary{{"S", vf.side()},   {"M", cfg.M},
                     {"N", out.N},       {"D", cfg.D},
                     {"L", cfg.L},       {"tokens", out.tokens.dim(0)},
                     {"seed", cfg.seed}, {"checksum", vtc::vtf::hex64(vtc::vtf::fnv1a64(bytes))}};
  emit(summary.dump(2) + "\n", a.summary);
  return 0;
}

struct LvtcArgs {
  std::string config, trace, output;
  std::optional<std::uint64_t> seed;
};

vtc::LvtcSimConfig load_lvtc_config(const std::string& path, json& raw) {
  raw = path.empty() ? json::object() : load_json_file(path);
  return vtc::LvtcSimConfig::from_json(raw);
}

int cmd_lvtc_sim(const LvtcArgs& a) {
  json raw;
  vtc::LvtcSimConfig sim = load_lvtc_config(a.config, raw);
  sim.seed = resolve_seed(a.seed, raw);
  sim.model.validate(sim.S);
  const auto vf = vtc::VisualFeatures::random(sim.S, sim.C, sim.seed);
  const auto text = vtc::synthetic_text(sim.n_text, sim.model.d_model, sim.seed);
  const auto bank = vtc::ProjectorBank::init(sim.model, sim.C, sim.seed);
  const std::size_t n2 = sim.model.hr_side(sim.S);
  const auto decoder = vtc::Decoder::init(sim.model, n2 * n2 + sim.n_text, sim.seed);
  const auto run = vtc::lvtc_forward(vf, text, sim.model, bank, decoder);

  std::string trace;
  for (const auto& r : run.trace) trace += r.to_json().dump() + "\n";
  vtc::vtf::write_file(a.trace, trace);
  const std::string hidden = vtc::vtf::encode(run.hidden);
  if (!a.output.empty()) vtc::vtf::write_file(a.output, hidden);
  const json summary{{"n_layers", sim.model.n_layers},
                     {"k", sim.model.k},
                     {"final_seq_len", run.hidden.dim(0)},
                     {"final_visual_tokens", run.visual_tokens},
                     {"seed", sim.seed},
                     {"checksum", vtc::vtf::hex64(vtc::vtf::fnv1a64(hidden))}};
  std::cout << summary.dump(2) << "\n";
  return 0;
}

struct AnalyzeArgs {
  std::string config, trace, format = "json", output;
};

int cmd_analyze(const AnalyzeArgs& a) {
  json raw;
  const vtc::LvtcSimConfig sim = load_lvtc_config(a.config, raw);
  vtc::TokenSchedule sched;
  if (a.trace.empty()) {
    sched = vtc::build_cost_schedule(sim.model, sim.S);
  } else {
    std::vector<vtc::TraceRecord> records;
    std::istringstream in(vtc::vtf::read_file(a.trace));
    std::string line;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      records.push_back(vtc::TraceRecord::from_json(vtc::parse_json_text(line, a.trace)));
    }
    for (const auto& r : records) {
      if (r.seq_len != r.visual_tokens + sim.n_text) {
        throw vtc::InputError("trace layer " + std::to_string(r.layer) + ": seq_len does not equal visual_tokens + n_text of the config");
      }
    }
    sched = vtc::schedule_from_trace(records);
  }
  auto report = vtc::schedule_cost(sched, sim.n_text, vtc::CostModel::of(sim.model));
  report.projector_flops = vtc::projector_flops(sim.model, sim.S, sim.C);
  if (a.format == "csv") {
    emit(report.to_csv(), a.output);
  } else if (a.format == "json") {
    json j = report.to_json();
    j["n_text"] = sim.n_text;
    j["visual_tokens"] = sched.per_layer_visual_tokens;
    emit(j.dump(2) + "\n", a.output);
  } else {
    throw vtc::ConfigError("--format must be json or csv");
  }
  return 0;
}

struct SweepArgs {
  std::string config, axis, values, manifest, format = "json", output, plot;
};

std::vector<std::string> expand_values(const std::string& list) {
  std::vector<std::string> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) {
      if (!item.empty()) out.push_back(item);
      continue;
    }
    const std::string lo = item.substr(0, colon), hi = item.substr(colon + 1);
    if (lo.empty() || hi.empty() || lo.find_first_not_of("0123456789") != std::string::npos ||
        hi.find_first_not_of("0123456789") != std::string::npos || lo.size() > 9 || hi.size() > 9) {
      throw vtc::ConfigError("bad range \"" + item + "\" (expected lo:hi)");
    }
    for (auto v = std::stoull(lo); v <= std::stoull(hi); ++v) out.push_back(std::to_string(v));
  }
  if (out.empty()) throw vtc::InputError("empty sweep range");
  return out;
}

int cmd_sweep(const SweepArgs& a) {
  vtc::SweepContext ctx = a.config.empty() ? vtc::SweepContext{} : vtc::SweepContext::from_json(load_json_file(a.config));
  if (!a.manifest.empty()) ctx.manifest = vtc::parse_manifest(vtc::vtf::read_file(a.manifest));
  const auto rows = vtc::sweep(vtc::parse_axis(a.axis), expand_values(a.values), ctx);
  if (a.format == "csv") {
    emit(vtc::sweep_csv(rows), a.output);
  } else if (a.format == "json") {
    json j{{"axis", a.axis}, {"rows", json::array()}};
    for (const auto& r : rows) j["rows"].push_back(r.to_json());
    emit(j.dump(2) + "\n", a.output);
  } else {
    throw vtc::ConfigError("--format must be json or csv");
  }
  if (!a.plot.empty()) vtc::vtf::write_file(a.plot, vtc::plot_csv(rows));
  return 0;
}

struct RvtcArgs {
  std::optional<std::uint64_t> width, height;
  std::string strategy = "ratio", manifest, output;
  std::uint64_t max_patches = 6, unit = 448, tokens_per_tile = 256;
  bool no_thumbnail = false;
};

int cmd_rvtc_plan(const RvtcArgs& a) {
  vtc::SlicePolicy p;
  p.strategy = vtc::parse_strategy(a.strategy);
  p.max_patches = a.max_patches;
  p.unit = a.unit;
  p.tokens_per_tile = a.tokens_per_tile;
  p.thumbnail = !a.no_thumbnail;
  p.validate();
  if (a.manifest.empty()) {
    if (!a.width || !a.height) throw vtc::ConfigError("give --width and --height, or --manifest");
    const auto plan = vtc::plan_slices({*a.width, *a.height}, p);
    emit(plan.to_json().dump() + "\n", a.output);
    return 0;
  }
  std::ifstream in(a.manifest);
  if (!in) throw vtc::InputError("cannot open " + a.manifest);
  vtc::CorpusAccumulator acc(p);
  std::string plans;
  vtc::for_each_manifest_entry(in, [&](const vtc::ImageDims& d) {
    const auto plan = vtc::plan_slices(d, p);
    acc.add(plan);
    std::cout << plan.to_json().dump() << "\n";
  });
  const auto stats = acc.finish();
  emit(stats.to_json().dump(2) + "\n", a.output);
  return 0;
}

int cmd_selfcheck(const std::string& fault, std::uint64_t seed) {
  const auto results = vtc::run_selfcheck({fault, seed});
  vtc::print_selfcheck(std::cout, results);
  bool ok = true;
  for (const auto& r : results) ok = ok && r.passed;
  std::cout << (ok ? "selfcheck: all checks passed\n" : "selfcheck: FAILED\n");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vtc: visual token compression toolkit"};
  app.require_subcommand(1);

  GenFixtureArgs gen;
  auto* c_gen = app.add_subcommand("gen-fixture", "Write seeded random visual features (VTF archive or JSON)");
  c_gen->add_option("--S", gen.S, "Grid side length in patches")->capture_default_str();
  c_gen->add_option("--C", gen.C, "Encoder feature width")->capture_default_str();
  c_gen->add_option("--seed", gen.seed, "Seed (falls back to $VTC_SEED, then 0)");
  c_gen->add_option("--output", gen.output, "Output path")->required();
  c_gen->add_flag("--json", gen.as_json, "Write JSON instead of a VTF archive");

  PvtcArgs pv;
  auto* c_pvtc = app.add_subcommand("pvtc", "Compress a visual feature fixture with the dual-query projector");
  c_pvtc->add_option("--config", pv.config, "PVTC config JSON")->required();
  c_pvtc->add_option("--input", pv.input, "Visual features (VTF archive or JSON)")->required();
  c_pvtc->add_option("--output", pv.output, "Compressed tokens (VTF)")->required();
  c_pvtc->add_option("--seed", pv.seed, "Parameter seed override");
  c_pvtc->add_option("--params-out", pv.params_out, "Also write parameters as a VTF archive");
  c_pvtc->add_option("--summary", pv.summary, "Write the JSON summary here instead of stdout");

  LvtcArgs lv;
  auto* c_lvtc = app.add_subcommand("lvtc-sim", "Run the layer-wise schedule through a toy decoder and trace it");
  c_lvtc->add_option("--config", lv.config, "LVTC config JSON (defaults apply when omitted)");
  c_lvtc->add_option("--trace", lv.trace, "Per-layer trace output (JSON lines)")->required();
  c_lvtc->add_option("--output", lv.output, "Final hidden states (VTF)");
  c_lvtc->add_option("--seed", lv.seed, "Seed override");

  AnalyzeArgs an;
  auto* c_an = app.add_subcommand("analyze", "FLOP report for an LVTC schedule");
  c_an->add_option("--config", an.config, "LVTC config JSON");
  c_an->add_option("--trace", an.trace, "Use the schedule observed in an lvtc-sim trace");
  c_an->add_option("--format", an.format, "json or csv")->capture_default_str();
  c_an->add_option("--output", an.output, "Output path (stdout when omitted)");

  SweepArgs sw;
  auto* c_sw = app.add_subcommand("sweep", "Cost table over one parameter axis");
  c_sw->add_option("--config", sw.config, "Sweep config JSON {lvtc, pvtc, slicing}");
  c_sw->add_option("--axis", sw.axis, "T, s, i, k, M1, M2, L or strategy")->required();
  c_sw->add_option("--values", sw.values, "Comma list and/or lo:hi inclusive ranges")->required();
  c_sw->add_option("--manifest", sw.manifest, "Image manifest for the strategy axis");
  c_sw->add_option("--format", sw.format, "json or csv")->capture_default_str();
  c_sw->add_option("--output", sw.output, "Output path (stdout when omitted)");
  c_sw->add_option("--plot", sw.plot, "Also write x,y plot data as CSV");

  RvtcArgs rv;
  auto* c_rv = app.add_subcommand("rvtc-plan", "Slice plan for one image or corpus statistics for a manifest");
  c_rv->add_option("--width", rv.width, "Image width in pixels");
  c_rv->add_option("--height", rv.height, "Image height in pixels");
  c_rv->add_option("--strategy", rv.strategy, "ratio, area or edge")->capture_default_str();
  c_rv->add_option("--max-patches", rv.max_patches, "Maximum patches R")->capture_default_str();
  c_rv->add_option("--unit", rv.unit, "Base tile side in pixels")->capture_default_str();
  c_rv->add_option("--tokens-per-tile", rv.tokens_per_tile, "Tokens per tile")->capture_default_str();
  c_rv->add_flag("--no-thumbnail", rv.no_thumbnail, "Do not add a global thumbnail tile");
  c_rv->add_option("--manifest", rv.manifest, "CSV (width,height) or JSON-lines {\"w\",\"h\"} manifest");
  c_rv->add_option("--output", rv.output, "Write the plan (or corpus stats) here instead of stdout");

  std::string fault;
  std::uint64_t check_seed = 1;
  auto* c_sc = app.add_subcommand("selfcheck", "Run the embedded oracle suite");
  c_sc->add_option("--inject-fault", fault, "Test hook: pvtc-weight flips one projector weight");
  c_sc->add_option("--seed", check_seed, "Seed for randomized checks")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (c_gen->parsed()) return cmd_gen_fixture(gen);
    if (c_pvtc->parsed()) return cmd_pvtc(pv);
    if (c_lvtc->parsed()) return cmd_lvtc_sim(lv);
    if (c_an->parsed()) return cmd_analyze(an);
    if (c_sw->parsed()) return cmd_sweep(sw);
    if (c_rv->parsed()) return cmd_rvtc_plan(rv);
    if (c_sc->parsed()) return cmd_selfcheck(fault, check_seed);
  } catch (const vtc::Error& e) {
    std::cerr << "vtc: " << e.what() << "\n";
    return e.exit_code();
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "vtc: " << e.what() << "\n";
    return 3;
  }
  return 1;
}

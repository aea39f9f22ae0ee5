#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "memopt/analysis.hpp"
#include "memopt/model_io.hpp"
#include "memopt/planner.hpp"
#include "memopt/runtime.hpp"
#include "memopt/storage.hpp"
#include "memopt/tiny_unet.hpp"
#include "memopt/transform.hpp"

namespace {

using namespace memopt;

void write_text(const std::string& path, const std::string& text) {
  if (path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << text;
}

nlohmann::json latency_json(const LatencyBreakdown& lat) {
  return {{"compute_us", lat.compute}, {"spill_us", lat.spill},
          {"fetch_us", lat.fetch},     {"compress_us", lat.compress},
          {"decompress_us", lat.decompress}, {"wait_us", lat.wait},
          {"total_us", lat.total}};
}

void print_latency(const LatencyBreakdown& lat) {
  auto row = [](const char* name, double v) {
    std::printf("  %-12s %14.2f us\n", name, v);
  };
  row("compute", lat.compute);
  row("spill", lat.spill);
  row("fetch", lat.fetch);
  row("compress", lat.compress);
  row("decompress", lat.decompress);
  row("wait", lat.wait);
  row("total", lat.total);
}

int cmd_gen_model(const std::string& out_path, TinyUnetConfig cfg) {
  Graph g = build_tiny_unet(cfg);
  save_model(g, out_path);
  auto plan = plan_greedy(collect_requirements(g));
  std::printf("wrote %s: %zu ops, %zu tensors, arena %lld B\n", out_path.c_str(),
              g.operators.size(), g.tensors.size(), (long long)plan.arena_size);
  return 0;
}

int cmd_analyze(const std::string& model_path, const std::string& json_path) {
  Graph g = load_model(model_path);
  auto lifetimes = compute_lifetimes(g);
  auto cold = analyze_cold_ranges(g);
  auto reqs = collect_requirements(g);
  auto curve = usage_curve(g, reqs);

  std::printf("%-5s %-18s %10s %7s %7s %12s\n", "id", "name", "bytes", "live", "cold",
              "cold range");
  for (const auto& t : g.tensors) {
    if (t.kind == TensorKind::Weight) continue;
    auto lt = lifetimes.find(t.id);
    auto cr = cold.find(t.id);
    char live[32] = "-", span[32] = "-";
    int cold_len = 0;
    if (lt != lifetimes.end())
      std::snprintf(live, sizeof live, "%d..%d", lt->second.first, lt->second.last);
    if (cr != cold.end()) {
      cold_len = cr->second.length();
      std::snprintf(span, sizeof span, "[%d,%d)", cr->second.start, cr->second.end);
    }
    std::printf("%-5d %-18s %10lld %7s %7d %12s\n", t.id, t.name.c_str(),
                (long long)t.size_bytes(), live, cold_len, span);
  }
  std::printf("\npeak usage: %lld B at step(s):", (long long)curve.peak);
  for (int s : curve.peak_steps) std::printf(" %d", s);
  std::printf("\n");

  if (!json_path.empty()) {
    nlohmann::json j;
    j["peak_bytes"] = curve.peak;
    j["peak_steps"] = curve.peak_steps;
    j["live_bytes"] = curve.live_bytes;
    j["tensors"] = nlohmann::json::array();
    for (const auto& t : g.tensors) {
      if (t.kind == TensorKind::Weight) continue;
      nlohmann::json tj{{"id", t.id}, {"name", t.name}, {"bytes", t.size_bytes()}};
      auto lt = lifetimes.find(t.id);
      if (lt != lifetimes.end()) {
        tj["first"] = lt->second.first;
        tj["last"] = lt->second.last;
      }
      auto cr = cold.find(t.id);
      if (cr != cold.end()) {
        tj["cold_start"] = cr->second.start;
        tj["cold_end"] = cr->second.end;
        tj["cold_len"] = cr->second.length();
      }
      j["tensors"].push_back(std::move(tj));
    }
    write_text(json_path, j.dump(1) + "\n");
  }
  return 0;
}

int cmd_optimize(const std::string& model_path, const std::string& out_path,
                 const OptimizeOptions& opts, const std::string& report_path) {
  Graph g = load_model(model_path);
  auto [g2, rep] = optimize(g, opts);
  save_model(g2, out_path);
  for (const auto& it : rep.iterations)
    std::printf("%-16s victim=%-4d peak %lld -> %lld\n", it.action.c_str(), it.victim,
                (long long)it.peak_before, (long long)it.peak_after);
  std::printf("peak %lld -> %lld (target %lld): %s\n", (long long)rep.initial_peak,
              (long long)rep.final_peak, (long long)rep.target_peak,
              rep.target_met ? "met" : "best effort");
  if (!rep.error.empty()) std::printf("note: %s\n", rep.error.c_str());
  if (!report_path.empty()) write_text(report_path, report_to_json(rep).dump(1) + "\n");
  return rep.target_met ? 0 : 2;
}

int cmd_plan(const std::string& model_path, const std::string& fmt,
             const std::string& out_path) {
  Graph g = load_model(model_path);
  auto plan = plan_greedy(collect_requirements(g));
  PlanFormat pf = fmt == "svg" ? PlanFormat::Svg : PlanFormat::Text;
  write_text(out_path, render_plan(plan, pf));
  if (out_path != "-")
    std::printf("arena %lld B, %zu buffers -> %s\n", (long long)plan.arena_size,
                plan.entries.size(), out_path.c_str());
  return 0;
}

struct RunArgs {
  std::string model;
  std::vector<std::string> inputs;
  std::string output;
  std::string storage = "internal";
  std::string mode = "sync";
  std::string config;
  std::string latency_path;
  uint64_t seed = 1;
  bool canary = true;
};

int cmd_run(const RunArgs& a) {
  Graph g = load_model(a.model);
  auto plan = plan_greedy(collect_requirements(g));

  StoragePresets presets = default_storage_presets();
  if (!a.config.empty()) presets = load_storage_presets(a.config);

  SpillMode mode = a.mode == "async" ? SpillMode::Async : SpillMode::Sync;
  std::unique_ptr<StorageBackend> backend;
  if (a.storage == "internal") {
    backend = std::make_unique<FlashBackend>(presets.internal);
  } else if (a.storage == "external") {
    backend = std::make_unique<FlashBackend>(presets.external);
  } else if (a.storage == "remote") {
    if (mode == SpillMode::Async)
      throw ConfigError("remote storage has no erase queue; use --mode sync");
    backend = std::make_unique<RemoteBackend>(presets.remote);
  } else {
    throw ConfigError("unknown storage '" + a.storage + "'");
  }

  std::vector<std::vector<uint8_t>> inputs;
  if (!a.inputs.empty()) {
    if (int(a.inputs.size()) != int(g.inputs.size()))
      throw ConfigError("model expects " + std::to_string(g.inputs.size()) +
                        " input file(s), got " + std::to_string(a.inputs.size()));
    for (size_t i = 0; i < a.inputs.size(); ++i) {
      TensorFile tf = load_tensor(a.inputs[i]);
      const TensorInfo& want = g.tensor(g.inputs[i]);
      if (tf.shape != want.shape || tf.dtype != want.dtype)
        throw ShapeError("input file " + a.inputs[i] + " does not match tensor '" +
                         want.name + "'");
      inputs.push_back(std::move(tf.payload));
    }
  } else {
    for (int tid : g.inputs)
      inputs.push_back(random_payload(g.tensor(tid).size_bytes(), a.seed));
  }

  ExecutionContext ctx;
  ctx.backend = backend.get();
  ctx.mode = mode;
  ctx.canary_checks = a.canary;
  RunResult res = run(g, plan, inputs, ctx);

  std::printf("ran %zu ops on %s/%s storage\n", g.operators.size(), a.storage.c_str(),
              a.mode.c_str());
  print_latency(res.latency);
  if (!a.latency_path.empty())
    write_text(a.latency_path, latency_json(res.latency).dump(1) + "\n");

  if (!a.output.empty()) {
    for (size_t i = 0; i < res.outputs.size(); ++i) {
      const TensorInfo& info = g.tensor(g.outputs[i]);
      std::string path = a.output;
      if (res.outputs.size() > 1) {
        auto dot = path.rfind('.');
        std::string suffix = "_" + std::to_string(i);
        path = dot == std::string::npos ? path + suffix
                                        : path.substr(0, dot) + suffix + path.substr(dot);
      }
      TensorFile tf{info.shape, info.dtype, res.outputs[i]};
      save_tensor(tf, path);
      std::printf("wrote %s (%s '%s')\n", path.c_str(), dtype_name(info.dtype),
                  info.name.c_str());
    }
  }
  return 0;
}

int cmd_diff(const std::string& a, const std::string& b) {
  TensorFile ta = load_tensor(a);
  TensorFile tb = load_tensor(b);
  if (ta.dtype != tb.dtype) {
    std::printf("dtype differs: %s vs %s\n", dtype_name(ta.dtype), dtype_name(tb.dtype));
    return 1;
  }
  if (ta.shape != tb.shape) {
    std::printf("shape differs: [%d,%d,%d,%d] vs [%d,%d,%d,%d]\n", ta.shape[0], ta.shape[1],
                ta.shape[2], ta.shape[3], tb.shape[0], tb.shape[1], tb.shape[2], tb.shape[3]);
    return 1;
  }
  size_t diffs = 0, first = 0;
  for (size_t i = 0; i < ta.payload.size(); ++i) {
    if (ta.payload[i] != tb.payload[i]) {
      if (diffs == 0) first = i;
      ++diffs;
    }
  }
  if (diffs == 0) {
    std::printf("identical: %zu bytes\n", ta.payload.size());
    return 0;
  }
  std::printf("%zu of %zu bytes differ (first at offset %zu: 0x%02x vs 0x%02x)\n", diffs,
              ta.payload.size(), first, ta.payload[first], tb.payload[first]);
  return 1;
}

int cmd_report(const std::string& latency_path) {
  std::ifstream f(latency_path, std::ios::binary);
  if (!f) throw IoError("cannot read " + latency_path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("bad latency file: ") + e.what());
  }
  LatencyBreakdown lat;
  lat.compute = j.value("compute_us", 0.0);
  lat.spill = j.value("spill_us", 0.0);
  lat.fetch = j.value("fetch_us", 0.0);
  lat.compress = j.value("compress_us", 0.0);
  lat.decompress = j.value("decompress_us", 0.0);
  lat.wait = j.value("wait_us", 0.0);
  lat.total = j.value("total_us", 0.0);
  print_latency(lat);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memopt: memory planner and reference runtime for quantized inference graphs"};
  app.require_subcommand(1);
  app.fallthrough();

  uint64_t seed = 1;
  std::string config;
  app.add_option("--seed", seed, "seed for generated models and random inputs");
  app.add_option("--config", config, "storage preset file (JSON)");

  // gen-model
  auto* gen = app.add_subcommand("gen-model", "emit the bundled hourglass test model");
  TinyUnetConfig cfg;
  std::string gen_out;
  gen->add_option("-o,--output", gen_out, "model JSON path")->required();
  gen->add_option("--height", cfg.height, "input height");
  gen->add_option("--width", cfg.width, "input width");
  gen->add_option("--in-channels", cfg.in_channels, "input channels");
  gen->add_option("--out-channels", cfg.out_channels, "output channels");
  gen->add_option("--channels", cfg.channels, "encoder widths, shallow to deep")
      ->delimiter(',');
  gen->add_option("--skips", cfg.skips, "how many shallow levels keep skip connections");

  // analyze
  auto* an = app.add_subcommand("analyze", "print lifetimes, cold ranges and peak usage");
  std::string an_model, an_json;
  an->add_option("-m,--model", an_model, "model JSON path")->required();
  an->add_option("--json", an_json, "also write the analysis as JSON");

  // optimize
  auto* op = app.add_subcommand("optimize", "rewrite the graph to fit a peak-memory target");
  std::string op_model, op_out, op_report;
  OptimizeOptions oopts;
  bool no_partial = false, no_fusion = false, no_quant = false;
  op->add_option("-m,--model", op_model, "model JSON path")->required();
  op->add_option("-o,--output", op_out, "optimized model path")->required();
  op->add_option("--target-peak", oopts.target_peak, "arena budget in bytes")->required();
  op->add_option("--max-iterations", oopts.max_iterations, "eviction iteration cap");
  op->add_option("--report", op_report, "write the iteration report as JSON");
  op->add_flag("--no-partial", no_partial, "always evict whole tensors");
  op->add_flag("--no-fusion", no_fusion, "keep fetches as standalone ops");
  op->add_flag("--no-temp-quant", no_quant, "keep 32-bit scratch accumulators");

  // plan
  auto* pl = app.add_subcommand("plan", "place buffers and render the arena layout");
  std::string pl_model, pl_fmt = "text", pl_out = "-";
  pl->add_option("-m,--model", pl_model, "model JSON path")->required();
  pl->add_option("--format", pl_fmt, "text or svg")
      ->check(CLI::IsMember({"text", "svg"}));
  pl->add_option("-o,--output", pl_out, "output path, - for stdout");

  // run
  auto* rn = app.add_subcommand("run", "execute a model and report latency");
  RunArgs ra;
  rn->add_option("-m,--model", ra.model, "model JSON path")->required();
  rn->add_option("-i,--input", ra.inputs, "input tensor file (repeatable)");
  rn->add_option("-o,--output", ra.output, "write outputs as tensor file(s)");
  rn->add_option("--storage", ra.storage, "internal, external or remote")
      ->check(CLI::IsMember({"internal", "external", "remote"}));
  rn->add_option("--mode", ra.mode, "sync or async spilling")
      ->check(CLI::IsMember({"sync", "async"}));
  rn->add_option("--latency", ra.latency_path, "write the latency breakdown as JSON");
  bool no_canary = false;
  rn->add_flag("--no-canary", no_canary, "skip dead-buffer poisoning");

  // diff
  auto* df = app.add_subcommand("diff", "compare two tensor files byte for byte");
  std::string df_a, df_b;
  df->add_option("a", df_a, "first tensor file")->required();
  df->add_option("b", df_b, "second tensor file")->required();

  // report
  auto* rp = app.add_subcommand("report", "pretty-print a latency breakdown JSON");
  std::string rp_path;
  rp->add_option("--latency", rp_path, "latency JSON from `run`")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      cfg.seed = seed;
      return cmd_gen_model(gen_out, cfg);
    }
    if (an->parsed()) return cmd_analyze(an_model, an_json);
    if (op->parsed()) {
      oopts.allow_partial = !no_partial;
      oopts.allow_fusion = !no_fusion;
      oopts.allow_temp_quant = !no_quant;
      return cmd_optimize(op_model, op_out, oopts, op_report);
    }
    if (pl->parsed()) return cmd_plan(pl_model, pl_fmt, pl_out);
    if (rn->parsed()) {
      ra.seed = seed;
      ra.config = config;
      ra.canary = !no_canary;
      return cmd_run(ra);
    }
    if (df->parsed()) return cmd_diff(df_a, df_b);
    if (rp->parsed()) return cmd_report(rp_path);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

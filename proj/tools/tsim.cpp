// Command-line front end: weight generation, scheduling, cycle prediction,
// simulation against the reference oracle, and report pretty-printing.
//
// Exit codes: 0 success, 1 usage or I/O error, 2 invalid configuration,
// 3 schedule conflict, 4 runtime hazard, 5 oracle mismatch.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "tsim/oracle.hpp"
#include "tsim/predictor.hpp"
#include "tsim/scheduler.hpp"
#include "tsim/simulator.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tsim;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitConfig = 2;
constexpr int kExitConflict = 3;
constexpr int kExitHazard = 4;
constexpr int kExitMismatch = 5;

struct RunSpec {
  std::string arch_path;
  std::string model_path;
  std::string out_dir;
  uint64_t seed = 1;
  int seq_len = 128;
  int layers = 12;
  bool tiny = false;
  bool serial = false;
  bool dump = false;
  bool as_json = false;
};

ArchConfig resolve_arch(const RunSpec& sp) {
  ArchConfig cfg = sp.tiny ? tiny_arch_config() : ArchConfig{};
  if (!sp.arch_path.empty()) {
    try {
      cfg = load_arch_config(sp.arch_path);
    } catch (const std::runtime_error& e) {
      // invariant violations are config errors; unreadable files are I/O errors
      if (std::string(e.what()).find("invalid arch config") != std::string::npos)
        throw std::invalid_argument(e.what());
      throw;
    }
  }
  auto errs = validate_config(cfg);
  if (!errs.empty()) throw std::invalid_argument("arch config: " + errs[0]);
  return cfg;
}

ModelHyper resolve_hyper(const RunSpec& sp) {
  ModelHyper h = sp.tiny ? tiny_hyper() : ModelHyper{};
  h.seq_len = sp.tiny ? h.seq_len : sp.seq_len;
  if (sp.tiny && sp.seq_len != 128) h.seq_len = sp.seq_len;
  h.layers = sp.layers;
  return h;
}

struct LoadedModel {
  std::shared_ptr<EncoderParams> params;
  QuantTensor x_q{Shape{1, 1}, 1.0f};
  FpTensor x_fp{Shape{1, 1}};
};

// Either read a saved model directory or synthesize one from the seed.
LoadedModel resolve_model(const RunSpec& sp, int lane_width) {
  LoadedModel m;
  if (!sp.model_path.empty()) {
    m.params = std::make_shared<EncoderParams>(load_model(sp.model_path));
    std::string in = sp.model_path + "/input.qt";
    if (fs::exists(in)) {
      m.x_fp = load_fp_tensor(in);
    } else {  // no stored input: a fixed-seed one keeps reruns identical
      SplitMix64 rng(sp.seed);
      m.x_fp = FpTensor(Shape{m.params->hyper.d_model, m.params->hyper.seq_len});
      for (auto& v : m.x_fp.data) v = rng.sym(2.0f);
    }
  } else {
    auto gen = generate_model(resolve_hyper(sp), sp.seed, lane_width);
    m.params = std::make_shared<EncoderParams>(std::move(gen.params));
    m.x_fp = std::move(gen.x_fp);
  }
  m.x_q = quantize(m.x_fp, m.params->layers.at(0).scales.s_in);
  return m;
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << text;
}

int cmd_gen_weights(const RunSpec& sp) {
  ModelHyper h = resolve_hyper(sp);
  ArchConfig cfg = resolve_arch(sp);
  auto gen = generate_model(h, sp.seed, cfg.lane_width);
  save_model(sp.out_dir, gen.params);
  save_tensor(sp.out_dir + "/input.qt", gen.x_fp);
  long per_layer = layer_constant_bytes(h);
  if (sp.as_json) {
    json j{{"out", sp.out_dir},
           {"seed", sp.seed},
           {"layers", h.layers},
           {"constant_bytes_per_layer", per_layer},
           {"constant_bytes_total", per_layer * h.layers}};
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "wrote model to " << sp.out_dir << "\n"
              << "constant bytes per layer: " << per_layer << "\n"
              << "constant bytes total: " << per_layer * h.layers << "\n";
  }
  return kExitOk;
}

int cmd_schedule(const RunSpec& sp, bool predict_only) {
  ArchConfig cfg = resolve_arch(sp);
  LoadedModel m = resolve_model(sp, cfg.lane_width);
  long predicted = predict_cycles(m.params->hyper, cfg, !sp.serial);
  double us = cycles_to_microseconds(predicted, cfg);
  if (predict_only) {
    if (sp.as_json) {
      json j{{"predicted_cycles", predicted}, {"microseconds", us}};
      std::cout << j.dump(2) << "\n";
    } else {
      std::cout << "predicted cycles: " << predicted << "\n"
                << "predicted microseconds: " << us << "\n";
    }
    return kExitOk;
  }

  EncoderScheduleBuilder builder(cfg, m.params, !sp.serial);
  Schedule s = builder.build(m.x_q, m.x_fp);
  auto conflicts = validate_schedule(s);
  if (!conflicts.empty()) {
    for (auto& c : conflicts) std::cerr << "conflict: " << c << "\n";
    return kExitConflict;
  }
  if (!sp.out_dir.empty()) fs::create_directories(sp.out_dir);
  if (sp.dump) {
    std::string path = (sp.out_dir.empty() ? std::string(".") : sp.out_dir) +
                       "/schedule.tsv";
    write_file(path, dump_schedule(s));
    std::cout << "schedule dump: " << path << "\n";
  }
  if (sp.as_json) {
    json j{{"instructions", s.instrs.size()},
           {"end_cycle", s.end_cycle()},
           {"layer_span", s.layer_span},
           {"predicted_cycles", predicted},
           {"predicted_microseconds", us}};
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << "instructions: " << s.instrs.size() << "\n"
              << "end cycle: " << s.end_cycle() << "\n"
              << "predicted cycles: " << predicted << "\n"
              << "predicted microseconds: " << us << "\n";
  }
  return kExitOk;
}

int cmd_simulate(const RunSpec& sp) {
  ArchConfig cfg = resolve_arch(sp);
  LoadedModel m = resolve_model(sp, cfg.lane_width);
  EncoderScheduleBuilder builder(cfg, m.params, !sp.serial);
  Schedule s = builder.build(m.x_q, m.x_fp);
  auto conflicts = validate_schedule(s);
  if (!conflicts.empty()) {
    for (auto& c : conflicts) std::cerr << "conflict: " << c << "\n";
    return kExitConflict;
  }

  SimResult r;
  try {
    r = simulate(s);
  } catch (const HazardError& e) {
    std::cerr << "runtime hazard: " << e.what() << "\n";
    return kExitHazard;
  }

  OracleCheck oc = verify_outputs(r.outputs, *m.params, m.x_q, m.x_fp, cfg.lane_width);
  std::string report_text = format_report(r.report);
  if (!sp.out_dir.empty()) {
    fs::create_directories(sp.out_dir);
    write_file(sp.out_dir + "/report.txt", report_text);
    if (sp.dump) write_file(sp.out_dir + "/schedule.tsv", dump_schedule(s));
  }
  if (sp.as_json) {
    json j{{"verdict", oc.ok() ? "PASS" : "FAIL"},
           {"total_cycles", r.total_cycles},
           {"microseconds", r.report.microseconds},
           {"tensors_checked", oc.tensors_checked},
           {"elements_checked", oc.elements_checked},
           {"mismatches", oc.mismatches}};
    std::cout << j.dump(2) << "\n";
  } else {
    std::cout << report_text;
    std::cout << "oracle: checked " << oc.tensors_checked << " tensors, "
              << oc.elements_checked << " elements\n";
    for (auto& mm : oc.mismatches) std::cout << "mismatch: " << mm << "\n";
    std::cout << (oc.ok() ? "PASS" : "FAIL") << "\n";
  }
  return oc.ok() ? kExitOk : kExitMismatch;
}

int cmd_report(const std::string& path, bool as_json) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    std::cerr << "cannot open report: " << path << "\n";
    return kExitUsage;
  }
  std::stringstream buf;
  buf << is.rdbuf();
  CycleReport r = parse_report(buf.str());
  double total = double(std::max<long>(r.total_cycles, 1));

  long sa = 0, ff = 0, other = 0;
  for (auto& ls : r.per_layer) {
    sa += ls.self_attention;
    ff += ls.feed_forward;
    other += ls.other;
  }
  double frac_unused =
      1.0 - r.frac_constant - r.frac_scratchpad - r.frac_instruction;

  if (as_json) {
    json layers = json::array();
    for (auto& ls : r.per_layer)
      layers.push_back({{"self_attention", ls.self_attention},
                        {"feed_forward", ls.feed_forward},
                        {"other", ls.other}});
    json j{{"total_cycles", r.total_cycles},
           {"microseconds", r.microseconds},
           {"self_attention_pct", 100.0 * double(sa) / total},
           {"feed_forward_pct", 100.0 * double(ff) / total},
           {"other_pct", 100.0 * double(other) / total},
           {"memory_pct",
            {{"constant", 100.0 * r.frac_constant},
             {"scratchpad", 100.0 * r.frac_scratchpad},
             {"instruction", 100.0 * r.frac_instruction},
             {"unused", 100.0 * frac_unused}}},
           {"scratch_high_water_bytes", r.scratch_high_water_bytes},
           {"layers", layers}};
    std::cout << j.dump(2) << "\n";
    return kExitOk;
  }

  std::printf("total cycles: %ld (%.3f us)\n", r.total_cycles, r.microseconds);
  std::printf("block breakdown:\n");
  std::printf("  self-attention  %6.2f%%\n", 100.0 * double(sa) / total);
  std::printf("  feed-forward    %6.2f%%\n", 100.0 * double(ff) / total);
  std::printf("  other           %6.2f%%\n", 100.0 * double(other) / total);
  std::printf("per-layer cycles:\n");
  for (std::size_t i = 0; i < r.per_layer.size(); ++i)
    std::printf("  layer %-2zu  SA %-8ld FF %-8ld other %ld\n", i,
                r.per_layer[i].self_attention, r.per_layer[i].feed_forward,
                r.per_layer[i].other);
  std::printf("unit utilization:\n");
  for (auto& u : r.units)
    std::printf("  %s[%d]  busy %6.2f%%\n", unit_name(u.unit), u.id,
                100.0 * double(u.busy) / total);
  std::printf("memory utilization:\n");
  std::printf("  constant     %6.2f%%\n", 100.0 * r.frac_constant);
  std::printf("  scratchpad   %6.2f%%\n", 100.0 * r.frac_scratchpad);
  std::printf("  instruction  %6.2f%%\n", 100.0 * r.frac_instruction);
  std::printf("  unused       %6.2f%%\n", 100.0 * frac_unused);
  std::printf("  (sums to %.2f%%)\n",
              100.0 * (r.frac_constant + r.frac_scratchpad +
                       r.frac_instruction + frac_unused));
  std::printf("scratchpad high-water: %ld bytes\n", r.scratch_high_water_bytes);
  return kExitOk;
}

void add_common(CLI::App* cmd, RunSpec& sp, bool with_model) {
  cmd->add_option("--arch", sp.arch_path, "architecture config file");
  if (with_model) cmd->add_option("--model", sp.model_path, "model directory");
  cmd->add_option("--seed", sp.seed, "RNG seed for synthetic weights");
  cmd->add_option("--seq-len", sp.seq_len, "sequence length");
  cmd->add_option("--layers", sp.layers, "encoder layer count");
  cmd->add_option("--out", sp.out_dir, "output directory");
  cmd->add_flag("--tiny", sp.tiny, "tiny smoke-scale model and architecture");
  cmd->add_flag("--serial", sp.serial, "disable operator fusion");
  cmd->add_flag("--json", sp.as_json, "machine-readable output");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"statically scheduled tensor-streaming processor toolkit"};
  app.require_subcommand(1);
  RunSpec sp;
  std::string report_path;
  bool report_json = false;

  auto* gen = app.add_subcommand("gen-weights", "write seeded synthetic weights");
  add_common(gen, sp, false);
  gen->get_option("--out")->required();

  auto* sched = app.add_subcommand("schedule", "compile and dump a static schedule");
  add_common(sched, sp, true);
  sched->add_flag("--dump-schedule", sp.dump, "write the instruction dump");

  auto* pred = app.add_subcommand("predict", "analytic cycle prediction");
  add_common(pred, sp, true);

  auto* sim = app.add_subcommand("simulate", "run the simulator against the oracle");
  add_common(sim, sp, true);
  sim->add_flag("--dump-schedule", sp.dump, "write the instruction dump");

  auto* rep = app.add_subcommand("report", "pretty-print a cycle report");
  rep->add_option("path", report_path, "report file")->required();
  rep->add_flag("--json", report_json, "machine-readable output");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_weights(sp);
    if (sched->parsed()) return cmd_schedule(sp, false);
    if (pred->parsed()) return cmd_schedule(sp, true);
    if (sim->parsed()) return cmd_simulate(sp);
    if (rep->parsed()) return cmd_report(report_path, report_json);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

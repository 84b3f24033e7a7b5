#pragma once

// Parameterized machine description: units, streams, memory and latencies.
// Both the scheduler and the simulator compile against this contract.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsim/tensor.hpp"

namespace tsim {

// Pointwise ALU opcodes. Division is expressed as multiply-by-reciprocal.
enum class AluOp {
  Add,
  Sub,
  Mul,
  MulRecip,
  Tanh,
  Exp,
  Rsqrt,
  Max,
  Cast,
  ClampRound,
  Stage,  // operand staging / delay slot inside a chain
};

inline const char* alu_op_name(AluOp op) {
  switch (op) {
    case AluOp::Add: return "add";
    case AluOp::Sub: return "sub";
    case AluOp::Mul: return "mul";
    case AluOp::MulRecip: return "mul_recip";
    case AluOp::Tanh: return "tanh";
    case AluOp::Exp: return "exp";
    case AluOp::Rsqrt: return "rsqrt";
    case AluOp::Max: return "max";
    case AluOp::Cast: return "cast";
    case AluOp::ClampRound: return "clamp_round";
    case AluOp::Stage: return "stage";
  }
  return "?";
}

struct ArchConfig {
  int lane_width = 320;          // physical vector length L
  int vxm_alu_count = 16;        // chainable pointwise ALUs
  int mxm_plane_count = 4;       // independent LxL MACC planes
  int mem_slice_count = 88;      // banked SRAM slices, one pool
  long slice_bytes = 2621440;    // 2.5 MiB per slice -> 220 MiB total
  int streams_per_direction = 32;
  int stream_hop_latency_cycles = 1;
  int mxm_install_latency_cycles = 320;  // one row per cycle (defaults to L)
  int mxm_pipeline_depth_cycles = 4;
  int sxm_reorder_latency_cycles = 2;
  int sxm_port_count = 8;
  double clock_hz = 900e6;
  // Per-opcode ALU latency, cycles. Throughput is one vector per cycle.
  std::map<AluOp, int> alu_op_latency = default_alu_latency();

  static std::map<AluOp, int> default_alu_latency() {
    std::map<AluOp, int> m;
    for (AluOp op :
         {AluOp::Add, AluOp::Sub, AluOp::Mul, AluOp::MulRecip, AluOp::Tanh,
          AluOp::Exp, AluOp::Rsqrt, AluOp::Max, AluOp::Cast,
          AluOp::ClampRound, AluOp::Stage})
      m[op] = 1;
    return m;
  }

  int alu_latency(AluOp op) const { return alu_op_latency.at(op); }

  // Inter-pass normalization constant for layer normalization:
  // after pass 1: fold chain partials (add) + lane reduce (add) +
  // multiply-by-reciprocal; after pass 2: add epsilon + rsqrt.
  int ln_norm1_cycles() const {
    return 2 * alu_latency(AluOp::Add) + alu_latency(AluOp::MulRecip);
  }
  int ln_norm2_cycles() const {
    return alu_latency(AluOp::Add) + alu_latency(AluOp::Rsqrt);
  }
  int ln_constant_cycles() const { return ln_norm1_cycles() + ln_norm2_cycles(); }

  // Softmax inter-pass constants: finalize row maxima; reciprocal of sums.
  int sm_norm1_cycles() const { return alu_latency(AluOp::Max); }
  int sm_norm2_cycles() const {
    return alu_latency(AluOp::MulRecip) + alu_latency(AluOp::Add);
  }

  long total_sram_bytes() const { return slice_bytes * mem_slice_count; }
  double cycles_to_us(long cycles) const { return double(cycles) / clock_hz * 1e6; }
};

inline std::vector<std::string> validate_config(const ArchConfig& c) {
  std::vector<std::string> errs;
  if (c.lane_width < 4) errs.push_back("lane width must be >= 4");
  if (c.lane_width % 4 != 0) errs.push_back("lane width not divisible by 4");
  if (c.lane_width > 1024) errs.push_back("lane width exceeds 1024");
  if (c.vxm_alu_count < 1) errs.push_back("vxm_alu_count must be >= 1");
  if (c.mxm_plane_count < 1) errs.push_back("mxm_plane_count must be >= 1");
  if (c.mem_slice_count < 1) errs.push_back("mem_slice_count must be >= 1");
  if (c.slice_bytes < 1) errs.push_back("slice_bytes must be >= 1");
  if (c.streams_per_direction < 1) errs.push_back("streams_per_direction must be >= 1");
  if (c.stream_hop_latency_cycles < 1) errs.push_back("stream_hop_latency_cycles must be >= 1");
  if (c.mxm_install_latency_cycles < 1) errs.push_back("mxm_install_latency_cycles must be >= 1");
  if (c.mxm_pipeline_depth_cycles < 1) errs.push_back("mxm_pipeline_depth_cycles must be >= 1");
  if (c.sxm_reorder_latency_cycles < 1) errs.push_back("sxm_reorder_latency_cycles must be >= 1");
  if (c.sxm_port_count < 1) errs.push_back("sxm_port_count must be >= 1");
  if (!(c.clock_hz > 0)) errs.push_back("clock_hz must be positive");
  for (auto& [op, lat] : c.alu_op_latency)
    if (lat < 1) errs.push_back(std::string("alu latency for ") + alu_op_name(op) + " must be >= 1");
  return errs;
}

// Physical vectors needed for a (k, j) logical tensor: each of the j
// columns decomposes into ceil(k/L) lane-width vectors.
inline long physical_vectors(const Shape& s, int lane_width) {
  long per_col = (s.rows() + lane_width - 1) / lane_width;
  return per_col * s.cols();
}

// ---- key-value configuration file. Unknown keys are errors. ----

inline ArchConfig load_arch_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open arch config: " + path);
  ArchConfig c;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    std::string key;
    if (!(ss >> key)) continue;
    std::string value;
    if (!(ss >> value))
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": missing value for " + key);
    auto as_long = [&] { return std::stol(value); };
    if (key == "lane_width") c.lane_width = int(as_long());
    else if (key == "vxm_alu_count") c.vxm_alu_count = int(as_long());
    else if (key == "mxm_plane_count") c.mxm_plane_count = int(as_long());
    else if (key == "mem_slice_count") c.mem_slice_count = int(as_long());
    else if (key == "slice_bytes") c.slice_bytes = as_long();
    else if (key == "streams_per_direction") c.streams_per_direction = int(as_long());
    else if (key == "stream_hop_latency_cycles") c.stream_hop_latency_cycles = int(as_long());
    else if (key == "mxm_install_latency_cycles") c.mxm_install_latency_cycles = int(as_long());
    else if (key == "mxm_pipeline_depth_cycles") c.mxm_pipeline_depth_cycles = int(as_long());
    else if (key == "sxm_reorder_latency_cycles") c.sxm_reorder_latency_cycles = int(as_long());
    else if (key == "sxm_port_count") c.sxm_port_count = int(as_long());
    else if (key == "clock_hz") c.clock_hz = std::stod(value);
    else
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
  auto errs = validate_config(c);
  if (!errs.empty()) {
    std::string msg = "invalid arch config " + path + ":";
    for (auto& e : errs) msg += "\n  " + e;
    throw std::runtime_error(msg);
  }
  return c;
}

inline void save_arch_config(const std::string& path, const ArchConfig& c) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write arch config: " + path);
  os << "# machine description (cycles unless noted)\n"
     << "lane_width " << c.lane_width << "\n"
     << "vxm_alu_count " << c.vxm_alu_count << "\n"
     << "mxm_plane_count " << c.mxm_plane_count << "\n"
     << "mem_slice_count " << c.mem_slice_count << "\n"
     << "slice_bytes " << c.slice_bytes << "\n"
     << "streams_per_direction " << c.streams_per_direction << "\n"
     << "stream_hop_latency_cycles " << c.stream_hop_latency_cycles << "\n"
     << "# install cost: one row per cycle; not a measured hardware value\n"
     << "mxm_install_latency_cycles " << c.mxm_install_latency_cycles << "\n"
     << "mxm_pipeline_depth_cycles " << c.mxm_pipeline_depth_cycles << "\n"
     << "sxm_reorder_latency_cycles " << c.sxm_reorder_latency_cycles << "\n"
     << "sxm_port_count " << c.sxm_port_count << "\n"
     << "clock_hz " << c.clock_hz << "\n";
}

// A tiny machine useful for fast functional sweeps.
inline ArchConfig tiny_arch_config() {
  ArchConfig c;
  c.lane_width = 32;
  c.mxm_install_latency_cycles = 32;
  c.mem_slice_count = 88;
  c.slice_bytes = 1 << 16;
  return c;
}

}  // namespace tsim

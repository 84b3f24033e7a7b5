#pragma once

// Static schedule representation: cycle-stamped instructions with explicit
// per-unit resource claims, dependency edges carrying earliest-start
// cycles, and functional payloads that realize node semantics over the
// on-chip memory image.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsim/arch.hpp"
#include "tsim/memory_map.hpp"
#include "tsim/params.hpp"

namespace tsim {

enum class Unit {
  MxmExec,   // per plane: activation streaming through the MACC array
  MxmLoad,   // per plane: weight-buffer install port
  VxmAlu,    // per ALU
  SxmPort,   // per reorder port
  MemRead,   // per slice: the read port
  MemWrite,  // per slice: the write port
  StreamIn,  // toward compute units
  StreamOut, // toward memory
};

inline const char* unit_name(Unit u) {
  switch (u) {
    case Unit::MxmExec: return "mxm_exec";
    case Unit::MxmLoad: return "mxm_load";
    case Unit::VxmAlu: return "vxm_alu";
    case Unit::SxmPort: return "sxm_port";
    case Unit::MemRead: return "mem_read";
    case Unit::MemWrite: return "mem_write";
    case Unit::StreamIn: return "stream_in";
    case Unit::StreamOut: return "stream_out";
  }
  return "?";
}

inline Unit unit_from_name(const std::string& s) {
  for (Unit u : {Unit::MxmExec, Unit::MxmLoad, Unit::VxmAlu, Unit::SxmPort,
                 Unit::MemRead, Unit::MemWrite, Unit::StreamIn, Unit::StreamOut})
    if (s == unit_name(u)) return u;
  throw std::runtime_error("unknown unit class: " + s);
}

struct Claim {
  Unit unit;
  int id;
  long start, end;  // [start, end)
};

struct Dep {
  int producer;     // instruction id
  long min_start;   // earliest legal start for the consumer
};

enum class Block { SelfAttention, FeedForward, Other };

inline const char* block_name(Block b) {
  switch (b) {
    case Block::SelfAttention: return "SA";
    case Block::FeedForward: return "FF";
    case Block::Other: return "other";
  }
  return "?";
}

// ---- on-chip memory image (typed, region-granular) ----

struct Store {
  struct Buf {
    char dtype = 0;  // 0=int8, 1=int32, 2=fp32
    std::vector<int8_t> i8;
    std::vector<int32_t> i32;
    std::vector<float> f32;
    bool init = false;
  };
  std::vector<Buf> bufs;  // indexed by region id
};

// A logical tensor laid out over one or more regions.
struct TensorBuf {
  enum class Part { Whole, LaneBlocks, ColBlocks, ColStripes };
  std::string name;
  char dtype = 0;
  int rows = 0, cols = 0;
  float scale = 1.0f;
  Part part = Part::Whole;
  int block = 0;  // lane/col block size, or stripe count for ColStripes
  std::vector<int> regions;

  // logical (l, c) -> (region id, element offset)
  std::pair<int, std::size_t> locate(int l, int c) const {
    switch (part) {
      case Part::Whole:
        return {regions[0], std::size_t(l) * cols + c};
      case Part::LaneBlocks: {
        int b = l / block;
        int lb = l - b * block;
        return {regions[std::size_t(b)], std::size_t(lb) * cols + c};
      }
      case Part::ColBlocks: {
        int b = c / block;
        int c0 = b * block;
        int w = std::min(block, cols - c0);
        return {regions[std::size_t(b)], std::size_t(l) * w + (c - c0)};
      }
      case Part::ColStripes: {
        int s = c % block;
        int w = (cols - s + block - 1) / block;  // columns in this stripe
        return {regions[std::size_t(s)], std::size_t(l) * w + c / block};
      }
    }
    throw std::logic_error("TensorBuf: bad partition");
  }
  int part_count() const { return int(regions.size()); }
  long region_elems(int idx) const {
    switch (part) {
      case Part::Whole: return long(rows) * cols;
      case Part::LaneBlocks: {
        int l0 = idx * block;
        return long(std::min(block, rows - l0)) * cols;
      }
      case Part::ColBlocks: {
        int c0 = idx * block;
        return long(rows) * std::min(block, cols - c0);
      }
      case Part::ColStripes:
        return long(rows) * ((cols - idx + block - 1) / block);
    }
    return 0;
  }
};

namespace buf_access {

inline Store::Buf& region_rw(Store& st, int region) {
  return st.bufs.at(std::size_t(region));
}
inline const Store::Buf& region_rd(const Store& st, int region, const char* who) {
  const auto& b = st.bufs.at(std::size_t(region));
  if (!b.init)
    throw std::runtime_error(std::string("uninitialized read of region ") +
                             std::to_string(region) + " by " + who);
  return b;
}

inline int8_t rd_i8(const Store& st, const TensorBuf& t, int l, int c, const char* who) {
  auto [r, off] = t.locate(l, c);
  return region_rd(st, r, who).i8[off];
}
inline int32_t rd_i32(const Store& st, const TensorBuf& t, int l, int c, const char* who) {
  auto [r, off] = t.locate(l, c);
  return region_rd(st, r, who).i32[off];
}
inline float rd_f32(const Store& st, const TensorBuf& t, int l, int c, const char* who) {
  auto [r, off] = t.locate(l, c);
  return region_rd(st, r, who).f32[off];
}
inline void wr_i8(Store& st, const TensorBuf& t, int l, int c, int8_t v) {
  auto [r, off] = t.locate(l, c);
  region_rw(st, r).i8[off] = v;
}
inline void wr_i32(Store& st, const TensorBuf& t, int l, int c, int32_t v) {
  auto [r, off] = t.locate(l, c);
  region_rw(st, r).i32[off] = v;
}
inline void wr_f32(Store& st, const TensorBuf& t, int l, int c, float v) {
  auto [r, off] = t.locate(l, c);
  region_rw(st, r).f32[off] = v;
}
inline void mark_init(Store& st, const TensorBuf& t) {
  for (int r : t.regions) region_rw(st, r).init = true;
}
inline void mark_init_region(Store& st, int region) { region_rw(st, region).init = true; }

}  // namespace buf_access

struct Instruction {
  int id = -1;
  long start = 0, dur = 0;
  Unit unit = Unit::MxmExec;
  int unit_id = 0;
  std::string opcode;
  std::string node;  // graph node name
  int layer = 0;
  Block block = Block::Other;
  std::vector<int> streams;
  std::vector<Claim> claims;
  std::vector<Dep> deps;
  std::function<void(Store&)> payload;  // empty for timing-only instructions
  long end() const { return start + dur; }
};

struct Snapshot {
  long at_cycle = 0;
  int layer = 0;
  std::vector<std::pair<std::string, TensorBuf>> tensors;
};

struct Schedule {
  ArchConfig cfg;
  MemoryMap mem;
  std::vector<std::pair<char, long>> region_meta;  // dtype, elems per region
  std::vector<Instruction> instrs;
  std::vector<std::pair<int, Store::Buf>> init;    // preloaded regions
  std::vector<Snapshot> snapshots;
  int layers = 1;
  long layer_span = 0;

  long end_cycle() const {
    long e = 0;
    for (auto& i : instrs) e = std::max(e, i.end());
    return e;
  }
  Store make_store() const {
    Store st;
    st.bufs.resize(region_meta.size());
    for (std::size_t r = 0; r < region_meta.size(); ++r) {
      auto [dt, n] = region_meta[r];
      st.bufs[r].dtype = dt;
      if (dt == 0) st.bufs[r].i8.assign(std::size_t(n), 0);
      else if (dt == 1) st.bufs[r].i32.assign(std::size_t(n), 0);
      else st.bufs[r].f32.assign(std::size_t(n), 0.0f);
    }
    for (auto& [r, buf] : init) {
      st.bufs.at(std::size_t(r)) = buf;
      st.bufs.at(std::size_t(r)).init = true;
    }
    return st;
  }
};

// ---- exhaustive static validation ----

inline std::vector<std::string> validate_schedule(const Schedule& s) {
  std::vector<std::string> conflicts;
  // resource exclusivity: sort claims per unit, adjacent-overlap scan
  std::map<std::pair<Unit, int>, std::vector<std::pair<std::pair<long, long>, int>>> table;
  for (auto& ins : s.instrs) {
    if (ins.dur < 0) conflicts.push_back("negative duration at instruction " + std::to_string(ins.id));
    for (auto& c : ins.claims) {
      if (c.end <= c.start) continue;
      table[{c.unit, c.id}].push_back({{c.start, c.end}, ins.id});
    }
  }
  for (auto& [key, ivs] : table) {
    auto sorted = ivs;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 1; i < sorted.size(); ++i) {
      if (sorted[i].first.first < sorted[i - 1].first.second) {
        std::ostringstream os;
        os << unit_name(key.first) << "[" << key.second << "] claimed twice at cycle "
           << sorted[i].first.first << " by instructions " << sorted[i - 1].second
           << " and " << sorted[i].second;
        conflicts.push_back(os.str());
      }
    }
  }
  // dependency distances
  for (auto& ins : s.instrs) {
    for (auto& d : ins.deps) {
      if (d.producer < 0 || d.producer >= int(s.instrs.size())) {
        conflicts.push_back("dangling dependency at instruction " + std::to_string(ins.id));
        continue;
      }
      const auto& prod = s.instrs[std::size_t(d.producer)];
      long floor = prod.start + s.cfg.stream_hop_latency_cycles;
      if (ins.start < d.min_start || ins.start < floor) {
        std::ostringstream os;
        os << "dependency violated: instruction " << ins.id << " starts at " << ins.start
           << " but producer " << d.producer << " requires >= "
           << std::max(d.min_start, floor);
        conflicts.push_back(os.str());
      }
    }
  }
  return conflicts;
}

// ---- tab-separated dump, one row per instruction ----

struct DumpRow {
  long start = 0, dur = 0;
  std::string unit_class;
  int unit_id = 0;
  std::string opcode, node, streams;
};

inline std::string dump_schedule(const Schedule& s) {
  std::vector<const Instruction*> order;
  order.reserve(s.instrs.size());
  for (auto& i : s.instrs) order.push_back(&i);
  std::stable_sort(order.begin(), order.end(),
                   [](const Instruction* a, const Instruction* b) {
                     if (a->start != b->start) return a->start < b->start;
                     return a->id < b->id;
                   });
  std::ostringstream os;
  os << "start_cycle\tduration\tunit_class\tunit_id\topcode\tnode_name\tstream_ids\n";
  for (auto* i : order) {
    os << i->start << "\t" << i->dur << "\t" << unit_name(i->unit) << "\t" << i->unit_id
       << "\t" << i->opcode << "\t" << i->node << "\t";
    if (i->streams.empty()) os << "-";
    for (std::size_t k = 0; k < i->streams.size(); ++k)
      os << (k ? "+" : "") << i->streams[k];
    os << "\n";
  }
  return os.str();
}

inline std::vector<DumpRow> parse_schedule_dump(std::istream& is) {
  std::vector<DumpRow> rows;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (first) {  // header
      first = false;
      if (line.rfind("start_cycle", 0) == 0) continue;
    }
    std::istringstream ss(line);
    DumpRow r;
    if (!(ss >> r.start >> r.dur >> r.unit_class >> r.unit_id >> r.opcode >> r.node >> r.streams))
      throw std::runtime_error("schedule dump: malformed row: " + line);
    rows.push_back(std::move(r));
  }
  return rows;
}

// Exclusivity re-check over a parsed dump (primary-unit granularity).
inline std::vector<std::string> validate_dump_rows(const std::vector<DumpRow>& rows) {
  std::map<std::pair<std::string, int>, std::vector<std::pair<long, long>>> table;
  for (auto& r : rows)
    if (r.dur > 0) table[{r.unit_class, r.unit_id}].push_back({r.start, r.start + r.dur});
  std::vector<std::string> conflicts;
  for (auto& [key, ivs] : table) {
    auto sorted = ivs;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 1; i < sorted.size(); ++i)
      if (sorted[i].first < sorted[i - 1].second)
        conflicts.push_back(key.first + "[" + std::to_string(key.second) +
                            "] overlap at cycle " + std::to_string(sorted[i].first));
  }
  return conflicts;
}

}  // namespace tsim

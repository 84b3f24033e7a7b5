#pragma once

// Deterministic cycle-level executor for a static schedule. Instructions are
// activated at their start cycle, every in-flight claim is re-checked each
// cycle against the machine's resource exclusivity rules (a violation aborts
// with the cycle and unit), and functional payloads are applied at retirement
// in (end, id) order. Boundary snapshots are captured once every write with
// end <= at_cycle has retired.

#include <cstdio>
#include <cstring>
#include <sstream>

#include "tsim/instruction.hpp"

namespace tsim {

struct HazardError : std::runtime_error {
  long cycle;
  std::string unit;
  HazardError(long cyc, const std::string& u, const std::string& what)
      : std::runtime_error(what), cycle(cyc), unit(u) {}
};

// A tensor copied out of the store at a snapshot boundary.
struct CapturedTensor {
  char dtype = 0;  // 0=int8, 1=int32, 2=fp32
  int rows = 0, cols = 0;
  float scale = 1.0f;
  std::vector<int8_t> i8;
  std::vector<int32_t> i32;
  std::vector<float> f32;
};

inline CapturedTensor capture_tensor(const Store& st, const TensorBuf& t) {
  using namespace buf_access;
  CapturedTensor out;
  out.dtype = t.dtype;
  out.rows = t.rows;
  out.cols = t.cols;
  out.scale = t.scale;
  long n = long(t.rows) * t.cols;
  if (t.dtype == 0) out.i8.resize(std::size_t(n));
  else if (t.dtype == 1) out.i32.resize(std::size_t(n));
  else out.f32.resize(std::size_t(n));
  for (int l = 0; l < t.rows; ++l)
    for (int c = 0; c < t.cols; ++c) {
      std::size_t at = std::size_t(l) * std::size_t(t.cols) + std::size_t(c);
      if (t.dtype == 0) out.i8[at] = rd_i8(st, t, l, c, "snapshot");
      else if (t.dtype == 1) out.i32[at] = rd_i32(st, t, l, c, "snapshot");
      else out.f32[at] = rd_f32(st, t, l, c, "snapshot");
    }
  return out;
}

// ---- per-unit and per-block accounting ----

struct UnitStat {
  Unit unit = Unit::MxmExec;
  int id = 0;
  long busy = 0, idle = 0;
};

struct LayerStat {
  long self_attention = 0, feed_forward = 0, other = 0;
  long total() const { return self_attention + feed_forward + other; }
};

struct CycleReport {
  long total_cycles = 0;
  double microseconds = 0.0;
  std::vector<UnitStat> units;        // busy + idle == total_cycles each
  std::vector<LayerStat> per_layer;   // sums to total_cycles
  long scratch_high_water_bytes = 0;
  double frac_constant = 0.0, frac_scratchpad = 0.0, frac_instruction = 0.0;
};

// ---- machine state and single-cycle stepping ----

struct MachineState {
  const Schedule* sched = nullptr;
  Store store;
  long cycle = 0;
  long total = 0;
  std::vector<int> by_start, by_end;  // instruction ids
  std::size_t next_start = 0, next_retire = 0, next_snapshot = 0;
  std::vector<int> active;
  std::vector<LayerStat> per_layer;
  int last_layer = 0;
  Block last_block = Block::Other;
  std::map<std::string, CapturedTensor> outputs;

  bool done() const { return cycle >= total; }
};

inline MachineState make_machine(const Schedule& s) {
  MachineState m;
  m.sched = &s;
  m.store = s.make_store();
  m.total = s.end_cycle();
  m.by_start.resize(s.instrs.size());
  m.by_end.resize(s.instrs.size());
  for (std::size_t i = 0; i < s.instrs.size(); ++i) m.by_start[i] = m.by_end[i] = int(i);
  std::sort(m.by_start.begin(), m.by_start.end(), [&](int a, int b) {
    auto& x = s.instrs[std::size_t(a)];
    auto& y = s.instrs[std::size_t(b)];
    return std::tie(x.start, a) < std::tie(y.start, b);
  });
  std::sort(m.by_end.begin(), m.by_end.end(), [&](int a, int b) {
    long ea = s.instrs[std::size_t(a)].end(), eb = s.instrs[std::size_t(b)].end();
    return std::tie(ea, a) < std::tie(eb, b);
  });
  m.per_layer.assign(std::size_t(std::max(1, s.layers)), {});
  return m;
}

// Advance the machine by one cycle: activate starters, enforce resource
// exclusivity, attribute the cycle to a block, retire and apply payloads.
inline void step(MachineState& m) {
  const Schedule& s = *m.sched;
  long c = m.cycle;
  while (m.next_start < m.by_start.size() &&
         s.instrs[std::size_t(m.by_start[m.next_start])].start <= c) {
    m.active.push_back(m.by_start[m.next_start]);
    ++m.next_start;
  }

  // exclusivity scan over in-flight claims
  std::map<std::pair<Unit, int>, int> used;
  const Instruction* latest = nullptr;
  for (int id : m.active) {
    const Instruction& ins = s.instrs[std::size_t(id)];
    if (c >= ins.end()) continue;
    for (auto& cl : ins.claims)
      if (cl.start <= c && c < cl.end) {
        auto key = std::make_pair(cl.unit, cl.id);
        auto [it, fresh] = used.emplace(key, id);
        if (!fresh)
          throw HazardError(
              c, unit_name(cl.unit),
              std::string(unit_name(cl.unit)) + "[" + std::to_string(cl.id) +
                  "] hazard at cycle " + std::to_string(c) + ": instructions " +
                  std::to_string(it->second) + " and " + std::to_string(id));
      }
    if (!latest || ins.end() > latest->end() ||
        (ins.end() == latest->end() && ins.id > latest->id))
      latest = &ins;
  }

  // block attribution: the active instruction that completes latest owns the
  // cycle; empty cycles inherit the previous owner.
  if (latest) {
    m.last_layer = latest->layer;
    m.last_block = latest->block;
  }
  auto& ls = m.per_layer[std::size_t(std::min(m.last_layer, int(m.per_layer.size()) - 1))];
  if (m.last_block == Block::SelfAttention) ++ls.self_attention;
  else if (m.last_block == Block::FeedForward) ++ls.feed_forward;
  else ++ls.other;

  // retire everything ending at c + 1, payloads in (end, id) order
  while (m.next_retire < m.by_end.size() &&
         s.instrs[std::size_t(m.by_end[m.next_retire])].end() <= c + 1) {
    const Instruction& ins = s.instrs[std::size_t(m.by_end[m.next_retire])];
    if (ins.payload) {
      try {
        ins.payload(m.store);
      } catch (const std::runtime_error& e) {
        throw std::runtime_error(std::string(e.what()) + " (instruction " +
                                 std::to_string(ins.id) + ", node " + ins.node +
                                 ", cycle " + std::to_string(ins.end()) + ")");
      }
    }
    ++m.next_retire;
  }
  m.active.erase(std::remove_if(m.active.begin(), m.active.end(),
                                [&](int id) {
                                  return s.instrs[std::size_t(id)].end() <= c + 1;
                                }),
                 m.active.end());

  // capture boundary snapshots once their writes have retired
  while (m.next_snapshot < s.snapshots.size() &&
         s.snapshots[m.next_snapshot].at_cycle <= c + 1) {
    for (auto& [name, t] : s.snapshots[m.next_snapshot].tensors)
      m.outputs[name] = capture_tensor(m.store, t);
    ++m.next_snapshot;
  }
  ++m.cycle;
}

// ---- whole-schedule execution ----

struct SimResult {
  long total_cycles = 0;
  Store store;
  std::map<std::string, CapturedTensor> outputs;
  CycleReport report;
};

inline SimResult simulate(const Schedule& s) {
  MachineState m = make_machine(s);
  while (!m.done()) step(m);

  SimResult r;
  r.total_cycles = m.total;
  r.outputs = std::move(m.outputs);

  CycleReport& rep = r.report;
  rep.total_cycles = m.total;
  rep.microseconds = double(m.total) * 1e6 / double(s.cfg.clock_hz);
  rep.per_layer = std::move(m.per_layer);

  // busy cycles per unit instance (claims are disjoint once the run passed)
  std::map<std::pair<Unit, int>, long> busy;
  for (auto& ins : s.instrs)
    for (auto& cl : ins.claims) busy[{cl.unit, cl.id}] += cl.end - cl.start;
  for (auto& [key, cycles] : busy)
    rep.units.push_back({key.first, key.second, cycles, m.total - cycles});

  long scratch = 0;
  for (auto& reg : s.mem.regions)
    if (reg.kind == RegionKind::Scratchpad &&
        m.store.bufs.at(std::size_t(reg.id)).init)
      scratch += reg.bytes;
  rep.scratch_high_water_bytes = scratch;
  rep.frac_constant = s.mem.fraction(RegionKind::Constant, s.cfg);
  rep.frac_scratchpad = s.mem.fraction(RegionKind::Scratchpad, s.cfg);
  rep.frac_instruction = s.mem.fraction(RegionKind::Instruction, s.cfg);

  r.store = std::move(m.store);
  return r;
}

// ---- report serialization: "key: value" sections + machine-readable rows ----

inline std::string format_report(const CycleReport& r) {
  std::ostringstream os;
  os << "total_cycles: " << r.total_cycles << "\n";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", r.microseconds);
  os << "microseconds: " << buf << "\n";
  os << "scratch_high_water_bytes: " << r.scratch_high_water_bytes << "\n";
  std::snprintf(buf, sizeof buf, "%.9f", r.frac_constant);
  os << "fraction_constant: " << buf << "\n";
  std::snprintf(buf, sizeof buf, "%.9f", r.frac_scratchpad);
  os << "fraction_scratchpad: " << buf << "\n";
  std::snprintf(buf, sizeof buf, "%.9f", r.frac_instruction);
  os << "fraction_instruction: " << buf << "\n";
  os << "units:\n";
  for (auto& u : r.units)
    os << "  " << unit_name(u.unit) << "\t" << u.id << "\t" << u.busy << "\t"
       << u.idle << "\n";
  os << "layers:\n";
  for (std::size_t i = 0; i < r.per_layer.size(); ++i)
    os << "  " << i << "\t" << r.per_layer[i].self_attention << "\t"
       << r.per_layer[i].feed_forward << "\t" << r.per_layer[i].other << "\n";
  return os.str();
}

inline CycleReport parse_report(const std::string& text) {
  CycleReport r;
  std::istringstream is(text);
  std::string line;
  int section = 0;  // 0=scalars 1=units 2=layers
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line == "units:") { section = 1; continue; }
    if (line == "layers:") { section = 2; continue; }
    if (section == 0) {
      auto colon = line.find(": ");
      if (colon == std::string::npos) throw std::runtime_error("report: bad line: " + line);
      std::string key = line.substr(0, colon), val = line.substr(colon + 2);
      if (key == "total_cycles") r.total_cycles = std::stol(val);
      else if (key == "microseconds") r.microseconds = std::stod(val);
      else if (key == "scratch_high_water_bytes") r.scratch_high_water_bytes = std::stol(val);
      else if (key == "fraction_constant") r.frac_constant = std::stod(val);
      else if (key == "fraction_scratchpad") r.frac_scratchpad = std::stod(val);
      else if (key == "fraction_instruction") r.frac_instruction = std::stod(val);
      else throw std::runtime_error("report: unknown key: " + key);
    } else if (section == 1) {
      std::istringstream row(line);
      std::string uname;
      UnitStat u;
      if (!(row >> uname >> u.id >> u.busy >> u.idle))
        throw std::runtime_error("report: bad unit row: " + line);
      u.unit = unit_from_name(uname);
      r.units.push_back(u);
    } else {
      std::istringstream row(line);
      std::size_t idx;
      LayerStat ls;
      if (!(row >> idx >> ls.self_attention >> ls.feed_forward >> ls.other))
        throw std::runtime_error("report: bad layer row: " + line);
      if (idx != r.per_layer.size()) throw std::runtime_error("report: layer rows out of order");
      r.per_layer.push_back(ls);
    }
  }
  return r;
}

}  // namespace tsim

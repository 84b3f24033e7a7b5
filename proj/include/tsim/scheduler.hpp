#pragma once

// Static scheduler: lowers an encoder stack onto the machine model as a
// conflict-free, cycle-stamped instruction list. Placement is computed by
// explicit phase algebra (not search); validate_schedule then re-proves the
// result conflict-free. Fusion strategies implemented:
//   - Q/K/V projections merged and round-robined over the MXM planes;
//   - multi-pass GEMMs double-buffer weight installs (the load port overlaps
//     the previous pass's execution, so planes are never fully idle);
//   - softmax pass 1 and LN pass 1 consume GEMM output streams live;
//   - GELU trails the producing GEMM group by group, and the downstream
//     GEMM chases the GELU emission stream at matched rate;
//   - requantization chains trail each GEMM output group.
// `fused=false` deliberately serializes these joints (baseline schedules).
//
// Memory discipline: every buffer that can be streamed concurrently with
// another is pinned to its own slice (one read + one write port per slice)
// via a static color -> slice map. Colors are reused across buffers whose
// port activity never overlaps in time. Weight constants go to slices whose
// index is congruent to the consuming plane mod 4, so concurrent installs
// (always on distinct planes) never share a read port.

#include <array>
#include <climits>
#include <memory>
#include <set>

#include "tsim/graph.hpp"
#include "tsim/instruction.hpp"
#include "tsim/kernels.hpp"
#include "tsim/reference.hpp"

namespace tsim {

inline long ceil_div(long a, long b) { return (a + b - 1) / b; }

// L-sized lane decomposition of an extent.
inline std::vector<int> lane_blocks(int extent, int L) {
  std::vector<int> b;
  for (int off = 0; off < extent; off += L) b.push_back(std::min(L, extent - off));
  return b;
}

// GELU segment plan over the producing GEMM's per-group arrival times:
// segment g starts when its input group has arrived and the chain is free.
// Empty input -> empty plan.
inline std::vector<std::pair<long, long>> schedule_gelu_fused(
    const std::vector<long>& group_ready, int vectors_per_group, int hop,
    long chain_free = 0) {
  std::vector<std::pair<long, long>> segs;
  long free_at = chain_free;
  for (long r : group_ready) {
    long s = std::max(free_at, r + hop);
    segs.push_back({s, s + vectors_per_group});
    free_at = s + vectors_per_group;
  }
  return segs;
}

// ---------------------------------------------------------------------------
// Standalone fragments (pure VXM windows; the input stream is assumed live,
// matching the claim structure of the fused three-pass dataflow).

// Three-pass layer normalization over a (k, j) tensor: four 4-ALU chains,
// 4 physical vectors per cycle per pass, two inter-pass reduction steps.
inline Schedule schedule_layernorm(int k, int j, const ArchConfig& cfg) {
  if (cfg.vxm_alu_count < 16)
    throw std::invalid_argument("schedule_layernorm: needs 16 free ALUs");
  if (k < 1 || j < 1) throw std::invalid_argument("schedule_layernorm: empty tensor");
  if (j % 4 != 0)
    throw std::invalid_argument("schedule_layernorm: column count must be a multiple of 4");
  Schedule s;
  s.cfg = cfg;
  long n4 = long(j) * ceil_div(k, cfg.lane_width) / 4;  // vectors per chain per pass
  const char* names[3] = {"ln_pass1", "ln_pass2", "ln_pass3"};
  long t = 0;
  for (int pass = 0; pass < 3; ++pass) {
    for (int c = 0; c < 4; ++c) {
      Instruction ins;
      ins.start = t;
      ins.dur = n4;
      ins.unit = Unit::VxmAlu;
      ins.unit_id = 4 * c;
      ins.opcode = names[pass];
      ins.node = names[pass];
      for (int a = 4 * c; a < 4 * c + 4; ++a)
        ins.claims.push_back({Unit::VxmAlu, a, t, t + n4});
      ins.id = int(s.instrs.size());
      s.instrs.push_back(std::move(ins));
    }
    t += n4;
    if (pass == 2) break;
    int norm = pass == 0 ? cfg.ln_norm1_cycles() : cfg.ln_norm2_cycles();
    Instruction ins;
    ins.start = t;
    ins.dur = norm;
    ins.unit = Unit::VxmAlu;
    ins.unit_id = 0;
    ins.opcode = pass == 0 ? "ln_norm1" : "ln_norm2";
    ins.node = ins.opcode;
    for (int a = 0; a < 16; ++a) ins.claims.push_back({Unit::VxmAlu, a, t, t + norm});
    ins.id = int(s.instrs.size());
    s.instrs.push_back(std::move(ins));
    t += norm;
  }
  return s;
}

// Three-pass softmax over h independent (S, S) row sets on four 3-ALU chains.
inline Schedule schedule_softmax(int seq, int heads, const ArchConfig& cfg) {
  if (cfg.vxm_alu_count < 12)
    throw std::invalid_argument("schedule_softmax: needs 12 free ALUs");
  if (seq < 1 || heads < 1) throw std::invalid_argument("schedule_softmax: empty input");
  Schedule s;
  s.cfg = cfg;
  int nchains = std::min(4, heads);
  const char* names[3] = {"softmax_pass1", "softmax_pass2", "softmax_pass3"};
  std::vector<long> chain_free(std::size_t(nchains), 0);
  for (int pass = 0; pass < 3; ++pass) {
    for (int g = 0; g < heads; ++g) {
      int c = g % nchains;
      Instruction ins;
      ins.start = chain_free[std::size_t(c)];
      ins.dur = seq;
      ins.unit = Unit::VxmAlu;
      ins.unit_id = 3 * c;
      ins.opcode = names[pass];
      ins.node = names[pass];
      for (int a = 3 * c; a < 3 * c + 3; ++a)
        ins.claims.push_back({Unit::VxmAlu, a, ins.start, ins.start + seq});
      chain_free[std::size_t(c)] = ins.start + seq;
      ins.id = int(s.instrs.size());
      s.instrs.push_back(std::move(ins));
    }
    long t = *std::max_element(chain_free.begin(), chain_free.end());
    if (pass == 2) break;
    int norm = pass == 0 ? cfg.sm_norm1_cycles() : cfg.sm_norm2_cycles();
    Instruction ins;
    ins.start = t;
    ins.dur = norm;
    ins.unit = Unit::VxmAlu;
    ins.unit_id = 0;
    ins.opcode = pass == 0 ? "sm_norm1" : "sm_norm2";
    ins.node = ins.opcode;
    for (int c = 0; c < nchains; ++c)
      for (int a = 3 * c; a < 3 * c + 3; ++a)
        ins.claims.push_back({Unit::VxmAlu, a, t, t + norm});
    ins.id = int(s.instrs.size());
    s.instrs.push_back(std::move(ins));
    chain_free.assign(std::size_t(nchains), t + norm);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Slice colors for scratch buffers. Each color is one dedicated slice in the
// post-constant pool; buffers sharing a color have temporally disjoint port
// activity (layers themselves never overlap: each starts at the previous
// layer's completion barrier).
namespace slice_color {
inline constexpr int kXQ = 0;         // 0-3  x_q stripes (both ping-pong bufs)
inline constexpr int kXF = 4;         // 4-7  x_fp stripes; scores_fp (h%4)
inline constexpr int kQAcc = 8;       // 8-10 q_acc; z2 stripes on 8-11
inline constexpr int kZ2 = 8;
inline constexpr int kKAcc = 11;      // 11-13 k_acc
inline constexpr int kGd2 = 12;       // gd2 stripes on 12-15
inline constexpr int kVAcc = 14;      // 14-16 v_acc
inline constexpr int kQQ = 17;        // 17-20 q_q (h%4); sa_q on 17
inline constexpr int kSa = 17;
inline constexpr int kKQ = 21;        // 21-24 k_q (h%4); p_acc on 21-23
inline constexpr int kPAcc = 21;
inline constexpr int kVQ = 25;        // 25-28 v_q (h%4); z1 stripes; probs_fp (h%4)
inline constexpr int kZ1 = 25;
inline constexpr int kProbsFp = 25;
inline constexpr int kScoresAcc = 29; // 29-32 scores_acc (h%4); gd1 stripes; g_q on 29
inline constexpr int kGd1 = 29;
inline constexpr int kGQ = 29;
inline constexpr int kF2Acc = 30;     // 30-32 f2_acc
inline constexpr int kAvAcc = 33;     // 33-36 av_acc (h%4); ln1_fp stripes
inline constexpr int kLn1Fp = 33;
inline constexpr int kExpFp = 37;     // 37-40 exp_fp (h%4); ln1_q stripes
inline constexpr int kLn1Q = 37;
inline constexpr int kProbsQ = 41;    // 41-44 probs_q (h%4); f1_acc (g%4)
inline constexpr int kF1Acc = 41;
inline constexpr int kCount = 45;
}  // namespace slice_color

class EncoderScheduleBuilder {
 public:
  EncoderScheduleBuilder(const ArchConfig& cfg,
                         std::shared_ptr<const EncoderParams> params,
                         bool fused = true)
      : cfg_(cfg), pp_(std::move(params)), fused_(fused), alloc_(cfg) {
    auto errs = validate_config(cfg_);
    if (!errs.empty()) throw std::invalid_argument("scheduler: invalid config: " + errs[0]);
    const auto& h = pp_->hyper;
    h.validate();
    if (h.seq_len % 4 != 0)
      throw std::invalid_argument("scheduler: seq_len must be a multiple of 4");
    if (h.seq_len > cfg_.lane_width)
      throw std::invalid_argument("scheduler: seq_len must not exceed lane_width");
    if (h.d_model > cfg_.lane_width && cfg_.lane_width % h.head_dim != 0)
      throw std::invalid_argument("scheduler: lane_width must be a multiple of head_dim");
    if (cfg_.vxm_alu_count < 16)
      throw std::invalid_argument("scheduler: needs 16 VXM ALUs");
    if (cfg_.mxm_plane_count != 4)
      throw std::invalid_argument("scheduler: plane assignment assumes 4 MXM planes");
  }

  Schedule build(const QuantTensor& x_q, const FpTensor& x_fp);

 private:
  using Payload = std::function<void(Store&)>;

  struct GemmPhaseSpec {
    int layer = 0;
    Block block = Block::Other;
    int S = 0;
    std::vector<int> kblocks;           // K decomposition (install rows per pass)
    int ngroups = 0;                    // L-wide output groups
    std::function<std::string(int)> node;
    std::function<int(int)> weight_region;
    std::function<long(int)> weight_ready;
    bool weight_sxm = false;
    std::function<std::string(int)> sxm_node;
    std::function<std::vector<int>(int, int)> act_regions;  // (g, ki)
    std::function<long(int, int)> act_ready;                // (g, ki)
    bool act_sxm = false;
    std::function<std::string(int)> act_sxm_node;
    const std::vector<long>* chase_start = nullptr;  // per ki: producer write start
    const std::vector<int>* chase_instr = nullptr;   // per ki: producer write id
    std::function<int(int)> out_region;
    std::function<Payload(int)> out_payload;
    std::vector<long> plane_avail;
  };
  struct GemmPhaseResult {
    struct G {
      int plane = 0;
      long exec_s = 0, exec_e = 0, write_s = 0, write_e = 0;
      int exec_id = -1, write_id = -1;
    };
    std::vector<G> groups;
    std::vector<long> plane_exec_end;
    long done = 0;  // all output writes retired
  };

  // ---- low-level emission ----

  int add_instr(Instruction ins) {
    ins.id = int(sched_.instrs.size());
    sched_.instrs.push_back(std::move(ins));
    return sched_.instrs.back().id;
  }
  bool interval_free(Unit u, int id, long s, long e) const {
    auto it = res_.find({u, id});
    if (it == res_.end()) return true;
    for (auto& [a, b] : it->second)
      if (s < b && a < e) return false;
    return true;
  }
  int pick_unit(Unit u, int count, long s, long e) {
    for (int id = 0; id < count; ++id)
      if (interval_free(u, id, s, e)) {
        res_[{u, id}].push_back({s, e});
        return id;
      }
    throw std::runtime_error(std::string("scheduler: out of ") + unit_name(u) +
                             " units at cycle " + std::to_string(s));
  }
  long alus_free(const std::vector<int>& alus) const {
    long t = 0;
    for (int a : alus) {
      auto it = res_.find({Unit::VxmAlu, a});
      if (it == res_.end()) continue;
      for (auto& [s, e] : it->second) t = std::max(t, e);
    }
    return t;
  }
  void dep_on_writers(Instruction& ins, const std::vector<int>& regions) {
    std::set<int> producers;
    for (int r : regions) {
      auto it = region_writer_.find(r);
      if (it != region_writer_.end()) producers.insert(it->second);
    }
    for (int p : producers)
      ins.deps.push_back({p, sched_.instrs[std::size_t(p)].end()});
  }

  // MEM -> unit burst over `regions`; identical concurrent requests share one
  // burst (a stream is broadcast to every consumer on its path).
  int read_burst(const std::vector<int>& regions, long start, long dur,
                 const std::string& node, int layer, Block block,
                 bool via_sxm = false, const std::string& opcode = "read") {
    auto key = std::make_tuple(regions, start, dur, via_sxm);
    auto it = shared_reads_.find(key);
    if (it != shared_reads_.end()) return it->second;
    Instruction ins;
    ins.start = start;
    ins.dur = dur;
    ins.unit = Unit::MemRead;
    ins.unit_id = alloc_.region(regions.at(0)).slice;
    ins.opcode = via_sxm ? "reorder_" + opcode : opcode;
    ins.node = node;
    ins.layer = layer;
    ins.block = block;
    std::set<int> slices;
    for (int r : regions) slices.insert(alloc_.region(r).slice);
    for (int s : slices) ins.claims.push_back({Unit::MemRead, s, start, start + dur});
    int stream = pick_unit(Unit::StreamIn, cfg_.streams_per_direction, start, start + dur);
    ins.streams.push_back(stream);
    ins.claims.push_back({Unit::StreamIn, stream, start, start + dur});
    if (via_sxm) {
      int port = pick_unit(Unit::SxmPort, cfg_.sxm_port_count, start, start + dur);
      ins.claims.push_back({Unit::SxmPort, port, start, start + dur});
    }
    dep_on_writers(ins, regions);
    int id = add_instr(std::move(ins));
    shared_reads_[key] = id;
    return id;
  }

  // unit -> MEM burst; carries the producer's functional payload.
  int write_burst(const std::vector<int>& regions, long start, long dur,
                  const std::string& node, int layer, Block block, Payload payload,
                  std::vector<Dep> deps, const std::string& opcode = "write") {
    Instruction ins;
    ins.start = start;
    ins.dur = dur;
    ins.unit = Unit::MemWrite;
    ins.unit_id = alloc_.region(regions.at(0)).slice;
    ins.opcode = opcode;
    ins.node = node;
    ins.layer = layer;
    ins.block = block;
    std::set<int> slices;
    for (int r : regions) slices.insert(alloc_.region(r).slice);
    for (int s : slices) ins.claims.push_back({Unit::MemWrite, s, start, start + dur});
    int stream = pick_unit(Unit::StreamOut, cfg_.streams_per_direction, start, start + dur);
    ins.streams.push_back(stream);
    ins.claims.push_back({Unit::StreamOut, stream, start, start + dur});
    ins.deps = std::move(deps);
    ins.payload = std::move(payload);
    int id = add_instr(std::move(ins));
    for (int r : regions) region_writer_[r] = id;
    return id;
  }

  // VXM chain step claiming `alus` over [start, start + dur).
  int chain_instr(const std::vector<int>& alus, long start, long dur,
                  const std::string& node, int layer, Block block,
                  const std::string& opcode, std::vector<Dep> deps) {
    Instruction ins;
    ins.start = start;
    ins.dur = dur;
    ins.unit = Unit::VxmAlu;
    ins.unit_id = alus.at(0);
    ins.opcode = opcode;
    ins.node = node;
    ins.layer = layer;
    ins.block = block;
    for (int a : alus) {
      ins.claims.push_back({Unit::VxmAlu, a, start, start + dur});
      res_[{Unit::VxmAlu, a}].push_back({start, start + dur});
    }
    ins.deps = std::move(deps);
    return add_instr(std::move(ins));
  }

  int scratch_slice(int color) const {
    int s = scratch_base_ + color;
    if (s >= alloc_.slice_count())
      throw std::invalid_argument("scheduler: too few memory slices for this model");
    return s;
  }

  TensorBuf make_scratch(const std::string& name, char dtype, int rows, int cols,
                         TensorBuf::Part part, int block,
                         const std::function<int(int)>& color) {
    TensorBuf t;
    t.name = name;
    t.dtype = dtype;
    t.rows = rows;
    t.cols = cols;
    t.part = part;
    t.block = block;
    int nparts = 1;
    if (part == TensorBuf::Part::LaneBlocks) nparts = int(ceil_div(rows, block));
    else if (part == TensorBuf::Part::ColBlocks) nparts = int(ceil_div(cols, block));
    else if (part == TensorBuf::Part::ColStripes) nparts = block;
    int esize = dtype == 0 ? 1 : 4;
    TensorBuf probe = t;
    probe.regions.assign(std::size_t(nparts), 0);
    for (int i = 0; i < nparts; ++i) {
      long elems = probe.region_elems(i);
      int rid = alloc_.place_on({name + "." + std::to_string(i), elems * esize,
                                 RegionKind::Scratchpad},
                                scratch_slice(color(i)));
      t.regions.push_back(rid);
      sched_.region_meta.push_back({dtype, elems});
    }
    return t;
  }

  // Weight constant: one region per L-wide output-column group; region i goes
  // to a slice congruent to (color0 + i) mod 4 = the plane that installs it.
  TensorBuf make_weight(const std::string& name, const QuantTensor& w, int color0) {
    TensorBuf t;
    t.name = name;
    t.dtype = 0;
    t.rows = w.shape.rows();
    t.cols = w.shape.cols();
    t.scale = w.scale;
    t.part = TensorBuf::Part::ColBlocks;
    t.block = cfg_.lane_width;
    int nparts = int(ceil_div(t.cols, t.block));
    TensorBuf probe = t;
    probe.regions.assign(std::size_t(nparts), 0);
    for (int i = 0; i < nparts; ++i) {
      long elems = probe.region_elems(i);
      int rid = alloc_.place_mod({name + "." + std::to_string(i), elems,
                                  RegionKind::Constant},
                                 (color0 + i) % 4, 4);
      t.regions.push_back(rid);
      sched_.region_meta.push_back({0, elems});
    }
    return t;
  }

  template <typename Get>
  void preload(const TensorBuf& t, Get&& get) {
    std::map<int, Store::Buf> parts;
    for (int i = 0; i < t.part_count(); ++i) {
      Store::Buf b;
      b.dtype = t.dtype;
      long n = t.region_elems(i);
      if (t.dtype == 0) b.i8.assign(std::size_t(n), 0);
      else if (t.dtype == 1) b.i32.assign(std::size_t(n), 0);
      else b.f32.assign(std::size_t(n), 0.0f);
      parts[t.regions[std::size_t(i)]] = std::move(b);
    }
    for (int l = 0; l < t.rows; ++l)
      for (int c = 0; c < t.cols; ++c) {
        auto [r, off] = t.locate(l, c);
        auto& b = parts[r];
        if (t.dtype == 0) b.i8[std::size_t(off)] = int8_t(get(l, c));
        else if (t.dtype == 1) b.i32[std::size_t(off)] = int32_t(get(l, c));
        else b.f32[std::size_t(off)] = float(get(l, c));
      }
    for (auto& [r, b] : parts) sched_.init.push_back({r, std::move(b)});
  }

  long install_dur(int rows) const {  // one row per cycle at the nominal width
    long d = long(rows) * cfg_.mxm_install_latency_cycles / cfg_.lane_width;
    return std::max(1L, d);
  }

  GemmPhaseResult gemm_phase(const GemmPhaseSpec& sp);
  long ln_block(const char* base, const GemmPhaseResult& src, const TensorBuf& acct,
                float s_acc, const TensorBuf& y, const TensorBuf& z,
                const TensorBuf& gd, const TensorBuf& out_fp, const TensorBuf& out_q,
                const FpTensor* gamma, const FpTensor* beta, float s_out,
                int layer, Block blk);
  void build_layer(int li, long b);

  // ---- members ----
  ArchConfig cfg_;
  std::shared_ptr<const EncoderParams> pp_;
  bool fused_;
  MemoryAllocator alloc_;
  Schedule sched_;
  int scratch_base_ = 0;
  std::map<std::pair<Unit, int>, std::vector<std::pair<long, long>>> res_;
  std::map<int, int> region_writer_;
  std::map<std::tuple<std::vector<int>, long, long, bool>, int> shared_reads_;

  struct Bufs {  // scratch, reused by every layer
    TensorBuf x_q[2], x_fp[2];
    TensorBuf q_acc, k_acc, v_acc;
    TensorBuf q_q, k_q, v_q;
    std::vector<TensorBuf> scores_acc, scores_fp, exp_fp, probs_fp, probs_q, av_acc;
    TensorBuf sa_q;
    TensorBuf p_acc, z1, gd1, ln1_fp, ln1_q;
    TensorBuf f1_acc, g_q, f2_acc, z2, gd2;
  } bufs_;
  std::vector<std::array<TensorBuf, 6>> wbufs_;  // wq wk wv w0 w1 w2 per layer
  long barrier_ = 0;
};

// ---------------------------------------------------------------------------

inline EncoderScheduleBuilder::GemmPhaseResult
EncoderScheduleBuilder::gemm_phase(const GemmPhaseSpec& sp) {
  const int P = cfg_.mxm_plane_count;
  const int D = cfg_.mxm_pipeline_depth_cycles;
  const int hop = cfg_.stream_hop_latency_cycles;
  GemmPhaseResult out;
  out.groups.resize(std::size_t(sp.ngroups));
  out.plane_exec_end = sp.plane_avail;
  std::vector<long> load_free = sp.plane_avail;   // MxmLoad port
  std::vector<long> exec_free = sp.plane_avail;   // MxmExec port
  std::vector<long> buf_gate = sp.plane_avail;    // double-buffer slot recycling
  int nk = int(sp.kblocks.size());
  // Groups run in waves of P planes. Execution within a wave is aligned to a
  // common start: one broadcast stream can feed every plane, so same-pass
  // reads of a shared activation fold into a single burst.
  for (int w0 = 0; w0 < sp.ngroups; w0 += P) {
    int wn = std::min(P, sp.ngroups - w0);
    std::vector<long> exec_s_of(std::size_t(wn), 0);
    std::vector<int> exec_id_of(std::size_t(wn), -1);
    for (int ki = 0; ki < nk; ++ki) {
      int rows = sp.kblocks[std::size_t(ki)];
      long idur = install_dur(rows);
      std::vector<long> inst_e_of(size_t{0} + std::size_t(wn));
      std::vector<int> inst_id_of(size_t{0} + std::size_t(wn));
      long es = 0;
      for (int j = 0; j < wn; ++j) {
        int g = w0 + j;
        long inst_s = std::max({load_free[std::size_t(j)], buf_gate[std::size_t(j)],
                                sp.weight_ready(g)});
        long inst_e = inst_s + idur;
        load_free[std::size_t(j)] = inst_e;
        int wread = read_burst({sp.weight_region(g)}, inst_s - hop, idur,
                               sp.weight_sxm ? sp.sxm_node(g) : sp.node(g),
                               sp.layer, sp.block, sp.weight_sxm, "install");
        Instruction inst;
        inst.start = inst_s;
        inst.dur = idur;
        inst.unit = Unit::MxmLoad;
        inst.unit_id = j;
        inst.opcode = "install_weights";
        inst.node = sp.node(g);
        inst.layer = sp.layer;
        inst.block = sp.block;
        inst.claims.push_back({Unit::MxmLoad, j, inst_s, inst_e});
        inst.deps.push_back({wread, inst_s});
        inst_id_of[std::size_t(j)] = add_instr(std::move(inst));
        inst_e_of[std::size_t(j)] = inst_e;
        es = std::max({es, inst_e, exec_free[std::size_t(j)]});
      }
      if (sp.chase_start) {
        es = std::max(es, (*sp.chase_start)[std::size_t(ki)] + hop);
      } else {
        for (int j = 0; j < wn; ++j) es = std::max(es, sp.act_ready(w0 + j, ki));
      }
      for (int j = 0; j < wn; ++j) {
        int g = w0 + j;
        int act_id = -1;
        if (!sp.chase_start)
          act_id = read_burst(sp.act_regions(g, ki), es - hop, sp.S,
                              sp.act_sxm ? sp.act_sxm_node(g) : sp.node(g),
                              sp.layer, sp.block, sp.act_sxm, "act");
        Instruction ex;
        ex.start = es;
        ex.dur = sp.S;
        ex.unit = Unit::MxmExec;
        ex.unit_id = j;
        ex.opcode = "matmul_stream";
        ex.node = sp.node(g);
        ex.layer = sp.layer;
        ex.block = sp.block;
        ex.claims.push_back({Unit::MxmExec, j, es, es + sp.S});
        ex.deps.push_back({inst_id_of[std::size_t(j)], inst_e_of[std::size_t(j)]});
        if (act_id >= 0)
          ex.deps.push_back({act_id, sched_.instrs[std::size_t(act_id)].start + hop});
        if (sp.chase_instr)
          ex.deps.push_back({(*sp.chase_instr)[std::size_t(ki)],
                             (*sp.chase_start)[std::size_t(ki)] + hop});
        exec_id_of[std::size_t(j)] = add_instr(std::move(ex));
        exec_s_of[std::size_t(j)] = es;
        exec_free[std::size_t(j)] = es + sp.S;
        buf_gate[std::size_t(j)] = es;  // next-next install reuses this slot
      }
    }
    for (int j = 0; j < wn; ++j) {
      int g = w0 + j;
      long ws = exec_s_of[std::size_t(j)] + D + hop;
      int wid = write_burst({sp.out_region(g)}, ws, sp.S, sp.node(g), sp.layer,
                            sp.block, sp.out_payload(g), {{exec_id_of[std::size_t(j)], ws}});
      auto& G = out.groups[std::size_t(g)];
      G.plane = j;
      G.exec_s = exec_s_of[std::size_t(j)];
      G.exec_e = G.exec_s + sp.S;
      G.write_s = ws;
      G.write_e = ws + sp.S;
      G.exec_id = exec_id_of[std::size_t(j)];
      G.write_id = wid;
      out.plane_exec_end[std::size_t(j)] = G.exec_e;
      out.done = std::max(out.done, G.write_e);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Three-pass LN over the output of `src` (int32 GEMM accumulators in `acct`)
// plus a resident fp32 residual `y`. Pass 1 consumes the GEMM output stream
// live when all 16 ALUs are free at first emission; otherwise it falls back
// to a buffered read of the accumulator (the only timing difference between
// the two modes). Returns the cycle at which both LN outputs are resident.

inline long EncoderScheduleBuilder::ln_block(
    const char* base, const GemmPhaseResult& src, const TensorBuf& acct,
    float s_acc, const TensorBuf& y, const TensorBuf& z, const TensorBuf& gd,
    const TensorBuf& out_fp, const TensorBuf& out_q, const FpTensor* gamma,
    const FpTensor* beta, float s_out, int layer, Block blk) {
  using namespace buf_access;
  const int hop = cfg_.stream_hop_latency_cycles;
  const int S = y.cols;
  const int d = y.rows;
  const int lw = cfg_.lane_width;
  auto pp = pp_;
  int ng = acct.part_count();
  long n4 = long(S) * ng / 4;  // physical vectors per chain per pass
  std::string n1 = "L" + std::to_string(layer) + "." + base + "_pass1";
  std::string n2 = "L" + std::to_string(layer) + "." + base + "_pass2";
  std::string n3 = "L" + std::to_string(layer) + "." + base + "_pass3";
  std::vector<int> all16;
  for (int a = 0; a < 16; ++a) all16.push_back(a);

  long first = LONG_MAX, last = 0;
  int first_exec = -1;
  for (auto& g : src.groups) {
    if (g.write_s < first) {
      first = g.write_s;
      first_exec = g.exec_id;
    }
    last = std::max(last, g.write_e);
  }
  bool live = fused_ && alus_free(all16) <= first;
  long w1s, w1e;
  std::vector<Dep> p1deps;
  if (live) {
    w1s = first;
    w1e = std::max(first + n4, last);  // bounded by arrival and by throughput
    p1deps.push_back({first_exec, w1s});
  } else {
    w1s = std::max(src.done + hop, alus_free(all16));
    w1e = w1s + n4;
    for (int g = 0; g < ng; ++g) {
      int rid = read_burst({acct.regions[std::size_t(g)]}, w1s - hop, n4, n1, layer, blk);
      p1deps.push_back({rid, w1s});
    }
  }
  int yrid = read_burst(y.regions, w1s - hop, w1e - w1s, n1, layer, blk);
  p1deps.push_back({yrid, w1s});
  for (int c = 0; c < 4; ++c) {
    std::vector<int> alus = {4 * c, 4 * c + 1, 4 * c + 2, 4 * c + 3};
    int cid = chain_instr(alus, w1s, w1e - w1s, n1, layer, blk, "ln_pass1", p1deps);
    TensorBuf zt = z, yt = y, at = acct;
    int stripe = c;
    float sa = s_acc;
    auto payload = [=](Store& st) {
      for (int t = stripe; t < S; t += 4)
        for (int l = 0; l < d; ++l)
          wr_f32(st, zt, l, t,
                 dequantize_acc_scalar(rd_i32(st, at, l, t, "ln"), sa) +
                     rd_f32(st, yt, l, t, "ln"));
      mark_init_region(st, zt.regions[std::size_t(stripe)]);
    };
    write_burst({z.regions[std::size_t(c)]}, w1s + hop, w1e - w1s, n1, layer, blk,
                payload, {{cid, w1s + hop}});
  }
  int nrm1 = chain_instr(all16, w1e, cfg_.ln_norm1_cycles(), n1, layer, blk,
                         "ln_norm1", {});
  long p2s = w1e + cfg_.ln_norm1_cycles();
  for (int c = 0; c < 4; ++c) {
    std::vector<int> alus = {4 * c, 4 * c + 1, 4 * c + 2, 4 * c + 3};
    int rid = read_burst({z.regions[std::size_t(c)]}, p2s - hop, n4, n2, layer, blk);
    int cid = chain_instr(alus, p2s, n4, n2, layer, blk, "ln_pass2",
                          {{rid, p2s}, {nrm1, p2s}});
    TensorBuf zt = z, gdt = gd;
    const FpTensor* gm = gamma;
    int stripe = c;
    auto payload = [=, keep = pp](Store& st) {
      (void)keep;
      for (int t = stripe; t < S; t += 4) {
        auto col = [&](int i) { return rd_f32(st, zt, i, t, "ln"); };
        float mean = column_mean(col, d, lw);
        for (int l = 0; l < d; ++l)
          wr_f32(st, gdt, l, t, gm->data[std::size_t(l)] * (col(l) - mean));
      }
      mark_init_region(st, gdt.regions[std::size_t(stripe)]);
    };
    write_burst({gd.regions[std::size_t(c)]}, p2s + hop, n4, n2, layer, blk,
                payload, {{cid, p2s + hop}});
  }
  long p2e = p2s + n4;
  int nrm2 = chain_instr(all16, p2e, cfg_.ln_norm2_cycles(), n2, layer, blk,
                         "ln_norm2", {});
  long p3s = p2e + cfg_.ln_norm2_cycles();
  float eps = pp_->hyper.eps;
  for (int c = 0; c < 4; ++c) {
    std::vector<int> alus = {4 * c, 4 * c + 1, 4 * c + 2, 4 * c + 3};
    int rid = read_burst({gd.regions[std::size_t(c)]}, p3s - hop, n4, n3, layer, blk);
    int cid = chain_instr(alus, p3s, n4, n3, layer, blk, "ln_pass3",
                          {{rid, p3s}, {nrm2, p3s}});
    TensorBuf zt = z, gdt = gd, ft = out_fp, qt = out_q;
    const FpTensor* bt = beta;
    float so = s_out;
    int stripe = c;
    auto payload = [=, keep = pp](Store& st) {
      (void)keep;
      for (int t = stripe; t < S; t += 4) {
        auto col = [&](int i) { return rd_f32(st, zt, i, t, "ln"); };
        float mean = column_mean(col, d, lw);
        float var = column_var(col, mean, d, lw);
        float denom = rsqrt_scalar(var + eps);
        for (int l = 0; l < d; ++l) {
          float o = rd_f32(st, gdt, l, t, "ln") * denom + bt->data[std::size_t(l)];
          wr_f32(st, ft, l, t, o);
          wr_i8(st, qt, l, t, quantize_scalar(o, so));
        }
      }
      mark_init_region(st, ft.regions[std::size_t(stripe)]);
      mark_init_region(st, qt.regions[std::size_t(stripe)]);
    };
    write_burst({out_fp.regions[std::size_t(c)]}, p3s + hop, n4, n3, layer, blk,
                nullptr, {{cid, p3s + hop}});
    write_burst({out_q.regions[std::size_t(c)]}, p3s + hop, n4, n3, layer, blk,
                payload, {{cid, p3s + hop}});
  }
  return p3s + n4 + hop;
}

// ---------------------------------------------------------------------------

inline void EncoderScheduleBuilder::build_layer(int li, long b) {
  using namespace buf_access;
  const auto& h = pp_->hyper;
  const LayerParams& LP = pp_->layers[std::size_t(li)];
  const auto& sc = LP.scales;
  const int L = cfg_.lane_width;
  const int S = h.seq_len;
  const int d = h.d_model;
  const int dk = h.head_dim;
  const int H = h.heads;
  const int hop = cfg_.stream_hop_latency_cycles;
  const int sxl = cfg_.sxm_reorder_latency_cycles;
  auto pp = pp_;
  const TensorBuf xq = bufs_.x_q[li % 2], xf = bufs_.x_fp[li % 2];
  const TensorBuf xq_next = bufs_.x_q[(li + 1) % 2], xf_next = bufs_.x_fp[(li + 1) % 2];
  auto& W = wbufs_[std::size_t(li)];

  std::vector<int> dblocks = lane_blocks(d, L);
  int ng = int(dblocks.size());
  std::vector<int> fblocks = lane_blocks(h.d_ff, L);
  int ngf = int(fblocks.size());

  auto nname = [li](const char* base) { return "L" + std::to_string(li) + "." + base; };

  // Functional payload for one L-wide output group of a (K, N) GEMM + bias.
  // The weight slab is transposed to contiguous rows once per call.
  auto big_gemm_payload = [pp, S](const QuantTensor* w, const AccTensor* bias,
                                  TensorBuf act, TensorBuf outb, int n0, int n1) {
    return Payload([=, keep = pp](Store& st) {
      (void)keep;
      int K = w->shape.rows();
      std::vector<int8_t> colbuf(size_t{0} + std::size_t(K));
      std::vector<int8_t> wT(std::size_t(n1 - n0) * std::size_t(K));
      for (int dd = 0; dd < K; ++dd)
        for (int n = n0; n < n1; ++n)
          wT[std::size_t(n - n0) * std::size_t(K) + std::size_t(dd)] = w->at(dd, n);
      for (int t = 0; t < S; ++t) {
        for (int dd = 0; dd < K; ++dd)
          colbuf[std::size_t(dd)] = rd_i8(st, act, dd, t, "gemm");
        for (int n = n0; n < n1; ++n) {
          const int8_t* wrow = &wT[std::size_t(n - n0) * std::size_t(K)];
          long long sum = bias ? bias->data[std::size_t(n)] : 0;
          for (int dd = 0; dd < K; ++dd)
            sum += int(wrow[dd]) * int(colbuf[std::size_t(dd)]);
          if (sum > INT32_MAX || sum < INT32_MIN)
            throw std::overflow_error("simulated GEMM: int32 accumulator overflow");
          wr_i32(st, outb, n, t, int32_t(sum));
        }
      }
      auto [r, off] = outb.locate(n0, 0);
      (void)off;
      mark_init_region(st, r);
    });
  };

  // ---- phase 1: merged Q/K/V projections, round-robin over planes ----
  GemmPhaseSpec qkv;
  qkv.layer = li;
  qkv.block = Block::SelfAttention;
  qkv.S = S;
  qkv.kblocks = dblocks;
  qkv.ngroups = 3 * ng;
  auto which = [ng](int g) { return g / ng; };  // 0=q 1=k 2=v
  auto sub = [ng](int g) { return g % ng; };
  qkv.node = [=](int g) {
    const char* bb = which(g) == 0 ? "q_gemm" : which(g) == 1 ? "k_gemm" : "v_gemm";
    return nname(bb);
  };
  qkv.weight_region = [&W, which, sub](int g) {
    return W[std::size_t(which(g))].regions[std::size_t(sub(g))];
  };
  qkv.weight_ready = [b, hop](int) { return b + hop; };
  std::array<const TensorBuf*, 3> accb = {&bufs_.q_acc, &bufs_.k_acc, &bufs_.v_acc};
  qkv.act_regions = [xq](int, int) { return xq.regions; };
  qkv.act_ready = [b, hop](int, int) { return b + hop; };
  qkv.out_region = [accb, which, sub](int g) {
    return accb[std::size_t(which(g))]->regions[std::size_t(sub(g))];
  };
  qkv.out_payload = [&](int g) {
    const QuantTensor* w = which(g) == 0 ? &LP.wq : which(g) == 1 ? &LP.wk : &LP.wv;
    const AccTensor* bias = which(g) == 0 ? &LP.bq : which(g) == 1 ? &LP.bk : &LP.bv;
    int n0 = sub(g) * L, n1 = std::min(d, n0 + L);
    return big_gemm_payload(w, bias, xq, *accb[std::size_t(which(g))], n0, n1);
  };
  qkv.plane_avail.assign(std::size_t(cfg_.mxm_plane_count), b);
  auto rqkv = gemm_phase(qkv);

  // ---- phase 2: per-tensor requantization chains (3 x 4 ALUs) ----
  std::array<const TensorBuf*, 3> qb = {&bufs_.q_q, &bufs_.k_q, &bufs_.v_q};
  std::array<float, 3> qscale = {sc.s_q, sc.s_k, sc.s_v};
  std::array<float, 3> accscale = {sc.s_in * LP.wq.scale, sc.s_in * LP.wk.scale,
                                   sc.s_in * LP.wv.scale};
  std::array<std::vector<long>, 3> rq_group_end;
  for (int j = 0; j < 3; ++j) {
    std::vector<int> alus = {4 * j, 4 * j + 1, 4 * j + 2, 4 * j + 3};
    long prev = 0;
    const char* bb = j == 0 ? "q_requant" : j == 1 ? "k_requant" : "v_requant";
    for (int g = 0; g < ng; ++g) {
      const auto& src = rqkv.groups[std::size_t(j * ng + g)];
      long lower = fused_ ? src.write_e + hop : rqkv.done + hop;
      long s = std::max({prev, lower, alus_free(alus)});
      int rid = read_burst({accb[std::size_t(j)]->regions[std::size_t(g)]}, s - hop, S,
                           nname(bb), li, Block::SelfAttention);
      int cid = chain_instr(alus, s, S, nname(bb), li, Block::SelfAttention,
                            "requant", {{rid, s}});
      std::vector<int> outregs;
      int l0 = g * L, l1 = std::min(d, l0 + L);
      for (int head = l0 / dk; head * dk < l1; ++head)
        outregs.push_back(qb[std::size_t(j)]->regions[std::size_t(head)]);
      TensorBuf at = *accb[std::size_t(j)], outt = *qb[std::size_t(j)];
      float sa = accscale[std::size_t(j)], so = qscale[std::size_t(j)];
      auto payload = [=](Store& st) {
        for (int l = l0; l < l1; ++l)
          for (int t = 0; t < S; ++t)
            wr_i8(st, outt, l, t,
                  quantize_scalar(
                      dequantize_acc_scalar(rd_i32(st, at, l, t, "requant"), sa), so));
        for (int r : outregs) mark_init_region(st, r);
      };
      write_burst(outregs, s + hop, S, nname(bb), li, Block::SelfAttention,
                  payload, {{cid, s + hop}});
      rq_group_end[std::size_t(j)].push_back(s + hop + S);
      prev = s + S;
    }
  }
  auto rq_head_end = [&rq_group_end, dk, L](int j, int head) {
    return rq_group_end[std::size_t(j)][std::size_t(head * dk / L)];
  };

  // ---- phase 3: batched scores Q-K per head (K transposed in SXM) ----
  GemmPhaseSpec qk;
  qk.layer = li;
  qk.block = Block::SelfAttention;
  qk.S = S;
  qk.kblocks = {dk};
  qk.ngroups = H;
  qk.node = [=](int) { return nname("qk_gemm"); };
  qk.weight_region = [&](int g) { return bufs_.k_q.regions[std::size_t(g)]; };
  qk.weight_ready = [&, hop, sxl](int g) { return rq_head_end(1, g) + hop + sxl; };
  qk.weight_sxm = true;
  qk.sxm_node = [=](int) { return nname("k_reorder"); };
  qk.act_regions = [&](int g, int) {
    return std::vector<int>{bufs_.q_q.regions[std::size_t(g)]};
  };
  qk.act_ready = [&, hop, sxl](int g, int) { return rq_head_end(0, g) + hop + sxl; };
  qk.act_sxm = true;
  qk.act_sxm_node = [=](int) { return nname("q_reorder"); };
  qk.out_region = [&](int g) { return bufs_.scores_acc[std::size_t(g)].regions[0]; };
  qk.out_payload = [&](int g) {
    TensorBuf qt = bufs_.q_q, kt = bufs_.k_q, outt = bufs_.scores_acc[std::size_t(g)];
    return Payload([=](Store& st) {
      for (int u = 0; u < S; ++u)
        for (int t = 0; t < S; ++t) {
          long long sum = 0;
          for (int dd = 0; dd < dk; ++dd)
            sum += int(rd_i8(st, kt, g * dk + dd, u, "qk")) *
                   int(rd_i8(st, qt, g * dk + dd, t, "qk"));
          wr_i32(st, outt, u, t, int32_t(sum));
        }
      mark_init(st, outt);
    });
  };
  qk.plane_avail = rqkv.plane_exec_end;
  auto rqk = gemm_phase(qk);

  // ---- phase 4: softmax on four 3-ALU chains ----
  float s_scores = LP.scores_scale(dk);
  int nchains = std::min(4, H);
  std::vector<int> smalus;
  for (int c = 0; c < nchains; ++c)
    for (int k2 = 0; k2 < 3; ++k2) smalus.push_back(3 * c + k2);

  // pass 1: dequantize + scale + running max; live on the QK output stream
  // when the chain is free at emission, otherwise a buffered read.
  long sm1_end = 0;
  std::vector<long> chain_free(4, 0);
  std::vector<long> p1_wend(std::size_t(H), 0);
  for (int g = 0; g < H; ++g) {
    const auto& src = rqk.groups[std::size_t(g)];
    int chain = src.plane % 4;
    std::vector<int> alus = {3 * chain, 3 * chain + 1, 3 * chain + 2};
    long lower = fused_ ? src.write_s : rqk.done + hop;
    long s = std::max({lower, chain_free[std::size_t(chain)], alus_free(alus)});
    std::vector<Dep> deps;
    if (s - hop >= src.write_e) {
      int rid = read_burst({bufs_.scores_acc[std::size_t(g)].regions[0]}, s - hop, S,
                           nname("softmax_pass1"), li, Block::SelfAttention);
      deps.push_back({rid, s});
    } else {
      deps.push_back({src.exec_id, src.write_s});
    }
    int cid = chain_instr(alus, s, S, nname("softmax_pass1"), li,
                          Block::SelfAttention, "sm_scale_max", deps);
    chain_free[std::size_t(chain)] = s + S;
    TensorBuf at = bufs_.scores_acc[std::size_t(g)],
              outt = bufs_.scores_fp[std::size_t(g)];
    auto payload = [=](Store& st) {
      for (int u = 0; u < S; ++u)
        for (int t = 0; t < S; ++t)
          wr_f32(st, outt, u, t,
                 dequantize_acc_scalar(rd_i32(st, at, u, t, "softmax"), s_scores));
      mark_init(st, outt);
    };
    write_burst({outt.regions[0]}, s + hop, S, nname("softmax_pass1"), li,
                Block::SelfAttention, payload, {{cid, s + hop}});
    p1_wend[std::size_t(g)] = s + hop + S;
    sm1_end = std::max(sm1_end, s + S);
  }
  int nrm1 = chain_instr(smalus, std::max(sm1_end, alus_free(smalus)),
                         cfg_.sm_norm1_cycles(), nname("softmax_pass1"), li,
                         Block::SelfAttention, "sm_norm1", {});
  long t2 = sched_.instrs[std::size_t(nrm1)].end();

  // pass 2: subtract max, exp, running sum (the exp store is reused by pass 3)
  chain_free.assign(4, t2);
  std::vector<long> exp_wend(std::size_t(H), 0);
  for (int g = 0; g < H; ++g) {
    int chain = g % nchains;
    std::vector<int> alus = {3 * chain, 3 * chain + 1, 3 * chain + 2};
    long s = std::max({chain_free[std::size_t(chain)], t2,
                       p1_wend[std::size_t(g)] + hop, alus_free(alus)});
    int rid = read_burst({bufs_.scores_fp[std::size_t(g)].regions[0]}, s - hop, S,
                         nname("softmax_pass2"), li, Block::SelfAttention);
    int cid = chain_instr(alus, s, S, nname("softmax_pass2"), li,
                          Block::SelfAttention, "sm_exp_sum", {{rid, s}, {nrm1, t2}});
    TensorBuf sct = bufs_.scores_fp[std::size_t(g)], outt = bufs_.exp_fp[std::size_t(g)];
    const int lw = cfg_.lane_width;
    auto payload = [=](Store& st) {
      for (int t = 0; t < S; ++t) {
        auto colv = [&](int u) { return rd_f32(st, sct, u, t, "softmax"); };
        float m = column_max_canonical(colv, S, lw);
        for (int u = 0; u < S; ++u) wr_f32(st, outt, u, t, std::exp(colv(u) - m));
      }
      mark_init(st, outt);
    };
    write_burst({outt.regions[0]}, s + hop, S, nname("softmax_pass2"), li,
                Block::SelfAttention, payload, {{cid, s + hop}});
    chain_free[std::size_t(chain)] = s + S;
    exp_wend[std::size_t(g)] = s + hop + S;
  }
  long sm2_end = *std::max_element(chain_free.begin(), chain_free.end());
  int nrm2 = chain_instr(smalus, std::max(sm2_end, alus_free(smalus)),
                         cfg_.sm_norm2_cycles(), nname("softmax_pass2"), li,
                         Block::SelfAttention, "sm_norm2", {});
  long t3 = sched_.instrs[std::size_t(nrm2)].end();

  // pass 3: multiply by the reciprocal sum; fp32 probabilities + int8 twin
  chain_free.assign(4, t3);
  std::vector<long> probs_end(std::size_t(H), 0);
  for (int g = 0; g < H; ++g) {
    int chain = g % nchains;
    std::vector<int> alus = {3 * chain, 3 * chain + 1, 3 * chain + 2};
    long s = std::max({chain_free[std::size_t(chain)], t3,
                       exp_wend[std::size_t(g)] + hop, alus_free(alus)});
    int rid = read_burst({bufs_.exp_fp[std::size_t(g)].regions[0]}, s - hop, S,
                         nname("softmax_pass3"), li, Block::SelfAttention);
    int cid = chain_instr(alus, s, S, nname("softmax_pass3"), li,
                          Block::SelfAttention, "sm_normalize", {{rid, s}, {nrm2, t3}});
    TensorBuf et = bufs_.exp_fp[std::size_t(g)], pf = bufs_.probs_fp[std::size_t(g)],
              pq = bufs_.probs_q[std::size_t(g)];
    float s_probs = sc.s_probs;
    const int lw = cfg_.lane_width;
    auto payload = [=](Store& st) {
      for (int t = 0; t < S; ++t) {
        auto ecol = [&](int u) { return rd_f32(st, et, u, t, "softmax"); };
        float recip = 1.0f / column_sum_canonical(ecol, S, lw);
        for (int u = 0; u < S; ++u) {
          float pv = ecol(u) * recip;
          wr_f32(st, pf, u, t, pv);
          wr_i8(st, pq, u, t, quantize_scalar(pv, s_probs));
        }
      }
      mark_init(st, pf);
      mark_init(st, pq);
    };
    write_burst({pf.regions[0]}, s + hop, S, nname("softmax_pass3"), li,
                Block::SelfAttention, nullptr, {{cid, s + hop}});
    write_burst({pq.regions[0]}, s + hop, S, nname("softmax_pass3"), li,
                Block::SelfAttention, payload, {{cid, s + hop}});
    chain_free[std::size_t(chain)] = s + S;
    probs_end[std::size_t(g)] = s + hop + S;
  }
  long sm3_done = *std::max_element(probs_end.begin(), probs_end.end());

  // ---- phase 5: attention x V per head (V transposed on the fly in SXM) ----
  GemmPhaseSpec av;
  av.layer = li;
  av.block = Block::SelfAttention;
  av.S = S;
  av.kblocks = lane_blocks(S, L);
  av.ngroups = H;
  av.node = [=](int) { return nname("av_gemm"); };
  av.weight_region = [&](int g) { return bufs_.v_q.regions[std::size_t(g)]; };
  av.weight_ready = [&, hop, sxl](int g) { return rq_head_end(2, g) + hop + sxl; };
  av.weight_sxm = true;
  av.sxm_node = [=](int) { return nname("v_reorder"); };
  av.act_regions = [&](int g, int) {
    return std::vector<int>{bufs_.probs_q[std::size_t(g)].regions[0]};
  };
  av.act_ready = [&, sm3_done, hop](int g, int) {
    return (fused_ ? probs_end[std::size_t(g)] : sm3_done) + hop;
  };
  av.out_region = [&](int g) { return bufs_.av_acc[std::size_t(g)].regions[0]; };
  av.out_payload = [&](int g) {
    TensorBuf pq = bufs_.probs_q[std::size_t(g)], vt = bufs_.v_q,
              outt = bufs_.av_acc[std::size_t(g)];
    return Payload([=](Store& st) {
      for (int c = 0; c < dk; ++c)
        for (int t = 0; t < S; ++t) {
          long long sum = 0;
          for (int u = 0; u < S; ++u)
            sum += int(rd_i8(st, pq, u, t, "av")) *
                   int(rd_i8(st, vt, g * dk + c, u, "av"));
          wr_i32(st, outt, c, t, int32_t(sum));
        }
      mark_init(st, outt);
    });
  };
  av.plane_avail = rqk.plane_exec_end;
  auto rav = gemm_phase(av);

  // ---- phase 6: attention-output requant into the concatenated tensor ----
  std::vector<int> avalus = {12, 13, 14, 15};
  std::vector<long> sa_head_end(std::size_t(H), 0);
  {
    long prev = 0;
    for (int g = 0; g < H; ++g) {
      const auto& src = rav.groups[std::size_t(g)];
      long lower = fused_ ? src.write_e + hop : rav.done + hop;
      long s = std::max({prev, lower, alus_free(avalus)});
      int rid = read_burst({bufs_.av_acc[std::size_t(g)].regions[0]}, s - hop, S,
                           nname("av_requant"), li, Block::SelfAttention);
      int cid = chain_instr(avalus, s, S, nname("av_requant"), li,
                            Block::SelfAttention, "requant", {{rid, s}});
      TensorBuf at = bufs_.av_acc[std::size_t(g)], outt = bufs_.sa_q;
      float sa = sc.s_probs * sc.s_v, so = sc.s_av;
      int head = g;
      auto payload = [=](Store& st) {
        for (int c = 0; c < dk; ++c)
          for (int t = 0; t < S; ++t)
            wr_i8(st, outt, head * dk + c, t,
                  quantize_scalar(
                      dequantize_acc_scalar(rd_i32(st, at, c, t, "requant"), sa), so));
        mark_init_region(st, outt.regions[std::size_t(head)]);
      };
      write_burst({bufs_.sa_q.regions[std::size_t(g)]}, s + hop, S,
                  nname("av_requant"), li, Block::SelfAttention, payload,
                  {{cid, s + hop}});
      sa_head_end[std::size_t(g)] = s + hop + S;
      prev = s + S;
    }
  }

  // ---- phase 7: attention output projection ----
  GemmPhaseSpec pg;
  pg.layer = li;
  pg.block = Block::SelfAttention;
  pg.S = S;
  pg.kblocks = dblocks;
  pg.ngroups = ng;
  pg.node = [=](int) { return nname("p_gemm"); };
  pg.weight_region = [&](int g) { return W[3].regions[std::size_t(g)]; };
  pg.weight_ready = [b, hop](int) { return b + hop; };
  pg.act_regions = [&, L, dk, d](int, int ki) {
    std::vector<int> regs;
    int l0 = ki * L, l1 = std::min(d, l0 + L);
    for (int head = l0 / dk; head * dk < l1; ++head)
      regs.push_back(bufs_.sa_q.regions[std::size_t(head)]);
    return regs;
  };
  pg.act_ready = [&, L, dk, d, hop](int, int ki) {
    long r = 0;
    int l0 = ki * L, l1 = std::min(d, l0 + L);
    for (int head = l0 / dk; head * dk < l1; ++head)
      r = std::max(r, sa_head_end[std::size_t(head)]);
    return r + hop;
  };
  pg.out_region = [&](int g) { return bufs_.p_acc.regions[std::size_t(g)]; };
  pg.out_payload = [&](int g) {
    int n0 = g * L, n1 = std::min(d, n0 + L);
    return big_gemm_payload(&LP.w0, &LP.b0, bufs_.sa_q, bufs_.p_acc, n0, n1);
  };
  pg.plane_avail = rav.plane_exec_end;
  auto rp = gemm_phase(pg);

  // ---- phase 8: LN1 (residual x_fp fused into pass 1) ----
  long ln1_done = ln_block("ln1", rp, bufs_.p_acc, sc.s_av * LP.w0.scale, xf,
                           bufs_.z1, bufs_.gd1, bufs_.ln1_fp, bufs_.ln1_q,
                           &LP.gamma1, &LP.beta1, sc.s_ln1, li, Block::SelfAttention);

  // ---- phase 9: FF GEMM 1 ----
  GemmPhaseSpec f1;
  f1.layer = li;
  f1.block = Block::FeedForward;
  f1.S = S;
  f1.kblocks = dblocks;
  f1.ngroups = ngf;
  f1.node = [=](int) { return nname("f1_gemm"); };
  f1.weight_region = [&](int g) { return W[4].regions[std::size_t(g)]; };
  f1.weight_ready = [b, hop](int) { return b + hop; };
  f1.act_regions = [&](int, int) { return bufs_.ln1_q.regions; };
  f1.act_ready = [ln1_done, hop](int, int) { return ln1_done + hop; };
  f1.out_region = [&](int g) { return bufs_.f1_acc.regions[std::size_t(g)]; };
  f1.out_payload = [&](int g) {
    int n0 = g * L, n1 = std::min(h.d_ff, n0 + L);
    return big_gemm_payload(&LP.w1, &LP.b1, bufs_.ln1_q, bufs_.f1_acc, n0, n1);
  };
  f1.plane_avail = rp.plane_exec_end;
  auto rf1 = gemm_phase(f1);

  // ---- phase 10: GELU chain, trailing F1 group by group ----
  std::vector<long> f1_ready;
  for (auto& gg : rf1.groups) f1_ready.push_back(gg.write_e);
  if (!fused_)
    for (auto& r : f1_ready) r = rf1.done;
  std::vector<int> all16;
  for (int a = 0; a < 16; ++a) all16.push_back(a);
  auto segs = schedule_gelu_fused(f1_ready, S, hop, alus_free(all16));
  std::vector<long> gelu_emit(size_t{0} + std::size_t(ngf));
  std::vector<int> gelu_ids(size_t{0} + std::size_t(ngf));
  float s_f1 = sc.s_ln1 * LP.w1.scale;
  for (int g = 0; g < ngf; ++g) {
    long ss = segs[std::size_t(g)].first;
    int rid = read_burst({bufs_.f1_acc.regions[std::size_t(g)]}, ss - hop, S,
                         nname("gelu"), li, Block::FeedForward);
    int cid = chain_instr(all16, ss, S, nname("gelu"), li, Block::FeedForward,
                          "gelu_chain", {{rid, ss}});
    TensorBuf at = bufs_.f1_acc, outt = bufs_.g_q;
    int l0 = g * L, l1 = std::min(h.d_ff, l0 + L);
    float s_gelu = sc.s_gelu;
    int greg = g;
    auto payload = [=](Store& st) {
      for (int l = l0; l < l1; ++l)
        for (int t = 0; t < S; ++t)
          wr_i8(st, outt, l, t,
                quantize_scalar(gelu_scalar(dequantize_acc_scalar(
                                    rd_i32(st, at, l, t, "gelu"), s_f1)),
                                s_gelu));
      mark_init_region(st, outt.regions[std::size_t(greg)]);
    };
    gelu_ids[std::size_t(g)] =
        write_burst({bufs_.g_q.regions[std::size_t(g)]}, ss + hop, S, nname("gelu"),
                    li, Block::FeedForward, payload, {{cid, ss + hop}});
    gelu_emit[std::size_t(g)] = ss + hop;
  }
  long gelu_all_done = segs.empty() ? rf1.done : segs.back().second + 2 * hop;

  // ---- phase 11: FF GEMM 2, chasing the GELU stream when fused ----
  GemmPhaseSpec f2;
  f2.layer = li;
  f2.block = Block::FeedForward;
  f2.S = S;
  f2.kblocks = fblocks;
  f2.ngroups = ng;
  f2.node = [=](int) { return nname("f2_gemm"); };
  f2.weight_region = [&](int g) { return W[5].regions[std::size_t(g)]; };
  f2.weight_ready = [b, hop](int) { return b + hop; };
  if (fused_) {
    f2.chase_start = &gelu_emit;
    f2.chase_instr = &gelu_ids;
  } else {
    f2.act_regions = [&](int, int ki) {
      return std::vector<int>{bufs_.g_q.regions[std::size_t(ki)]};
    };
    f2.act_ready = [gelu_all_done, hop](int, int) { return gelu_all_done + hop; };
  }
  f2.out_region = [&](int g) { return bufs_.f2_acc.regions[std::size_t(g)]; };
  f2.out_payload = [&](int g) {
    int n0 = g * L, n1 = std::min(d, n0 + L);
    return big_gemm_payload(&LP.w2, &LP.b2, bufs_.g_q, bufs_.f2_acc, n0, n1);
  };
  f2.plane_avail = rf1.plane_exec_end;
  auto rf2 = gemm_phase(f2);

  // ---- phase 12: LN2; outputs become the next layer's input ----
  long ln2_done = ln_block("ln2", rf2, bufs_.f2_acc, sc.s_gelu * LP.w2.scale,
                           bufs_.ln1_fp, bufs_.z2, bufs_.gd2, xf_next, xq_next,
                           &LP.gamma2, &LP.beta2, sc.s_ln2, li, Block::FeedForward);

  // ---- boundary snapshot at the layer's completion barrier ----
  Snapshot snap;
  snap.layer = li;
  snap.at_cycle = ln2_done;
  auto keep = [&](const char* nm, const TensorBuf& t, float scale = 1.0f) {
    TensorBuf tb = t;
    tb.scale = scale;
    snap.tensors.push_back({"L" + std::to_string(li) + "." + nm, tb});
  };
  keep("q_acc", bufs_.q_acc);
  keep("k_acc", bufs_.k_acc);
  keep("v_acc", bufs_.v_acc);
  keep("q_q", bufs_.q_q, sc.s_q);
  keep("k_q", bufs_.k_q, sc.s_k);
  keep("v_q", bufs_.v_q, sc.s_v);
  for (int g = 0; g < H; ++g) {
    std::string hs = ".h" + std::to_string(g);
    auto keeph = [&](const char* nm, const TensorBuf& t) {
      snap.tensors.push_back({"L" + std::to_string(li) + "." + nm + hs, t});
    };
    keeph("scores_acc", bufs_.scores_acc[std::size_t(g)]);
    keeph("scores_fp", bufs_.scores_fp[std::size_t(g)]);
    keeph("exp_fp", bufs_.exp_fp[std::size_t(g)]);
    keeph("probs_fp", bufs_.probs_fp[std::size_t(g)]);
    keeph("probs_q", bufs_.probs_q[std::size_t(g)]);
    keeph("av_acc", bufs_.av_acc[std::size_t(g)]);
  }
  keep("sa_q", bufs_.sa_q, sc.s_av);
  keep("p_acc", bufs_.p_acc);
  keep("z1", bufs_.z1);
  keep("gd1", bufs_.gd1);
  keep("ln1_fp", bufs_.ln1_fp);
  keep("ln1_q", bufs_.ln1_q, sc.s_ln1);
  keep("f1_acc", bufs_.f1_acc);
  keep("g_q", bufs_.g_q, sc.s_gelu);
  keep("f2_acc", bufs_.f2_acc);
  keep("z2", bufs_.z2);
  keep("gd2", bufs_.gd2);
  keep("ln2_fp", xf_next);
  keep("ln2_q", xq_next, sc.s_ln2);
  sched_.snapshots.push_back(std::move(snap));
  barrier_ = ln2_done;
}

// ---------------------------------------------------------------------------

inline Schedule EncoderScheduleBuilder::build(const QuantTensor& x_q,
                                              const FpTensor& x_fp) {
  namespace col = slice_color;
  const auto& h = pp_->hyper;
  if (x_q.shape.rows() != h.d_model || x_q.shape.cols() != h.seq_len ||
      x_fp.shape.rows() != h.d_model || x_fp.shape.cols() != h.seq_len)
    throw std::invalid_argument("scheduler: input shape mismatch");
  const int L = cfg_.lane_width;
  const int S = h.seq_len;
  const int d = h.d_model;
  const int dk = h.head_dim;
  sched_.cfg = cfg_;
  sched_.layers = h.layers;

  // constants first: weights per L-wide output group, then the small vectors
  int ng = int(ceil_div(d, L));
  for (int li = 0; li < h.layers; ++li) {
    const auto& LP = pp_->layers[std::size_t(li)];
    std::string pre = "L" + std::to_string(li) + ".";
    std::array<TensorBuf, 6> wb;
    wb[0] = make_weight(pre + "wq", LP.wq, li);
    wb[1] = make_weight(pre + "wk", LP.wk, li + ng);
    wb[2] = make_weight(pre + "wv", LP.wv, li + 2 * ng);
    wb[3] = make_weight(pre + "w0", LP.w0, li);
    wb[4] = make_weight(pre + "w1", LP.w1, li);
    wb[5] = make_weight(pre + "w2", LP.w2, li);
    wbufs_.push_back(wb);
    const AccTensor* bs[6] = {&LP.bq, &LP.bk, &LP.bv, &LP.b0, &LP.b1, &LP.b2};
    const char* bn[6] = {"bq", "bk", "bv", "b0", "b1", "b2"};
    for (int i = 0; i < 6; ++i) {
      int rid = alloc_.place_mod({pre + bn[i], long(bs[i]->data.size()) * 4,
                                  RegionKind::Constant},
                                 (li + i) % 4, 4);
      sched_.region_meta.push_back({1, long(bs[i]->data.size())});
      Store::Buf bbuf;
      bbuf.dtype = 1;
      bbuf.i32 = bs[i]->data;
      sched_.init.push_back({rid, std::move(bbuf)});
    }
    const FpTensor* gs[4] = {&LP.gamma1, &LP.beta1, &LP.gamma2, &LP.beta2};
    const char* gn[4] = {"gamma1", "beta1", "gamma2", "beta2"};
    for (int i = 0; i < 4; ++i) {
      int rid = alloc_.place_mod({pre + gn[i], long(gs[i]->data.size()) * 4,
                                  RegionKind::Constant},
                                 (li + i) % 4, 4);
      sched_.region_meta.push_back({2, long(gs[i]->data.size())});
      Store::Buf gbuf;
      gbuf.dtype = 2;
      gbuf.f32 = gs[i]->data;
      sched_.init.push_back({rid, std::move(gbuf)});
    }
  }
  scratch_base_ = alloc_.max_used_slice() + 1;

  // scratch buffers, shared across layers (layers never overlap in time)
  using P = TensorBuf::Part;
  auto stripe4 = [](int base) {
    return std::function<int(int)>([base](int i) { return base + i; });
  };
  auto fixed = [](int c) { return std::function<int(int)>([c](int) { return c; }); };
  auto mod4 = [](int base) {
    return std::function<int(int)>([base](int i) { return base + i % 4; });
  };
  auto mod3 = [](int base) {
    return std::function<int(int)>([base](int i) { return base + i % 3; });
  };
  for (int i = 0; i < 2; ++i) {
    bufs_.x_q[i] = make_scratch("x_q." + std::to_string(i), 0, d, S,
                                P::ColStripes, 4, stripe4(col::kXQ));
    bufs_.x_fp[i] = make_scratch("x_fp." + std::to_string(i), 2, d, S,
                                 P::ColStripes, 4, stripe4(col::kXF));
  }
  bufs_.q_acc = make_scratch("q_acc", 1, d, S, P::LaneBlocks, L, mod3(col::kQAcc));
  bufs_.k_acc = make_scratch("k_acc", 1, d, S, P::LaneBlocks, L, mod3(col::kKAcc));
  bufs_.v_acc = make_scratch("v_acc", 1, d, S, P::LaneBlocks, L, mod3(col::kVAcc));
  bufs_.q_q = make_scratch("q_q", 0, d, S, P::LaneBlocks, dk, mod4(col::kQQ));
  bufs_.k_q = make_scratch("k_q", 0, d, S, P::LaneBlocks, dk, mod4(col::kKQ));
  bufs_.v_q = make_scratch("v_q", 0, d, S, P::LaneBlocks, dk, mod4(col::kVQ));
  for (int g = 0; g < h.heads; ++g) {
    std::string hs = ".h" + std::to_string(g);
    int c = g % 4;
    bufs_.scores_acc.push_back(make_scratch("scores_acc" + hs, 1, S, S, P::Whole, 0,
                                            fixed(col::kScoresAcc + c)));
    bufs_.scores_fp.push_back(make_scratch("scores_fp" + hs, 2, S, S, P::Whole, 0,
                                           fixed(col::kXF + c)));
    bufs_.exp_fp.push_back(make_scratch("exp_fp" + hs, 2, S, S, P::Whole, 0,
                                        fixed(col::kExpFp + c)));
    bufs_.probs_fp.push_back(make_scratch("probs_fp" + hs, 2, S, S, P::Whole, 0,
                                          fixed(col::kProbsFp + c)));
    bufs_.probs_q.push_back(make_scratch("probs_q" + hs, 0, S, S, P::Whole, 0,
                                         fixed(col::kProbsQ + c)));
    bufs_.av_acc.push_back(make_scratch("av_acc" + hs, 1, dk, S, P::Whole, 0,
                                        fixed(col::kAvAcc + c)));
  }
  bufs_.sa_q = make_scratch("sa_q", 0, d, S, P::LaneBlocks, dk, fixed(col::kSa));
  bufs_.p_acc = make_scratch("p_acc", 1, d, S, P::LaneBlocks, L, mod3(col::kPAcc));
  bufs_.z1 = make_scratch("z1", 2, d, S, P::ColStripes, 4, stripe4(col::kZ1));
  bufs_.gd1 = make_scratch("gd1", 2, d, S, P::ColStripes, 4, stripe4(col::kGd1));
  bufs_.ln1_fp = make_scratch("ln1_fp", 2, d, S, P::ColStripes, 4, stripe4(col::kLn1Fp));
  bufs_.ln1_q = make_scratch("ln1_q", 0, d, S, P::ColStripes, 4, stripe4(col::kLn1Q));
  bufs_.f1_acc = make_scratch("f1_acc", 1, h.d_ff, S, P::LaneBlocks, L, mod4(col::kF1Acc));
  bufs_.g_q = make_scratch("g_q", 0, h.d_ff, S, P::LaneBlocks, L, fixed(col::kGQ));
  bufs_.f2_acc = make_scratch("f2_acc", 1, d, S, P::LaneBlocks, L, mod3(col::kF2Acc));
  bufs_.z2 = make_scratch("z2", 2, d, S, P::ColStripes, 4, stripe4(col::kZ2));
  bufs_.gd2 = make_scratch("gd2", 2, d, S, P::ColStripes, 4, stripe4(col::kGd2));

  // initial contents: weights, then the layer-0 input
  for (int li = 0; li < h.layers; ++li) {
    const auto& LP = pp_->layers[std::size_t(li)];
    const QuantTensor* ws[6] = {&LP.wq, &LP.wk, &LP.wv, &LP.w0, &LP.w1, &LP.w2};
    for (int i = 0; i < 6; ++i) {
      const QuantTensor* w = ws[i];
      preload(wbufs_[std::size_t(li)][std::size_t(i)],
              [w](int l, int c) { return w->at(l, c); });
    }
  }
  preload(bufs_.x_q[0], [&](int l, int c) { return x_q.at(l, c); });
  preload(bufs_.x_fp[0], [&](int l, int c) { return x_fp.at(l, c); });

  // node vocabulary sanity against the compute graph
  (void)build_encoder_graph(*pp_);

  barrier_ = 0;
  for (int li = 0; li < h.layers; ++li) build_layer(li, barrier_);
  sched_.layer_span = h.layers > 0 ? barrier_ / h.layers : 0;

  // instruction memory: fixed 16-byte encoding per instruction
  {
    long bytes = long(sched_.instrs.size()) * 16;
    alloc_.place({"instruction_buffer", bytes, RegionKind::Instruction});
    sched_.region_meta.push_back({0, bytes});
  }
  sched_.mem = alloc_.take();
  return std::move(sched_);
}

// Instructions of one block within one layer.
inline std::vector<const Instruction*> block_instructions(const Schedule& s,
                                                          int layer, Block b) {
  std::vector<const Instruction*> out;
  for (auto& i : s.instrs)
    if (i.layer == layer && i.block == b) out.push_back(&i);
  return out;
}

}  // namespace tsim

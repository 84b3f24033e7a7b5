#pragma once

// Analytic cycle predictor. Walks the same phase algebra the scheduler uses
// (wave-aligned multi-pass GEMMs with double-buffered installs, trailing
// requant/softmax/GELU chains, live-vs-buffered LN pass 1) but tracks only
// timestamps — no instructions, no memory, no payloads. The prediction is
// therefore exact for schedules this repository emits; the contract only
// requires it to stay within 1% of simulation.

#include <algorithm>
#include <stdexcept>
#include <vector>

#include "tsim/arch.hpp"
#include "tsim/graph.hpp"

namespace tsim {

// Cycles of a standalone three-pass layer normalization over a (k, j) tensor.
inline long predict_layernorm_cycles(int k, int j, const ArchConfig& cfg) {
  long n4 = long(j) * ((k + cfg.lane_width - 1) / cfg.lane_width) / 4;
  return 3 * n4 + cfg.ln_constant_cycles();
}

namespace detail {

struct PredictState {
  ArchConfig cfg;
  bool fused = true;
  std::vector<long> alu_end;  // per-ALU last busy cycle

  long alus_free(int lo, int n) const {
    long t = 0;
    for (int a = lo; a < lo + n; ++a) t = std::max(t, alu_end[std::size_t(a)]);
    return t;
  }
  void claim(int lo, int n, long end) {
    for (int a = lo; a < lo + n; ++a)
      alu_end[std::size_t(a)] = std::max(alu_end[std::size_t(a)], end);
  }
};

struct Phase {
  int S = 0;
  std::vector<int> kblocks;
  int ngroups = 0;
  std::vector<long> weight_ready;            // per group
  std::vector<std::vector<long>> act_ready;  // [group][ki]; empty when chasing
  const std::vector<long>* chase = nullptr;  // per ki: producer emission cycle
  std::vector<long> plane_avail;
};

struct PhaseOut {
  std::vector<long> exec_s, exec_e, write_s, write_e;  // per group
  std::vector<long> plane_exec_end;
  long done = 0;
};

inline long install_dur(const ArchConfig& cfg, int rows) {
  long d = long(rows) * cfg.mxm_install_latency_cycles / cfg.lane_width;
  return std::max(1L, d);
}

inline PhaseOut run_phase(const PredictState& st, const Phase& sp) {
  const ArchConfig& cfg = st.cfg;
  const int P = cfg.mxm_plane_count;
  const int D = cfg.mxm_pipeline_depth_cycles;
  const int hop = cfg.stream_hop_latency_cycles;
  PhaseOut out;
  out.exec_s.assign(std::size_t(sp.ngroups), 0);
  out.exec_e = out.write_s = out.write_e = out.exec_s;
  out.plane_exec_end = sp.plane_avail;
  std::vector<long> load_free = sp.plane_avail;
  std::vector<long> exec_free = sp.plane_avail;
  std::vector<long> buf_gate = sp.plane_avail;
  int nk = int(sp.kblocks.size());
  for (int w0 = 0; w0 < sp.ngroups; w0 += P) {
    int wn = std::min(P, sp.ngroups - w0);
    std::vector<long> es_of(std::size_t(wn), 0);
    for (int ki = 0; ki < nk; ++ki) {
      long idur = install_dur(cfg, sp.kblocks[std::size_t(ki)]);
      long es = 0;
      std::vector<long> inst_e(size_t{0} + std::size_t(wn));
      for (int j = 0; j < wn; ++j) {
        long inst_s = std::max({load_free[std::size_t(j)], buf_gate[std::size_t(j)],
                                sp.weight_ready[std::size_t(w0 + j)]});
        inst_e[std::size_t(j)] = inst_s + idur;
        load_free[std::size_t(j)] = inst_e[std::size_t(j)];
        es = std::max({es, inst_e[std::size_t(j)], exec_free[std::size_t(j)]});
      }
      if (sp.chase) {
        es = std::max(es, (*sp.chase)[std::size_t(ki)] + hop);
      } else {
        for (int j = 0; j < wn; ++j)
          es = std::max(es, sp.act_ready[std::size_t(w0 + j)][std::size_t(ki)]);
      }
      for (int j = 0; j < wn; ++j) {
        es_of[std::size_t(j)] = es;
        exec_free[std::size_t(j)] = es + sp.S;
        buf_gate[std::size_t(j)] = es;
      }
    }
    for (int j = 0; j < wn; ++j) {
      int g = w0 + j;
      out.exec_s[std::size_t(g)] = es_of[std::size_t(j)];
      out.exec_e[std::size_t(g)] = es_of[std::size_t(j)] + sp.S;
      out.write_s[std::size_t(g)] = es_of[std::size_t(j)] + D + hop;
      out.write_e[std::size_t(g)] = out.write_s[std::size_t(g)] + sp.S;
      out.plane_exec_end[std::size_t(j)] = out.exec_e[std::size_t(g)];
      out.done = std::max(out.done, out.write_e[std::size_t(g)]);
    }
  }
  return out;
}

// Three-pass LN window; returns completion of both output writes.
inline long run_ln(PredictState& st, const PhaseOut& src, int ng, int S) {
  const ArchConfig& cfg = st.cfg;
  const int hop = cfg.stream_hop_latency_cycles;
  long n4 = long(S) * ng / 4;
  long first = LONG_MAX, last = 0;
  for (std::size_t g = 0; g < src.write_s.size(); ++g) {
    first = std::min(first, src.write_s[g]);
    last = std::max(last, src.write_e[g]);
  }
  bool live = st.fused && st.alus_free(0, 16) <= first;
  long w1s, w1e;
  if (live) {
    w1s = first;
    w1e = std::max(first + n4, last);
  } else {
    w1s = std::max(src.done + hop, st.alus_free(0, 16));
    w1e = w1s + n4;
  }
  st.claim(0, 16, w1e);
  long p2s = w1e + cfg.ln_norm1_cycles();
  long p2e = p2s + n4;
  st.claim(0, 16, p2e);
  long p3s = p2e + cfg.ln_norm2_cycles();
  st.claim(0, 16, p3s + n4);
  return p3s + n4 + hop;
}

inline long run_layer(PredictState& st, const ModelHyper& h, long b) {
  const ArchConfig& cfg = st.cfg;
  const int L = cfg.lane_width;
  const int S = h.seq_len;
  const int d = h.d_model;
  const int dk = h.head_dim;
  const int H = h.heads;
  const int hop = cfg.stream_hop_latency_cycles;
  const int sxl = cfg.sxm_reorder_latency_cycles;
  auto blocks = [L](int extent) {
    std::vector<int> v;
    for (int off = 0; off < extent; off += L) v.push_back(std::min(L, extent - off));
    return v;
  };
  std::vector<int> dblocks = blocks(d), fblocks = blocks(h.d_ff);
  int ng = int(dblocks.size()), ngf = int(fblocks.size());

  // phase 1: merged QKV
  Phase qkv;
  qkv.S = S;
  qkv.kblocks = dblocks;
  qkv.ngroups = 3 * ng;
  qkv.weight_ready.assign(std::size_t(3 * ng), b + hop);
  qkv.act_ready.assign(std::size_t(3 * ng),
                       std::vector<long>(std::size_t(ng), b + hop));
  qkv.plane_avail.assign(std::size_t(cfg.mxm_plane_count), b);
  auto rqkv = run_phase(st, qkv);

  // phase 2: requant chains
  std::vector<std::vector<long>> rq_group_end(3);
  for (int j = 0; j < 3; ++j) {
    long prev = 0;
    for (int g = 0; g < ng; ++g) {
      long lower = st.fused ? rqkv.write_e[std::size_t(j * ng + g)] + hop
                            : rqkv.done + hop;
      long s = std::max({prev, lower, st.alus_free(4 * j, 4)});
      st.claim(4 * j, 4, s + S);
      rq_group_end[std::size_t(j)].push_back(s + hop + S);
      prev = s + S;
    }
  }
  auto rq_head_end = [&](int j, int head) {
    return rq_group_end[std::size_t(j)][std::size_t(head * dk / L)];
  };

  // phase 3: scores per head
  Phase qk;
  qk.S = S;
  qk.kblocks = {dk};
  qk.ngroups = H;
  for (int g = 0; g < H; ++g) {
    qk.weight_ready.push_back(rq_head_end(1, g) + hop + sxl);
    qk.act_ready.push_back({rq_head_end(0, g) + hop + sxl});
  }
  qk.plane_avail = rqkv.plane_exec_end;
  auto rqk = run_phase(st, qk);

  // phase 4: softmax
  int nchains = std::min(4, H);
  long sm1_end = 0;
  std::vector<long> chain_free(4, 0);
  std::vector<long> p1_wend(std::size_t(H), 0);
  for (int g = 0; g < H; ++g) {
    int chain = (g % cfg.mxm_plane_count) % 4;
    long lower = st.fused ? rqk.write_s[std::size_t(g)] : rqk.done + hop;
    long s = std::max({lower, chain_free[std::size_t(chain)], st.alus_free(3 * chain, 3)});
    st.claim(3 * chain, 3, s + S);
    chain_free[std::size_t(chain)] = s + S;
    p1_wend[std::size_t(g)] = s + hop + S;
    sm1_end = std::max(sm1_end, s + S);
  }
  long t2 = std::max(sm1_end, st.alus_free(0, 3 * nchains)) + cfg.sm_norm1_cycles();
  st.claim(0, 3 * nchains, t2);
  chain_free.assign(4, t2);
  std::vector<long> exp_wend(std::size_t(H), 0);
  for (int g = 0; g < H; ++g) {
    int chain = g % nchains;
    long s = std::max({chain_free[std::size_t(chain)], t2,
                       p1_wend[std::size_t(g)] + hop, st.alus_free(3 * chain, 3)});
    st.claim(3 * chain, 3, s + S);
    chain_free[std::size_t(chain)] = s + S;
    exp_wend[std::size_t(g)] = s + hop + S;
  }
  long sm2_end = *std::max_element(chain_free.begin(), chain_free.end());
  long t3 = std::max(sm2_end, st.alus_free(0, 3 * nchains)) + cfg.sm_norm2_cycles();
  st.claim(0, 3 * nchains, t3);
  chain_free.assign(4, t3);
  std::vector<long> probs_end(std::size_t(H), 0);
  for (int g = 0; g < H; ++g) {
    int chain = g % nchains;
    long s = std::max({chain_free[std::size_t(chain)], t3,
                       exp_wend[std::size_t(g)] + hop, st.alus_free(3 * chain, 3)});
    st.claim(3 * chain, 3, s + S);
    chain_free[std::size_t(chain)] = s + S;
    probs_end[std::size_t(g)] = s + hop + S;
  }
  long sm3_done = *std::max_element(probs_end.begin(), probs_end.end());

  // phase 5: attention x V
  Phase av;
  av.S = S;
  av.kblocks = blocks(S);
  av.ngroups = H;
  for (int g = 0; g < H; ++g) {
    av.weight_ready.push_back(rq_head_end(2, g) + hop + sxl);
    av.act_ready.push_back(std::vector<long>(
        av.kblocks.size(),
        (st.fused ? probs_end[std::size_t(g)] : sm3_done) + hop));
  }
  av.plane_avail = rqk.plane_exec_end;
  auto rav = run_phase(st, av);

  // phase 6: attention-output requant
  std::vector<long> sa_head_end(std::size_t(H), 0);
  {
    long prev = 0;
    for (int g = 0; g < H; ++g) {
      long lower = st.fused ? rav.write_e[std::size_t(g)] + hop : rav.done + hop;
      long s = std::max({prev, lower, st.alus_free(12, 4)});
      st.claim(12, 4, s + S);
      sa_head_end[std::size_t(g)] = s + hop + S;
      prev = s + S;
    }
  }

  // phase 7: output projection
  Phase pg;
  pg.S = S;
  pg.kblocks = dblocks;
  pg.ngroups = ng;
  pg.weight_ready.assign(std::size_t(ng), b + hop);
  for (int g = 0; g < ng; ++g) {
    std::vector<long> per_ki;
    for (int ki = 0; ki < ng; ++ki) {
      long r = 0;
      int l0 = ki * L, l1 = std::min(d, l0 + L);
      for (int head = l0 / dk; head * dk < l1; ++head)
        r = std::max(r, sa_head_end[std::size_t(head)]);
      per_ki.push_back(r + hop);
    }
    pg.act_ready.push_back(per_ki);
  }
  pg.plane_avail = rav.plane_exec_end;
  auto rp = run_phase(st, pg);

  // phase 8: LN1
  long ln1_done = run_ln(st, rp, ng, S);

  // phase 9: FF1
  Phase f1;
  f1.S = S;
  f1.kblocks = dblocks;
  f1.ngroups = ngf;
  f1.weight_ready.assign(std::size_t(ngf), b + hop);
  f1.act_ready.assign(std::size_t(ngf),
                      std::vector<long>(std::size_t(ng), ln1_done + hop));
  f1.plane_avail = rp.plane_exec_end;
  auto rf1 = run_phase(st, f1);

  // phase 10: GELU segments
  long free_at = st.alus_free(0, 16);
  std::vector<long> gelu_emit;
  for (int g = 0; g < ngf; ++g) {
    long r = st.fused ? rf1.write_e[std::size_t(g)] : rf1.done;
    long s = std::max(free_at, r + hop);
    st.claim(0, 16, s + S);
    free_at = s + S;
    gelu_emit.push_back(s + hop);
  }
  long gelu_all_done = ngf == 0 ? rf1.done : free_at + 2 * hop;

  // phase 11: FF2
  Phase f2;
  f2.S = S;
  f2.kblocks = fblocks;
  f2.ngroups = ng;
  f2.weight_ready.assign(std::size_t(ng), b + hop);
  if (st.fused) {
    f2.chase = &gelu_emit;
  } else {
    f2.act_ready.assign(std::size_t(ng),
                        std::vector<long>(std::size_t(ngf), gelu_all_done + hop));
  }
  f2.plane_avail = rf1.plane_exec_end;
  auto rf2 = run_phase(st, f2);

  // phase 12: LN2
  return run_ln(st, rf2, ng, S);
}

}  // namespace detail

// Predicted end-to-end cycles for an encoder stack on this machine.
inline long predict_cycles(const ModelHyper& h, const ArchConfig& cfg,
                           bool fused = true) {
  if (h.layers < 1) return 0;
  detail::PredictState st;
  st.cfg = cfg;
  st.fused = fused;
  st.alu_end.assign(std::size_t(cfg.vxm_alu_count), 0);
  long b = 0;
  for (int li = 0; li < h.layers; ++li) b = detail::run_layer(st, h, b);
  return b;
}

// Graph-driven entry point; shapes are recovered from the graph's nodes.
inline long predict_cycles(const ComputeGraph& g, const ArchConfig& cfg,
                           bool fused = true) {
  if (g.nodes.empty()) return 0;
  ModelHyper h;
  h.layers = 0;
  for (auto& n : g.nodes) h.layers = std::max(h.layers, n.layer + 1);
  const auto& qg = g.by_name("L0.q_gemm");
  h.d_model = qg.out_shape.rows();
  h.seq_len = qg.out_shape.cols();
  h.head_dim = g.by_name("L0.av_gemm").out_shape.rows();
  h.heads = h.d_model / h.head_dim;
  h.d_ff = g.by_name("L0.f1_gemm").out_shape.rows();
  h.validate();
  return predict_cycles(h, cfg, fused);
}

inline double cycles_to_microseconds(long cycles, const ArchConfig& cfg) {
  return double(cycles) * 1e6 / double(cfg.clock_hz);
}

}  // namespace tsim

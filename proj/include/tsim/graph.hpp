#pragma once

// Typed operator DAG for one encoder layer. The scheduler lowers layers
// phase by phase and uses these nodes as its naming/annotation vocabulary;
// graph validation (acyclicity, dtype consistency) is a separate gate.

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsim/params.hpp"

namespace tsim {

enum class NodeKind {
  Gemm,
  BatchedGemm,
  GeluChain,
  LnPass1,
  LnPass2,
  LnPass3,
  SoftmaxPass,
  Reorder,
  ResidualAdd,  // reserved: the residual add is fused into LnPass1
  Quantize,
  Dequantize,
};

enum class DType { Int8, Int32, Fp32 };

inline const char* node_kind_name(NodeKind k) {
  switch (k) {
    case NodeKind::Gemm: return "gemm";
    case NodeKind::BatchedGemm: return "batched_gemm";
    case NodeKind::GeluChain: return "gelu_chain";
    case NodeKind::LnPass1: return "ln_pass1";
    case NodeKind::LnPass2: return "ln_pass2";
    case NodeKind::LnPass3: return "ln_pass3";
    case NodeKind::SoftmaxPass: return "softmax_pass";
    case NodeKind::Reorder: return "reorder";
    case NodeKind::ResidualAdd: return "residual_add";
    case NodeKind::Quantize: return "quantize";
    case NodeKind::Dequantize: return "dequantize";
  }
  return "?";
}

struct GraphNode {
  int id = -1;
  std::string name;  // e.g. "L0.q_gemm"
  NodeKind kind = NodeKind::Gemm;
  int layer = 0;
  Shape out_shape{1};
  DType in_dtype = DType::Int8;
  DType out_dtype = DType::Int8;
  std::vector<int> inputs;  // node ids within the graph
};

struct ComputeGraph {
  std::vector<GraphNode> nodes;
  const GraphNode& by_name(const std::string& n) const {
    for (auto& nd : nodes)
      if (nd.name == n) return nd;
    throw std::out_of_range("graph: no node named " + n);
  }
};

// Per-kind dtype contract (input dtype, output dtype).
inline void check_node_dtypes(const GraphNode& n) {
  auto want = [&](DType in, DType out) {
    if (n.in_dtype != in || n.out_dtype != out)
      throw std::runtime_error("graph: dtype contract violated at " + n.name);
  };
  switch (n.kind) {
    case NodeKind::Gemm:
    case NodeKind::BatchedGemm: want(DType::Int8, DType::Int32); break;
    case NodeKind::GeluChain: want(DType::Int32, DType::Int8); break;
    case NodeKind::LnPass1: want(DType::Int32, DType::Fp32); break;
    case NodeKind::LnPass2: want(DType::Fp32, DType::Fp32); break;
    case NodeKind::LnPass3: want(DType::Fp32, DType::Int8); break;  // + fp32 twin
    case NodeKind::SoftmaxPass:
      if (n.out_dtype == DType::Int32)
        throw std::runtime_error("graph: softmax cannot emit int32 at " + n.name);
      break;
    case NodeKind::Reorder:
      if (n.in_dtype != n.out_dtype)
        throw std::runtime_error("graph: reorder must preserve dtype at " + n.name);
      break;
    case NodeKind::ResidualAdd: want(DType::Fp32, DType::Fp32); break;
    case NodeKind::Quantize:
      if (n.out_dtype != DType::Int8)
        throw std::runtime_error("graph: quantize must emit int8 at " + n.name);
      break;
    case NodeKind::Dequantize: want(DType::Int32, DType::Fp32); break;
  }
}

inline void validate_graph(const ComputeGraph& g) {
  // ids consistent, edges in range, acyclic via forward-only edges + Kahn
  std::vector<int> indeg(g.nodes.size(), 0);
  for (std::size_t i = 0; i < g.nodes.size(); ++i) {
    const auto& n = g.nodes[i];
    if (n.id != int(i)) throw std::runtime_error("graph: id mismatch at " + n.name);
    check_node_dtypes(n);
    for (int in : n.inputs) {
      if (in < 0 || in >= int(g.nodes.size()))
        throw std::runtime_error("graph: dangling edge at " + n.name);
      ++indeg[i];
    }
  }
  std::vector<int> ready;
  for (std::size_t i = 0; i < g.nodes.size(); ++i)
    if (indeg[i] == 0) ready.push_back(int(i));
  std::vector<std::vector<int>> consumers(g.nodes.size());
  for (auto& n : g.nodes)
    for (int in : n.inputs) consumers[std::size_t(in)].push_back(n.id);
  std::size_t seen = 0;
  while (!ready.empty()) {
    int id = ready.back();
    ready.pop_back();
    ++seen;
    for (int c : consumers[std::size_t(id)])
      if (--indeg[std::size_t(c)] == 0) ready.push_back(c);
  }
  if (seen != g.nodes.size()) throw std::runtime_error("graph: cycle detected");
}

// Nodes per layer: 6 GEMMs, 3 requants + 1 attention-output requant,
// 3 reorders, 2 attention GEMMs, 3 softmax passes, 1 GELU chain,
// 2x3 LN passes = 25.
inline constexpr int kNodesPerLayer = 25;

inline ComputeGraph build_encoder_graph(const EncoderParams& p) {
  p.hyper.validate();
  const auto& h = p.hyper;
  ComputeGraph g;
  auto add = [&](int layer, const std::string& base, NodeKind kind, Shape out,
                 DType in, DType outd, std::vector<int> deps) {
    GraphNode n;
    n.id = int(g.nodes.size());
    n.name = "L" + std::to_string(layer) + "." + base;
    n.kind = kind;
    n.layer = layer;
    n.out_shape = std::move(out);
    n.in_dtype = in;
    n.out_dtype = outd;
    n.inputs = std::move(deps);
    g.nodes.push_back(std::move(n));
    return g.nodes.back().id;
  };
  int S = h.seq_len, d = h.d_model, dk = h.head_dim;
  // h == 1 collapses the batched attention GEMMs into plain GEMMs
  NodeKind att = h.heads == 1 ? NodeKind::Gemm : NodeKind::BatchedGemm;
  int prev_out = -1;  // previous layer's ln2 pass3
  for (int li = 0; li < h.layers; ++li) {
    std::vector<int> in = prev_out < 0 ? std::vector<int>{} : std::vector<int>{prev_out};
    int q = add(li, "q_gemm", NodeKind::Gemm, Shape{d, S}, DType::Int8, DType::Int32, in);
    int k = add(li, "k_gemm", NodeKind::Gemm, Shape{d, S}, DType::Int8, DType::Int32, in);
    int v = add(li, "v_gemm", NodeKind::Gemm, Shape{d, S}, DType::Int8, DType::Int32, in);
    int rq = add(li, "q_requant", NodeKind::Quantize, Shape{d, S}, DType::Int32, DType::Int8, {q});
    int rk = add(li, "k_requant", NodeKind::Quantize, Shape{d, S}, DType::Int32, DType::Int8, {k});
    int rv = add(li, "v_requant", NodeKind::Quantize, Shape{d, S}, DType::Int32, DType::Int8, {v});
    int oq = add(li, "q_reorder", NodeKind::Reorder, Shape{dk, S}, DType::Int8, DType::Int8, {rq});
    int ok = add(li, "k_reorder", NodeKind::Reorder, Shape{dk, S}, DType::Int8, DType::Int8, {rk});
    int ov = add(li, "v_reorder", NodeKind::Reorder, Shape{S, dk}, DType::Int8, DType::Int8, {rv});
    int qk = add(li, "qk_gemm", att, Shape{S, S}, DType::Int8, DType::Int32, {oq, ok});
    int s1 = add(li, "softmax_pass1", NodeKind::SoftmaxPass, Shape{S, S}, DType::Int32, DType::Fp32, {qk});
    int s2 = add(li, "softmax_pass2", NodeKind::SoftmaxPass, Shape{S, S}, DType::Fp32, DType::Fp32, {s1});
    int s3 = add(li, "softmax_pass3", NodeKind::SoftmaxPass, Shape{S, S}, DType::Fp32, DType::Int8, {s2});
    int av = add(li, "av_gemm", att, Shape{dk, S}, DType::Int8, DType::Int32, {s3, ov});
    int ra = add(li, "av_requant", NodeKind::Quantize, Shape{d, S}, DType::Int32, DType::Int8, {av});
    int pg = add(li, "p_gemm", NodeKind::Gemm, Shape{d, S}, DType::Int8, DType::Int32, {ra});
    // residual add of the layer input is fused into ln1_pass1
    int l11 = add(li, "ln1_pass1", NodeKind::LnPass1, Shape{d, S}, DType::Int32, DType::Fp32,
                  in.empty() ? std::vector<int>{pg} : std::vector<int>{pg, prev_out});
    int l12 = add(li, "ln1_pass2", NodeKind::LnPass2, Shape{d, S}, DType::Fp32, DType::Fp32, {l11});
    int l13 = add(li, "ln1_pass3", NodeKind::LnPass3, Shape{d, S}, DType::Fp32, DType::Int8, {l12});
    int f1 = add(li, "f1_gemm", NodeKind::Gemm, Shape{h.d_ff, S}, DType::Int8, DType::Int32, {l13});
    int ge = add(li, "gelu", NodeKind::GeluChain, Shape{h.d_ff, S}, DType::Int32, DType::Int8, {f1});
    int f2 = add(li, "f2_gemm", NodeKind::Gemm, Shape{d, S}, DType::Int8, DType::Int32, {ge});
    int l21 = add(li, "ln2_pass1", NodeKind::LnPass1, Shape{d, S}, DType::Int32, DType::Fp32, {f2, l13});
    int l22 = add(li, "ln2_pass2", NodeKind::LnPass2, Shape{d, S}, DType::Fp32, DType::Fp32, {l21});
    prev_out = add(li, "ln2_pass3", NodeKind::LnPass3, Shape{d, S}, DType::Fp32, DType::Int8, {l22});
  }
  validate_graph(g);
  if (int(g.nodes.size()) != kNodesPerLayer * h.layers)
    throw std::logic_error("graph: unexpected node count");
  return g;
}

}  // namespace tsim

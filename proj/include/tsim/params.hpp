#pragma once

// Encoder-layer parameters: quantized weights, biases, layer-norm terms and
// the per-tensor scales at every quantization boundary.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsim/tensor.hpp"

namespace tsim {

struct ModelHyper {
  int heads = 12;
  int head_dim = 64;
  int d_model = 768;
  int d_ff = 3072;
  int seq_len = 128;
  int layers = 12;
  float eps = 1e-5f;

  void validate() const {
    if (seq_len < 1) throw std::invalid_argument("seq_len must be >= 1");
    if (layers < 1) throw std::invalid_argument("layers must be >= 1");
    if (heads < 1 || head_dim < 1 || d_ff < 1)
      throw std::invalid_argument("hyper-parameters must be positive");
    if (d_model != heads * head_dim)
      throw std::invalid_argument("d_model must equal heads * head_dim");
    if (!(eps > 0.0f)) throw std::invalid_argument("eps must be positive");
  }
};

inline ModelHyper tiny_hyper(int layers = 1) {
  ModelHyper h;
  h.heads = 2;
  h.head_dim = 8;
  h.d_model = 16;
  h.d_ff = 64;
  h.seq_len = 8;
  h.layers = layers;
  return h;
}

// Scales at the quantization boundaries of one layer. s_in is the int8
// scale of the layer's input; the next layer's s_in equals this layer's
// s_ln2 (the third LN pass emits the requantized tensor).
struct LayerScales {
  float s_in = 1.0f;
  float s_q = 1.0f, s_k = 1.0f, s_v = 1.0f;  // post Q/K/V requantization
  float s_probs = 1.0f;                      // softmax output
  float s_av = 1.0f;                         // post attention-value requant
  float s_ln1 = 1.0f;                        // LN1 int8 output
  float s_gelu = 1.0f;                       // post-GELU quantization
  float s_ln2 = 1.0f;                        // LN2 int8 output
};

struct LayerParams {
  // weights stored (K, N): element (kin, nout) at kin*N + nout
  QuantTensor wq, wk, wv, w0, w1, w2;
  AccTensor bq, bk, bv, b0, b1, b2;  // int32 bias vectors, shape (N, 1)
  FpTensor gamma1, beta1, gamma2, beta2;
  LayerScales scales;

  // scale of the dequantized softmax input; the 1/sqrt(d_k) factor is
  // folded into this single multiplier
  float scores_scale(int d_k) const {
    return scales.s_q * scales.s_k / std::sqrt(static_cast<float>(d_k));
  }
};

struct EncoderParams {
  ModelHyper hyper;
  std::vector<LayerParams> layers;
};

// ---- deterministic generator state (stdlib-independent) ----

struct SplitMix64 {
  uint64_t state;
  explicit SplitMix64(uint64_t seed) : state(seed) {}
  uint64_t next() {
    uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  // uniform in [0, 1)
  float uniform() { return float(next() >> 40) * (1.0f / 16777216.0f); }
  // uniform in [-r, r]
  float sym(float r) { return (2.0f * uniform() - 1.0f) * r; }
};

// ---- manifest + tensor-file persistence ----

namespace detail {

inline std::string layer_prefix(int i) { return "layer" + std::to_string(i) + "_"; }

}  // namespace detail

inline void save_model(const std::string& dir, const EncoderParams& p) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream mf(dir + "/model.txt");
  if (!mf) throw std::runtime_error("cannot write manifest in " + dir);
  mf.precision(9);  // float round-trips exactly at 9 significant digits
  const auto& h = p.hyper;
  mf << "heads " << h.heads << "\nhead_dim " << h.head_dim << "\nd_model "
     << h.d_model << "\nd_ff " << h.d_ff << "\nseq_len " << h.seq_len
     << "\nlayers " << h.layers << "\neps " << h.eps << "\n";
  for (int i = 0; i < h.layers; ++i) {
    const auto& L = p.layers[std::size_t(i)];
    const auto& s = L.scales;
    mf << "scales " << i << " " << s.s_in << " " << s.s_q << " " << s.s_k
       << " " << s.s_v << " " << s.s_probs << " " << s.s_av << " " << s.s_ln1
       << " " << s.s_gelu << " " << s.s_ln2 << "\n";
    std::string pre = dir + "/" + detail::layer_prefix(i);
    save_tensor(pre + "wq.qt", L.wq);
    save_tensor(pre + "wk.qt", L.wk);
    save_tensor(pre + "wv.qt", L.wv);
    save_tensor(pre + "w0.qt", L.w0);
    save_tensor(pre + "w1.qt", L.w1);
    save_tensor(pre + "w2.qt", L.w2);
    save_tensor(pre + "bq.qt", L.bq);
    save_tensor(pre + "bk.qt", L.bk);
    save_tensor(pre + "bv.qt", L.bv);
    save_tensor(pre + "b0.qt", L.b0);
    save_tensor(pre + "b1.qt", L.b1);
    save_tensor(pre + "b2.qt", L.b2);
    save_tensor(pre + "gamma1.qt", L.gamma1);
    save_tensor(pre + "beta1.qt", L.beta1);
    save_tensor(pre + "gamma2.qt", L.gamma2);
    save_tensor(pre + "beta2.qt", L.beta2);
  }
}

inline EncoderParams load_model(const std::string& dir) {
  std::ifstream mf(dir + "/model.txt");
  if (!mf) throw std::runtime_error("cannot open manifest: " + dir + "/model.txt");
  EncoderParams p;
  std::vector<LayerScales> scales;
  std::string line;
  while (std::getline(mf, line)) {
    std::istringstream ss(line);
    std::string key;
    if (!(ss >> key)) continue;
    if (key == "heads") ss >> p.hyper.heads;
    else if (key == "head_dim") ss >> p.hyper.head_dim;
    else if (key == "d_model") ss >> p.hyper.d_model;
    else if (key == "d_ff") ss >> p.hyper.d_ff;
    else if (key == "seq_len") ss >> p.hyper.seq_len;
    else if (key == "layers") ss >> p.hyper.layers;
    else if (key == "eps") ss >> p.hyper.eps;
    else if (key == "scales") {
      int i;
      LayerScales s;
      ss >> i >> s.s_in >> s.s_q >> s.s_k >> s.s_v >> s.s_probs >> s.s_av >>
          s.s_ln1 >> s.s_gelu >> s.s_ln2;
      scales.resize(std::size_t(i) + 1);
      scales[std::size_t(i)] = s;
    } else {
      throw std::runtime_error("manifest: unknown key '" + key + "'");
    }
  }
  p.hyper.validate();
  p.layers.resize(std::size_t(p.hyper.layers));
  for (int i = 0; i < p.hyper.layers; ++i) {
    auto& L = p.layers[std::size_t(i)];
    std::string pre = dir + "/" + detail::layer_prefix(i);
    L.wq = load_quant_tensor(pre + "wq.qt");
    L.wk = load_quant_tensor(pre + "wk.qt");
    L.wv = load_quant_tensor(pre + "wv.qt");
    L.w0 = load_quant_tensor(pre + "w0.qt");
    L.w1 = load_quant_tensor(pre + "w1.qt");
    L.w2 = load_quant_tensor(pre + "w2.qt");
    L.bq = load_acc_tensor(pre + "bq.qt");
    L.bk = load_acc_tensor(pre + "bk.qt");
    L.bv = load_acc_tensor(pre + "bv.qt");
    L.b0 = load_acc_tensor(pre + "b0.qt");
    L.b1 = load_acc_tensor(pre + "b1.qt");
    L.b2 = load_acc_tensor(pre + "b2.qt");
    L.gamma1 = load_fp_tensor(pre + "gamma1.qt");
    L.beta1 = load_fp_tensor(pre + "beta1.qt");
    L.gamma2 = load_fp_tensor(pre + "gamma2.qt");
    L.beta2 = load_fp_tensor(pre + "beta2.qt");
    if (std::size_t(i) < scales.size()) L.scales = scales[std::size_t(i)];
  }
  return p;
}

// Closed-form parameter byte count for one layer (constant memory).
inline long layer_constant_bytes(const ModelHyper& h) {
  long d = h.d_model, f = h.d_ff;
  long weights = 4 * d * d + 2 * d * f;          // int8
  long biases = (4 * d + f + d) * 4;             // int32
  long ln = 4 * d * 4;                           // fp32 gamma/beta x2
  return weights + biases + ln;
}

}  // namespace tsim

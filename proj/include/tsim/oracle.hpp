#pragma once

// Bit-exact comparison of simulated boundary snapshots against the reference
// encoder. Every tensor the scheduler keeps at a layer barrier is checked
// element-for-element against the mixed-precision functional model.

#include "tsim/reference.hpp"
#include "tsim/simulator.hpp"

namespace tsim {

struct OracleCheck {
  long tensors_checked = 0;
  long elements_checked = 0;
  std::vector<std::string> mismatches;  // empty on a clean pass
  bool ok() const { return mismatches.empty(); }
};

namespace detail {

inline double captured_at(const CapturedTensor& t, int l, int c) {
  std::size_t at = std::size_t(l) * std::size_t(t.cols) + std::size_t(c);
  if (t.dtype == 0) return double(t.i8[at]);
  if (t.dtype == 1) return double(t.i32[at]);
  return double(t.f32[at]);
}

template <class Ref>
void check_tensor(OracleCheck& oc, const std::map<std::string, CapturedTensor>& out,
                  const std::string& key, const Ref& ref) {
  auto it = out.find(key);
  if (it == out.end()) {
    oc.mismatches.push_back(key + ": missing from simulation outputs");
    return;
  }
  const CapturedTensor& t = it->second;
  int rows = ref.shape.rows(), cols = ref.shape.cols();
  if (t.rows != rows || t.cols != cols) {
    oc.mismatches.push_back(key + ": shape " + std::to_string(t.rows) + "x" +
                            std::to_string(t.cols) + ", expected " +
                            std::to_string(rows) + "x" + std::to_string(cols));
    return;
  }
  ++oc.tensors_checked;
  for (int l = 0; l < rows; ++l)
    for (int c = 0; c < cols; ++c) {
      ++oc.elements_checked;
      double got = captured_at(t, l, c);
      double want = double(ref.at(l, c));
      if (got != want) {
        std::ostringstream os;
        os << key << " (" << l << ", " << c << "): simulated " << got
           << ", reference " << want;
        oc.mismatches.push_back(os.str());
        if (oc.mismatches.size() > 32) return;  // enough to diagnose
      }
    }
}

}  // namespace detail

// Walk the reference encoder layer by layer and compare every boundary
// tensor captured by the simulator, bit for bit.
inline OracleCheck verify_outputs(const std::map<std::string, CapturedTensor>& out,
                                  const EncoderParams& p, const QuantTensor& x_q,
                                  const FpTensor& x_fp, int lane_width) {
  OracleCheck oc;
  const ModelHyper& h = p.hyper;
  QuantTensor cur_q = x_q;
  FpTensor cur_fp = x_fp;
  for (int li = 0; li < h.layers; ++li) {
    auto b = encoder_layer_boundaries(cur_q, cur_fp, p.layers[std::size_t(li)],
                                      h, lane_width);
    std::string P = "L" + std::to_string(li) + ".";
    detail::check_tensor(oc, out, P + "q_acc", b.q_acc);
    detail::check_tensor(oc, out, P + "k_acc", b.k_acc);
    detail::check_tensor(oc, out, P + "v_acc", b.v_acc);
    detail::check_tensor(oc, out, P + "q_q", b.q_q);
    detail::check_tensor(oc, out, P + "k_q", b.k_q);
    detail::check_tensor(oc, out, P + "v_q", b.v_q);
    for (int g = 0; g < h.heads; ++g) {
      std::string hs = ".h" + std::to_string(g);
      detail::check_tensor(oc, out, P + "scores_acc" + hs, b.scores_acc[std::size_t(g)]);
      detail::check_tensor(oc, out, P + "scores_fp" + hs, b.scores_fp[std::size_t(g)]);
      detail::check_tensor(oc, out, P + "exp_fp" + hs, b.exp_fp[std::size_t(g)]);
      detail::check_tensor(oc, out, P + "probs_fp" + hs, b.probs_fp[std::size_t(g)]);
      detail::check_tensor(oc, out, P + "probs_q" + hs, b.probs_q[std::size_t(g)]);
      detail::check_tensor(oc, out, P + "av_acc" + hs, b.av_acc[std::size_t(g)]);
    }
    // sa_q is the lane-wise concatenation of the per-head requantized outputs
    QuantTensor sa(Shape{h.d_model, h.seq_len}, p.layers[std::size_t(li)].scales.s_av);
    for (int g = 0; g < h.heads; ++g)
      for (int l = 0; l < h.head_dim; ++l)
        for (int c = 0; c < h.seq_len; ++c)
          sa.at(g * h.head_dim + l, c) = b.av_q[std::size_t(g)].at(l, c);
    detail::check_tensor(oc, out, P + "sa_q", sa);
    detail::check_tensor(oc, out, P + "p_acc", b.p_acc);
    detail::check_tensor(oc, out, P + "z1", b.z1);
    detail::check_tensor(oc, out, P + "gd1", b.gd1);
    detail::check_tensor(oc, out, P + "ln1_fp", b.ln1_fp);
    detail::check_tensor(oc, out, P + "ln1_q", b.ln1_q);
    detail::check_tensor(oc, out, P + "f1_acc", b.f1_acc);
    detail::check_tensor(oc, out, P + "g_q", b.g_q);
    detail::check_tensor(oc, out, P + "f2_acc", b.f2_acc);
    detail::check_tensor(oc, out, P + "z2", b.z2);
    detail::check_tensor(oc, out, P + "gd2", b.gd2);
    detail::check_tensor(oc, out, P + "ln2_fp", b.ln2_fp);
    detail::check_tensor(oc, out, P + "ln2_q", b.ln2_q);
    cur_q = std::move(b.ln2_q);
    cur_fp = std::move(b.ln2_fp);
  }
  return oc;
}

}  // namespace tsim

#pragma once

// Scalar and per-column kernels shared by the reference model and the
// simulator. The evaluation orders below define bit-exactness: both sides
// call exactly these functions, so functional parity is structural.

#include <cmath>
#include <cstdint>
#include <vector>

#include "tsim/tensor.hpp"

namespace tsim {

// GELU tanh approximation with a fixed evaluation order:
//   x2 = x*x; x3 = x2*x; t = x + 0.044715*x3;
//   u = tanh(0.7978845608*t); out = (0.5*x)*(1+u)
inline float gelu_scalar(float x) {
  float x2 = x * x;
  float x3 = x2 * x;
  float t = x + 0.044715f * x3;
  float u = std::tanh(0.7978845608f * t);
  return (0.5f * x) * (1.0f + u);
}

// Canonical reduction over one column of length k, matching the chain
// dataflow: lanes accumulate across physical-vector blocks of size L in
// ascending block order, then the per-lane partials are folded in
// ascending lane order. `get(i)` returns element i of the column.
template <typename Get>
inline float column_sum_canonical(Get&& get, int k, int lane_width) {
  int nlanes = k < lane_width ? k : lane_width;
  float partial[1024];
  for (int l = 0; l < nlanes; ++l) partial[l] = 0.0f;
  for (int p = 0; p * lane_width < k; ++p)
    for (int l = 0; l < nlanes && p * lane_width + l < k; ++l)
      partial[l] += get(p * lane_width + l);
  float s = 0.0f;
  for (int l = 0; l < nlanes; ++l) s += partial[l];
  return s;
}

template <typename Get>
inline float column_max_canonical(Get&& get, int k, int lane_width) {
  int nlanes = k < lane_width ? k : lane_width;
  float partial[1024];
  for (int l = 0; l < nlanes; ++l) partial[l] = get(l);
  for (int p = 1; p * lane_width < k; ++p)
    for (int l = 0; l < nlanes && p * lane_width + l < k; ++l) {
      float v = get(p * lane_width + l);
      if (v > partial[l]) partial[l] = v;
    }
  float m = partial[0];
  for (int l = 1; l < nlanes; ++l)
    if (partial[l] > m) m = partial[l];
  return m;
}

// Layer-normalization column statistics, evaluated as the three-pass
// dataflow does. Mean divides via multiply-by-reciprocal.
template <typename Get>
inline float column_mean(Get&& get, int k, int lane_width) {
  float recip = 1.0f / static_cast<float>(k);
  return column_sum_canonical(get, k, lane_width) * recip;
}

template <typename Get>
inline float column_var(Get&& get, float mean, int k, int lane_width) {
  float recip = 1.0f / static_cast<float>(k);
  auto sq = [&](int i) {
    float d = get(i) - mean;
    return d * d;
  };
  return column_sum_canonical(sq, k, lane_width) * recip;
}

inline float rsqrt_scalar(float v) { return 1.0f / std::sqrt(v); }

}  // namespace tsim

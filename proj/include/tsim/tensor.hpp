#pragma once

// Quantized and floating tensor types with reproducible arithmetic rules.
// All quantization is per-tensor, symmetric (zero-point 0), round-half-even.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsim {

struct Shape {
  // dims[0] is the inner (normalized / reduced) dimension, held in vector
  // lanes; dims[1] counts logical vectors (columns).
  std::vector<int> dims;

  Shape() = default;
  Shape(std::initializer_list<int> d) : dims(d) { check(); }
  explicit Shape(std::vector<int> d) : dims(std::move(d)) { check(); }

  void check() const {
    if (dims.empty()) throw std::invalid_argument("Shape: empty");
    for (int d : dims)
      if (d < 1) throw std::invalid_argument("Shape: extent < 1");
  }
  std::size_t elems() const {
    std::size_t n = 1;
    for (int d : dims) n *= static_cast<std::size_t>(d);
    return n;
  }
  int rows() const { return dims[0]; }
  int cols() const { return dims.size() > 1 ? dims[1] : 1; }
  bool operator==(const Shape& o) const { return dims == o.dims; }
};

// int8 data with a positive per-tensor fp32 scale. Row-major: (lane, col)
// lives at lane*cols + col.
struct QuantTensor {
  std::vector<int8_t> data;
  float scale = 1.0f;
  Shape shape;

  QuantTensor() = default;
  QuantTensor(Shape s, float sc)
      : data(s.elems(), 0), scale(sc), shape(std::move(s)) {
    if (!(scale > 0.0f) || !std::isfinite(scale))
      throw std::invalid_argument("QuantTensor: scale must be positive finite");
  }
  int8_t& at(int l, int c) { return data[std::size_t(l) * shape.cols() + c]; }
  int8_t at(int l, int c) const {
    return data[std::size_t(l) * shape.cols() + c];
  }
};

// int32 accumulator tensor; scale is the implied product of input scales.
struct AccTensor {
  std::vector<int32_t> data;
  float scale = 1.0f;
  Shape shape;

  AccTensor() = default;
  AccTensor(Shape s, float sc) : data(s.elems(), 0), scale(sc), shape(std::move(s)) {}
  int32_t& at(int l, int c) { return data[std::size_t(l) * shape.cols() + c]; }
  int32_t at(int l, int c) const {
    return data[std::size_t(l) * shape.cols() + c];
  }
};

struct FpTensor {
  std::vector<float> data;
  Shape shape;

  FpTensor() = default;
  explicit FpTensor(Shape s) : data(s.elems(), 0.0f), shape(std::move(s)) {}
  float& at(int l, int c) { return data[std::size_t(l) * shape.cols() + c]; }
  float at(int l, int c) const {
    return data[std::size_t(l) * shape.cols() + c];
  }
  void check_finite() const {
    for (float v : data)
      if (!std::isfinite(v)) throw std::runtime_error("FpTensor: non-finite element");
  }
};

// ---- scalar quantization kernels (single source of truth) ----

// round-half-even via nearbyint (default FE_TONEAREST).
inline int8_t quantize_scalar(float x, float scale) {
  float r = x / scale;
  float n = std::nearbyintf(r);
  if (n > 127.0f) return 127;
  if (n < -128.0f) return -128;
  return static_cast<int8_t>(n);
}

inline float dequantize_scalar(int8_t q, float scale) {
  return static_cast<float>(q) * scale;
}

inline float dequantize_acc_scalar(int32_t a, float scale) {
  // int32 -> fp32 cast rounds to nearest even; one fp32 multiply.
  return static_cast<float>(a) * scale;
}

// ---- tensor-level operations ----

inline QuantTensor quantize(const FpTensor& x, float scale) {
  if (!(scale > 0.0f) || !std::isfinite(scale))
    throw std::invalid_argument("quantize: scale must be positive finite");
  x.check_finite();
  QuantTensor q(x.shape, scale);
  for (std::size_t i = 0; i < x.data.size(); ++i)
    q.data[i] = quantize_scalar(x.data[i], scale);
  return q;
}

inline FpTensor dequantize(const QuantTensor& q) {
  FpTensor out(q.shape);
  for (std::size_t i = 0; i < q.data.size(); ++i)
    out.data[i] = dequantize_scalar(q.data[i], q.scale);
  return out;
}

inline FpTensor dequantize_acc(const AccTensor& a, float scale_product) {
  if (!(scale_product > 0.0f) || !std::isfinite(scale_product))
    throw std::invalid_argument("dequantize_acc: scale must be positive finite");
  FpTensor out(a.shape);
  for (std::size_t i = 0; i < a.data.size(); ++i)
    out.data[i] = dequantize_acc_scalar(a.data[i], scale_product);
  return out;
}

inline float calibrate_scale(const FpTensor& x) {
  if (x.data.empty()) throw std::invalid_argument("calibrate_scale: empty tensor");
  x.check_finite();
  float m = 0.0f;
  for (float v : x.data) m = std::max(m, std::fabs(v));
  if (m == 0.0f) return 1.0f;
  return m / 127.0f;
}

// ---- binary tensor file format ----
// header: "QTSR", u8 dtype {0=int8,1=int32,2=fp32}, u8 rank, 2 reserved,
// rank x u32 LE extents; fp32 LE scale (int8 tensors only); raw LE data.

namespace detail {

inline void put_u32(std::ostream& os, uint32_t v) {
  char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
               char((v >> 24) & 0xff)};
  os.write(b, 4);
}
inline uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return uint32_t(b[0]) | uint32_t(b[1]) << 8 | uint32_t(b[2]) << 16 |
         uint32_t(b[3]) << 24;
}
inline void write_header(std::ostream& os, uint8_t dtype, const Shape& s) {
  os.write("QTSR", 4);
  char meta[4] = {char(dtype), char(s.dims.size()), 0, 0};
  os.write(meta, 4);
  for (int d : s.dims) put_u32(os, uint32_t(d));
}
inline Shape read_header(std::istream& is, uint8_t expect_dtype) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "QTSR", 4) != 0)
    throw std::runtime_error("tensor file: bad magic");
  unsigned char meta[4];
  is.read(reinterpret_cast<char*>(meta), 4);
  if (meta[0] != expect_dtype) throw std::runtime_error("tensor file: dtype mismatch");
  std::vector<int> dims(meta[1]);
  for (auto& d : dims) d = int(get_u32(is));
  if (!is) throw std::runtime_error("tensor file: truncated header");
  return Shape(dims);
}

}  // namespace detail

inline void save_tensor(const std::string& path, const QuantTensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  detail::write_header(os, 0, t.shape);
  uint32_t s;
  std::memcpy(&s, &t.scale, 4);
  detail::put_u32(os, s);
  os.write(reinterpret_cast<const char*>(t.data.data()), std::streamsize(t.data.size()));
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline void save_tensor(const std::string& path, const AccTensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  detail::write_header(os, 1, t.shape);
  for (int32_t v : t.data) detail::put_u32(os, uint32_t(v));
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline void save_tensor(const std::string& path, const FpTensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path);
  detail::write_header(os, 2, t.shape);
  for (float v : t.data) {
    uint32_t u;
    std::memcpy(&u, &v, 4);
    detail::put_u32(os, u);
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline QuantTensor load_quant_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  Shape sh = detail::read_header(is, 0);
  uint32_t u = detail::get_u32(is);
  float scale;
  std::memcpy(&scale, &u, 4);
  QuantTensor t(sh, scale);
  is.read(reinterpret_cast<char*>(t.data.data()), std::streamsize(t.data.size()));
  if (!is) throw std::runtime_error("tensor file: truncated data: " + path);
  return t;
}

inline AccTensor load_acc_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  Shape sh = detail::read_header(is, 1);
  AccTensor t(sh, 1.0f);
  for (auto& v : t.data) v = int32_t(detail::get_u32(is));
  if (!is) throw std::runtime_error("tensor file: truncated data: " + path);
  return t;
}

inline FpTensor load_fp_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  Shape sh = detail::read_header(is, 2);
  FpTensor t(sh);
  for (auto& v : t.data) {
    uint32_t u = detail::get_u32(is);
    std::memcpy(&v, &u, 4);
  }
  if (!is) throw std::runtime_error("tensor file: truncated data: " + path);
  return t;
}

}  // namespace tsim

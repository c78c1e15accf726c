#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "nucleoseg/errors.hpp"
#include "nucleoseg/rng.hpp"

namespace nseg {

struct Dims {
  std::uint32_t n = 0, c = 0, h = 0, w = 0;

  std::size_t count() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  bool operator==(const Dims&) const = default;
  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

// Validates that n*c*h*w is nonzero and fits in size_t arithmetic with
// room for the element type.
inline std::size_t checked_count(Dims d) {
  if (d.n == 0 || d.c == 0 || d.h == 0 || d.w == 0)
    throw ShapeError("tensor dims must be positive, got " + d.str());
  std::size_t limit = std::numeric_limits<std::size_t>::max() / sizeof(double);
  std::size_t total = d.n;
  for (std::size_t dim : {std::size_t(d.c), std::size_t(d.h), std::size_t(d.w)}) {
    if (total > limit / dim)
      throw ShapeError("tensor dims overflow: " + d.str());
    total *= dim;
  }
  return total;
}

// Dense NCHW tensor with an optional gradient buffer of the same shape.
template <class S>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Dims d, S fill = S(0)) : dims_(d), data_(checked_count(d), fill) {}

  static Tensor uniform(Dims d, Rng& rng, double lo, double hi) {
    Tensor t(d);
    for (auto& v : t.data_) v = static_cast<S>(rng.uniform(lo, hi));
    return t;
  }

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }

  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }

  std::size_t index(std::uint32_t n, std::uint32_t c, std::uint32_t y,
                    std::uint32_t x) const {
    return ((static_cast<std::size_t>(n) * dims_.c + c) * dims_.h + y) * dims_.w + x;
  }
  S& at(std::uint32_t n, std::uint32_t c, std::uint32_t y, std::uint32_t x) {
    return data_[index(n, c, y, x)];
  }
  S at(std::uint32_t n, std::uint32_t c, std::uint32_t y, std::uint32_t x) const {
    return data_[index(n, c, y, x)];
  }
  S& operator[](std::size_t i) { return data_[i]; }
  S operator[](std::size_t i) const { return data_[i]; }

  bool has_grad() const { return grad_.size() == data_.size(); }
  std::vector<S>& grad() {
    if (!has_grad()) grad_.assign(data_.size(), S(0));
    return grad_;
  }
  const std::vector<S>& grad() const { return grad_; }
  void zero_grad() {
    if (has_grad()) std::fill(grad_.begin(), grad_.end(), S(0));
  }

  void fill(S v) { std::fill(data_.begin(), data_.end(), v); }

  template <class T>
  Tensor<T> cast() const {
    Tensor<T> out(dims_);
    for (std::size_t i = 0; i < data_.size(); ++i)
      out[i] = static_cast<T>(data_[i]);
    return out;
  }

 private:
  Dims dims_;
  std::vector<S> data_;
  std::vector<S> grad_;
};

namespace detail {
template <class S, class Op>
Tensor<S> zip(const Tensor<S>& a, const Tensor<S>& b, Op op, const char* name) {
  if (!(a.dims() == b.dims()))
    throw ShapeError(std::string(name) + ": shape mismatch " + a.dims().str() +
                     " vs " + b.dims().str());
  Tensor<S> out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = op(a[i], b[i]);
  return out;
}
}  // namespace detail

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::zip(a, b, [](S x, S y) { return x + y; }, "add");
}
template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::zip(a, b, [](S x, S y) { return x - y; }, "sub");
}
template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  return detail::zip(a, b, [](S x, S y) { return x * y; }, "mul");
}
template <class S>
Tensor<S> scale(const Tensor<S>& a, S k) {
  Tensor<S> out(a.dims());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * k;
  return out;
}

template <class S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  Dims da = a.dims(), db = b.dims();
  if (da.n != db.n || da.h != db.h || da.w != db.w)
    throw ShapeError("concat_channels: incompatible " + da.str() + " vs " + db.str());
  Tensor<S> out(Dims{da.n, da.c + db.c, da.h, da.w});
  for (std::uint32_t n = 0; n < da.n; ++n)
    for (std::uint32_t y = 0; y < da.h; ++y)
      for (std::uint32_t x = 0; x < da.w; ++x) {
        for (std::uint32_t c = 0; c < da.c; ++c)
          out.at(n, c, y, x) = a.at(n, c, y, x);
        for (std::uint32_t c = 0; c < db.c; ++c)
          out.at(n, da.c + c, y, x) = b.at(n, c, y, x);
      }
  return out;
}

// Channels [c0, c1) as a new tensor.
template <class S>
Tensor<S> slice_channels(const Tensor<S>& t, std::uint32_t c0, std::uint32_t c1) {
  Dims d = t.dims();
  if (c0 >= c1 || c1 > d.c)
    throw ShapeError("slice_channels: bad range [" + std::to_string(c0) + "," +
                     std::to_string(c1) + ") for c=" + std::to_string(d.c));
  Tensor<S> out(Dims{d.n, c1 - c0, d.h, d.w});
  for (std::uint32_t n = 0; n < d.n; ++n)
    for (std::uint32_t c = c0; c < c1; ++c)
      for (std::uint32_t y = 0; y < d.h; ++y)
        for (std::uint32_t x = 0; x < d.w; ++x)
          out.at(n, c - c0, y, x) = t.at(n, c, y, x);
  return out;
}

// Numerically safe softmax over the channel axis at every (n, y, x).
template <class S>
Tensor<S> channel_softmax(const Tensor<S>& t) {
  Dims d = t.dims();
  Tensor<S> out(d);
  for (std::uint32_t n = 0; n < d.n; ++n)
    for (std::uint32_t y = 0; y < d.h; ++y)
      for (std::uint32_t x = 0; x < d.w; ++x) {
        S m = t.at(n, 0, y, x);
        for (std::uint32_t c = 1; c < d.c; ++c) m = std::max(m, t.at(n, c, y, x));
        S denom = S(0);
        for (std::uint32_t c = 0; c < d.c; ++c) {
          S e = std::exp(t.at(n, c, y, x) - m);
          out.at(n, c, y, x) = e;
          denom += e;
        }
        for (std::uint32_t c = 0; c < d.c; ++c) out.at(n, c, y, x) /= denom;
      }
  return out;
}

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4))
    throw FormatError(std::string("tensor blob: truncated ") + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

// Binary layout: magic "NST1", then n, c, h, w as u32 little endian,
// then n*c*h*w f32 values little endian in NCHW order.
template <class S>
void write_tensor(std::ostream& os, const Tensor<S>& t) {
  os.write("NST1", 4);
  detail::put_u32(os, t.dims().n);
  detail::put_u32(os, t.dims().c);
  detail::put_u32(os, t.dims().h);
  detail::put_u32(os, t.dims().w);
  for (std::size_t i = 0; i < t.size(); ++i)
    detail::put_u32(os, std::bit_cast<std::uint32_t>(static_cast<float>(t[i])));
  if (!os) throw DataError("tensor blob: write failed");
}

inline Tensor<float> read_tensor(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "NST1", 4) != 0)
    throw FormatError("tensor blob: bad magic");
  Dims d;
  d.n = detail::get_u32(is, "dim n");
  d.c = detail::get_u32(is, "dim c");
  d.h = detail::get_u32(is, "dim h");
  d.w = detail::get_u32(is, "dim w");
  Tensor<float> t(d);
  for (std::size_t i = 0; i < t.size(); ++i)
    t[i] = std::bit_cast<float>(detail::get_u32(is, "payload"));
  return t;
}

template <class S>
void save_tensor(const std::filesystem::path& path, const Tensor<S>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open for writing: " + path.string());
  write_tensor(os, t);
}

inline Tensor<float> load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open: " + path.string());
  return read_tensor(is);
}

}  // namespace nseg

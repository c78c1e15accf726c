#pragma once

#include <cstdint>
#include <vector>

#include "nucleoseg/errors.hpp"
#include "nucleoseg/image.hpp"

namespace nseg {

// Exact squared Euclidean distances, integer valued.
struct DistMap {
  std::uint32_t h = 0, w = 0;
  std::vector<std::int64_t> d2;

  DistMap() = default;
  DistMap(std::uint32_t hh, std::uint32_t ww) : h(hh), w(ww), d2(std::size_t(hh) * ww, 0) {}

  std::int64_t& at(std::uint32_t y, std::uint32_t x) { return d2[std::size_t(y) * w + x]; }
  std::int64_t at(std::uint32_t y, std::uint32_t x) const { return d2[std::size_t(y) * w + x]; }
};

namespace detail {

// 1D squared distance transform via the lower envelope of parabolas
// (x - q)^2 + f(q). Input values act as vertical offsets; the envelope
// is evaluated at integer x, so results are exact integers.
inline void edt_1d(const std::vector<std::int64_t>& f, std::vector<std::int64_t>& d,
                   std::vector<int>& v, std::vector<double>& z, int n) {
  int k = 0;
  v[0] = 0;
  z[0] = -1e30;
  z[1] = 1e30;
  for (int q = 1; q < n; ++q) {
    double s;
    for (;;) {
      int p = v[k];
      s = (double(f[q] - f[p]) + double(q) * q - double(p) * p) / (2.0 * (q - p));
      if (s > z[k]) break;
      --k;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = 1e30;
  }
  k = 0;
  for (int x = 0; x < n; ++x) {
    while (z[k + 1] < x) ++k;
    std::int64_t dx = x - v[k];
    d[std::size_t(x)] = dx * dx + f[std::size_t(v[k])];
  }
}

}  // namespace detail

// Squared distance from every foreground pixel to the nearest
// background pixel (8-neighborhood-free, true Euclidean metric).
// Background pixels get 0. If the mask has no background at all, every
// pixel gets the cap h*h + w*w.
inline DistMap squared_edt(const BinaryMask& mask) {
  std::uint32_t h = mask.h, w = mask.w;
  if (h == 0 || w == 0) throw ShapeError("squared_edt: empty mask");
  std::int64_t cap = std::int64_t(h) * h + std::int64_t(w) * w;
  DistMap out(h, w);

  // Columns first: per-column 1D transform of 0/cap seeds.
  std::vector<std::int64_t> f(std::max(h, w)), d(std::max(h, w));
  std::vector<int> v(std::max(h, w));
  std::vector<double> z(std::size_t(std::max(h, w)) + 1);
  std::vector<std::int64_t> tmp(std::size_t(h) * w);
  for (std::uint32_t x = 0; x < w; ++x) {
    for (std::uint32_t y = 0; y < h; ++y)
      f[y] = mask.at(y, x) ? cap : 0;
    detail::edt_1d(f, d, v, z, int(h));
    for (std::uint32_t y = 0; y < h; ++y)
      tmp[std::size_t(y) * w + x] = d[y];
  }
  for (std::uint32_t y = 0; y < h; ++y) {
    for (std::uint32_t x = 0; x < w; ++x) f[x] = tmp[std::size_t(y) * w + x];
    detail::edt_1d(f, d, v, z, int(w));
    for (std::uint32_t x = 0; x < w; ++x)
      out.at(y, x) = std::min(d[x], cap);
  }
  return out;
}

}  // namespace nseg

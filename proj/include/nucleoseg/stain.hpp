#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "nucleoseg/errors.hpp"
#include "nucleoseg/image.hpp"
#include "nucleoseg/tensor.hpp"

namespace nseg {

// Beer-Lambert stain model. Columns are normalized to unit length
// before use; background is the per-channel illumination level.
struct StainBasis {
  std::array<double, 3> hematoxylin{0.650, 0.704, 0.286};
  std::array<double, 3> eosin{0.072, 0.990, 0.105};
  std::array<double, 3> background{255.0, 255.0, 255.0};
  double od_floor = 0.0;
};

template <class S>
struct StainMaps {
  Tensor<S> hematoxylin;  // (1, 1, h, w) concentrations, >= 0
  Tensor<S> eosin;
};

namespace detail {

inline std::array<double, 3> unit(const std::array<double, 3>& v) {
  double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  if (n <= 0) throw NumericError("stain vector has zero length");
  return {v[0] / n, v[1] / n, v[2] / n};
}

struct StainSolver {
  std::array<double, 3> hv, ev, bg;
  double g, det, floor;

  explicit StainSolver(const StainBasis& basis)
      : hv(unit(basis.hematoxylin)), ev(unit(basis.eosin)), bg(basis.background),
        floor(basis.od_floor) {
    g = hv[0] * ev[0] + hv[1] * ev[1] + hv[2] * ev[2];
    det = 1.0 - g * g;
    if (std::abs(det) < 1e-12) throw NumericError("stain vectors are collinear");
  }

  // Least squares onto the two unit stain vectors, clamped nonnegative.
  // Intensities are floored at 1 count so OD stays finite.
  std::array<double, 2> decompose(const std::array<double, 3>& rgb) const {
    double a = 0, b = 0;
    for (int k = 0; k < 3; ++k) {
      double v = std::max(rgb[std::size_t(k)], 1.0);
      double od = -std::log(v / bg[std::size_t(k)]);
      if (od < floor) od = 0.0;
      a += hv[std::size_t(k)] * od;
      b += ev[std::size_t(k)] * od;
    }
    double ch = (a - g * b) / det;
    double ce = (b - g * a) / det;
    return {std::max(ch, 0.0), std::max(ce, 0.0)};
  }

  std::array<double, 3> compose(double ch, double ce) const {
    std::array<double, 3> rgb;
    for (int k = 0; k < 3; ++k) {
      double od = hv[std::size_t(k)] * ch + ev[std::size_t(k)] * ce;
      rgb[std::size_t(k)] = bg[std::size_t(k)] * std::exp(-od);
    }
    return rgb;
  }
};

}  // namespace detail

// Optical density then per-pixel least squares. rgb is (1, 3, h, w)
// real-valued intensities on the 0..255 scale.
inline StainMaps<double> stain_decompose_real(const Tensor<double>& rgb,
                                              const StainBasis& basis = {}) {
  Dims d = rgb.dims();
  if (d.n != 1 || d.c != 3) throw ShapeError("stain_decompose_real wants (1,3,h,w)");
  detail::StainSolver sv(basis);
  StainMaps<double> maps{Tensor<double>(Dims{1, 1, d.h, d.w}),
                         Tensor<double>(Dims{1, 1, d.h, d.w})};
  for (std::uint32_t y = 0; y < d.h; ++y)
    for (std::uint32_t x = 0; x < d.w; ++x) {
      auto c = sv.decompose({rgb.at(0, 0, y, x), rgb.at(0, 1, y, x), rgb.at(0, 2, y, x)});
      maps.hematoxylin.at(0, 0, y, x) = c[0];
      maps.eosin.at(0, 0, y, x) = c[1];
    }
  return maps;
}

inline Tensor<double> stain_compose_real(const StainMaps<double>& maps,
                                         const StainBasis& basis = {}) {
  Dims d = maps.hematoxylin.dims();
  if (!(d == maps.eosin.dims())) throw ShapeError("stain_compose_real: map shapes differ");
  detail::StainSolver sv(basis);
  Tensor<double> rgb(Dims{1, 3, d.h, d.w});
  for (std::uint32_t y = 0; y < d.h; ++y)
    for (std::uint32_t x = 0; x < d.w; ++x) {
      auto v = sv.compose(maps.hematoxylin.at(0, 0, y, x), maps.eosin.at(0, 0, y, x));
      for (std::uint32_t k = 0; k < 3; ++k) rgb.at(0, k, y, x) = v[k];
    }
  return rgb;
}

// 8-bit entry point used by the pipeline.
template <class S>
StainMaps<S> stain_decompose(const ImageU8& img, const StainBasis& basis = {}) {
  if (img.channels != 3) throw ShapeError("stain_decompose wants an RGB image");
  detail::StainSolver sv(basis);
  StainMaps<S> maps{Tensor<S>(Dims{1, 1, img.h, img.w}),
                    Tensor<S>(Dims{1, 1, img.h, img.w})};
  for (std::uint32_t y = 0; y < img.h; ++y)
    for (std::uint32_t x = 0; x < img.w; ++x) {
      auto c = sv.decompose({double(img.at(y, x, 0)), double(img.at(y, x, 1)),
                             double(img.at(y, x, 2))});
      maps.hematoxylin.at(0, 0, y, x) = S(c[0]);
      maps.eosin.at(0, 0, y, x) = S(c[1]);
    }
  return maps;
}

// Inverse of the stain model, rounded to 8 bits.
template <class S>
ImageU8 stain_reconstruct(const StainMaps<S>& maps, const StainBasis& basis = {}) {
  Dims d = maps.hematoxylin.dims();
  if (!(d == maps.eosin.dims())) throw ShapeError("stain_reconstruct: map shapes differ");
  detail::StainSolver sv(basis);
  ImageU8 img(d.h, d.w, 3);
  for (std::uint32_t y = 0; y < d.h; ++y)
    for (std::uint32_t x = 0; x < d.w; ++x) {
      auto v = sv.compose(double(maps.hematoxylin.at(0, 0, y, x)),
                          double(maps.eosin.at(0, 0, y, x)));
      for (std::uint32_t k = 0; k < 3; ++k)
        img.at(y, x, k) = std::uint8_t(std::clamp(std::lround(v[k]), 0l, 255l));
    }
  return img;
}

// Scales a concentration map by its 99th percentile and clips to
// [0, 1]. Blank images (percentile ~ 0) come back blank.
template <class S>
Tensor<S> normalize_p99(const Tensor<S>& t) {
  std::vector<S> sorted(t.data(), t.data() + t.size());
  std::sort(sorted.begin(), sorted.end());
  std::size_t k = std::size_t(std::ceil(0.99 * double(sorted.size())));
  if (k > 0) --k;
  double p99 = sorted[k];
  double scale = p99 > 1e-6 ? 1.0 / p99 : 0.0;
  Tensor<S> out(t.dims());
  for (std::size_t i = 0; i < t.size(); ++i)
    out[i] = S(std::clamp(double(t[i]) * scale, 0.0, 1.0));
  return out;
}

}  // namespace nseg

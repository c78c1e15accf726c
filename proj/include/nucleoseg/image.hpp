#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "nucleoseg/errors.hpp"
#include "nucleoseg/tensor.hpp"

namespace nseg {

// Interleaved 8-bit image, row major, 1 or 3 channels.
struct ImageU8 {
  std::uint32_t h = 0, w = 0, channels = 0;
  std::vector<std::uint8_t> data;

  ImageU8() = default;
  ImageU8(std::uint32_t hh, std::uint32_t ww, std::uint32_t cc, std::uint8_t fill = 0)
      : h(hh), w(ww), channels(cc),
        data(std::size_t(hh) * ww * cc, fill) {}

  std::uint8_t& at(std::uint32_t y, std::uint32_t x, std::uint32_t c) {
    return data[(std::size_t(y) * w + x) * channels + c];
  }
  std::uint8_t at(std::uint32_t y, std::uint32_t x, std::uint32_t c) const {
    return data[(std::size_t(y) * w + x) * channels + c];
  }
};

// Dense instance ids, 0 = background.
struct LabelMap {
  std::uint32_t h = 0, w = 0;
  std::vector<std::uint32_t> ids;

  LabelMap() = default;
  LabelMap(std::uint32_t hh, std::uint32_t ww) : h(hh), w(ww), ids(std::size_t(hh) * ww, 0) {}

  std::uint32_t& at(std::uint32_t y, std::uint32_t x) { return ids[std::size_t(y) * w + x]; }
  std::uint32_t at(std::uint32_t y, std::uint32_t x) const { return ids[std::size_t(y) * w + x]; }
  std::size_t count() const { return ids.size(); }

  std::uint32_t max_id() const {
    std::uint32_t m = 0;
    for (auto v : ids) m = std::max(m, v);
    return m;
  }
};

struct BinaryMask {
  std::uint32_t h = 0, w = 0;
  std::vector<std::uint8_t> v;

  BinaryMask() = default;
  BinaryMask(std::uint32_t hh, std::uint32_t ww) : h(hh), w(ww), v(std::size_t(hh) * ww, 0) {}

  std::uint8_t& at(std::uint32_t y, std::uint32_t x) { return v[std::size_t(y) * w + x]; }
  std::uint8_t at(std::uint32_t y, std::uint32_t x) const { return v[std::size_t(y) * w + x]; }
};

inline BinaryMask foreground_of(const LabelMap& lm) {
  BinaryMask m(lm.h, lm.w);
  for (std::size_t i = 0; i < lm.ids.size(); ++i) m.v[i] = lm.ids[i] > 0 ? 1 : 0;
  return m;
}

// Rec. 601 luma, scaled to [0, 1], as a (1, 1, h, w) tensor.
template <class S>
Tensor<S> grayscale_tensor(const ImageU8& img) {
  if (img.channels != 3) throw ShapeError("grayscale_tensor wants an RGB image");
  Tensor<S> t(Dims{1, 1, img.h, img.w});
  for (std::uint32_t y = 0; y < img.h; ++y)
    for (std::uint32_t x = 0; x < img.w; ++x) {
      double g = 0.299 * img.at(y, x, 0) + 0.587 * img.at(y, x, 1) +
                 0.114 * img.at(y, x, 2);
      t.at(0, 0, y, x) = S(g / 255.0);
    }
  return t;
}

// One channel of a (n, c, h, w) tensor as an 8-bit image; values are
// clamped to [0, 1] and scaled to 0..255.
template <class S>
ImageU8 tensor_to_gray8(const Tensor<S>& t, std::uint32_t n, std::uint32_t c) {
  Dims d = t.dims();
  if (n >= d.n || c >= d.c) throw ShapeError("tensor_to_gray8: index out of range");
  ImageU8 img(d.h, d.w, 1);
  for (std::uint32_t y = 0; y < d.h; ++y)
    for (std::uint32_t x = 0; x < d.w; ++x) {
      double v = std::clamp(double(t.at(n, c, y, x)), 0.0, 1.0);
      img.at(y, x, 0) = std::uint8_t(std::lround(v * 255.0));
    }
  return img;
}

inline const std::array<std::array<std::uint8_t, 3>, 12>& overlay_palette() {
  static const std::array<std::array<std::uint8_t, 3>, 12> p = {{
      {230, 25, 75},   {60, 180, 75},   {255, 225, 25}, {0, 130, 200},
      {245, 130, 48},  {145, 30, 180},  {70, 240, 240}, {240, 50, 230},
      {210, 245, 60},  {250, 190, 190}, {0, 128, 128},  {255, 165, 0},
  }};
  return p;
}

// Draws instance contours onto a copy of the image. A pixel is contour
// if it belongs to an instance and a 4-neighbor has a different id (the
// image border counts as different).
inline ImageU8 render_overlay(const ImageU8& rgb, const LabelMap& lm) {
  if (rgb.channels != 3 || rgb.h != lm.h || rgb.w != lm.w)
    throw ShapeError("render_overlay: image and labels must be same-size RGB");
  ImageU8 out = rgb;
  auto id_at = [&](std::int64_t y, std::int64_t x) -> std::int64_t {
    if (y < 0 || x < 0 || y >= lm.h || x >= lm.w) return -1;
    return lm.at(std::uint32_t(y), std::uint32_t(x));
  };
  for (std::uint32_t y = 0; y < lm.h; ++y)
    for (std::uint32_t x = 0; x < lm.w; ++x) {
      std::uint32_t id = lm.at(y, x);
      if (id == 0) continue;
      bool edge = id_at(std::int64_t(y) - 1, x) != id || id_at(std::int64_t(y) + 1, x) != id ||
                  id_at(y, std::int64_t(x) - 1) != id || id_at(y, std::int64_t(x) + 1) != id;
      if (!edge) continue;
      const auto& color = overlay_palette()[(id - 1) % overlay_palette().size()];
      for (std::uint32_t c = 0; c < 3; ++c) out.at(y, x, c) = color[c];
    }
  return out;
}

}  // namespace nseg

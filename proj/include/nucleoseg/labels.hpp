#pragma once

#include <cstdint>
#include <vector>

#include "nucleoseg/errors.hpp"
#include "nucleoseg/image.hpp"

namespace nseg {

namespace detail {

inline const int kOff8[8][2] = {{-1, -1}, {-1, 0}, {-1, 1}, {0, -1},
                                {0, 1},  {1, -1}, {1, 0},  {1, 1}};
inline const int kOff4[4][2] = {{-1, 0}, {0, -1}, {0, 1}, {1, 0}};

}  // namespace detail

// Connected components of a binary mask. Ids are assigned in row-major
// order of each component's first pixel, starting at 1.
inline LabelMap connected_components(const BinaryMask& mask, int connectivity = 8) {
  if (connectivity != 4 && connectivity != 8)
    throw ShapeError("connected_components: connectivity must be 4 or 8");
  LabelMap lm(mask.h, mask.w);
  std::vector<std::uint64_t> stack;
  std::uint32_t next = 0;
  for (std::uint32_t y0 = 0; y0 < mask.h; ++y0)
    for (std::uint32_t x0 = 0; x0 < mask.w; ++x0) {
      if (!mask.at(y0, x0) || lm.at(y0, x0) != 0) continue;
      ++next;
      lm.at(y0, x0) = next;
      stack.push_back(std::uint64_t(y0) * mask.w + x0);
      while (!stack.empty()) {
        std::uint64_t p = stack.back();
        stack.pop_back();
        std::uint32_t y = std::uint32_t(p / mask.w), x = std::uint32_t(p % mask.w);
        int nn = connectivity;
        for (int k = 0; k < nn; ++k) {
          std::int64_t ny = std::int64_t(y) + (connectivity == 8 ? detail::kOff8[k][0]
                                                                 : detail::kOff4[k][0]);
          std::int64_t nx = std::int64_t(x) + (connectivity == 8 ? detail::kOff8[k][1]
                                                                 : detail::kOff4[k][1]);
          if (ny < 0 || nx < 0 || ny >= mask.h || nx >= mask.w) continue;
          auto uy = std::uint32_t(ny), ux = std::uint32_t(nx);
          if (mask.at(uy, ux) && lm.at(uy, ux) == 0) {
            lm.at(uy, ux) = next;
            stack.push_back(std::uint64_t(uy) * mask.w + ux);
          }
        }
      }
    }
  return lm;
}

// Renumbers nonzero ids to 1..k in row-major order of first occurrence.
inline LabelMap renumber_row_major(const LabelMap& lm) {
  LabelMap out(lm.h, lm.w);
  std::vector<std::uint32_t> remap(std::size_t(lm.max_id()) + 1, 0);
  std::uint32_t next = 0;
  for (std::size_t i = 0; i < lm.ids.size(); ++i) {
    std::uint32_t id = lm.ids[i];
    if (id == 0) continue;
    if (remap[id] == 0) remap[id] = ++next;
    out.ids[i] = remap[id];
  }
  return out;
}

inline std::vector<std::size_t> instance_areas(const LabelMap& lm) {
  std::vector<std::size_t> areas(std::size_t(lm.max_id()) + 1, 0);
  for (auto id : lm.ids) ++areas[id];
  return areas;
}

// Drops instances below min_area, then renumbers row-major.
inline LabelMap finalize_labels(const LabelMap& lm, std::size_t min_area) {
  auto areas = instance_areas(lm);
  LabelMap kept(lm.h, lm.w);
  for (std::size_t i = 0; i < lm.ids.size(); ++i) {
    std::uint32_t id = lm.ids[i];
    kept.ids[i] = (id != 0 && areas[id] >= min_area) ? id : 0;
  }
  return renumber_row_major(kept);
}

// Frontier pixels: foreground with an 8-neighbor of a different id or
// of background. The image border does not count as a frontier.
inline BinaryMask frontier_of(const LabelMap& lm) {
  BinaryMask f(lm.h, lm.w);
  for (std::uint32_t y = 0; y < lm.h; ++y)
    for (std::uint32_t x = 0; x < lm.w; ++x) {
      std::uint32_t id = lm.at(y, x);
      if (id == 0) continue;
      for (auto& o : detail::kOff8) {
        std::int64_t ny = std::int64_t(y) + o[0], nx = std::int64_t(x) + o[1];
        if (ny < 0 || nx < 0 || ny >= lm.h || nx >= lm.w) continue;
        if (lm.at(std::uint32_t(ny), std::uint32_t(nx)) != id) {
          f.at(y, x) = 1;
          break;
        }
      }
    }
  return f;
}

// Boundary class mask: foreground pixels within Chebyshev distance
// thickness-1 of a frontier pixel. thickness 1 is the frontier itself.
inline BinaryMask boundary_band(const LabelMap& lm, std::uint32_t thickness) {
  if (thickness == 0) throw ShapeError("boundary_band: thickness must be positive");
  BinaryMask band = frontier_of(lm);
  std::vector<std::uint64_t> frontier;
  for (std::size_t i = 0; i < band.v.size(); ++i)
    if (band.v[i]) frontier.push_back(i);
  std::vector<std::uint64_t> cur = frontier, nxt;
  for (std::uint32_t step = 1; step < thickness; ++step) {
    nxt.clear();
    for (auto p : cur) {
      std::uint32_t y = std::uint32_t(p / lm.w), x = std::uint32_t(p % lm.w);
      for (auto& o : detail::kOff8) {
        std::int64_t ny = std::int64_t(y) + o[0], nx = std::int64_t(x) + o[1];
        if (ny < 0 || nx < 0 || ny >= lm.h || nx >= lm.w) continue;
        auto uy = std::uint32_t(ny), ux = std::uint32_t(nx);
        if (lm.at(uy, ux) == 0 || band.at(uy, ux)) continue;
        band.at(uy, ux) = 1;
        nxt.push_back(std::uint64_t(uy) * lm.w + ux);
      }
    }
    cur.swap(nxt);
  }
  return band;
}

}  // namespace nseg

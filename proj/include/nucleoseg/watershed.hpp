#pragma once

#include <algorithm>
#include <cstdint>
#include <queue>
#include <vector>

#include "nucleoseg/distance.hpp"
#include "nucleoseg/errors.hpp"
#include "nucleoseg/image.hpp"
#include "nucleoseg/labels.hpp"
#include "nucleoseg/tensor.hpp"

namespace nseg {

// Morphological reconstruction by dilation of marker g under mask f
// (8-connectivity), computed with raster sweeps until stable. Both
// fields are integer valued, so the fixpoint is exact.
inline std::vector<std::int64_t> reconstruct_dilation(std::vector<std::int64_t> g,
                                                      const std::vector<std::int64_t>& f,
                                                      std::uint32_t h, std::uint32_t w) {
  auto idx = [w](std::uint32_t y, std::uint32_t x) { return std::size_t(y) * w + x; };
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::uint32_t y = 0; y < h; ++y)
      for (std::uint32_t x = 0; x < w; ++x) {
        std::int64_t m = g[idx(y, x)];
        if (y > 0) {
          m = std::max(m, g[idx(y - 1, x)]);
          if (x > 0) m = std::max(m, g[idx(y - 1, x - 1)]);
          if (x + 1 < w) m = std::max(m, g[idx(y - 1, x + 1)]);
        }
        if (x > 0) m = std::max(m, g[idx(y, x - 1)]);
        std::int64_t v = std::min(m, f[idx(y, x)]);
        if (v != g[idx(y, x)]) {
          g[idx(y, x)] = v;
          changed = true;
        }
      }
    for (std::uint32_t y = h; y-- > 0;)
      for (std::uint32_t x = w; x-- > 0;) {
        std::int64_t m = g[idx(y, x)];
        if (y + 1 < h) {
          m = std::max(m, g[idx(y + 1, x)]);
          if (x > 0) m = std::max(m, g[idx(y + 1, x - 1)]);
          if (x + 1 < w) m = std::max(m, g[idx(y + 1, x + 1)]);
        }
        if (x + 1 < w) m = std::max(m, g[idx(y, x + 1)]);
        std::int64_t v = std::min(m, f[idx(y, x)]);
        if (v != g[idx(y, x)]) {
          g[idx(y, x)] = v;
          changed = true;
        }
      }
  }
  return g;
}

// Markers are the regional maxima of the distance map after h-maxima
// suppression (peaks less than `h` above their surroundings merge into
// their neighbors' basins). Plateaus are 8-connected within the
// foreground; ids follow row-major order of each plateau's first pixel.
inline LabelMap extract_markers(const DistMap& dist, const BinaryMask& mask,
                                std::int64_t h) {
  if (dist.h != mask.h || dist.w != mask.w)
    throw ShapeError("extract_markers: distance and mask sizes differ");
  if (h < 0) throw NumericError("extract_markers: h must be nonnegative");
  std::size_t total = dist.d2.size();
  std::vector<std::int64_t> recon;
  if (h == 0) {
    recon = dist.d2;
  } else {
    std::vector<std::int64_t> g(total);
    for (std::size_t i = 0; i < total; ++i) g[i] = dist.d2[i] - h;
    recon = reconstruct_dilation(std::move(g), dist.d2, dist.h, dist.w);
  }

  LabelMap markers(dist.h, dist.w);
  std::vector<std::uint8_t> visited(total, 0);
  std::vector<std::uint64_t> plateau, stack;
  std::uint32_t next = 0;
  for (std::uint32_t y0 = 0; y0 < dist.h; ++y0)
    for (std::uint32_t x0 = 0; x0 < dist.w; ++x0) {
      std::size_t p0 = std::size_t(y0) * dist.w + x0;
      if (!mask.at(y0, x0) || visited[p0]) continue;
      std::int64_t level = recon[p0];
      bool is_max = true;
      plateau.clear();
      stack.assign(1, p0);
      visited[p0] = 1;
      while (!stack.empty()) {
        std::uint64_t p = stack.back();
        stack.pop_back();
        plateau.push_back(p);
        std::uint32_t y = std::uint32_t(p / dist.w), x = std::uint32_t(p % dist.w);
        for (auto& o : detail::kOff8) {
          std::int64_t ny = std::int64_t(y) + o[0], nx = std::int64_t(x) + o[1];
          if (ny < 0 || nx < 0 || ny >= dist.h || nx >= dist.w) continue;
          auto uy = std::uint32_t(ny), ux = std::uint32_t(nx);
          if (!mask.at(uy, ux)) continue;
          std::size_t np = std::size_t(uy) * dist.w + ux;
          if (recon[np] > level) is_max = false;
          if (recon[np] == level && !visited[np]) {
            visited[np] = 1;
            stack.push_back(np);
          }
        }
      }
      if (!is_max) continue;
      ++next;
      for (auto p : plateau) markers.ids[p] = next;
    }
  return markers;
}

// Priority-flood watershed over the negated distance map, level
// synchronous: the claimable frontier pixels at the current highest
// distance all advance in one round, so fronts crossing a flat plateau
// grow at equal speed and divide it at its geodesic midline instead of
// one marker racing along the whole level set. A pixel reached by two
// fronts in the same round goes to the lower marker id; rounds claim
// pixels in row-major order. 8-connectivity throughout.
inline LabelMap watershed_flood(const DistMap& dist, const LabelMap& markers,
                                const BinaryMask& mask) {
  if (dist.h != mask.h || dist.w != mask.w || markers.h != mask.h || markers.w != mask.w)
    throw ShapeError("watershed_flood: input sizes differ");
  LabelMap labels = markers;

  struct Cand {
    std::int64_t d2;
    std::uint64_t idx;
    bool operator<(const Cand& o) const {
      if (d2 != o.d2) return d2 < o.d2;
      return idx > o.idx;
    }
  };
  std::priority_queue<Cand> pq;
  std::vector<std::uint8_t> queued(labels.ids.size(), 0);

  auto offer_neighbors = [&](std::uint64_t p) {
    auto y = std::uint32_t(p / dist.w), x = std::uint32_t(p % dist.w);
    for (auto& o : detail::kOff8) {
      std::int64_t ny = std::int64_t(y) + o[0], nx = std::int64_t(x) + o[1];
      if (ny < 0 || nx < 0 || ny >= dist.h || nx >= dist.w) continue;
      auto uy = std::uint32_t(ny), ux = std::uint32_t(nx);
      std::uint64_t np = std::uint64_t(uy) * dist.w + ux;
      if (!mask.at(uy, ux) || labels.ids[np] != 0 || queued[np]) continue;
      queued[np] = 1;
      pq.push(Cand{dist.at(uy, ux), np});
    }
  };

  for (std::uint64_t p = 0; p < labels.ids.size(); ++p)
    if (labels.ids[p] != 0) offer_neighbors(p);

  std::vector<std::uint64_t> batch;
  while (!pq.empty()) {
    std::int64_t level = pq.top().d2;
    batch.clear();
    while (!pq.empty() && pq.top().d2 == level) {
      batch.push_back(pq.top().idx);
      pq.pop();
    }
    // ascending idx = row-major claim order inside the round
    std::sort(batch.begin(), batch.end());
    // claims read only labels set in earlier rounds, so assignment
    // within the round is simultaneous
    std::vector<std::uint32_t> claim(batch.size(), 0);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      auto y = std::uint32_t(batch[i] / dist.w), x = std::uint32_t(batch[i] % dist.w);
      std::uint32_t best = 0;
      for (auto& o : detail::kOff8) {
        std::int64_t ny = std::int64_t(y) + o[0], nx = std::int64_t(x) + o[1];
        if (ny < 0 || nx < 0 || ny >= dist.h || nx >= dist.w) continue;
        std::uint32_t lab = labels.at(std::uint32_t(ny), std::uint32_t(nx));
        if (lab != 0 && (best == 0 || lab < best)) best = lab;
      }
      claim[i] = best;
    }
    for (std::size_t i = 0; i < batch.size(); ++i) {
      labels.ids[batch[i]] = claim[i];
      queued[batch[i]] = 0;
    }
    for (auto p : batch) offer_neighbors(p);
  }
  return labels;
}

struct PostConfig {
  double prob_threshold = 0.5;
  std::int64_t marker_h = 2;
  std::size_t min_area = 30;
};

// Probability map to instances: threshold, exact distance transform,
// h-maxima markers, watershed, then size filtering and renumbering.
template <class S>
LabelMap segment_instances(const Tensor<S>& fg_prob, const PostConfig& cfg = {}) {
  Dims d = fg_prob.dims();
  if (d.n != 1 || d.c != 1)
    throw ShapeError("segment_instances wants a (1,1,h,w) probability map");
  BinaryMask mask(d.h, d.w);
  for (std::uint32_t y = 0; y < d.h; ++y)
    for (std::uint32_t x = 0; x < d.w; ++x)
      mask.at(y, x) = fg_prob.at(0, 0, y, x) >= S(cfg.prob_threshold) ? 1 : 0;
  DistMap dist = squared_edt(mask);
  LabelMap markers = extract_markers(dist, mask, cfg.marker_h);
  LabelMap flooded = watershed_flood(dist, markers, mask);
  return finalize_labels(flooded, cfg.min_area);
}

}  // namespace nseg

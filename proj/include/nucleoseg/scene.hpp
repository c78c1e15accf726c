#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "nucleoseg/errors.hpp"
#include "nucleoseg/image.hpp"
#include "nucleoseg/labels.hpp"
#include "nucleoseg/rng.hpp"
#include "nucleoseg/stain.hpp"
#include "nucleoseg/tensor.hpp"

namespace nseg {

enum class Phenotype { Hyperchromatic, Vesicular, Normal };

inline const char* phenotype_name(Phenotype p) {
  switch (p) {
    case Phenotype::Hyperchromatic: return "hyperchromatic";
    case Phenotype::Vesicular: return "vesicular";
    default: return "normal";
  }
}

inline Phenotype phenotype_from_name(const std::string& s) {
  if (s == "hyperchromatic") return Phenotype::Hyperchromatic;
  if (s == "vesicular") return Phenotype::Vesicular;
  if (s == "normal") return Phenotype::Normal;
  throw FormatError("unknown phenotype '" + s + "'");
}

// Elliptical nucleus: center, semi-axes, rotation, and hematoxylin
// levels. level is the plateau value for solid phenotypes and the rim
// value for vesicular nuclei; core_level is the vesicular interior.
struct NucleusRecord {
  std::uint32_t id = 0;
  Phenotype phenotype = Phenotype::Normal;
  double cy = 0, cx = 0;
  double ry = 0, rx = 0;
  double theta = 0;
  double level = 0;
  double core_level = 0;

  // Normalized elliptical radius of a point: 1 on the outline.
  double rho(double y, double x) const {
    double dy = y - cy, dx = x - cx;
    double u = std::cos(theta) * dx + std::sin(theta) * dy;
    double v = -std::sin(theta) * dx + std::cos(theta) * dy;
    return std::sqrt((u / rx) * (u / rx) + (v / ry) * (v / ry));
  }

  bool contains(double y, double x) const { return rho(y, x) <= 1.0; }
};

struct SceneAnnotation {
  std::uint32_t height = 0, width = 0;
  std::vector<NucleusRecord> nuclei;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> touching_pairs;
};

struct SceneSpec {
  std::uint32_t height = 96, width = 128;
  std::uint32_t nucleus_count = 12;
  double radius_min = 7.0, radius_max = 11.0;
  double ecc_min = 1.0, ecc_max = 1.4;
  double mix_hyperchromatic = 0.25, mix_vesicular = 0.4;  // remainder normal
  double touching_fraction = 0.3;  // fraction of nuclei placed as touching pairs
  double overlap_min = 0.1, overlap_max = 0.4;
  double hyper_lo = 0.95, hyper_hi = 1.3;
  double normal_lo = 0.55, normal_hi = 0.85;
  double ves_rim_lo = 0.9, ves_rim_hi = 1.2;
  double ves_core_lo = 0.03, ves_core_hi = 0.08;
  double ves_sigma = 0.18;  // rim falloff width in normalized radius
  double eosin_base = 0.25, eosin_amplitude = 0.18;
  double eosin_nucleus = 0.08;
  double noise_sigma = 0.006;  // additive, clamped at 2.5 sigma
  std::uint32_t debris_min = 10, debris_max = 20;  // extranuclear specks
  double debris_radius_min = 1.5, debris_radius_max = 5.0;
  double debris_level_lo = 0.35, debris_level_hi = 0.65;
  std::uint32_t max_place_attempts = 200;
};

struct Scene {
  ImageU8 rgb;
  LabelMap labels;
  SceneAnnotation annotation;
  StainMaps<float> true_stains;  // pre-noise concentration fields
};

// Rasterizes annotation geometry into an instance map. Overlap pixels
// go to the nucleus whose normalized radius is smallest; exact ties go
// to the lower id. Pure function of the records, so stored label maps
// can always be reproduced from their annotations.
inline LabelMap labels_from_annotation(const SceneAnnotation& ann) {
  LabelMap lm(ann.height, ann.width);
  for (std::uint32_t y = 0; y < ann.height; ++y)
    for (std::uint32_t x = 0; x < ann.width; ++x) {
      double best_rho = 1.0;
      std::uint32_t best_id = 0;
      for (const auto& nuc : ann.nuclei) {
        double r = nuc.rho(double(y), double(x));
        if (r <= 1.0 && (best_id == 0 || r < best_rho)) {
          best_rho = r;
          best_id = nuc.id;
        }
      }
      lm.at(y, x) = best_id;
    }
  return lm;
}

namespace detail {

inline double gauss(Rng& rng) {
  double u1 = rng.uniform(), u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(6.283185307179586 * u2);
}

inline double clamped_noise(Rng& rng, double sigma) {
  if (sigma <= 0) return 0;
  double v = gauss(rng) * sigma;
  return std::clamp(v, -2.5 * sigma, 2.5 * sigma);
}

struct SceneBuilder {
  const SceneSpec& spec;
  Rng& rng;
  std::vector<NucleusRecord> placed;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
  std::vector<std::uint8_t> occ;  // union of committed nucleus supports

  SceneBuilder(const SceneSpec& sp, Rng& rg)
      : spec(sp), rng(rg), occ(std::size_t(sp.height) * sp.width, 0) {}

  NucleusRecord sample_shape() {
    NucleusRecord n;
    double r = rng.uniform(spec.radius_min, spec.radius_max);
    double ecc = rng.uniform(spec.ecc_min, spec.ecc_max);
    n.rx = r * std::sqrt(ecc);
    n.ry = r / std::sqrt(ecc);
    n.theta = rng.uniform(0, 3.141592653589793);
    double u = rng.uniform();
    if (u < spec.mix_hyperchromatic) {
      n.phenotype = Phenotype::Hyperchromatic;
      n.level = rng.uniform(spec.hyper_lo, spec.hyper_hi);
    } else if (u < spec.mix_hyperchromatic + spec.mix_vesicular) {
      n.phenotype = Phenotype::Vesicular;
      n.level = rng.uniform(spec.ves_rim_lo, spec.ves_rim_hi);
      n.core_level = rng.uniform(spec.ves_core_lo, spec.ves_core_hi);
    } else {
      n.phenotype = Phenotype::Normal;
      n.level = rng.uniform(spec.normal_lo, spec.normal_hi);
    }
    return n;
  }

  double max_axis(const NucleusRecord& n) const { return std::max(n.rx, n.ry); }

  bool in_bounds(const NucleusRecord& n) const {
    double m = max_axis(n) + 1.0;
    return n.cy >= m && n.cx >= m && n.cy <= spec.height - 1 - m &&
           n.cx <= spec.width - 1 - m;
  }

  // True when any committed pixel lies within Chebyshev distance
  // `margin` of the candidate's support. A margin of 2 keeps distinct
  // placements from ever sharing pixels or touching 8-adjacently, so
  // the declared touching pairs are the only adjacent instances.
  bool near_occupied(const NucleusRecord& n, std::int64_t margin) const {
    std::int64_t y0 = std::int64_t(std::floor(n.cy - max_axis(n)));
    std::int64_t y1 = std::int64_t(std::ceil(n.cy + max_axis(n)));
    std::int64_t x0 = std::int64_t(std::floor(n.cx - max_axis(n)));
    std::int64_t x1 = std::int64_t(std::ceil(n.cx + max_axis(n)));
    for (std::int64_t y = y0; y <= y1; ++y)
      for (std::int64_t x = x0; x <= x1; ++x) {
        if (!n.contains(double(y), double(x))) continue;
        for (std::int64_t wy = y - margin; wy <= y + margin; ++wy)
          for (std::int64_t wx = x - margin; wx <= x + margin; ++wx) {
            if (wy < 0 || wx < 0 || wy >= std::int64_t(spec.height) ||
                wx >= std::int64_t(spec.width))
              continue;
            if (occ[std::size_t(wy) * spec.width + std::size_t(wx)]) return true;
          }
      }
    return false;
  }

  void stamp(const NucleusRecord& n) {
    std::int64_t y0 = std::int64_t(std::floor(n.cy - max_axis(n)));
    std::int64_t y1 = std::int64_t(std::ceil(n.cy + max_axis(n)));
    std::int64_t x0 = std::int64_t(std::floor(n.cx - max_axis(n)));
    std::int64_t x1 = std::int64_t(std::ceil(n.cx + max_axis(n)));
    for (std::int64_t y = std::max<std::int64_t>(y0, 0);
         y <= std::min<std::int64_t>(y1, spec.height - 1); ++y)
      for (std::int64_t x = std::max<std::int64_t>(x0, 0);
           x <= std::min<std::int64_t>(x1, spec.width - 1); ++x)
        if (n.contains(double(y), double(x)))
          occ[std::size_t(y) * spec.width + std::size_t(x)] = 1;
  }

  std::size_t raster_area(const NucleusRecord& n) const {
    std::size_t area = 0;
    std::int64_t y0 = std::int64_t(std::floor(n.cy - max_axis(n)));
    std::int64_t y1 = std::int64_t(std::ceil(n.cy + max_axis(n)));
    std::int64_t x0 = std::int64_t(std::floor(n.cx - max_axis(n)));
    std::int64_t x1 = std::int64_t(std::ceil(n.cx + max_axis(n)));
    for (std::int64_t y = y0; y <= y1; ++y)
      for (std::int64_t x = x0; x <= x1; ++x)
        if (n.contains(double(y), double(x))) ++area;
    return area;
  }

  std::size_t raster_overlap(const NucleusRecord& a, const NucleusRecord& b) const {
    std::size_t inter = 0;
    std::int64_t y0 = std::int64_t(std::floor(std::max(a.cy - max_axis(a), b.cy - max_axis(b))));
    std::int64_t y1 = std::int64_t(std::ceil(std::min(a.cy + max_axis(a), b.cy + max_axis(b))));
    std::int64_t x0 = std::int64_t(std::floor(std::max(a.cx - max_axis(a), b.cx - max_axis(b))));
    std::int64_t x1 = std::int64_t(std::ceil(std::min(a.cx + max_axis(a), b.cx + max_axis(b))));
    for (std::int64_t y = y0; y <= y1; ++y)
      for (std::int64_t x = x0; x <= x1; ++x)
        if (a.contains(double(y), double(x)) && b.contains(double(y), double(x))) ++inter;
    return inter;
  }

  bool place_single() {
    for (std::uint32_t attempt = 0; attempt < spec.max_place_attempts; ++attempt) {
      NucleusRecord n = sample_shape();
      n.cy = rng.uniform(0, spec.height - 1);
      n.cx = rng.uniform(0, spec.width - 1);
      if (!in_bounds(n) || near_occupied(n, 2)) continue;
      n.id = std::uint32_t(placed.size() + 1);
      placed.push_back(n);
      stamp(n);
      return true;
    }
    return false;
  }

  bool place_pair() {
    for (std::uint32_t attempt = 0; attempt < spec.max_place_attempts; ++attempt) {
      NucleusRecord a = sample_shape();
      a.cy = rng.uniform(0, spec.height - 1);
      a.cx = rng.uniform(0, spec.width - 1);
      if (!in_bounds(a) || near_occupied(a, 2)) continue;

      NucleusRecord b = sample_shape();
      // Touching neighbors come from the same cell population, so the
      // partner's size stays close to the first member's. Near-equal
      // lobes also give the pair a well-defined interior waist.
      double mean_a = std::sqrt(a.rx * a.ry), mean_b = std::sqrt(b.rx * b.ry);
      double target = std::clamp(mean_a * rng.uniform(0.85, 1.18),
                                 spec.radius_min, spec.radius_max);
      b.rx *= target / mean_b;
      b.ry *= target / mean_b;
      double phi = rng.uniform(0, 6.283185307179586);
      std::size_t area_a = raster_area(a);
      // walk b towards a until the overlap share enters the window
      bool ok = false;
      for (double dist = max_axis(a) + max_axis(b); dist > 1.0; dist -= 0.5) {
        b.cy = a.cy + dist * std::sin(phi);
        b.cx = a.cx + dist * std::cos(phi);
        if (!in_bounds(b)) continue;
        std::size_t area_b = raster_area(b);
        std::size_t smaller = std::min(area_a, area_b);
        if (smaller == 0) break;
        double share = double(raster_overlap(a, b)) / double(smaller);
        if (share > spec.overlap_max) break;  // walked too far in
        if (share >= spec.overlap_min) {
          ok = true;
          break;
        }
      }
      // occ still excludes a, so b is only tested against the others
      if (!ok || near_occupied(b, 2)) continue;
      a.id = std::uint32_t(placed.size() + 1);
      b.id = std::uint32_t(placed.size() + 2);
      placed.push_back(a);
      placed.push_back(b);
      stamp(a);
      stamp(b);
      pairs.emplace_back(a.id, b.id);
      return true;
    }
    return false;
  }
};

}  // namespace detail

// Builds one synthetic H&E-like scene: elliptical nuclei of the three
// phenotypes, a requested share of them in touching pairs, rendered
// through the Beer-Lambert stain model with eosin texture and additive
// concentration noise, then quantized to 8-bit RGB.
inline Scene generate_scene(const SceneSpec& spec, Rng rng,
                            const StainBasis& basis = {}) {
  if (spec.height < 16 || spec.width < 16)
    throw ShapeError("scene must be at least 16x16");

  detail::SceneBuilder builder(spec, rng);
  auto pair_count = std::uint32_t(std::llround(
      spec.touching_fraction * spec.nucleus_count / 2.0));
  for (std::uint32_t p = 0; p < pair_count; ++p) builder.place_pair();
  while (builder.placed.size() < spec.nucleus_count)
    if (!builder.place_single()) break;

  // Chromatin debris: small extranuclear hematoxylin specks, kept clear
  // of all nucleus supports. They are rendered texture, not instances,
  // and give the hematoxylin channel nucleus-like blobs that carry no
  // boundary ring.
  struct Speck {
    double cy, cx, r, level;
  };
  std::vector<Speck> specks;
  std::uint32_t n_specks =
      spec.debris_min +
      (spec.debris_max > spec.debris_min
           ? rng.below(spec.debris_max - spec.debris_min + 1)
           : 0);
  for (std::uint32_t k = 0; k < n_specks; ++k)
    for (std::uint32_t attempt = 0; attempt < spec.max_place_attempts; ++attempt) {
      Speck sp{rng.uniform(1.0, spec.height - 2.0),
               rng.uniform(1.0, spec.width - 2.0),
               rng.uniform(spec.debris_radius_min, spec.debris_radius_max),
               rng.uniform(spec.debris_level_lo, spec.debris_level_hi)};
      double pad = sp.r + 3.0;
      bool clear = true;
      for (std::int64_t y = std::int64_t(std::floor(sp.cy - pad));
           clear && y <= std::int64_t(std::ceil(sp.cy + pad)); ++y)
        for (std::int64_t x = std::int64_t(std::floor(sp.cx - pad));
             clear && x <= std::int64_t(std::ceil(sp.cx + pad)); ++x) {
          if (y < 0 || x < 0 || y >= std::int64_t(spec.height) ||
              x >= std::int64_t(spec.width))
            continue;
          double dy = double(y) - sp.cy, dx = double(x) - sp.cx;
          if (dy * dy + dx * dx <= pad * pad &&
              builder.occ[std::size_t(y) * spec.width + std::size_t(x)])
            clear = false;
        }
      if (!clear) continue;
      specks.push_back(sp);
      break;
    }

  Scene scene;
  scene.annotation.height = spec.height;
  scene.annotation.width = spec.width;
  scene.annotation.nuclei = builder.placed;
  scene.annotation.touching_pairs = builder.pairs;
  scene.labels = labels_from_annotation(scene.annotation);

  // renumber ids row-major so downstream id conventions hold
  LabelMap ordered = renumber_row_major(scene.labels);
  std::vector<std::uint32_t> remap(builder.placed.size() + 1, 0);
  for (std::size_t i = 0; i < scene.labels.ids.size(); ++i)
    if (scene.labels.ids[i] != 0) remap[scene.labels.ids[i]] = ordered.ids[i];
  scene.labels = ordered;
  for (auto& n : scene.annotation.nuclei) n.id = remap[n.id];
  for (auto& pr : scene.annotation.touching_pairs) {
    pr.first = remap[pr.first];
    pr.second = remap[pr.second];
    if (pr.first > pr.second) std::swap(pr.first, pr.second);
  }
  std::sort(scene.annotation.nuclei.begin(), scene.annotation.nuclei.end(),
            [](const NucleusRecord& a, const NucleusRecord& b) { return a.id < b.id; });
  std::sort(scene.annotation.touching_pairs.begin(),
            scene.annotation.touching_pairs.end());

  // hematoxylin and eosin concentration fields
  StainMaps<float> clean{Tensor<float>(Dims{1, 1, spec.height, spec.width}),
                         Tensor<float>(Dims{1, 1, spec.height, spec.width})};
  std::vector<const NucleusRecord*> by_id(scene.annotation.nuclei.size() + 1, nullptr);
  for (const auto& n : scene.annotation.nuclei) by_id[n.id] = &n;

  double f1y = 1 + rng.below(3), f1x = 1 + rng.below(3), p1 = rng.uniform(0, 6.2831853);
  double f2y = 2 + rng.below(3), f2x = 2 + rng.below(3), p2 = rng.uniform(0, 6.2831853);
  for (std::uint32_t y = 0; y < spec.height; ++y)
    for (std::uint32_t x = 0; x < spec.width; ++x) {
      std::uint32_t id = scene.labels.at(y, x);
      double ch = 0, ce;
      if (id == 0) {
        double tex = 0.5 * std::sin(6.2831853 * (f1y * y / spec.height +
                                                 f1x * x / spec.width) + p1) +
                     0.5 * std::sin(6.2831853 * (f2y * y / spec.height +
                                                 f2x * x / spec.width) + p2);
        ce = std::max(spec.eosin_base + spec.eosin_amplitude * tex, 0.0);
        for (const auto& sp : specks) {
          double dy = double(y) - sp.cy, dx = double(x) - sp.cx;
          double q = (dy * dy + dx * dx) / (sp.r * sp.r);
          if (q < 9.0) ch = std::max(ch, sp.level * std::exp(-1.5 * q));
        }
      } else {
        const NucleusRecord& n = *by_id[id];
        if (n.phenotype == Phenotype::Vesicular) {
          double rr = n.rho(double(y), double(x));
          double t = (rr - 1.0) / spec.ves_sigma;
          ch = n.core_level + (n.level - n.core_level) * std::exp(-t * t);
        } else {
          ch = n.level;
        }
        ce = spec.eosin_nucleus;
      }
      clean.hematoxylin.at(0, 0, y, x) = float(ch);
      clean.eosin.at(0, 0, y, x) = float(ce);
    }

  StainMaps<float> noisy = clean;
  for (std::size_t i = 0; i < noisy.hematoxylin.size(); ++i)
    noisy.hematoxylin[i] = float(std::max(
        0.0, double(noisy.hematoxylin[i]) + detail::clamped_noise(rng, spec.noise_sigma)));
  for (std::size_t i = 0; i < noisy.eosin.size(); ++i)
    noisy.eosin[i] = float(std::max(
        0.0, double(noisy.eosin[i]) + detail::clamped_noise(rng, spec.noise_sigma)));

  scene.true_stains = std::move(clean);
  scene.rgb = stain_reconstruct(noisy, basis);
  return scene;
}

}  // namespace nseg

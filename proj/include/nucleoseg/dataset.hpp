#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nucleoseg/errors.hpp"
#include "nucleoseg/image.hpp"
#include "nucleoseg/png_io.hpp"
#include "nucleoseg/rng.hpp"
#include "nucleoseg/scene.hpp"

namespace nseg {

inline nlohmann::json annotation_to_json(const SceneAnnotation& ann) {
  nlohmann::json j;
  j["height"] = ann.height;
  j["width"] = ann.width;
  j["nuclei"] = nlohmann::json::array();
  for (const auto& n : ann.nuclei) {
    nlohmann::json rec;
    rec["id"] = n.id;
    rec["phenotype"] = phenotype_name(n.phenotype);
    rec["center"] = {n.cy, n.cx};
    rec["axes"] = {n.ry, n.rx};
    rec["orientation"] = n.theta;
    rec["level"] = n.level;
    rec["core_level"] = n.core_level;
    j["nuclei"].push_back(std::move(rec));
  }
  j["touching_pairs"] = nlohmann::json::array();
  for (const auto& p : ann.touching_pairs)
    j["touching_pairs"].push_back({p.first, p.second});
  return j;
}

inline SceneAnnotation annotation_from_json(const nlohmann::json& j) {
  SceneAnnotation ann;
  try {
    ann.height = j.at("height").get<std::uint32_t>();
    ann.width = j.at("width").get<std::uint32_t>();
    for (const auto& rec : j.at("nuclei")) {
      NucleusRecord n;
      n.id = rec.at("id").get<std::uint32_t>();
      n.phenotype = phenotype_from_name(rec.at("phenotype").get<std::string>());
      n.cy = rec.at("center").at(0).get<double>();
      n.cx = rec.at("center").at(1).get<double>();
      n.ry = rec.at("axes").at(0).get<double>();
      n.rx = rec.at("axes").at(1).get<double>();
      n.theta = rec.at("orientation").get<double>();
      n.level = rec.at("level").get<double>();
      n.core_level = rec.at("core_level").get<double>();
      ann.nuclei.push_back(n);
    }
    for (const auto& p : j.at("touching_pairs"))
      ann.touching_pairs.emplace_back(p.at(0).get<std::uint32_t>(),
                                      p.at(1).get<std::uint32_t>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad annotation json: ") + e.what());
  }
  return ann;
}

inline void save_annotation(const std::filesystem::path& path,
                            const SceneAnnotation& ann) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path.string());
  os << annotation_to_json(ann).dump(2) << '\n';
}

inline SceneAnnotation load_annotation(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  return annotation_from_json(j);
}

// One dataset row. Paths are stored relative to the manifest location.
struct SampleRecord {
  std::string rgb_path;
  std::string label_path;
  std::string split;
};

// Annotation sidecars sit next to the image: scene_003.png -> scene_003.json
inline std::filesystem::path annotation_path_for(const std::filesystem::path& rgb) {
  std::filesystem::path p = rgb;
  p.replace_extension(".json");
  return p;
}

// Manifest rows are tab separated: rgb<TAB>labels<TAB>split. Blank lines
// and lines starting with '#' are skipped.
inline std::vector<SampleRecord> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read manifest " + path.string());
  std::vector<SampleRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    SampleRecord rec;
    if (!std::getline(ls, rec.rgb_path, '\t') ||
        !std::getline(ls, rec.label_path, '\t') ||
        !std::getline(ls, rec.split, '\t'))
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": expected rgb<TAB>labels<TAB>split");
    if (rec.split != "train" && rec.split != "test")
      throw FormatError(path.string() + ":" + std::to_string(lineno) +
                        ": unknown split '" + rec.split + "'");
    records.push_back(std::move(rec));
  }
  return records;
}

inline void write_manifest(const std::filesystem::path& path,
                           const std::vector<SampleRecord>& records) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write manifest " + path.string());
  for (const auto& rec : records)
    os << rec.rgb_path << '\t' << rec.label_path << '\t' << rec.split << '\n';
}

struct LoadedSample {
  std::string name;
  std::string split;
  ImageU8 rgb;
  LabelMap labels;
  SceneAnnotation annotation;  // height==0 when no sidecar exists
};

inline LoadedSample load_sample(const SampleRecord& rec,
                                const std::filesystem::path& base_dir) {
  LoadedSample s;
  std::filesystem::path rgb_path = base_dir / rec.rgb_path;
  s.name = rgb_path.stem().string();
  s.split = rec.split;
  s.rgb = read_png_rgb8(rgb_path);
  s.labels = read_png_label16(base_dir / rec.label_path);
  if (s.labels.h != s.rgb.h || s.labels.w != s.rgb.w)
    throw DataError(rec.label_path + ": label map size does not match image");
  std::filesystem::path ann_path = annotation_path_for(rgb_path);
  if (std::filesystem::exists(ann_path)) {
    s.annotation = load_annotation(ann_path);
    if (s.annotation.height != s.rgb.h || s.annotation.width != s.rgb.w)
      throw DataError(ann_path.string() + ": annotation size does not match image");
  }
  return s;
}

inline std::vector<LoadedSample> load_split(const std::filesystem::path& manifest,
                                            const std::string& split) {
  std::filesystem::path base = manifest.parent_path();
  std::vector<LoadedSample> out;
  for (const auto& rec : read_manifest(manifest))
    if (split.empty() || rec.split == split) out.push_back(load_sample(rec, base));
  if (out.empty())
    throw DataError("manifest " + manifest.string() + " has no '" + split +
                    "' samples");
  return out;
}

// Image-level split: shuffles record order with the given stream and
// marks round(ratio * n) of them train, the rest test.
inline void split_dataset(std::vector<SampleRecord>& records, double train_ratio,
                          Rng rng) {
  if (records.empty()) throw DataError("cannot split an empty dataset");
  std::vector<std::size_t> order(records.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.below(i)]);
  auto train_n = std::size_t(std::llround(train_ratio * double(records.size())));
  if (train_n == 0 || train_n >= records.size())
    throw DataError("split ratio leaves one side empty");
  for (std::size_t i = 0; i < order.size(); ++i)
    records[order[i]].split = i < train_n ? "train" : "test";
}

// Cuts a sample into a floor(h/ph) x floor(w/pw) grid of patches.
// Instance ids are renumbered row-major per patch, annotations keep only
// nuclei that still own pixels, and touching pairs survive only when the
// two members are still 8-adjacent inside the patch.
inline std::vector<LoadedSample> tile_patches(const LoadedSample& sample,
                                              std::uint32_t ph, std::uint32_t pw) {
  if (ph == 0 || pw == 0) throw ShapeError("patch size must be positive");
  if (sample.rgb.h < ph || sample.rgb.w < pw)
    throw ShapeError("sample smaller than patch size");
  std::vector<LoadedSample> patches;
  for (std::uint32_t ty = 0; ty + ph <= sample.rgb.h; ty += ph)
    for (std::uint32_t tx = 0; tx + pw <= sample.rgb.w; tx += pw) {
      LoadedSample p;
      p.name = sample.name + "_r" + std::to_string(ty / ph) + "_c" +
               std::to_string(tx / pw);
      p.split = sample.split;
      p.rgb = ImageU8(ph, pw, sample.rgb.channels);
      for (std::uint32_t y = 0; y < ph; ++y)
        for (std::uint32_t x = 0; x < pw; ++x)
          for (std::uint32_t c = 0; c < sample.rgb.channels; ++c)
            p.rgb.at(y, x, c) = sample.rgb.at(ty + y, tx + x, c);

      LabelMap crop(ph, pw);
      for (std::uint32_t y = 0; y < ph; ++y)
        for (std::uint32_t x = 0; x < pw; ++x)
          crop.at(y, x) = sample.labels.at(ty + y, tx + x);
      p.labels = renumber_row_major(crop);

      if (sample.annotation.height != 0) {
        std::vector<std::uint32_t> remap(sample.annotation.nuclei.size() + 1, 0);
        for (std::size_t i = 0; i < crop.ids.size(); ++i)
          if (crop.ids[i] != 0) remap[crop.ids[i]] = p.labels.ids[i];
        p.annotation.height = ph;
        p.annotation.width = pw;
        for (const auto& n : sample.annotation.nuclei) {
          if (n.id >= remap.size() || remap[n.id] == 0) continue;
          NucleusRecord moved = n;
          moved.id = remap[n.id];
          moved.cy -= double(ty);
          moved.cx -= double(tx);
          p.annotation.nuclei.push_back(moved);
        }
        std::sort(p.annotation.nuclei.begin(), p.annotation.nuclei.end(),
                  [](const NucleusRecord& a, const NucleusRecord& b) {
                    return a.id < b.id;
                  });
        for (const auto& pr : sample.annotation.touching_pairs) {
          if (pr.first >= remap.size() || pr.second >= remap.size()) continue;
          std::uint32_t na = remap[pr.first], nb = remap[pr.second];
          if (na == 0 || nb == 0) continue;
          if (na > nb) std::swap(na, nb);
          bool adjacent = false;
          for (std::uint32_t y = 0; y < ph && !adjacent; ++y)
            for (std::uint32_t x = 0; x < pw && !adjacent; ++x) {
              if (p.labels.at(y, x) != na) continue;
              for (int dy = -1; dy <= 1 && !adjacent; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                  std::int64_t yy = std::int64_t(y) + dy, xx = std::int64_t(x) + dx;
                  if (yy < 0 || xx < 0 || yy >= std::int64_t(ph) ||
                      xx >= std::int64_t(pw))
                    continue;
                  if (p.labels.at(std::uint32_t(yy), std::uint32_t(xx)) == nb) {
                    adjacent = true;
                    break;
                  }
                }
            }
          if (adjacent) p.annotation.touching_pairs.emplace_back(na, nb);
        }
        std::sort(p.annotation.touching_pairs.begin(),
                  p.annotation.touching_pairs.end());
      }
      patches.push_back(std::move(p));
    }
  return patches;
}

}  // namespace nseg

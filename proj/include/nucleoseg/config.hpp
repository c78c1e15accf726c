#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "nucleoseg/errors.hpp"
#include "nucleoseg/scene.hpp"
#include "nucleoseg/stain.hpp"
#include "nucleoseg/train.hpp"
#include "nucleoseg/watershed.hpp"

namespace nseg {

// Every tunable of the pipeline in one place. Field defaults are the
// published operating point; config files override selectively.
struct PipelineConfig {
  StainBasis stain;
  double width_multiplier = 1.0;        // model.width_multiplier
  double dropout = 0.1;                 // model.dropout
  std::uint32_t boundary_thickness = 2; // model.boundary_thickness
  TrainConfig train;                    // train.*
  std::uint32_t train_patch_h = 32;     // train.patch_height (0 = whole image)
  std::uint32_t train_patch_w = 32;     // train.patch_width
  std::uint64_t seed = 7;               // train.seed
  PostConfig post;                      // post.*
  double eval_iou = 0.5;                // eval.iou_threshold
  SceneSpec scene;                      // scene.*
  double train_ratio = 0.5;             // scene.train_ratio
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& v) {
  std::size_t used = 0;
  double d = std::stod(v, &used);
  if (used != v.size()) throw std::invalid_argument(v);
  return d;
}

inline std::uint64_t parse_u64(const std::string& v) {
  std::size_t used = 0;
  unsigned long long u = std::stoull(v, &used);
  if (used != v.size() || (!v.empty() && v[0] == '-'))
    throw std::invalid_argument(v);
  return u;
}

inline std::array<double, 3> parse_vec3(const std::string& v) {
  std::istringstream is(v);
  std::array<double, 3> a{};
  if (!(is >> a[0] >> a[1] >> a[2])) throw std::invalid_argument(v);
  std::string rest;
  if (is >> rest) throw std::invalid_argument(v);
  return a;
}

using ConfigSetter = std::function<void(PipelineConfig&, const std::string&)>;

inline const std::map<std::string, ConfigSetter>& config_schema() {
  static const std::map<std::string, ConfigSetter> schema = [] {
    std::map<std::string, ConfigSetter> m;
    auto dbl = [&m](const std::string& key, double PipelineConfig::* field) {
      m[key] = [field](PipelineConfig& c, const std::string& v) {
        c.*field = parse_double(v);
      };
    };
    m["stain.hematoxylin"] = [](PipelineConfig& c, const std::string& v) {
      c.stain.hematoxylin = parse_vec3(v);
    };
    m["stain.eosin"] = [](PipelineConfig& c, const std::string& v) {
      c.stain.eosin = parse_vec3(v);
    };
    m["stain.background"] = [](PipelineConfig& c, const std::string& v) {
      c.stain.background = parse_vec3(v);
    };
    m["stain.od_floor"] = [](PipelineConfig& c, const std::string& v) {
      c.stain.od_floor = parse_double(v);
    };
    dbl("model.width_multiplier", &PipelineConfig::width_multiplier);
    dbl("model.dropout", &PipelineConfig::dropout);
    m["model.boundary_thickness"] = [](PipelineConfig& c, const std::string& v) {
      c.boundary_thickness = std::uint32_t(parse_u64(v));
    };
    m["train.epochs"] = [](PipelineConfig& c, const std::string& v) {
      c.train.epochs = std::uint32_t(parse_u64(v));
    };
    m["train.patch_height"] = [](PipelineConfig& c, const std::string& v) {
      c.train_patch_h = std::uint32_t(parse_u64(v));
    };
    m["train.patch_width"] = [](PipelineConfig& c, const std::string& v) {
      c.train_patch_w = std::uint32_t(parse_u64(v));
    };
    m["train.batch_size"] = [](PipelineConfig& c, const std::string& v) {
      c.train.batch_size = std::uint32_t(parse_u64(v));
    };
    m["train.lr"] = [](PipelineConfig& c, const std::string& v) {
      c.train.adam.lr = parse_double(v);
    };
    m["train.l2"] = [](PipelineConfig& c, const std::string& v) {
      c.train.adam.l2 = parse_double(v);
    };
    m["train.beta1"] = [](PipelineConfig& c, const std::string& v) {
      c.train.adam.beta1 = parse_double(v);
    };
    m["train.beta2"] = [](PipelineConfig& c, const std::string& v) {
      c.train.adam.beta2 = parse_double(v);
    };
    m["train.epsilon"] = [](PipelineConfig& c, const std::string& v) {
      c.train.adam.eps = parse_double(v);
    };
    m["train.seed"] = [](PipelineConfig& c, const std::string& v) {
      c.seed = parse_u64(v);
    };
    m["train.class_weights"] = [](PipelineConfig& c, const std::string& v) {
      if (v == "auto") {
        c.train.class_weights.clear();
        return;
      }
      std::istringstream is(v);
      std::vector<double> w;
      double x;
      while (is >> x) w.push_back(x);
      if (!is.eof() || w.size() != kNumClasses) throw std::invalid_argument(v);
      c.train.class_weights = w;
    };
    m["post.prob_threshold"] = [](PipelineConfig& c, const std::string& v) {
      c.post.prob_threshold = parse_double(v);
    };
    m["post.marker_h"] = [](PipelineConfig& c, const std::string& v) {
      c.post.marker_h = std::int64_t(parse_u64(v));
    };
    m["post.min_area"] = [](PipelineConfig& c, const std::string& v) {
      c.post.min_area = std::size_t(parse_u64(v));
    };
    m["eval.iou_threshold"] = [](PipelineConfig& c, const std::string& v) {
      c.eval_iou = parse_double(v);
    };
    m["scene.height"] = [](PipelineConfig& c, const std::string& v) {
      c.scene.height = std::uint32_t(parse_u64(v));
    };
    m["scene.width"] = [](PipelineConfig& c, const std::string& v) {
      c.scene.width = std::uint32_t(parse_u64(v));
    };
    m["scene.nucleus_count"] = [](PipelineConfig& c, const std::string& v) {
      c.scene.nucleus_count = std::uint32_t(parse_u64(v));
    };
    auto scene_dbl = [&m](const std::string& key, double SceneSpec::* field) {
      m[key] = [field](PipelineConfig& c, const std::string& v) {
        c.scene.*field = parse_double(v);
      };
    };
    scene_dbl("scene.touching_fraction", &SceneSpec::touching_fraction);
    scene_dbl("scene.radius_min", &SceneSpec::radius_min);
    scene_dbl("scene.radius_max", &SceneSpec::radius_max);
    scene_dbl("scene.ecc_min", &SceneSpec::ecc_min);
    scene_dbl("scene.ecc_max", &SceneSpec::ecc_max);
    scene_dbl("scene.mix_hyperchromatic", &SceneSpec::mix_hyperchromatic);
    scene_dbl("scene.mix_vesicular", &SceneSpec::mix_vesicular);
    scene_dbl("scene.noise_sigma", &SceneSpec::noise_sigma);
    scene_dbl("scene.eosin_base", &SceneSpec::eosin_base);
    scene_dbl("scene.eosin_amplitude", &SceneSpec::eosin_amplitude);
    scene_dbl("scene.eosin_nucleus", &SceneSpec::eosin_nucleus);
    dbl("scene.train_ratio", &PipelineConfig::train_ratio);
    return m;
  }();
  return schema;
}

}  // namespace detail

// Flat "section.key = value" lines. '#' starts a comment, blank lines
// are skipped, and unknown keys are rejected so typos cannot silently
// fall back to defaults.
inline void apply_config(std::istream& is, PipelineConfig& cfg,
                         const std::string& origin = "config") {
  const auto& schema = detail::config_schema();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::string text = detail::trim(line);
    if (text.empty()) continue;
    std::string where = origin + ":" + std::to_string(lineno);
    std::size_t eq = text.find('=');
    if (eq == std::string::npos)
      throw FormatError(where + ": expected key = value");
    std::string key = detail::trim(text.substr(0, eq));
    std::string value = detail::trim(text.substr(eq + 1));
    auto it = schema.find(key);
    if (it == schema.end())
      throw FormatError(where + ": unknown key '" + key + "'");
    try {
      it->second(cfg, value);
    } catch (const std::exception&) {
      throw FormatError(where + ": bad value '" + value + "' for " + key);
    }
  }
}

inline void apply_config_file(const std::filesystem::path& path,
                              PipelineConfig& cfg) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read config " + path.string());
  apply_config(is, cfg, path.string());
}

}  // namespace nseg

#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "nucleoseg/config.hpp"
#include "nucleoseg/dataset.hpp"
#include "nucleoseg/enet.hpp"
#include "nucleoseg/image.hpp"
#include "nucleoseg/labels.hpp"
#include "nucleoseg/metrics.hpp"
#include "nucleoseg/stain.hpp"
#include "nucleoseg/train.hpp"
#include "nucleoseg/watershed.hpp"

namespace nseg {

// Stage-one input: the hematoxylin concentration map, normalized per
// image at its 99th percentile so staining strength differences do not
// shift the network's operating range.
inline Tensor<float> hematoxylin_input(const ImageU8& rgb,
                                       const StainBasis& basis = {}) {
  return normalize_p99(stain_decompose<float>(rgb, basis).hematoxylin);
}

// Luminance-only input, kept as the ablation baseline.
inline Tensor<float> grayscale_input(const ImageU8& rgb) {
  return grayscale_tensor<float>(rgb);
}

inline LabelBatch region_targets(const LabelMap& lm) {
  LabelBatch lb;
  lb.n = 1;
  lb.h = lm.h;
  lb.w = lm.w;
  lb.ids.resize(lm.ids.size());
  for (std::size_t i = 0; i < lm.ids.size(); ++i)
    lb.ids[i] = lm.ids[i] ? 1 : 0;
  return lb;
}

inline LabelBatch boundary_targets(const LabelMap& lm, std::uint32_t thickness) {
  BinaryMask band = boundary_band(lm, thickness);
  LabelBatch lb;
  lb.n = 1;
  lb.h = lm.h;
  lb.w = lm.w;
  lb.ids.resize(band.v.size());
  for (std::size_t i = 0; i < band.v.size(); ++i) lb.ids[i] = band.v[i] ? 1 : 0;
  return lb;
}

// Inference-mode forward returning the foreground probability plane.
inline Tensor<float> infer_prob(EnetModel<float>& model,
                                const Tensor<float>& input) {
  Rng quiet(0);  // inference consumes no randomness
  auto out = model.forward(input, false, quiet, nullptr);
  return slice_channels(out.probs, 1, 2);
}

struct FusedModels {
  EnetModel<float> region, boundary, fusion;
};

struct FusedInference {
  Tensor<float> region_prob, boundary_prob, fused_prob;  // each (1,1,h,w)
  LabelMap instances;
};

inline FusedInference run_fused(FusedModels& models, const ImageU8& rgb,
                                const PipelineConfig& cfg) {
  FusedInference out;
  Tensor<float> h_in = hematoxylin_input(rgb, cfg.stain);
  out.region_prob = infer_prob(models.region, h_in);
  out.boundary_prob = infer_prob(models.boundary, h_in);
  out.fused_prob = infer_prob(
      models.fusion, concat_channels(out.region_prob, out.boundary_prob));
  out.instances = segment_instances(out.fused_prob, cfg.post);
  return out;
}

struct PipelineLogs {
  std::vector<StepLog> region, boundary, fusion;
};

// Training runs on non-overlapping crops cut from each sample, which
// multiplies the optimizer steps an epoch budget buys. Inputs and
// targets are computed on the whole scene before cropping, so the crops
// carry exactly the statistics inference-time inputs have (per-image
// normalization, no padding borders inside a scene, no label bands
// along cut lines). Samples smaller than the configured patch pass
// through whole, so tiny fixtures and full-frame training (patch 0)
// share one code path. The crop grid matches tile_patches: top-left
// anchored, partial border tiles dropped.
inline void append_training_crops(std::vector<TrainSample>& out,
                                  const Tensor<float>& input,
                                  const LabelBatch& labels, std::uint32_t ph,
                                  std::uint32_t pw) {
  Dims d = input.dims();
  if (d.n != 1 || labels.n != 1 || labels.h != d.h || labels.w != d.w)
    throw ShapeError("append_training_crops: input and label dims differ");
  if (ph == 0 || pw == 0 || d.h < ph || d.w < pw) {
    out.push_back({input, labels});
    return;
  }
  for (std::uint32_t y0 = 0; y0 + ph <= d.h; y0 += ph)
    for (std::uint32_t x0 = 0; x0 + pw <= d.w; x0 += pw) {
      Tensor<float> in(Dims{1, d.c, ph, pw});
      LabelBatch lb;
      lb.n = 1;
      lb.h = ph;
      lb.w = pw;
      lb.ids.resize(std::size_t(ph) * pw);
      for (std::uint32_t c = 0; c < d.c; ++c)
        for (std::uint32_t y = 0; y < ph; ++y)
          for (std::uint32_t x = 0; x < pw; ++x)
            in.at(0, c, y, x) = input.at(0, c, y0 + y, x0 + x);
      for (std::uint32_t y = 0; y < ph; ++y)
        for (std::uint32_t x = 0; x < pw; ++x)
          lb.ids[std::size_t(y) * pw + x] =
              labels.ids[std::size_t(y0 + y) * d.w + (x0 + x)];
      out.push_back({std::move(in), std::move(lb)});
    }
}

// Two-stage schedule: region and boundary networks learn from the
// hematoxylin channel first; the fusion network then learns from their
// frozen inference-mode probability maps, generated over the whole
// training scenes so the fusion inputs match what run_fused produces.
// Every stream is derived (not consumed) from the root seed, so stage
// outcomes do not depend on the order stages run in.
inline PipelineLogs train_fused_pipeline(FusedModels& models,
                                         const std::vector<LoadedSample>& data,
                                         const PipelineConfig& cfg,
                                         std::ostream* progress = nullptr) {
  if (data.empty()) throw DataError("no training samples");
  std::vector<Tensor<float>> scene_inputs;
  std::vector<TrainSample> region_data, boundary_data;
  for (const auto& s : data) {
    Tensor<float> input = hematoxylin_input(s.rgb, cfg.stain);
    append_training_crops(region_data, input, region_targets(s.labels),
                          cfg.train_patch_h, cfg.train_patch_w);
    append_training_crops(boundary_data, input,
                          boundary_targets(s.labels, cfg.boundary_thickness),
                          cfg.train_patch_h, cfg.train_patch_w);
    scene_inputs.push_back(std::move(input));
  }

  Rng root(cfg.seed);
  PipelineLogs logs;
  models.region = EnetModel<float>(Role::Region, cfg.width_multiplier, 1, cfg.dropout);
  models.region.init(root.derive(10));
  if (progress) (*progress) << "[region] training\n";
  logs.region = train_network(models.region, region_data, cfg.train,
                              root.derive(11), progress);

  models.boundary = EnetModel<float>(Role::Boundary, cfg.width_multiplier, 1, cfg.dropout);
  models.boundary.init(root.derive(20));
  if (progress) (*progress) << "[boundary] training\n";
  logs.boundary = train_network(models.boundary, boundary_data, cfg.train,
                                root.derive(21), progress);

  std::vector<TrainSample> fusion_data;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Tensor<float> rp = infer_prob(models.region, scene_inputs[i]);
    Tensor<float> bp = infer_prob(models.boundary, scene_inputs[i]);
    append_training_crops(fusion_data, concat_channels(rp, bp),
                          region_targets(data[i].labels), cfg.train_patch_h,
                          cfg.train_patch_w);
  }
  models.fusion = EnetModel<float>(Role::Fusion, cfg.width_multiplier, 2, cfg.dropout);
  models.fusion.init(root.derive(30));
  if (progress) (*progress) << "[fusion] training\n";
  logs.fusion = train_network(models.fusion, fusion_data, cfg.train,
                              root.derive(31), progress);
  return logs;
}

// Connected-component instances from a thresholded probability map;
// the ablation that shows what the watershed stage adds.
inline LabelMap cc_instances(const Tensor<float>& fg_prob, const PostConfig& cfg) {
  Dims d = fg_prob.dims();
  if (d.n != 1 || d.c != 1)
    throw ShapeError("cc_instances wants a (1,1,h,w) probability map");
  BinaryMask mask(d.h, d.w);
  for (std::uint32_t y = 0; y < d.h; ++y)
    for (std::uint32_t x = 0; x < d.w; ++x)
      mask.at(y, x) = fg_prob.at(0, 0, y, x) >= float(cfg.prob_threshold) ? 1 : 0;
  return finalize_labels(connected_components(mask, 8), cfg.min_area);
}

struct MethodEval {
  PixelCounts px;
  SeparationCounts sep;
};

struct PipelineEval {
  MethodEval region_cc;   // region network alone, components as instances
  MethodEval fused_cc;    // fused map, components as instances
  MethodEval fused_ws;    // fused map through the watershed stage

  std::vector<EvalRow> rows() const {
    return {{"region+cc", region_cc.px, region_cc.sep},
            {"fused+cc", fused_cc.px, fused_cc.sep},
            {"fused+watershed", fused_ws.px, fused_ws.sep}};
  }
};

inline void accumulate_method(MethodEval& m, const LabelMap& pred,
                              const LoadedSample& sample, double iou_threshold) {
  m.px += pixel_counts(foreground_of(pred), foreground_of(sample.labels));
  if (sample.annotation.height != 0 && !sample.annotation.touching_pairs.empty())
    m.sep += separation_counts(pred, sample.labels,
                               sample.annotation.touching_pairs, iou_threshold);
}

inline PipelineEval evaluate_pipeline(FusedModels& models,
                                      const std::vector<LoadedSample>& data,
                                      const PipelineConfig& cfg) {
  if (data.empty()) throw DataError("no evaluation samples");
  PipelineEval ev;
  for (const auto& s : data) {
    FusedInference inf = run_fused(models, s.rgb, cfg);
    accumulate_method(ev.region_cc, cc_instances(inf.region_prob, cfg.post), s,
                      cfg.eval_iou);
    accumulate_method(ev.fused_cc, cc_instances(inf.fused_prob, cfg.post), s,
                      cfg.eval_iou);
    accumulate_method(ev.fused_ws, inf.instances, s, cfg.eval_iou);
  }
  return ev;
}

}  // namespace nseg

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "nucleoseg/checkpoint.hpp"
#include "nucleoseg/pipeline.hpp"
#include "nucleoseg/scene.hpp"
#include "nucleoseg/train.hpp"

namespace {

using namespace nseg;
namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  fs::path dir = fs::path(testing::TempDir()) / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

TEST(Train, InverseFrequencyWeightsBalanceClasses) {
  TrainSample s;
  s.input = Tensor<float>(Dims{1, 1, 2, 4});
  s.labels.n = 1;
  s.labels.h = 2;
  s.labels.w = 4;
  s.labels.ids = {0, 0, 0, 0, 0, 0, 1, 1};  // 6 background, 2 foreground
  auto w = inverse_frequency_weights({s}, 2);
  ASSERT_EQ(w.size(), 2u);
  EXPECT_DOUBLE_EQ(w[0], 8.0 / (2.0 * 6.0));
  EXPECT_DOUBLE_EQ(w[1], 8.0 / (2.0 * 2.0));

  s.labels.ids = {0, 0, 0, 0, 0, 0, 0, 0};
  auto w2 = inverse_frequency_weights({s}, 2);
  EXPECT_DOUBLE_EQ(w2[1], 0.0);  // absent class must not divide by zero

  s.labels.ids[0] = 7;
  EXPECT_THROW(inverse_frequency_weights({s}, 2), DataError);
}

// A rule the network can nail quickly: smooth Gaussian bumps, with
// foreground wherever the field is bright. Spatially coherent, so it
// survives the encoder's downsampling.
std::vector<TrainSample> threshold_problem(std::uint32_t n, std::uint32_t hw,
                                           std::uint64_t seed) {
  std::vector<TrainSample> data;
  Rng rng(seed);
  for (std::uint32_t i = 0; i < n; ++i) {
    TrainSample s;
    s.input = Tensor<float>(Dims{1, 1, hw, hw});
    for (int k = 0; k < 3; ++k) {
      double cy = rng.uniform(3, hw - 4), cx = rng.uniform(3, hw - 4);
      for (std::uint32_t y = 0; y < hw; ++y)
        for (std::uint32_t x = 0; x < hw; ++x) {
          double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
          s.input.at(0, 0, y, x) += float(std::exp(-d2 / 18.0));
        }
    }
    s.labels.n = 1;
    s.labels.h = hw;
    s.labels.w = hw;
    s.labels.ids.resize(std::size_t(hw) * hw);
    for (std::size_t p = 0; p < s.labels.ids.size(); ++p)
      s.labels.ids[p] = s.input[p] > 0.45f ? 1 : 0;
    data.push_back(std::move(s));
  }
  return data;
}

TEST(Train, LossDropsOnLearnableProblem) {
  auto data = threshold_problem(4, 16, 99);
  EnetModel<float> model(Role::Region, 0.25, 1, 0.05);
  Rng root(42);
  model.init(root.derive(0));
  TrainConfig cfg;
  cfg.epochs = 80;
  cfg.batch_size = 4;
  cfg.adam.lr = 1e-2;
  auto logs = train_network(model, data, cfg, root.derive(1));
  ASSERT_EQ(logs.size(), 80u);  // one step per epoch at batch 4
  EXPECT_EQ(logs.front().step, 1u);
  EXPECT_EQ(logs.back().step, 80u);
  double first = logs.front().loss, last = logs.back().loss;
  EXPECT_LT(last, 0.35 * first) << "first " << first << " last " << last;
  for (const auto& l : logs) {
    EXPECT_TRUE(std::isfinite(l.loss));
    EXPECT_GE(l.accuracy, 0.0);
    EXPECT_LE(l.accuracy, 1.0);
  }
}

TEST(Train, BitwiseRepeatableAcrossRuns) {
  auto data = threshold_problem(3, 12, 17);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 2;

  auto run = [&](std::vector<float>& flat) {
    EnetModel<float> model(Role::Region, 0.25, 1, 0.1);
    Rng root(5);
    model.init(root.derive(0));
    auto logs = train_network(model, data, cfg, root.derive(1));
    for (auto& p : model.params())
      flat.insert(flat.end(), p.tensor->data(),
                  p.tensor->data() + p.tensor->size());
    return logs;
  };
  std::vector<float> w1, w2;
  auto l1 = run(w1);
  auto l2 = run(w2);
  ASSERT_EQ(w1.size(), w2.size());
  EXPECT_EQ(std::memcmp(w1.data(), w2.data(), w1.size() * sizeof(float)), 0);
  ASSERT_EQ(l1.size(), l2.size());
  for (std::size_t i = 0; i < l1.size(); ++i) {
    EXPECT_EQ(l1[i].loss, l2[i].loss);
    EXPECT_EQ(l1[i].accuracy, l2[i].accuracy);
  }
}

TEST(Train, RejectsBadBatches) {
  auto data = threshold_problem(2, 8, 1);
  EnetModel<float> model(Role::Region, 0.25, 1, 0.1);
  TrainConfig cfg;
  EXPECT_THROW(train_network(model, {}, cfg, Rng(1)), DataError);
  auto mixed = data;
  mixed.push_back(threshold_problem(1, 10, 2)[0]);
  EXPECT_THROW(train_network(model, mixed, cfg, Rng(1)), ShapeError);
  cfg.batch_size = 0;
  EXPECT_THROW(train_network(model, data, cfg, Rng(1)), ShapeError);
}

TEST(Train, LogWriterEmitsCsv) {
  fs::path dir = temp_dir("logs");
  write_train_log(dir / "t.csv", {{1, 0.5, 0.25}, {2, 0.25, 0.75}});
  std::ifstream is(dir / "t.csv");
  std::string line;
  std::getline(is, line);
  EXPECT_EQ(line, "step,loss,accuracy");
  std::getline(is, line);
  EXPECT_EQ(line, "1,0.5,0.25");
  std::getline(is, line);
  EXPECT_EQ(line, "2,0.25,0.75");
}

TEST(Checkpoint, RoundTripIsBitwise) {
  fs::path dir = temp_dir("ckpt");
  auto data = threshold_problem(2, 12, 55);
  EnetModel<float> model(Role::Fusion, 0.5, 1, 0.2);
  Rng root(9);
  model.init(root.derive(0));
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 2;
  train_network(model, data, cfg, root.derive(1));  // move BN stats off init

  save_checkpoint(dir / "m.ckpt", model);
  EnetModel<float> back = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(back.role, Role::Fusion);
  EXPECT_EQ(back.width_multiplier, 0.5);
  EXPECT_EQ(back.input_c, 1u);
  EXPECT_EQ(back.dropout_rate, 0.2);

  auto pa = model.params();
  auto pb = back.params();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].name, pb[i].name);
    ASSERT_TRUE(pa[i].tensor->dims() == pb[i].tensor->dims());
    EXPECT_EQ(std::memcmp(pa[i].tensor->data(), pb[i].tensor->data(),
                          pa[i].tensor->size() * sizeof(float)),
              0)
        << pa[i].name;
  }

  Rng quiet(0);
  Tensor<float> x = Tensor<float>::uniform(Dims{1, 1, 12, 12}, quiet, 0, 1);
  Rng r1(0), r2(0);
  auto ya = model.forward(x, false, r1, nullptr);
  auto yb = back.forward(x, false, r2, nullptr);
  EXPECT_EQ(std::memcmp(ya.logits.data(), yb.logits.data(),
                        ya.logits.size() * sizeof(float)),
            0);
}

TEST(Checkpoint, RejectsTamperedFiles) {
  fs::path dir = temp_dir("ckpt_bad");
  EnetModel<float> model(Role::Region, 0.25, 1, 0.1);
  model.init(Rng(3));
  save_checkpoint(dir / "m.ckpt", model);

  EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), DataError);

  std::ifstream is(dir / "m.ckpt", std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  std::string bytes = ss.str();

  std::string wrong_magic = bytes;
  wrong_magic[0] = 'X';
  std::ofstream(dir / "magic.ckpt", std::ios::binary) << wrong_magic;
  EXPECT_THROW(load_checkpoint(dir / "magic.ckpt"), FormatError);

  std::string renamed = bytes;
  auto pos = renamed.find("enc1_down");
  ASSERT_NE(pos, std::string::npos);
  renamed.replace(pos, 9, "enc9_down");
  std::ofstream(dir / "renamed.ckpt", std::ios::binary) << renamed;
  EXPECT_THROW(load_checkpoint(dir / "renamed.ckpt"), FormatError);

  std::string truncated = bytes.substr(0, bytes.size() - 40);
  std::ofstream(dir / "trunc.ckpt", std::ios::binary) << truncated;
  EXPECT_THROW(load_checkpoint(dir / "trunc.ckpt"), FormatError);
}

std::vector<LoadedSample> tiny_dataset(std::uint32_t count, std::uint64_t seed) {
  SceneSpec spec;
  spec.height = 32;
  spec.width = 32;
  spec.nucleus_count = 3;
  spec.radius_min = 3.0;
  spec.radius_max = 4.5;
  spec.touching_fraction = 0.7;
  Rng root(seed);
  std::vector<LoadedSample> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    Scene s = generate_scene(spec, root.derive(i));
    LoadedSample ls;
    ls.name = "tiny_" + std::to_string(i);
    ls.split = "train";
    ls.rgb = std::move(s.rgb);
    ls.labels = std::move(s.labels);
    ls.annotation = std::move(s.annotation);
    out.push_back(std::move(ls));
  }
  return out;
}

TEST(Pipeline, TargetsComeFromLabels) {
  auto data = tiny_dataset(1, 4);
  LabelBatch region = region_targets(data[0].labels);
  LabelBatch boundary = boundary_targets(data[0].labels, 2);
  ASSERT_EQ(region.ids.size(), data[0].labels.ids.size());
  std::size_t region_fg = 0, boundary_fg = 0;
  for (std::size_t i = 0; i < region.ids.size(); ++i) {
    EXPECT_EQ(region.ids[i], data[0].labels.ids[i] ? 1 : 0);
    region_fg += region.ids[i];
    boundary_fg += boundary.ids[i];
    if (boundary.ids[i]) EXPECT_EQ(region.ids[i], 1);  // band stays inside fg
  }
  EXPECT_GT(region_fg, 0u);
  EXPECT_GT(boundary_fg, 0u);
  EXPECT_LT(boundary_fg, region_fg);
}

TEST(Pipeline, FusedTrainingAndInferenceEndToEnd) {
  auto data = tiny_dataset(4, 77);
  PipelineConfig cfg;
  cfg.width_multiplier = 0.25;
  cfg.seed = 13;
  cfg.train.epochs = 2;
  cfg.train.batch_size = 2;
  cfg.post.min_area = 8;

  FusedModels models;
  PipelineLogs logs = train_fused_pipeline(models, data, cfg);
  EXPECT_EQ(logs.region.size(), 4u);  // 2 epochs x 2 steps
  EXPECT_EQ(logs.boundary.size(), 4u);
  EXPECT_EQ(logs.fusion.size(), 4u);
  EXPECT_EQ(models.fusion.input_c, 2u);

  FusedInference inf = run_fused(models, data[0].rgb, cfg);
  Dims d = inf.fused_prob.dims();
  EXPECT_EQ(d.c, 1u);
  EXPECT_EQ(d.h, 32u);
  EXPECT_EQ(d.w, 32u);
  EXPECT_EQ(inf.instances.h, 32u);
  for (std::size_t i = 0; i < inf.fused_prob.size(); ++i) {
    EXPECT_GE(inf.fused_prob[i], 0.0f);
    EXPECT_LE(inf.fused_prob[i], 1.0f);
  }

  PipelineEval ev = evaluate_pipeline(models, data, cfg);
  auto rows = ev.rows();
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].method, "region+cc");
  EXPECT_EQ(rows[2].method, "fused+watershed");
  std::size_t truth_fg = 0;
  for (const auto& s : data)
    for (auto id : s.labels.ids) truth_fg += id != 0;
  EXPECT_EQ(rows[2].px.tp + rows[2].px.fn, truth_fg);
  std::string report = format_report(rows);
  EXPECT_NE(report.find("fused+watershed"), std::string::npos);
}

TEST(Pipeline, FusedTrainingIsDeterministic) {
  auto data = tiny_dataset(2, 5);
  PipelineConfig cfg;
  cfg.width_multiplier = 0.25;
  cfg.seed = 21;
  cfg.train.epochs = 1;
  cfg.train.batch_size = 2;

  FusedModels m1, m2;
  train_fused_pipeline(m1, data, cfg);
  train_fused_pipeline(m2, data, cfg);
  auto p1 = m1.fusion.params();
  auto p2 = m2.fusion.params();
  ASSERT_EQ(p1.size(), p2.size());
  for (std::size_t i = 0; i < p1.size(); ++i)
    EXPECT_EQ(std::memcmp(p1[i].tensor->data(), p2[i].tensor->data(),
                          p1[i].tensor->size() * sizeof(float)),
              0)
        << p1[i].name;
}

}  // namespace

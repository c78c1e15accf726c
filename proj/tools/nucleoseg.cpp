#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "nucleoseg/checkpoint.hpp"
#include "nucleoseg/config.hpp"
#include "nucleoseg/dataset.hpp"
#include "nucleoseg/pipeline.hpp"
#include "nucleoseg/png_io.hpp"
#include "nucleoseg/scene.hpp"
#include "nucleoseg/train.hpp"

namespace fs = std::filesystem;
using namespace nseg;

namespace {

// Seed precedence, weakest first: built-in default, NUCLEOSEG_SEED,
// config file train.seed, --seed flag.
void seed_from_env(PipelineConfig& cfg) {
  if (const char* env = std::getenv("NUCLEOSEG_SEED")) {
    try {
      cfg.seed = detail::parse_u64(env);
    } catch (const std::exception&) {
      throw UsageError("NUCLEOSEG_SEED is not a valid seed: " +
                       std::string(env));
    }
  }
}

struct CommonOpts {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "configuration file")
        ->check(CLI::ExistingFile);
    cmd->add_option("--seed", seed, "seed overriding config and environment")
        ->each([this](const std::string&) { seed_set = true; });
  }

  PipelineConfig resolve() const {
    PipelineConfig cfg;
    seed_from_env(cfg);
    if (!config_path.empty()) apply_config_file(config_path, cfg);
    if (seed_set) cfg.seed = seed;
    return cfg;
  }
};

std::string scene_stem(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%03zu", index);
  return buf;
}

int run_gen(const CommonOpts& common, const std::string& out_dir,
            std::uint32_t count, std::uint32_t height, std::uint32_t width,
            double ratio_flag, bool ratio_set) {
  PipelineConfig cfg = common.resolve();
  if (height) cfg.scene.height = height;
  if (width) cfg.scene.width = width;
  if (ratio_set) cfg.train_ratio = ratio_flag;
  if (count == 0) throw UsageError("--count must be positive");

  fs::create_directories(out_dir);
  Rng root(cfg.seed);
  std::vector<SampleRecord> records;
  for (std::size_t i = 0; i < count; ++i) {
    Scene scene = generate_scene(cfg.scene, root.derive(i), cfg.stain);
    std::string stem = scene_stem(i);
    write_png_rgb8(fs::path(out_dir) / (stem + ".png"), scene.rgb);
    write_png_label16(fs::path(out_dir) / (stem + "_labels.png"), scene.labels);
    save_annotation(fs::path(out_dir) / (stem + ".json"), scene.annotation);
    records.push_back({stem + ".png", stem + "_labels.png", "train"});
  }
  split_dataset(records, cfg.train_ratio, root.derive(0x53504C4954));
  write_manifest(fs::path(out_dir) / "manifest.tsv", records);
  std::cerr << "wrote " << count << " scenes (" << cfg.scene.height << "x"
            << cfg.scene.width << ") and manifest.tsv to " << out_dir << "\n";
  return 0;
}

int run_train(const CommonOpts& common, const std::string& manifest,
              const std::string& out_dir, std::uint32_t epochs_flag,
              double width_flag) {
  PipelineConfig cfg = common.resolve();
  if (epochs_flag) cfg.train.epochs = epochs_flag;
  if (width_flag > 0) cfg.width_multiplier = width_flag;

  auto data = load_split(manifest, "train");
  fs::create_directories(out_dir);
  std::cerr << "training on " << data.size() << " images, seed " << cfg.seed
            << ", width " << cfg.width_multiplier << "\n";
  auto t0 = std::chrono::steady_clock::now();
  FusedModels models;
  PipelineLogs logs = train_fused_pipeline(models, data, cfg, &std::cerr);
  auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0);

  save_checkpoint(fs::path(out_dir) / "region.ckpt", models.region);
  save_checkpoint(fs::path(out_dir) / "boundary.ckpt", models.boundary);
  save_checkpoint(fs::path(out_dir) / "fusion.ckpt", models.fusion);
  write_train_log(fs::path(out_dir) / "train_region.csv", logs.region);
  write_train_log(fs::path(out_dir) / "train_boundary.csv", logs.boundary);
  write_train_log(fs::path(out_dir) / "train_fusion.csv", logs.fusion);
  std::cerr << "trained three networks in " << std::fixed << dt.count()
            << "s; checkpoints in " << out_dir << "\n";
  return 0;
}

FusedModels load_models(const std::string& ckpt_dir) {
  FusedModels models;
  models.region = load_checkpoint(fs::path(ckpt_dir) / "region.ckpt");
  models.boundary = load_checkpoint(fs::path(ckpt_dir) / "boundary.ckpt");
  models.fusion = load_checkpoint(fs::path(ckpt_dir) / "fusion.ckpt");
  return models;
}

int run_infer(const CommonOpts& common, const std::string& image_path,
              const std::string& ckpt_dir, const std::string& out_dir,
              bool dump_intermediate) {
  PipelineConfig cfg = common.resolve();
  FusedModels models = load_models(ckpt_dir);
  ImageU8 rgb = read_png_rgb8(image_path);
  FusedInference inf = run_fused(models, rgb, cfg);

  fs::create_directories(out_dir);
  std::string stem = fs::path(image_path).stem().string();
  fs::path base = fs::path(out_dir) / stem;
  write_png_gray8(base.string() + "_fused_prob.png",
                  tensor_to_gray8(inf.fused_prob, 0, 0));
  write_png_label16(base.string() + "_labels.png", inf.instances);
  write_png_rgb8(base.string() + "_overlay.png",
                 render_overlay(rgb, inf.instances));
  if (dump_intermediate) {
    write_png_gray8(base.string() + "_region_prob.png",
                    tensor_to_gray8(inf.region_prob, 0, 0));
    write_png_gray8(base.string() + "_boundary_prob.png",
                    tensor_to_gray8(inf.boundary_prob, 0, 0));
  }
  std::cerr << "segmented " << inf.instances.max_id() << " instances from "
            << image_path << "\n";
  return 0;
}

int run_eval(const CommonOpts& common, const std::string& manifest,
             const std::string& ckpt_dir, const std::string& split) {
  PipelineConfig cfg = common.resolve();
  FusedModels models = load_models(ckpt_dir);
  auto data = load_split(manifest, split == "all" ? "" : split);
  PipelineEval ev = evaluate_pipeline(models, data, cfg);
  std::cout << format_report(ev.rows());
  return 0;
}

int run_describe(const CommonOpts& common, const std::string& role_str,
                 double width_flag, std::uint32_t in_c_flag) {
  PipelineConfig cfg = common.resolve();
  if (width_flag > 0) cfg.width_multiplier = width_flag;
  Role role = role_from_name(role_str);
  std::uint32_t in_c = in_c_flag ? in_c_flag : (role == Role::Fusion ? 2 : 1);
  EnetModel<float> model(role, cfg.width_multiplier, in_c, cfg.dropout);
  std::cout << model.describe();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fused three-network nuclear instance segmentation"};
  app.require_subcommand(1);

  CommonOpts gen_common, train_common, infer_common, eval_common, desc_common;

  auto* gen = app.add_subcommand("gen", "generate a synthetic labeled dataset");
  std::string gen_out;
  std::uint32_t gen_count = 64, gen_height = 0, gen_width = 0;
  double gen_ratio = 0.5;
  bool gen_ratio_set = false;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of scenes (default 64)");
  gen->add_option("--height", gen_height, "scene height (default from config)");
  gen->add_option("--width", gen_width, "scene width (default from config)");
  gen->add_option("--train-ratio", gen_ratio, "train share of the split")
      ->each([&](const std::string&) { gen_ratio_set = true; });
  gen_common.attach(gen);

  auto* train = app.add_subcommand("train", "train the fused pipeline");
  std::string train_data, train_out;
  std::uint32_t train_epochs = 0;
  double train_width = 0;
  train->add_option("--data", train_data, "manifest file")->required();
  train->add_option("--out", train_out, "checkpoint and log directory")->required();
  train->add_option("--epochs", train_epochs, "override train.epochs");
  train->add_option("--width", train_width, "override model.width_multiplier");
  train_common.attach(train);

  auto* infer = app.add_subcommand("infer", "segment one image");
  std::string infer_image, infer_ckpt, infer_out;
  bool dump_intermediate = false;
  infer->add_option("--image", infer_image, "input RGB png")->required();
  infer->add_option("--checkpoints", infer_ckpt, "checkpoint directory")->required();
  infer->add_option("--out", infer_out, "output directory")->required();
  infer->add_flag("--dump-intermediate", dump_intermediate,
                  "also write region and boundary probability maps");
  infer_common.attach(infer);

  auto* eval = app.add_subcommand("eval", "evaluate checkpoints on a split");
  std::string eval_data, eval_ckpt, eval_split = "test";
  eval->add_option("--data", eval_data, "manifest file")->required();
  eval->add_option("--checkpoints", eval_ckpt, "checkpoint directory")->required();
  eval->add_option("--split", eval_split, "train, test, or all (default test)")
      ->check(CLI::IsMember({"train", "test", "all"}));
  eval_common.attach(eval);

  auto* desc = app.add_subcommand("describe", "print a network's layer table");
  std::string desc_role = "region";
  double desc_width = 0;
  std::uint32_t desc_in_c = 0;
  desc->add_option("--role", desc_role, "region, boundary, or fusion")
      ->check(CLI::IsMember({"region", "boundary", "fusion"}));
  desc->add_option("--width", desc_width, "width multiplier");
  desc->add_option("--input-channels", desc_in_c,
                   "override the role's input channel count");
  desc_common.attach(desc);

  try {
    app.parse(argc, argv);
    if (gen->parsed())
      return run_gen(gen_common, gen_out, gen_count, gen_height, gen_width,
                     gen_ratio, gen_ratio_set);
    if (train->parsed())
      return run_train(train_common, train_data, train_out, train_epochs,
                       train_width);
    if (infer->parsed())
      return run_infer(infer_common, infer_image, infer_ckpt, infer_out,
                       dump_intermediate);
    if (eval->parsed())
      return run_eval(eval_common, eval_data, eval_ckpt, eval_split);
    if (desc->parsed())
      return run_describe(desc_common, desc_role, desc_width, desc_in_c);
    return 2;
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 4;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

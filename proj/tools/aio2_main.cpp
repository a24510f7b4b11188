#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "aio2/act.hpp"
#include "aio2/errors.hpp"
#include "aio2/harness.hpp"
#include "aio2/o2c.hpp"
#include "aio2/raster_io.hpp"
#include "aio2/synthdata.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

json load_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw aio2::IoError("cannot open " + path.string());
  json j;
  in >> j;
  return j;
}

// Config files may wrap sections ({"synth":..,"noise":..,"run":..}) or be a
// bare section; section() picks the named object when present.
json section(const json& j, const std::string& name) {
  return j.contains(name) ? j.at(name) : j;
}

std::vector<aio2::DatasetPatch> load_patches(const fs::path& root,
                                             const std::string& split) {
  std::vector<aio2::DatasetPatch> out;
  for (const std::string& id : aio2::read_manifest(root / (split + ".txt"))) {
    out.push_back(aio2::read_patch(aio2::patch_dir(root, id)));
  }
  return out;
}

int cmd_synth(const fs::path& config, const fs::path& out) {
  const json j = load_json(config);
  const aio2::SynthJob job = aio2::synth_job_from_json(section(j, "synth"));
  aio2::run_synth_job(job, out);
  if (j.contains("noise")) {
    aio2::NoiseConfig noise;
    noise.alpha0 = j.at("noise").value("alpha0", noise.alpha0);
    noise.seed = j.at("noise").value("seed", noise.seed);
    aio2::inject_dataset(out, noise, "train");
  }
  const auto report = aio2::assess_quality(load_patches(out, "train"));
  std::cout << json{{"out", out.string()},
                    {"train", job.n_train},
                    {"val", job.n_val},
                    {"test", job.n_test},
                    {"omission_rate", report.omission_rate},
                    {"noisy_iou", report.iou}}
                   .dump(2)
            << '\n';
  return 0;
}

int cmd_inject(const fs::path& data, double alpha0, std::uint64_t seed,
               const std::string& split) {
  aio2::NoiseConfig noise;
  noise.alpha0 = alpha0;
  noise.seed = seed;
  aio2::inject_dataset(data, noise, split);
  const auto report = aio2::assess_quality(load_patches(data, split));
  std::cout << json{{"split", split},
                    {"alpha0", alpha0},
                    {"omission_rate", report.omission_rate},
                    {"noisy_iou", report.iou},
                    {"noisy_oa", report.oa}}
                   .dump(2)
            << '\n';
  return 0;
}

int cmd_assess(const fs::path& data, const std::string& split) {
  const auto report = aio2::assess_quality(load_patches(data, split));
  std::cout << json{{"omission_rate", report.omission_rate},
                    {"iou", report.iou},
                    {"oa", report.oa}}
                   .dump(2)
            << '\n';
  return 0;
}

int cmd_eval(const fs::path& data, const fs::path& ckpt,
             const std::string& split, const std::string& who) {
  const aio2::Checkpoint c = aio2::read_checkpoint(ckpt);
  const auto& conv1 = c.layout.find("conv1.w");
  aio2::ModelConfig mc;
  mc.in_channels = conv1.shape.at(1);
  mc.width_mult = conv1.shape.at(0) / 16.0;
  aio2::Model<float> model(mc);
  if (!(model.layout() == c.layout)) {
    throw aio2::ContractError(
        "eval: checkpoint layout does not match the inferred architecture");
  }
  model.params() = who == "student" ? c.student : c.teacher;

  aio2::SegCounts counts;
  for (const auto& patch : load_patches(data, split)) {
    aio2::BinaryMask pred = aio2::Raster::zeros(patch.gt_mask.width,
                                                patch.gt_mask.height);
    const aio2::SoftMask prob = model.forward_prob(patch.image);
    for (std::size_t i = 0; i < prob.values.size(); ++i) {
      pred.values[i] = prob.values[i] >= 0.5f ? 1.0f : 0.0f;
    }
    counts += aio2::seg_counts(pred, patch.gt_mask);
  }
  json out = aio2::scores_to_json(aio2::seg_scores(counts));
  out["split"] = split;
  out["who"] = who;
  out["epoch"] = c.epoch;
  std::cout << out.dump(2) << '\n';
  return 0;
}

int cmd_act_detect(const fs::path& curve, const fs::path& config,
                   const std::vector<int>& windows, int buffer, int stride) {
  aio2::ActConfig cfg;
  if (!config.empty()) {
    // Accepts a full run config, a {"act": ...} wrapper, or a bare section.
    json j = load_json(config);
    if (j.contains("run")) j = j.at("run");
    if (j.contains("act")) j = j.at("act");
    cfg = aio2::act_config_from_json(j);
  }
  if (!windows.empty()) {
    cfg.windows = windows;
    cfg.buffer = aio2::default_buffer(windows);
  }
  if (buffer > 0) cfg.buffer = buffer;
  if (stride > 0) cfg.checkpoint_stride = stride;
  cfg.validate();

  const aio2::AccuracySeries series = aio2::accuracy_series_from_csv(curve);
  const auto decision = aio2::detect_act(series, cfg);
  if (decision) {
    std::cout << json{{"decision", aio2::decision_to_json(*decision)},
                      {"no_trigger", false}}
                     .dump(2)
              << '\n';
  } else {
    std::cout << json{{"no_trigger", true}}.dump(2) << '\n';
  }
  return 0;
}

int cmd_correct(const fs::path& noisy_dir, const fs::path& pred_dir,
                const fs::path& out_dir, const aio2::O2cConfig& cfg) {
  std::vector<fs::path> masks;
  for (const auto& entry : fs::directory_iterator(noisy_dir)) {
    if (entry.path().extension() == ".pgm") masks.push_back(entry.path());
  }
  std::sort(masks.begin(), masks.end());
  if (masks.empty()) {
    throw aio2::IoError("correct: no .pgm masks under " + noisy_dir.string());
  }
  fs::create_directories(out_dir);
  int added = 0;
  for (const fs::path& mask_path : masks) {
    const aio2::BinaryMask noisy = aio2::read_mask_pgm(mask_path);
    const fs::path pred_path =
        pred_dir / mask_path.filename().replace_extension(".f32");
    const aio2::SoftMask prob = aio2::read_raster_f32(pred_path);
    const aio2::CorrectedTarget t = aio2::correct(noisy, prob, cfg);
    added += t.added_components;
    aio2::write_raster_f32(
        out_dir / mask_path.filename().replace_extension(".f32"), t.soft_mask);
  }
  std::cout << json{{"patches", masks.size()}, {"added_components", added}}.dump(2)
            << '\n';
  return 0;
}

struct TrainArgs {
  fs::path config;
  fs::path data;
  fs::path out;
  std::string arm;
  int epochs = 0;
  int replays = 0;
  std::int64_t seed = -1;
  bool keep_checkpoints = false;
};

aio2::RunConfig make_run_config(const TrainArgs& a) {
  aio2::RunConfig cfg;
  if (!a.config.empty()) {
    cfg = aio2::run_config_from_json(section(load_json(a.config), "run"));
  }
  if (!a.data.empty()) cfg.dataset = a.data;
  if (!a.arm.empty()) cfg.arm = aio2::arm_from_string(a.arm);
  if (a.epochs > 0) cfg.trainer.epochs = a.epochs;
  if (a.seed >= 0) cfg.trainer.seed = static_cast<std::uint64_t>(a.seed);
  if (a.replays > 0) cfg.replays = a.replays;
  if (a.keep_checkpoints) cfg.prune_checkpoints = false;
  if (cfg.dataset.empty()) {
    throw aio2::ConfigError("train: no dataset (config key or --data)");
  }
  cfg.validate();
  return cfg;
}

int cmd_train(const TrainArgs& a) {
  const aio2::RunConfig cfg = make_run_config(a);
  const aio2::RunResult r = aio2::run(cfg, a.out);
  json out = {{"arm", aio2::arm_name(cfg.arm)},
              {"final_test", aio2::scores_to_json(r.final_test_teacher)},
              {"max_test_iou", r.max_test_iou},
              {"out", a.out.string()}};
  if (r.decision) {
    out["trigger_epoch"] = r.decision->transition_epoch;
    out["resume_from"] = r.resume_from;
  }
  if (r.no_trigger) out["no_trigger"] = true;
  std::cout << out.dump(2) << '\n';
  return 0;
}

int cmd_replay(const TrainArgs& a) {
  const aio2::RunConfig cfg = make_run_config(a);
  const int n = a.replays > 0 ? a.replays : cfg.replays;
  const aio2::ReplaySummary s = aio2::replay_suite(cfg, n, a.out);
  std::cout << json{{"arm", aio2::arm_name(cfg.arm)},
                    {"replays", n},
                    {"ok", s.n_ok},
                    {"final_iou_mean", s.final_iou.mean},
                    {"final_iou_std", s.final_iou.stddev},
                    {"max_iou_mean", s.max_iou.mean},
                    {"failures", s.failures}}
                   .dump(2)
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Segmentation lab for training under object-omission label noise"};
  app.require_subcommand(1);

  fs::path config, data, out, ckpt, curve, noisy_dir, pred_dir;
  std::string split = "train";
  std::string who = "teacher";
  std::string arm;
  double alpha0 = 0.5;
  std::uint64_t seed = 0;
  std::vector<int> windows;
  int buffer = 0;
  int stride = 0;
  aio2::O2cConfig o2c;
  TrainArgs targs;

  auto* synth = app.add_subcommand("synth", "Generate a patch dataset");
  synth->add_option("--config", config, "Job JSON")->required();
  synth->add_option("--out", out, "Output dataset root")->required();

  auto* inject = app.add_subcommand("inject", "Re-draw omission noise in place");
  inject->add_option("--data", data, "Dataset root")->required();
  inject->add_option("--alpha0", alpha0, "Mean drop fraction")->required();
  inject->add_option("--seed", seed, "Noise seed");
  inject->add_option("--split", split, "Manifest to rewrite");

  auto* assess = app.add_subcommand("assess", "Report noisy-label quality");
  assess->add_option("--data", data, "Dataset root")->required();
  assess->add_option("--split", split, "Manifest to score");

  auto* eval = app.add_subcommand("eval", "Score a checkpoint against clean labels");
  eval->add_option("--data", data, "Dataset root")->required();
  eval->add_option("--ckpt", ckpt, "Checkpoint file")->required();
  eval->add_option("--split", split, "Manifest to score");
  eval->add_option("--who", who, "teacher or student")
      ->check(CLI::IsMember({"teacher", "student"}));

  auto* act = app.add_subcommand("act-detect", "Replay the trigger on a logged curve");
  act->add_option("--curve", curve, "curve.csv or epoch,acc CSV")->required();
  act->add_option("--config", config, "Run config supplying the trigger section");
  act->add_option("--windows", windows, "Slope window sizes");
  act->add_option("--buffer", buffer, "Confirmation buffer");
  act->add_option("--stride", stride, "Checkpoint stride");

  auto* correct = app.add_subcommand("correct", "Offline object-wise correction");
  correct->add_option("--noisy", noisy_dir, "Directory of .pgm masks")->required();
  correct->add_option("--pred", pred_dir, "Directory of .f32 probability maps")
      ->required();
  correct->add_option("--out", out, "Output directory")->required();
  correct->add_option("--k", o2c.filter_size, "Box filter size");
  correct->add_option("--threshold", o2c.prediction_threshold, "Foreground cut");
  correct->add_option("--min-overlap", o2c.min_overlap_fraction,
                      "Overlap fraction that still counts as new");

  const auto add_train_options = [&targs](CLI::App* cmd) {
    cmd->add_option("--config", targs.config, "Run config JSON");
    cmd->add_option("--data", targs.data, "Dataset root (overrides config)");
    cmd->add_option("--arm", targs.arm, "gt|noisy|aio2|pixelwise|bootstrap");
    cmd->add_option("--out", targs.out, "Output directory")->required();
    cmd->add_option("--epochs", targs.epochs, "Epoch budget override");
    cmd->add_option("--seed", targs.seed, "Seed override");
    cmd->add_flag("--keep-checkpoints", targs.keep_checkpoints,
                  "Skip pruning warm-up checkpoints after the trigger");
  };
  auto* train = app.add_subcommand("train", "Train one arm");
  add_train_options(train);
  auto* replay = app.add_subcommand("replay", "Train replicas and aggregate");
  add_train_options(replay);
  replay->add_option("--replays", targs.replays, "Replica count override");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return cmd_synth(config, out);
    if (inject->parsed()) return cmd_inject(data, alpha0, seed, split);
    if (assess->parsed()) return cmd_assess(data, split);
    if (eval->parsed()) {
      if (split == "train" && !eval->get_option("--split")->count()) split = "test";
      return cmd_eval(data, ckpt, split, who);
    }
    if (act->parsed()) return cmd_act_detect(curve, config, windows, buffer, stride);
    if (correct->parsed()) return cmd_correct(noisy_dir, pred_dir, out, o2c);
    if (train->parsed()) return cmd_train(targs);
    if (replay->parsed()) return cmd_replay(targs);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

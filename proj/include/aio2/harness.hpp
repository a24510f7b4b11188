#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "aio2/act.hpp"
#include "aio2/curvefit.hpp"
#include "aio2/learner.hpp"
#include "aio2/metrics.hpp"
#include "aio2/o2c.hpp"
#include "aio2/synthdata.hpp"

namespace aio2 {

enum class Arm : std::uint8_t { Gt, Noisy, Aio2, Pixelwise, Bootstrap };

Arm arm_from_string(const std::string& s);
std::string arm_name(Arm arm);

struct RunConfig {
  std::filesystem::path dataset;
  Arm arm = Arm::Noisy;
  double width_mult = 1.0;
  TrainerConfig trainer;
  ActConfig act;
  O2cConfig o2c;
  BaselineConfig baseline;
  int eval_every = 5;
  int replays = 3;
  // Chebyshev depth separating boundary-ambiguous from interior pixels in
  // the per-epoch diagnostics.
  int diag_depth = 2;
  // Warm-up checkpoints are deleted once a trigger resumes from one; tests
  // keep them to compare against the restored state.
  bool prune_checkpoints = true;

  void validate() const;
};

// Fills a config from JSON, leaving defaults for absent keys. Recognized
// sections: dataset, arm, model.width_mult, trainer, act, o2c, baseline,
// eval_every, replays, diag_depth.
RunConfig run_config_from_json(const nlohmann::json& j);

struct EpochRow {
  int step = 0;      // strictly increasing over the whole run
  int epoch = 0;     // rewinds to the resume checkpoint on trigger
  std::string phase; // "warmup" until the trigger row, "corrected" after
  double train_iou_noisy = 0.0;  // teacher vs noisy labels; the trigger input
  double train_iou_gt = 0.0;     // teacher vs clean labels; reference only
  std::optional<SegScores> test; // teacher vs clean test labels
  MemorizationDiag diag;
};

struct RunResult {
  std::vector<EpochRow> rows;
  std::optional<ActDecision> decision;
  bool no_trigger = false;  // trigger arm finished inside warm-up
  int trigger_step = -1;
  int resume_from = -1;               // checkpoint epoch loaded on trigger
  std::uint64_t resume_checksum = 0;  // checksum of the restored state
  SegScores final_test_teacher;
  SegScores final_test_student;
  double max_test_iou = 0.0;  // best teacher test IoU over evaluated epochs
  long n_o2c_calls = 0;
  long n_act_observations = 0;
  long n_pixelwise_calls = 0;
  long n_bootstrap_calls = 0;
};

// Trains one arm end to end and writes curve.csv, diag.csv, metrics.json,
// ckpt/final.bin, and decision.json (trigger arms) under out_dir.
RunResult run(const RunConfig& cfg, const std::filesystem::path& out_dir);

struct ReplayStats {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for a single value
  std::vector<double> values;
};

struct ReplaySummary {
  ReplayStats final_iou;
  ReplayStats max_iou;
  int n_ok = 0;
  std::vector<std::string> failures;  // one message per failed replay
};

// Runs n replays with seeds seed+0..n-1 into out_dir/replay_i. A replay
// failure is recorded and the rest continue; throws only when all fail.
ReplaySummary replay_suite(const RunConfig& cfg, int n_replays,
                           const std::filesystem::path& out_dir);

// Applies whole-object omission to every patch in root's named manifest,
// rewriting noisy masks and metadata in place. Patch i uses a seed mixed
// from noise.seed and i.
void inject_dataset(const std::filesystem::path& root,
                    const NoiseConfig& noise,
                    const std::string& split = "train");

// Accuracy series for offline trigger detection: either a bare
// "epoch,acc" file or a curve.csv, whose warm-up rows carry the series.
AccuracySeries accuracy_series_from_csv(const std::filesystem::path& path);

nlohmann::json scores_to_json(const SegScores& s);

std::uint64_t checkpoint_checksum(const Checkpoint& c);

}  // namespace aio2

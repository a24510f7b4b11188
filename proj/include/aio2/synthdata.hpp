#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "aio2/raster.hpp"

namespace aio2 {

enum class ObjectKind : std::uint8_t { Rectangle, LShape };

// Scene synthesis knobs. Foreground objects get a flat per-object color
// (base + jitter offset), which is what makes individual instances
// memorizable by a small model; coordinate channels add a location cue.
struct SceneConfig {
  int patch_size = 64;
  int n_objects_min = 4;
  int n_objects_max = 10;
  ObjectKind object_kind = ObjectKind::Rectangle;
  int object_size_min = 6;
  int object_size_max = 16;
  int feature_channels = 3;
  double per_object_color_jitter = 0.15;
  double background_texture_noise = 0.05;
  bool coord_channels = true;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

struct PatchMeta {
  double alpha = 0.0;                  // drawn per-patch discard fraction
  std::vector<int> dropped_ids;        // gt component ids removed, ascending
};

struct DatasetPatch {
  Raster image;
  BinaryMask gt_mask;
  BinaryMask noisy_mask;
  PatchMeta meta;
};

// Deterministic given config.seed. Objects are pairwise 8-disconnected.
// noisy_mask starts as a copy of gt_mask. Throws GenerationError when the
// placement retry budget runs out.
DatasetPatch generate_scene(const SceneConfig& config);

struct NoiseConfig {
  double alpha0 = 0.5;   // must lie in (0,1)
  std::uint64_t seed = 0;
};

// Whole-object omission: draws alpha ~ U[alpha0-r, alpha0+r] with
// r = min(1-alpha0, alpha0), removes round(alpha*n) objects chosen uniformly
// without replacement, and records alpha plus the dropped component ids.
DatasetPatch inject_noise(DatasetPatch patch, const NoiseConfig& noise);

struct QualityReport {
  double omission_rate = 0.0;  // dropped objects / all objects
  double iou = 0.0;            // noisy vs gt, pooled over the dataset
  double oa = 0.0;
};

QualityReport assess_quality(const std::vector<DatasetPatch>& dataset);

// ---- dataset directory layout -------------------------------------------
// root/patches/NNNN/{image.f32, image.json, gt.pgm, noisy.pgm, meta.json}
// root/{train.txt, val.txt, test.txt}: one patch id per line.

std::string patch_id(int index);
std::filesystem::path patch_dir(const std::filesystem::path& root,
                                const std::string& id);

void write_patch(const std::filesystem::path& dir, const DatasetPatch& patch);
DatasetPatch read_patch(const std::filesystem::path& dir);

void write_manifest(const std::filesystem::path& path,
                    const std::vector<std::string>& ids);
std::vector<std::string> read_manifest(const std::filesystem::path& path);

// Sorted ids found under root/patches.
std::vector<std::string> list_patch_ids(const std::filesystem::path& root);

// ---- synth job (CLI config) ----------------------------------------------

struct SynthJob {
  SceneConfig scene;
  int n_train = 200;
  int n_val = 0;
  int n_test = 40;
};

SceneConfig scene_config_from_json(const nlohmann::json& j);
SynthJob synth_job_from_json(const nlohmann::json& j);

// Generates n_train+n_val+n_test patches (per-patch seed = scene.seed xor
// index), writes them plus the three manifests under root.
void run_synth_job(const SynthJob& job, const std::filesystem::path& root);

}  // namespace aio2

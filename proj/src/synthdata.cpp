#include "aio2/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "aio2/errors.hpp"
#include "aio2/metrics.hpp"
#include "aio2/raster_io.hpp"
#include "aio2/rng.hpp"

namespace aio2 {

void SceneConfig::validate() const {
  if (patch_size < 1) throw ConfigError("scene: patch_size must be >= 1");
  if (n_objects_min < 0 || n_objects_max < n_objects_min) {
    throw ConfigError("scene: bad n_objects range");
  }
  if (object_size_min < 1 || object_size_max < object_size_min) {
    throw ConfigError("scene: bad object_size range");
  }
  if (object_size_max > patch_size) {
    throw ConfigError("scene: object_size_max exceeds patch_size");
  }
  if (feature_channels < 1) throw ConfigError("scene: feature_channels must be >= 1");
  if (per_object_color_jitter < 0.0 || background_texture_noise < 0.0) {
    throw ConfigError("scene: noise std-devs must be >= 0");
  }
}

namespace {

constexpr double kBgBase = 0.25;
constexpr double kFgBase = 0.75;

struct Shape {
  int w = 0, h = 0;
  // cut_* describe the removed quadrant for L-shapes (empty for rectangles).
  int cut_w = 0, cut_h = 0, cut_corner = 0;

  bool covers(int dx, int dy) const {
    if (cut_w == 0 || cut_h == 0) return true;
    const bool right = cut_corner & 1, bottom = cut_corner & 2;
    const bool in_x = right ? dx >= w - cut_w : dx < cut_w;
    const bool in_y = bottom ? dy >= h - cut_h : dy < cut_h;
    return !(in_x && in_y);
  }
};

float clamp01(double v) {
  return static_cast<float>(std::min(1.0, std::max(0.0, v)));
}

}  // namespace

DatasetPatch generate_scene(const SceneConfig& config) {
  config.validate();
  Rng rng(config.seed);
  const int n = config.patch_size;
  DatasetPatch patch;
  patch.gt_mask = Raster::zeros(n, n);

  std::vector<std::vector<double>> object_colors;

  // A crowded draw can fail placement; redrawing the whole layout from the
  // continuing RNG stream keeps generation deterministic yet total.
  bool laid_out = false;
  for (int round = 0; round < 50 && !laid_out; ++round) {
    std::fill(patch.gt_mask.values.begin(), patch.gt_mask.values.end(), 0.0f);
    object_colors.clear();
    const int n_objects =
        rng.uniform_range(config.n_objects_min, config.n_objects_max);
    laid_out = true;
    for (int obj = 0; obj < n_objects && laid_out; ++obj) {
      Shape shape;
      shape.w = rng.uniform_range(config.object_size_min, config.object_size_max);
      shape.h = rng.uniform_range(config.object_size_min, config.object_size_max);
      if (config.object_kind == ObjectKind::LShape && shape.w >= 2 && shape.h >= 2) {
        shape.cut_w = shape.w / 2;
        shape.cut_h = shape.h / 2;
        shape.cut_corner = static_cast<int>(rng.uniform_int(4));
      }

      bool placed = false;
      for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
        const int x0 = rng.uniform_range(0, n - shape.w);
        const int y0 = rng.uniform_range(0, n - shape.h);
        // Reject if any existing foreground sits inside the bbox grown by one
        // pixel; keeps objects >= 2 apart (Chebyshev), so components stay
        // separate under 8-connectivity.
        bool clear = true;
        for (int y = std::max(0, y0 - 1); y <= std::min(n - 1, y0 + shape.h) && clear; ++y) {
          for (int x = std::max(0, x0 - 1); x <= std::min(n - 1, x0 + shape.w) && clear; ++x) {
            if (patch.gt_mask.at(x, y) != 0.0f) clear = false;
          }
        }
        if (!clear) continue;
        for (int dy = 0; dy < shape.h; ++dy) {
          for (int dx = 0; dx < shape.w; ++dx) {
            if (shape.covers(dx, dy)) patch.gt_mask.at(x0 + dx, y0 + dy) = 1.0f;
          }
        }
        placed = true;
      }
      if (!placed) {
        laid_out = false;
        break;
      }
      std::vector<double> color(static_cast<std::size_t>(config.feature_channels));
      for (double& c : color) {
        c = kFgBase + rng.normal(0.0, config.per_object_color_jitter);
      }
      object_colors.push_back(std::move(color));
    }
  }
  if (!laid_out) {
    throw GenerationError("could not lay out a scene after 50 rounds (seed " +
                          std::to_string(config.seed) + ")");
  }

  // Paint: background texture everywhere, then each object's flat color.
  const int channels = config.feature_channels + (config.coord_channels ? 2 : 0);
  patch.image = Raster::zeros(n, n, channels);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      for (int c = 0; c < config.feature_channels; ++c) {
        patch.image.at(x, y, c) =
            clamp01(kBgBase + rng.normal(0.0, config.background_texture_noise));
      }
    }
  }
  const ObjectSet objects = extract_objects(connected_components(patch.gt_mask));
  if (objects.components.size() != object_colors.size()) {
    throw GenerationError("object placement merged components (seed " +
                          std::to_string(config.seed) + ")");
  }
  // Component ids follow raster-scan order, not placement order; any
  // deterministic color-to-object assignment works, so just pair them up.
  for (std::size_t i = 0; i < objects.components.size(); ++i) {
    const std::vector<double>& color = object_colors[i];
    for (std::int32_t p : objects.components[i].pixels) {
      const int x = p % n, y = p / n;
      for (int c = 0; c < config.feature_channels; ++c) {
        patch.image.at(x, y, c) = clamp01(color[static_cast<std::size_t>(c)]);
      }
    }
  }
  if (config.coord_channels) {
    for (int y = 0; y < n; ++y) {
      for (int x = 0; x < n; ++x) {
        patch.image.at(x, y, config.feature_channels) =
            n > 1 ? static_cast<float>(x) / (n - 1) : 0.0f;
        patch.image.at(x, y, config.feature_channels + 1) =
            n > 1 ? static_cast<float>(y) / (n - 1) : 0.0f;
      }
    }
  }

  patch.noisy_mask = patch.gt_mask;
  return patch;
}

DatasetPatch inject_noise(DatasetPatch patch, const NoiseConfig& noise) {
  if (!(noise.alpha0 > 0.0 && noise.alpha0 < 1.0)) {
    throw ConfigError("inject_noise: alpha0 must lie in (0,1)");
  }
  Rng rng(noise.seed);
  const double r = std::min(1.0 - noise.alpha0, noise.alpha0);
  const double alpha = rng.uniform(noise.alpha0 - r, noise.alpha0 + r);

  const ObjectSet objects = extract_objects(connected_components(patch.gt_mask));
  const int n = static_cast<int>(objects.components.size());
  const int drop = static_cast<int>(std::lround(alpha * n));

  std::vector<int> ids(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), 1);
  rng.shuffle(ids);
  ids.resize(static_cast<std::size_t>(drop));
  std::sort(ids.begin(), ids.end());

  patch.noisy_mask = patch.gt_mask;
  for (int id : ids) {
    for (std::int32_t p : objects.components[static_cast<std::size_t>(id - 1)].pixels) {
      patch.noisy_mask.values[static_cast<std::size_t>(p)] = 0.0f;
    }
  }
  patch.meta.alpha = alpha;
  patch.meta.dropped_ids = std::move(ids);
  return patch;
}

QualityReport assess_quality(const std::vector<DatasetPatch>& dataset) {
  if (dataset.empty()) throw ContractError("assess_quality: empty dataset");
  std::int64_t objects_total = 0, objects_omitted = 0;
  SegCounts counts;
  for (const DatasetPatch& p : dataset) {
    const ObjectSet tagged = tag_objects(
        extract_objects(connected_components(p.gt_mask)), p.noisy_mask);
    for (const ObjectComponent& obj : tagged.components) {
      ++objects_total;
      objects_omitted += obj.tag == ObjectTag::Omitted;
    }
    counts += seg_counts(p.noisy_mask, p.gt_mask);
  }
  QualityReport rep;
  rep.omission_rate = objects_total == 0
                          ? 0.0
                          : static_cast<double>(objects_omitted) / objects_total;
  const SegScores s = seg_scores(counts);
  rep.iou = *s.iou;
  rep.oa = *s.oa;
  return rep;
}

std::string patch_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", index);
  return buf;
}

std::filesystem::path patch_dir(const std::filesystem::path& root,
                                const std::string& id) {
  return root / "patches" / id;
}

void write_patch(const std::filesystem::path& dir, const DatasetPatch& patch) {
  std::filesystem::create_directories(dir);
  write_raster_f32(dir / "image.f32", patch.image);
  write_mask_pgm(dir / "gt.pgm", patch.gt_mask);
  write_mask_pgm(dir / "noisy.pgm", patch.noisy_mask);
  nlohmann::json meta = {{"alpha", patch.meta.alpha},
                         {"dropped_ids", patch.meta.dropped_ids}};
  std::ofstream out(dir / "meta.json");
  if (!out) throw IoError("cannot write " + (dir / "meta.json").string());
  out << meta.dump(2) << "\n";
}

DatasetPatch read_patch(const std::filesystem::path& dir) {
  DatasetPatch patch;
  patch.image = read_raster_f32(dir / "image.f32");
  patch.gt_mask = read_mask_pgm(dir / "gt.pgm");
  patch.noisy_mask = read_mask_pgm(dir / "noisy.pgm");
  std::ifstream in(dir / "meta.json");
  if (!in) throw IoError("missing " + (dir / "meta.json").string());
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad meta.json in " + dir.string() + ": " + e.what());
  }
  patch.meta.alpha = meta.at("alpha").get<double>();
  patch.meta.dropped_ids = meta.at("dropped_ids").get<std::vector<int>>();
  return patch;
}

void write_manifest(const std::filesystem::path& path,
                    const std::vector<std::string>& ids) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const std::string& id : ids) out << id << "\n";
}

std::vector<std::string> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

std::vector<std::string> list_patch_ids(const std::filesystem::path& root) {
  const std::filesystem::path dir = root / "patches";
  if (!std::filesystem::is_directory(dir)) {
    throw IoError("no patches directory under " + root.string());
  }
  std::vector<std::string> ids;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_directory()) ids.push_back(entry.path().filename().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

SceneConfig scene_config_from_json(const nlohmann::json& j) {
  SceneConfig cfg;
  cfg.patch_size = j.value("patch_size", cfg.patch_size);
  if (j.contains("n_objects")) {
    cfg.n_objects_min = j.at("n_objects").at(0).get<int>();
    cfg.n_objects_max = j.at("n_objects").at(1).get<int>();
  }
  if (j.contains("object_kind")) {
    const std::string kind = j.at("object_kind").get<std::string>();
    if (kind == "rectangle") {
      cfg.object_kind = ObjectKind::Rectangle;
    } else if (kind == "l_shape") {
      cfg.object_kind = ObjectKind::LShape;
    } else {
      throw ConfigError("scene: unknown object_kind '" + kind + "'");
    }
  }
  if (j.contains("object_size")) {
    cfg.object_size_min = j.at("object_size").at(0).get<int>();
    cfg.object_size_max = j.at("object_size").at(1).get<int>();
  }
  cfg.feature_channels = j.value("feature_channels", cfg.feature_channels);
  cfg.per_object_color_jitter = j.value("color_jitter", cfg.per_object_color_jitter);
  cfg.background_texture_noise = j.value("background_noise", cfg.background_texture_noise);
  cfg.coord_channels = j.value("coord_channels", cfg.coord_channels);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.validate();
  return cfg;
}

SynthJob synth_job_from_json(const nlohmann::json& j) {
  SynthJob job;
  job.scene = scene_config_from_json(j);
  job.n_train = j.value("n_train", job.n_train);
  job.n_val = j.value("n_val", job.n_val);
  job.n_test = j.value("n_test", job.n_test);
  if (job.n_train < 0 || job.n_val < 0 || job.n_test < 0 ||
      job.n_train + job.n_val + job.n_test == 0) {
    throw ConfigError("synth: patch counts must be >= 0 and sum > 0");
  }
  return job;
}

void run_synth_job(const SynthJob& job, const std::filesystem::path& root) {
  const int total = job.n_train + job.n_val + job.n_test;
  std::vector<std::string> train, val, test;
  for (int i = 0; i < total; ++i) {
    SceneConfig cfg = job.scene;
    cfg.seed = job.scene.seed ^ static_cast<std::uint64_t>(i);
    const DatasetPatch patch = generate_scene(cfg);
    const std::string id = patch_id(i);
    write_patch(patch_dir(root, id), patch);
    if (i < job.n_train) {
      train.push_back(id);
    } else if (i < job.n_train + job.n_val) {
      val.push_back(id);
    } else {
      test.push_back(id);
    }
  }
  write_manifest(root / "train.txt", train);
  write_manifest(root / "val.txt", val);
  write_manifest(root / "test.txt", test);
}

}  // namespace aio2

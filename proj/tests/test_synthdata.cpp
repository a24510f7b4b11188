#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "aio2/errors.hpp"
#include "aio2/metrics.hpp"
#include "aio2/raster.hpp"
#include "aio2/rng.hpp"
#include "aio2/synthdata.hpp"

using namespace aio2;

namespace {

SceneConfig small_scene(std::uint64_t seed) {
  SceneConfig cfg;
  cfg.patch_size = 32;
  cfg.n_objects_min = 4;
  cfg.n_objects_max = 4;
  cfg.object_size_min = 3;
  cfg.object_size_max = 6;
  cfg.seed = seed;
  return cfg;
}

int component_count(const BinaryMask& m) {
  return connected_components(m).n_components;
}

// 10x10 patch with four 2x2 objects; the argument selects noisy survivors.
DatasetPatch hand_patch(const std::vector<int>& kept_objects) {
  DatasetPatch p;
  p.gt_mask = Raster::zeros(10, 10);
  const std::pair<int, int> origins[4] = {{1, 1}, {6, 1}, {1, 6}, {6, 6}};
  for (auto [ox, oy] : origins) {
    p.gt_mask.at(ox, oy) = p.gt_mask.at(ox + 1, oy) = 1.0f;
    p.gt_mask.at(ox, oy + 1) = p.gt_mask.at(ox + 1, oy + 1) = 1.0f;
  }
  p.noisy_mask = Raster::zeros(10, 10);
  for (int idx : kept_objects) {
    auto [ox, oy] = origins[idx];
    p.noisy_mask.at(ox, oy) = p.noisy_mask.at(ox + 1, oy) = 1.0f;
    p.noisy_mask.at(ox, oy + 1) = p.noisy_mask.at(ox + 1, oy + 1) = 1.0f;
  }
  p.image = Raster::zeros(10, 10, 1);
  return p;
}

}  // namespace

TEST_CASE("generate_scene basics") {
  SUBCASE("zero objects gives pure background") {
    SceneConfig cfg = small_scene(1);
    cfg.n_objects_min = cfg.n_objects_max = 0;
    const DatasetPatch p = generate_scene(cfg);
    CHECK(component_count(p.gt_mask) == 0);
    CHECK(p.noisy_mask.values == p.gt_mask.values);
  }
  SUBCASE("same seed is bit-identical") {
    const DatasetPatch a = generate_scene(small_scene(42));
    const DatasetPatch b = generate_scene(small_scene(42));
    CHECK(a.image.values == b.image.values);
    CHECK(a.gt_mask.values == b.gt_mask.values);
  }
  SUBCASE("different seeds differ") {
    const DatasetPatch a = generate_scene(small_scene(42));
    const DatasetPatch b = generate_scene(small_scene(43));
    CHECK(a.gt_mask.values != b.gt_mask.values);
  }
  SUBCASE("requested object count is exact") {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL, 99ULL}) {
      const DatasetPatch p = generate_scene(small_scene(seed));
      CHECK(component_count(p.gt_mask) == 4);
    }
  }
  SUBCASE("l-shapes also produce the requested count") {
    SceneConfig cfg = small_scene(7);
    cfg.object_kind = ObjectKind::LShape;
    const DatasetPatch p = generate_scene(cfg);
    const ObjectSet objs = extract_objects(connected_components(p.gt_mask));
    CHECK(objs.components.size() == 4);
    // An L-shape is smaller than its bbox.
    bool any_concave = false;
    for (const auto& o : objs.components) {
      const int bbox = (o.max_x - o.min_x + 1) * (o.max_y - o.min_y + 1);
      if (o.area < bbox) any_concave = true;
    }
    CHECK(any_concave);
  }
  SUBCASE("placement failure names the seed") {
    SceneConfig cfg;
    cfg.patch_size = 16;
    cfg.n_objects_min = cfg.n_objects_max = 10;
    cfg.object_size_min = cfg.object_size_max = 10;
    cfg.seed = 5;
    CHECK_THROWS_AS(generate_scene(cfg), GenerationError);
    try {
      generate_scene(cfg);
    } catch (const GenerationError& e) {
      CHECK(std::string(e.what()).find("seed 5") != std::string::npos);
    }
  }
  SUBCASE("config validation") {
    SceneConfig cfg = small_scene(1);
    cfg.object_size_max = 2;  // below min
    CHECK_THROWS_AS(generate_scene(cfg), ConfigError);
    cfg = small_scene(1);
    cfg.object_size_max = 40;  // larger than patch
    CHECK_THROWS_AS(generate_scene(cfg), ConfigError);
  }
}

TEST_CASE("generate_scene image structure") {
  SceneConfig cfg = small_scene(11);
  const DatasetPatch p = generate_scene(cfg);
  SUBCASE("channel count includes the two coordinate channels") {
    CHECK(p.image.channels == cfg.feature_channels + 2);
    CHECK(p.image.at(0, 0, cfg.feature_channels) == 0.0f);
    CHECK(p.image.at(31, 0, cfg.feature_channels) == 1.0f);
    CHECK(p.image.at(0, 31, cfg.feature_channels + 1) == 1.0f);
  }
  SUBCASE("coord channels can be disabled") {
    cfg.coord_channels = false;
    CHECK(generate_scene(cfg).image.channels == cfg.feature_channels);
  }
  SUBCASE("object pixels share one flat color per object") {
    const ObjectSet objs = extract_objects(connected_components(p.gt_mask));
    for (const auto& obj : objs.components) {
      for (int c = 0; c < cfg.feature_channels; ++c) {
        const float first =
            p.image.values[static_cast<std::size_t>(obj.pixels[0]) *
                               p.image.channels +
                           c];
        for (std::int32_t px : obj.pixels) {
          CHECK(p.image.values[static_cast<std::size_t>(px) * p.image.channels +
                               c] == first);
        }
      }
    }
  }
  SUBCASE("distinct objects get distinct colors") {
    const ObjectSet objs = extract_objects(connected_components(p.gt_mask));
    REQUIRE(objs.components.size() >= 2);
    const auto color_of = [&](const ObjectComponent& o, int c) {
      return p.image.values[static_cast<std::size_t>(o.pixels[0]) *
                                p.image.channels +
                            c];
    };
    CHECK(color_of(objs.components[0], 0) != color_of(objs.components[1], 0));
  }
}

TEST_CASE("inject_noise drops whole objects only") {
  Rng meta_rng(9001);
  for (int rep = 0; rep < 20; ++rep) {
    SceneConfig cfg = small_scene(100 + static_cast<std::uint64_t>(rep));
    cfg.n_objects_min = 2;
    cfg.n_objects_max = 8;
    const DatasetPatch clean = generate_scene(cfg);
    const int n = component_count(clean.gt_mask);
    NoiseConfig noise{0.5, 9100 + static_cast<std::uint64_t>(rep)};
    const DatasetPatch noisy = inject_noise(clean, noise);
    const int drop = static_cast<int>(std::lround(noisy.meta.alpha * n));
    CHECK(static_cast<int>(noisy.meta.dropped_ids.size()) == drop);
    CHECK(component_count(noisy.noisy_mask) == n - drop);
    // Subset invariant: no new foreground anywhere.
    const SegScores s = seg_scores(noisy.noisy_mask, noisy.gt_mask);
    if (s.precision) CHECK(*s.precision == 1.0);
    // Surviving objects are intact: every noisy component has a gt twin.
    const ObjectSet gt_objs =
        extract_objects(connected_components(noisy.gt_mask));
    for (int id : noisy.meta.dropped_ids) {
      CHECK(id >= 1);
      CHECK(id <= n);
      for (std::int32_t px :
           gt_objs.components[static_cast<std::size_t>(id - 1)].pixels) {
        CHECK(noisy.noisy_mask.values[static_cast<std::size_t>(px)] == 0.0f);
      }
    }
  }
}

TEST_CASE("inject_noise alpha ranges track alpha0") {
  const auto sample_alphas = [](double alpha0) {
    DatasetPatch p;
    p.gt_mask = Raster::zeros(4, 4);
    p.noisy_mask = p.gt_mask;
    p.image = Raster::zeros(4, 4, 1);
    double lo = 1.0, hi = 0.0;
    for (int i = 0; i < 3000; ++i) {
      const DatasetPatch q =
          inject_noise(p, {alpha0, static_cast<std::uint64_t>(i)});
      lo = std::min(lo, q.meta.alpha);
      hi = std::max(hi, q.meta.alpha);
    }
    return std::pair{lo, hi};
  };
  SUBCASE("alpha0=0.3 spans [0,0.6]") {
    auto [lo, hi] = sample_alphas(0.3);
    CHECK(lo >= 0.0);
    CHECK(hi <= 0.6);
    CHECK(lo < 0.02);
    CHECK(hi > 0.58);
  }
  SUBCASE("alpha0=0.5 spans [0,1]") {
    auto [lo, hi] = sample_alphas(0.5);
    CHECK(lo >= 0.0);
    CHECK(hi <= 1.0);
    CHECK(lo < 0.03);
    CHECK(hi > 0.97);
  }
  SUBCASE("alpha0=0.7 spans [0.4,1]") {
    auto [lo, hi] = sample_alphas(0.7);
    CHECK(lo >= 0.4);
    CHECK(hi <= 1.0);
    CHECK(lo < 0.42);
    CHECK(hi > 0.98);
  }
  SUBCASE("alpha0 outside (0,1) is rejected") {
    DatasetPatch p;
    p.gt_mask = Raster::zeros(2, 2);
    p.noisy_mask = p.gt_mask;
    CHECK_THROWS_AS(inject_noise(p, {0.0, 1}), ConfigError);
    CHECK_THROWS_AS(inject_noise(p, {1.0, 1}), ConfigError);
  }
}

TEST_CASE("inject_noise on an empty patch is a no-op") {
  SceneConfig cfg = small_scene(3);
  cfg.n_objects_min = cfg.n_objects_max = 0;
  const DatasetPatch clean = generate_scene(cfg);
  const DatasetPatch noisy = inject_noise(clean, {0.5, 77});
  CHECK(noisy.noisy_mask.values == noisy.gt_mask.values);
  CHECK(noisy.meta.dropped_ids.empty());
}

TEST_CASE("dropped objects are chosen uniformly") {
  // Condition on patches where exactly 2 of 4 objects drop; each object
  // should then appear in roughly half of those draws.
  const DatasetPatch base = hand_patch({0, 1, 2, 3});
  int counts[4] = {0, 0, 0, 0};
  int trials = 0;
  for (int i = 0; i < 4000; ++i) {
    const DatasetPatch q =
        inject_noise(base, {0.5, static_cast<std::uint64_t>(i)});
    if (q.meta.dropped_ids.size() != 2) continue;
    ++trials;
    for (int id : q.meta.dropped_ids) ++counts[id - 1];
  }
  REQUIRE(trials > 300);
  for (int c : counts) {
    const double freq = static_cast<double>(c) / trials;
    CHECK(freq > 0.4);
    CHECK(freq < 0.6);
  }
}

TEST_CASE("dataset omission rate converges to alpha0") {
  for (double alpha0 : {0.3, 0.5, 0.7}) {
    std::int64_t total = 0, omitted = 0;
    for (int i = 0; i < 600; ++i) {
      SceneConfig cfg = small_scene(static_cast<std::uint64_t>(i));
      cfg.n_objects_min = 4;
      cfg.n_objects_max = 8;
      DatasetPatch p = generate_scene(cfg);
      p = inject_noise(p, {alpha0, static_cast<std::uint64_t>(1000 + i)});
      const int n = component_count(p.gt_mask);
      total += n;
      omitted += static_cast<std::int64_t>(p.meta.dropped_ids.size());
    }
    const double rate = static_cast<double>(omitted) / static_cast<double>(total);
    CHECK(std::abs(rate - alpha0) < 0.03);
  }
}

TEST_CASE("assess_quality") {
  SUBCASE("noisy equal to gt is perfect") {
    const std::vector<DatasetPatch> ds = {hand_patch({0, 1, 2, 3})};
    const QualityReport r = assess_quality(ds);
    CHECK(r.omission_rate == doctest::Approx(0.0));
    CHECK(r.iou == doctest::Approx(1.0));
    CHECK(r.oa == doctest::Approx(1.0));
  }
  SUBCASE("hand count: 4 objects of 4 px, 2 dropped on 10x10") {
    const std::vector<DatasetPatch> ds = {hand_patch({0, 1})};
    const QualityReport r = assess_quality(ds);
    CHECK(r.omission_rate == doctest::Approx(0.5));
    CHECK(r.iou == doctest::Approx(0.5));
    CHECK(r.oa == doctest::Approx(0.92));
  }
  SUBCASE("empty dataset is rejected") {
    CHECK_THROWS_AS(assess_quality({}), ContractError);
  }
}

TEST_CASE("patch directory round trip") {
  const std::filesystem::path root =
      std::filesystem::temp_directory_path() / "aio2_synth_test";
  std::filesystem::remove_all(root);
  SceneConfig cfg = small_scene(21);
  DatasetPatch p = generate_scene(cfg);
  p = inject_noise(p, {0.5, 22});
  const std::filesystem::path dir = patch_dir(root, patch_id(3));
  CHECK(dir == root / "patches" / "0003");
  write_patch(dir, p);
  const DatasetPatch back = read_patch(dir);
  CHECK(back.image.values == p.image.values);
  CHECK(back.image.channels == p.image.channels);
  CHECK(back.gt_mask.values == p.gt_mask.values);
  CHECK(back.noisy_mask.values == p.noisy_mask.values);
  CHECK(back.meta.alpha == doctest::Approx(p.meta.alpha));
  CHECK(back.meta.dropped_ids == p.meta.dropped_ids);
  std::filesystem::remove_all(root);
}

TEST_CASE("run_synth_job writes patches and manifests") {
  const std::filesystem::path root =
      std::filesystem::temp_directory_path() / "aio2_synth_job";
  std::filesystem::remove_all(root);
  SynthJob job;
  job.scene = small_scene(5);
  job.n_train = 3;
  job.n_val = 1;
  job.n_test = 2;
  run_synth_job(job, root);
  CHECK(read_manifest(root / "train.txt") ==
        std::vector<std::string>{"0000", "0001", "0002"});
  CHECK(read_manifest(root / "val.txt") == std::vector<std::string>{"0003"});
  CHECK(read_manifest(root / "test.txt") ==
        std::vector<std::string>{"0004", "0005"});
  CHECK(list_patch_ids(root) ==
        std::vector<std::string>{"0000", "0001", "0002", "0003", "0004",
                                 "0005"});
  // Freshly generated patches carry noisy = gt.
  const DatasetPatch p = read_patch(patch_dir(root, "0001"));
  CHECK(p.noisy_mask.values == p.gt_mask.values);
  // Per-patch seeds differ.
  const DatasetPatch q = read_patch(patch_dir(root, "0002"));
  CHECK(p.gt_mask.values != q.gt_mask.values);
  std::filesystem::remove_all(root);
}

TEST_CASE("scene config json parsing") {
  const nlohmann::json j = {{"patch_size", 48},
                            {"n_objects", {2, 5}},
                            {"object_kind", "l_shape"},
                            {"object_size", {4, 9}},
                            {"feature_channels", 2},
                            {"color_jitter", 0.2},
                            {"background_noise", 0.01},
                            {"coord_channels", false},
                            {"seed", 99}};
  const SceneConfig cfg = scene_config_from_json(j);
  CHECK(cfg.patch_size == 48);
  CHECK(cfg.n_objects_min == 2);
  CHECK(cfg.n_objects_max == 5);
  CHECK(cfg.object_kind == ObjectKind::LShape);
  CHECK(cfg.object_size_min == 4);
  CHECK(cfg.object_size_max == 9);
  CHECK(cfg.feature_channels == 2);
  CHECK(cfg.per_object_color_jitter == doctest::Approx(0.2));
  CHECK(cfg.background_texture_noise == doctest::Approx(0.01));
  CHECK(!cfg.coord_channels);
  CHECK(cfg.seed == 99);
  CHECK_THROWS_AS(scene_config_from_json({{"object_kind", "blob"}}),
                  ConfigError);
  CHECK_THROWS_AS(synth_job_from_json({{"n_train", -1}}), ConfigError);
}

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

#include "aio2/errors.hpp"
#include "aio2/learner.hpp"
#include "aio2/rng.hpp"

using namespace aio2;

namespace {

Raster random_image(int w, int h, int channels, Rng& rng) {
  Raster img = Raster::zeros(w, h, channels);
  for (auto& v : img.values) v = static_cast<float>(rng.uniform01());
  return img;
}

SoftMask random_target(int w, int h, Rng& rng) {
  SoftMask t = Raster::zeros(w, h);
  for (auto& v : t.values) v = static_cast<float>(rng.uniform01());
  return t;
}

std::filesystem::path temp_dir() {
  const auto dir = std::filesystem::temp_directory_path() / "aio2_learner_test";
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("parameter layout") {
  ModelConfig cfg;
  cfg.in_channels = 5;
  const ParamLayout lay = ParamLayout::for_config(cfg);
  REQUIRE(lay.tensors.size() == 6);
  CHECK(lay.find("conv1.w").shape == std::vector<int>{16, 5, 3, 3});
  CHECK(lay.find("conv2.w").shape == std::vector<int>{32, 16, 3, 3});
  CHECK(lay.find("conv3.w").shape == std::vector<int>{2, 32});
  CHECK(lay.find("conv3.b").shape == std::vector<int>{2});
  std::size_t expect = 0;
  for (const TensorSpec& t : lay.tensors) {
    CHECK(t.offset == expect);
    expect += t.size;
  }
  CHECK(lay.total == expect);
  CHECK(lay.total == 16 * 5 * 9 + 16 + 32 * 16 * 9 + 32 + 2 * 32 + 2);
  CHECK(ParamLayout::from_json(lay.to_json()) == lay);
  CHECK_THROWS_AS(lay.find("conv9.w"), ContractError);

  SUBCASE("width multiplier scales the hidden channels") {
    cfg.width_mult = 0.5;
    CHECK(cfg.hidden1() == 8);
    CHECK(cfg.hidden2() == 16);
  }
  SUBCASE("bad configs are rejected") {
    cfg.in_channels = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = ModelConfig{};
    cfg.width_mult = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
  }
}

TEST_CASE("forward pass") {
  ModelConfig cfg;
  cfg.in_channels = 3;
  cfg.width_mult = 0.25;
  cfg.init_seed = 11;
  Rng rng(5);
  const Raster img = random_image(9, 7, 3, rng);

  SUBCASE("zero parameters give the uniform distribution") {
    Model<float> model(cfg);
    std::fill(model.params().begin(), model.params().end(), 0.0f);
    for (float p : model.forward(img)) CHECK(p == 0.5f);
  }
  SUBCASE("probabilities normalize per pixel") {
    Model<float> model(cfg);
    const auto p = model.forward(img);
    const std::size_t plane = 9 * 7;
    for (std::size_t i = 0; i < plane; ++i) {
      CHECK(p[i] + p[plane + i] == doctest::Approx(1.0).epsilon(1e-6));
      CHECK(p[i] >= 0.0f);
    }
    const SoftMask fg = model.forward_prob(img);
    for (std::size_t i = 0; i < plane; ++i) {
      CHECK(fg.values[i] == doctest::Approx(p[plane + i]));
    }
  }
  SUBCASE("same seed reproduces bit-identical output") {
    Model<float> a(cfg);
    Model<float> b(cfg);
    CHECK(a.params() == b.params());
    CHECK(a.forward(img) == b.forward(img));
    b.init_params(999);
    CHECK(a.params() != b.params());
  }
  SUBCASE("float and double share the seeded initialization") {
    Model<float> f(cfg);
    Model<double> d(cfg);
    REQUIRE(f.params().size() == d.params().size());
    for (std::size_t i = 0; i < f.params().size(); ++i) {
      CHECK(f.params()[i] == static_cast<float>(d.params()[i]));
    }
  }
  SUBCASE("channel mismatch is rejected") {
    Model<float> model(cfg);
    CHECK_THROWS_AS(model.forward(Raster::zeros(4, 4, 2)), ContractError);
  }
}

TEST_CASE("loss values match hand evaluation") {
  ModelConfig cfg;
  cfg.in_channels = 1;
  cfg.width_mult = 0.25;
  Model<double> model(cfg);
  const Raster img = Raster::zeros(1, 1, 1);
  SoftMask target = Raster::zeros(1, 1);
  target.values[0] = 1.0f;
  const BatchSample sample{&img, &target};
  std::vector<double> grad;

  SUBCASE("uniform prediction on a foreground pixel") {
    std::fill(model.params().begin(), model.params().end(), 0.0);
    const auto loss = loss_and_grad(model, std::span(&sample, 1), grad);
    CHECK(loss.ce == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    // intersection 0.5 against a total mass of 2.
    CHECK(loss.dice == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(loss.total == doctest::Approx(std::log(2.0) + 0.5));
  }
  SUBCASE("saturated correct prediction loses nothing") {
    std::fill(model.params().begin(), model.params().end(), 0.0);
    const auto& b3 = model.layout().find("conv3.b");
    model.params()[b3.offset] = -60.0;      // background logit
    model.params()[b3.offset + 1] = 60.0;   // foreground logit
    const auto loss = loss_and_grad(model, std::span(&sample, 1), grad);
    CHECK(loss.dice == doctest::Approx(0.0).epsilon(1e-9));
    // only the probability clamp keeps the log finite
    CHECK(loss.ce == doctest::Approx(0.0).epsilon(1e-6));
  }
  SUBCASE("losses stay in range on random batches") {
    Rng rng(31);
    cfg.in_channels = 3;
    cfg.init_seed = 7;
    Model<double> m(cfg);
    for (int trial = 0; trial < 10; ++trial) {
      const Raster a = random_image(8, 6, 3, rng);
      const SoftMask ta = random_target(8, 6, rng);
      const BatchSample s{&a, &ta};
      const auto loss = loss_and_grad(m, std::span(&s, 1), grad);
      CHECK(loss.ce >= 0.0);
      CHECK(loss.dice >= 0.0);
      CHECK(loss.dice <= 1.0);
    }
  }
  SUBCASE("input contracts") {
    CHECK_THROWS_AS(loss_and_grad(model, {}, grad), ContractError);
    SoftMask wrong = Raster::zeros(2, 2);
    const BatchSample bad{&img, &wrong};
    CHECK_THROWS_AS(loss_and_grad(model, std::span(&bad, 1), grad),
                    ContractError);
  }
}

TEST_CASE("analytic gradients match central finite differences") {
  ModelConfig cfg;
  cfg.in_channels = 3;
  cfg.width_mult = 0.25;
  cfg.init_seed = 42;
  Model<double> model(cfg);
  Rng rng(90);
  const Raster img_a = random_image(7, 6, 3, rng);
  const Raster img_b = random_image(7, 6, 3, rng);
  SoftMask tgt_a = random_target(7, 6, rng);
  SoftMask tgt_b = Raster::zeros(7, 6);
  for (auto& v : tgt_b.values) v = rng.uniform01() < 0.3 ? 1.0f : 0.0f;
  const std::vector<BatchSample> batch = {{&img_a, &tgt_a}, {&img_b, &tgt_b}};

  std::vector<double> grad;
  loss_and_grad(model, batch, grad);
  REQUIRE(grad.size() == model.layout().total);

  // A handful of coordinates from every tensor.
  std::vector<std::size_t> coords;
  for (const TensorSpec& t : model.layout().tensors) {
    coords.push_back(t.offset);
    coords.push_back(t.offset + t.size / 2);
    coords.push_back(t.offset + t.size - 1);
  }
  const double h = 1e-6;
  std::vector<double> dummy;
  for (std::size_t i : coords) {
    const double saved = model.params()[i];
    model.params()[i] = saved + h;
    const double up = loss_and_grad(model, batch, dummy).total;
    model.params()[i] = saved - h;
    const double dn = loss_and_grad(model, batch, dummy).total;
    model.params()[i] = saved;
    const double fd = (up - dn) / (2.0 * h);
    const double scale = std::max({std::abs(fd), std::abs(grad[i]), 1e-8});
    CHECK(std::abs(fd - grad[i]) / scale < 1e-6);
  }
}

TEST_CASE("adam steps") {
  AdamConfig cfg;
  SUBCASE("zero gradient leaves fresh parameters in place") {
    std::vector<double> p = {0.3, -1.2};
    const std::vector<double> g = {0.0, 0.0};
    AdamState<double> st;
    st.reset(2);
    adam_step(p, g, st, cfg);
    CHECK(st.t == 1);
    CHECK(p == std::vector<double>{0.3, -1.2});
  }
  SUBCASE("first step moves by about lr against the gradient sign") {
    std::vector<double> p = {1.0, 1.0};
    const std::vector<double> g = {0.25, -3.0};
    AdamState<double> st;
    st.reset(2);
    adam_step(p, g, st, cfg);
    CHECK(p[0] == doctest::Approx(1.0 - cfg.lr).epsilon(1e-5));
    CHECK(p[1] == doctest::Approx(1.0 + cfg.lr).epsilon(1e-5));
  }
  SUBCASE("two constant-gradient steps follow the hand recurrence") {
    const double g = 0.7;
    std::vector<double> p = {0.0};
    AdamState<double> st;
    st.reset(1);
    adam_step(p, {g}, st, cfg);
    adam_step(p, {g}, st, cfg);
    double m = 0.0, v = 0.0, want = 0.0;
    for (int t = 1; t <= 2; ++t) {
      m = cfg.beta1 * m + (1 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
      const double mh = m / (1 - std::pow(cfg.beta1, t));
      const double vh = v / (1 - std::pow(cfg.beta2, t));
      want -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
    }
    CHECK(p[0] == doctest::Approx(want).epsilon(1e-14));
    CHECK(st.t == 2);
  }
  SUBCASE("size mismatches are rejected") {
    std::vector<double> p = {1.0};
    AdamState<double> st;
    st.reset(2);
    CHECK_THROWS_AS(adam_step(p, {0.1}, st, cfg), ContractError);
  }
}

TEST_CASE("ema updates") {
  SUBCASE("iteration zero copies the student") {
    std::vector<double> teacher;
    ema_update(teacher, {1.0, 2.0}, 0.999, 0);
    CHECK(teacher == std::vector<double>{1.0, 2.0});
  }
  SUBCASE("alpha zero tracks the student exactly") {
    std::vector<double> teacher = {5.0};
    ema_update(teacher, {2.0}, 0.0, 3);
    CHECK(teacher[0] == 2.0);
  }
  SUBCASE("hand recurrence at alpha one half") {
    std::vector<double> teacher;
    ema_update(teacher, {0.0}, 0.5, 0);
    ema_update(teacher, {1.0}, 0.5, 1);
    ema_update(teacher, {2.0}, 0.5, 2);
    CHECK(teacher[0] == doctest::Approx(1.25).epsilon(1e-15));
  }
  SUBCASE("constant student reaches the closed form") {
    for (double alpha : {0.5, 0.999}) {
      std::vector<double> teacher = {0.2};
      const std::vector<double> student = {0.9};
      const int n = 500;
      for (int i = 1; i <= n; ++i) ema_update(teacher, student, alpha, i);
      const double want =
          std::pow(alpha, n) * 0.2 + (1.0 - std::pow(alpha, n)) * 0.9;
      CHECK(teacher[0] == doctest::Approx(want).epsilon(1e-12));
    }
  }
  SUBCASE("contracts") {
    std::vector<double> teacher = {1.0};
    CHECK_THROWS_AS(ema_update(teacher, {1.0, 2.0}, 0.5, 1), ContractError);
    CHECK_THROWS_AS(ema_update(teacher, {1.0}, 1.0, 1), ConfigError);
    CHECK_THROWS_AS(ema_update(teacher, {1.0}, 0.5, -1), ContractError);
  }
}

TEST_CASE("pixelwise correction") {
  BinaryMask noisy = Raster::zeros(3, 3);
  noisy.values[8] = 1.0f;
  SoftMask prob = Raster::zeros(3, 3);

  SUBCASE("low confidence keeps the labels") {
    for (auto& v : prob.values) v = 0.5f;
    CHECK(pixelwise_correct(noisy, prob, 0.6).values == noisy.values);
  }
  SUBCASE("confident foreground flips missed pixels") {
    for (auto& v : prob.values) v = 0.5f;
    prob.values[0] = 1.0f;
    const SoftMask out = pixelwise_correct(noisy, prob, 0.6);
    CHECK(out.values[0] == 1.0f);
    CHECK(out.values[8] == 1.0f);
    CHECK(out.values[4] == 0.0f);
  }
  SUBCASE("only pixels at or above the threshold flip") {
    // 0.9 foreground clears K=0.6; 0.45 foreground has confidence 0.55.
    for (auto& v : prob.values) v = 0.45f;
    prob.values[0] = 0.9f;
    prob.values[1] = 0.9f;
    const SoftMask out = pixelwise_correct(noisy, prob, 0.6);
    CHECK(out.values[0] == 1.0f);
    CHECK(out.values[1] == 1.0f);
    for (int i = 2; i < 8; ++i) CHECK(out.values[i] == noisy.values[i]);
    CHECK(out.values[8] == 1.0f);
  }
  SUBCASE("confident background can erase a label") {
    prob.values[8] = 0.05f;
    for (int i = 0; i < 8; ++i) prob.values[i] = 0.5f;
    CHECK(pixelwise_correct(noisy, prob, 0.6).values[8] == 0.0f);
  }
  SUBCASE("threshold validation") {
    CHECK_THROWS_AS(pixelwise_correct(noisy, prob, 1.0), ConfigError);
  }
}

TEST_CASE("bootstrapping") {
  SUBCASE("beta one returns the labels untouched") {
    BinaryMask noisy = Raster::zeros(2, 2);
    noisy.values[1] = 1.0f;
    SoftMask prob = Raster::zeros(2, 2);
    for (auto& v : prob.values) v = 0.7f;
    CHECK(bootstrap_targets(noisy, prob, 1.0).values == noisy.values);
  }
  SUBCASE("direct formula") {
    BinaryMask noisy = Raster::zeros(1, 1);
    noisy.values[0] = 1.0f;
    SoftMask prob = Raster::zeros(1, 1);
    prob.values[0] = 0.5f;
    CHECK(bootstrap_targets(noisy, prob, 0.3).values[0] ==
          doctest::Approx(0.65));
  }
  SUBCASE("schedule decays geometrically to the floor") {
    const BaselineConfig cfg;
    CHECK(bootstrap_beta(0, cfg) == doctest::Approx(1.0));
    CHECK(bootstrap_beta(80, cfg) == doctest::Approx(0.3));
    CHECK(bootstrap_beta(200, cfg) == doctest::Approx(0.3));
    CHECK(bootstrap_beta(40, cfg) == doctest::Approx(std::sqrt(0.3)));
    const double r0 = bootstrap_beta(11, cfg) / bootstrap_beta(10, cfg);
    const double r1 = bootstrap_beta(51, cfg) / bootstrap_beta(50, cfg);
    CHECK(r0 == doctest::Approx(r1).epsilon(1e-12));
    CHECK_THROWS_AS(bootstrap_beta(-1, cfg), ContractError);
  }
  SUBCASE("beta outside the schedule range is rejected") {
    const BinaryMask noisy = Raster::zeros(1, 1);
    const SoftMask prob = Raster::zeros(1, 1);
    CHECK_THROWS_AS(bootstrap_targets(noisy, prob, 0.2), ContractError);
    CHECK_THROWS_AS(bootstrap_targets(noisy, prob, 1.1), ContractError);
  }
}

TEST_CASE("training drives the loss down on one patch") {
  ModelConfig cfg;
  cfg.in_channels = 3;
  cfg.width_mult = 0.25;
  cfg.init_seed = 3;
  Model<float> model(cfg);
  Rng rng(12);
  const Raster img = random_image(16, 16, 3, rng);
  SoftMask target = Raster::zeros(16, 16);
  for (int y = 4; y < 12; ++y) {
    for (int x = 4; x < 12; ++x) target.values[y * 16 + x] = 1.0f;
  }
  const BatchSample sample{&img, &target};
  AdamConfig adam;
  adam.lr = 5e-3;
  AdamState<float> st;
  st.reset(model.layout().total);
  std::vector<float> grad;
  const float first = loss_and_grad(model, std::span(&sample, 1), grad).total;
  float last = first;
  for (int step = 0; step < 300; ++step) {
    last = loss_and_grad(model, std::span(&sample, 1), grad).total;
    adam_step(model.params(), grad, st, adam);
  }
  CHECK(last < 0.5f * first);
}

TEST_CASE("checkpoint files round-trip") {
  ModelConfig cfg;
  cfg.in_channels = 4;
  cfg.width_mult = 0.5;
  cfg.init_seed = 21;
  Model<float> model(cfg);
  Checkpoint c;
  c.epoch = 17;
  c.adam_t = 425;
  c.layout = model.layout();
  c.student = model.params();
  model.init_params(99);
  c.teacher = model.params();
  c.adam_m.assign(c.layout.total, 0.125f);
  c.adam_v.assign(c.layout.total, 2.5f);

  const auto dir = temp_dir();
  const auto path = dir / "ckpt.bin";
  write_checkpoint(path, c);
  const Checkpoint r = read_checkpoint(path);
  CHECK(r.epoch == 17);
  CHECK(r.adam_t == 425);
  CHECK(r.layout == c.layout);
  CHECK(r.student == c.student);
  CHECK(r.teacher == c.teacher);
  CHECK(r.adam_m == c.adam_m);
  CHECK(r.adam_v == c.adam_v);

  SUBCASE("bad magic is rejected") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("JUNKJUNK", 8);
    f.close();
    CHECK_THROWS_AS(read_checkpoint(path), IoError);
  }
  SUBCASE("truncation is rejected") {
    const auto bytes = std::filesystem::file_size(path);
    std::filesystem::resize_file(path, bytes - 40);
    CHECK_THROWS_AS(read_checkpoint(path), IoError);
  }
  SUBCASE("trailing bytes are rejected") {
    std::ofstream f(path, std::ios::binary | std::ios::app);
    f.write("x", 1);
    f.close();
    CHECK_THROWS_AS(read_checkpoint(path), IoError);
  }
  SUBCASE("section size mismatch is rejected on write") {
    c.student.pop_back();
    CHECK_THROWS_AS(write_checkpoint(dir / "bad.bin", c), ContractError);
  }
}

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "aio2/raster.hpp"

namespace aio2 {

// conv3x3(C_in -> 16w) - ReLU - conv3x3(16w -> 32w) - ReLU - conv1x1 -> 2
// classes - softmax, zero padding throughout. Spatial shape is preserved.
struct ModelConfig {
  int in_channels = 5;
  double width_mult = 1.0;
  std::uint64_t init_seed = 0;

  int hidden1() const;
  int hidden2() const;
  void validate() const;
};

struct TensorSpec {
  std::string name;
  std::vector<int> shape;
  std::size_t offset = 0;
  std::size_t size = 0;

  bool operator==(const TensorSpec&) const = default;
};

// Describes how the flat parameter vector splits into named tensors.
struct ParamLayout {
  std::vector<TensorSpec> tensors;
  std::size_t total = 0;

  static ParamLayout for_config(const ModelConfig& cfg);
  const TensorSpec& find(const std::string& name) const;
  nlohmann::json to_json() const;
  static ParamLayout from_json(const nlohmann::json& j);
  bool operator==(const ParamLayout&) const = default;
};

// The scalar type is a template parameter so tests can run the identical
// arithmetic in double; training uses float.
template <typename T>
class Model {
 public:
  explicit Model(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  std::vector<T>& params() { return params_; }
  const std::vector<T>& params() const { return params_; }

  // He fan-in normal weights, zero biases.
  void init_params(std::uint64_t seed);

  // Planar class probabilities, [2][H][W] flattened, background first.
  std::vector<T> forward(const Raster& image) const;
  // Foreground probability map.
  SoftMask forward_prob(const Raster& image) const;

 private:
  ModelConfig cfg_;
  ParamLayout layout_;
  std::vector<T> params_;
};

struct BatchSample {
  const Raster* image = nullptr;
  // Foreground target in [0,1]; background is its complement.
  const SoftMask* target = nullptr;
};

template <typename T>
struct LossValue {
  T total = 0;
  T ce = 0;
  T dice = 0;
};

// Cross-entropy (mean over every pixel in the batch) plus dice computed over
// the whole batch and both classes. grad is resized to the parameter count.
// Patches are reduced in index order, so the result does not depend on any
// parallel schedule.
template <typename T>
LossValue<T> loss_and_grad(const Model<T>& model,
                           std::span<const BatchSample> batch,
                           std::vector<T>& grad);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

template <typename T>
struct AdamState {
  std::vector<T> m;
  std::vector<T> v;
  std::int64_t t = 0;

  void reset(std::size_t n);
};

template <typename T>
void adam_step(std::vector<T>& params, const std::vector<T>& grad,
               AdamState<T>& state, const AdamConfig& cfg);

// n is the completed student iteration count before this update; n = 0 copies
// the student wholesale, later calls blend alpha * teacher + (1-alpha) *
// student. The blend is evaluated in double before storing.
template <typename T>
void ema_update(std::vector<T>& teacher, const std::vector<T>& student,
                double alpha, std::int64_t n);

struct TrainerConfig {
  AdamConfig adam;
  double ema_alpha = 0.999;
  int batch_size = 8;
  int epochs = 300;
  std::uint64_t seed = 0;

  void validate() const;
};

struct BaselineConfig {
  // Confidence threshold for the fixed pixel-wise correction arm.
  double pixelwise_k = 0.6;
  // Bootstrapping schedule: beta decays geometrically from 1 to this floor
  // across the first `bootstrap_epochs` epochs and stays there.
  double bootstrap_floor = 0.3;
  int bootstrap_epochs = 80;

  void validate() const;
};

// Pixels where the larger class probability reaches k take the model's hard
// prediction; everything else keeps the noisy label.
SoftMask pixelwise_correct(const BinaryMask& noisy, const SoftMask& prob,
                           double k);

double bootstrap_beta(int epoch, const BaselineConfig& cfg = BaselineConfig{});

// y' = beta * y + (1 - beta) * p, pixel-wise.
SoftMask bootstrap_targets(const BinaryMask& noisy, const SoftMask& prob,
                           double beta);

struct Checkpoint {
  int epoch = 0;
  std::int64_t adam_t = 0;
  ParamLayout layout;
  std::vector<float> student;
  std::vector<float> teacher;
  std::vector<float> adam_m;
  std::vector<float> adam_v;
};

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace aio2

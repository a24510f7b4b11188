#include "aio2/learner.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "aio2/errors.hpp"
#include "aio2/parallel.hpp"
#include "aio2/rng.hpp"

namespace aio2 {

int ModelConfig::hidden1() const {
  return std::max(1, static_cast<int>(std::lround(16.0 * width_mult)));
}

int ModelConfig::hidden2() const {
  return std::max(1, static_cast<int>(std::lround(32.0 * width_mult)));
}

void ModelConfig::validate() const {
  if (in_channels < 1) throw ConfigError("model: in_channels must be >= 1");
  if (!(width_mult > 0.0)) throw ConfigError("model: width_mult must be > 0");
}

ParamLayout ParamLayout::for_config(const ModelConfig& cfg) {
  cfg.validate();
  const int c1 = cfg.hidden1();
  const int c2 = cfg.hidden2();
  ParamLayout lay;
  const auto add = [&lay](const std::string& name, std::vector<int> shape) {
    TensorSpec t;
    t.name = name;
    t.shape = std::move(shape);
    t.offset = lay.total;
    t.size = 1;
    for (int d : t.shape) t.size *= static_cast<std::size_t>(d);
    lay.total += t.size;
    lay.tensors.push_back(std::move(t));
  };
  add("conv1.w", {c1, cfg.in_channels, 3, 3});
  add("conv1.b", {c1});
  add("conv2.w", {c2, c1, 3, 3});
  add("conv2.b", {c2});
  add("conv3.w", {2, c2});
  add("conv3.b", {2});
  return lay;
}

const TensorSpec& ParamLayout::find(const std::string& name) const {
  for (const TensorSpec& t : tensors) {
    if (t.name == name) return t;
  }
  throw ContractError("layout: no tensor named " + name);
}

nlohmann::json ParamLayout::to_json() const {
  nlohmann::json js = nlohmann::json::array();
  for (const TensorSpec& t : tensors) {
    js.push_back({{"name", t.name}, {"shape", t.shape}});
  }
  return {{"total", total}, {"tensors", js}};
}

ParamLayout ParamLayout::from_json(const nlohmann::json& j) {
  ParamLayout lay;
  for (const auto& tj : j.at("tensors")) {
    TensorSpec t;
    t.name = tj.at("name").get<std::string>();
    t.shape = tj.at("shape").get<std::vector<int>>();
    t.offset = lay.total;
    t.size = 1;
    for (int d : t.shape) {
      if (d < 1) throw IoError("layout: non-positive tensor dimension");
      t.size *= static_cast<std::size_t>(d);
    }
    lay.total += t.size;
    lay.tensors.push_back(std::move(t));
  }
  if (lay.total != j.at("total").get<std::size_t>()) {
    throw IoError("layout: total does not match tensor shapes");
  }
  return lay;
}

namespace {

// Planar activations for one patch; buffers are [channels][H][W].
template <typename T>
struct Acts {
  int h = 0;
  int w = 0;
  std::vector<T> x;
  std::vector<T> y1;
  std::vector<T> a1;
  std::vector<T> y2;
  std::vector<T> a2;
  std::vector<T> prob;  // [2][H][W], background first
};

template <typename T>
void to_planar(const Raster& img, std::vector<T>& out) {
  const int n = img.width * img.height;
  out.resize(static_cast<std::size_t>(n) * img.channels);
  for (int c = 0; c < img.channels; ++c) {
    for (int i = 0; i < n; ++i) {
      out[static_cast<std::size_t>(c) * n + i] =
          static_cast<T>(img.values[static_cast<std::size_t>(i) * img.channels + c]);
    }
  }
}

// out[o] = b[o] + sum_c corr3x3(in[c], w[o][c]) with zero padding.
template <typename T>
void conv3_forward(const T* in, int cin, int h, int w, const T* wts,
                   const T* bias, int cout, T* out) {
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int o = 0; o < cout; ++o) {
    std::fill(out + o * plane, out + (o + 1) * plane, bias[o]);
  }
  for (int o = 0; o < cout; ++o) {
    for (int c = 0; c < cin; ++c) {
      for (int ky = 0; ky < 3; ++ky) {
        const int dy = ky - 1;
        for (int kx = 0; kx < 3; ++kx) {
          const int dx = kx - 1;
          const T wv = wts[((static_cast<std::size_t>(o) * cin + c) * 3 + ky) * 3 + kx];
          const int ylo = std::max(0, -dy);
          const int yhi = h - std::max(0, dy);
          const int xlo = std::max(0, -dx);
          const int xhi = w - std::max(0, dx);
          for (int y = ylo; y < yhi; ++y) {
            const T* src = in + (static_cast<std::size_t>(c) * h + y + dy) * w + (xlo + dx);
            T* dst = out + (static_cast<std::size_t>(o) * h + y) * w + xlo;
            for (int i = 0; i < xhi - xlo; ++i) dst[i] += wv * src[i];
          }
        }
      }
    }
  }
}

// din[c] += sum_o corr-transpose(dout[o], w[o][c]); din must be zeroed.
template <typename T>
void conv3_backward_data(const T* dout, int cout, int h, int w, const T* wts,
                         int cin, T* din) {
  for (int o = 0; o < cout; ++o) {
    for (int c = 0; c < cin; ++c) {
      for (int ky = 0; ky < 3; ++ky) {
        const int dy = ky - 1;
        for (int kx = 0; kx < 3; ++kx) {
          const int dx = kx - 1;
          const T wv = wts[((static_cast<std::size_t>(o) * cin + c) * 3 + ky) * 3 + kx];
          const int ylo = std::max(0, -dy);
          const int yhi = h - std::max(0, dy);
          const int xlo = std::max(0, -dx);
          const int xhi = w - std::max(0, dx);
          for (int y = ylo; y < yhi; ++y) {
            T* dst = din + (static_cast<std::size_t>(c) * h + y + dy) * w + (xlo + dx);
            const T* src = dout + (static_cast<std::size_t>(o) * h + y) * w + xlo;
            for (int i = 0; i < xhi - xlo; ++i) dst[i] += wv * src[i];
          }
        }
      }
    }
  }
}

// Lane-split dot product: partial sums are tied to fixed lane positions, so
// the result is reproducible while the lane loop stays vectorizable.
template <typename T>
T lane_dot(const T* a, const T* b, int n) {
  constexpr int kLanes = 16;
  T lanes[kLanes] = {};
  int i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (int l = 0; l < kLanes; ++l) lanes[l] += a[i + l] * b[i + l];
  }
  for (; i < n; ++i) lanes[i % kLanes] += a[i] * b[i];
  T acc = 0;
  for (int l = 0; l < kLanes; ++l) acc += lanes[l];
  return acc;
}

template <typename T>
T lane_sum(const T* a, std::size_t n) {
  constexpr std::size_t kLanes = 16;
  T lanes[kLanes] = {};
  std::size_t i = 0;
  for (; i + kLanes <= n; i += kLanes) {
    for (std::size_t l = 0; l < kLanes; ++l) lanes[l] += a[i + l];
  }
  for (; i < n; ++i) lanes[i % kLanes] += a[i];
  T acc = 0;
  for (std::size_t l = 0; l < kLanes; ++l) acc += lanes[l];
  return acc;
}

// dw[o][c][ky][kx] += <dout[o], shifted in[c]>; db[o] += sum dout[o].
template <typename T>
void conv3_backward_params(const T* dout, int cout, const T* in, int cin,
                           int h, int w, T* dw, T* db) {
  for (int o = 0; o < cout; ++o) {
    for (int c = 0; c < cin; ++c) {
      for (int ky = 0; ky < 3; ++ky) {
        const int dy = ky - 1;
        for (int kx = 0; kx < 3; ++kx) {
          const int dx = kx - 1;
          const int ylo = std::max(0, -dy);
          const int yhi = h - std::max(0, dy);
          const int xlo = std::max(0, -dx);
          const int xhi = w - std::max(0, dx);
          T acc = 0;
          for (int y = ylo; y < yhi; ++y) {
            const T* a = dout + (static_cast<std::size_t>(o) * h + y) * w + xlo;
            const T* b = in + (static_cast<std::size_t>(c) * h + y + dy) * w + (xlo + dx);
            acc += lane_dot(a, b, xhi - xlo);
          }
          dw[((static_cast<std::size_t>(o) * cin + c) * 3 + ky) * 3 + kx] += acc;
        }
      }
    }
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int o = 0; o < cout; ++o) {
    db[o] += lane_sum(dout + o * plane, plane);
  }
}

template <typename T>
void run_forward(const ModelConfig& cfg, const ParamLayout& lay,
                 const std::vector<T>& params, const Raster& img, Acts<T>& a) {
  if (img.channels != cfg.in_channels) {
    throw ContractError("model: image has " + std::to_string(img.channels) +
                        " channels, config expects " +
                        std::to_string(cfg.in_channels));
  }
  const int h = img.height;
  const int w = img.width;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const int c1 = cfg.hidden1();
  const int c2 = cfg.hidden2();
  a.h = h;
  a.w = w;
  to_planar(img, a.x);
  a.y1.assign(plane * c1, T(0));
  a.y2.assign(plane * c2, T(0));
  a.prob.assign(plane * 2, T(0));

  const T* p = params.data();
  conv3_forward(a.x.data(), cfg.in_channels, h, w,
                p + lay.find("conv1.w").offset, p + lay.find("conv1.b").offset,
                c1, a.y1.data());
  a.a1 = a.y1;
  for (T& v : a.a1) v = std::max(v, T(0));
  conv3_forward(a.a1.data(), c1, h, w, p + lay.find("conv2.w").offset,
                p + lay.find("conv2.b").offset, c2, a.y2.data());
  a.a2 = a.y2;
  for (T& v : a.a2) v = std::max(v, T(0));

  const T* w3 = p + lay.find("conv3.w").offset;
  const T* b3 = p + lay.find("conv3.b").offset;
  std::vector<T> z(plane * 2);
  for (int j = 0; j < 2; ++j) {
    std::fill(z.begin() + j * plane, z.begin() + (j + 1) * plane, b3[j]);
    for (int c = 0; c < c2; ++c) {
      const T wv = w3[static_cast<std::size_t>(j) * c2 + c];
      const T* src = a.a2.data() + c * plane;
      T* dst = z.data() + j * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] += wv * src[i];
    }
  }
  for (std::size_t i = 0; i < plane; ++i) {
    const T zb = z[i];
    const T zf = z[plane + i];
    const T m = std::max(zb, zf);
    const T eb = std::exp(zb - m);
    const T ef = std::exp(zf - m);
    const T s = eb + ef;
    a.prob[i] = eb / s;
    a.prob[plane + i] = ef / s;
  }
}

constexpr double kProbFloor = 1e-7;

}  // namespace

template <typename T>
Model<T>::Model(const ModelConfig& cfg)
    : cfg_(cfg), layout_(ParamLayout::for_config(cfg)) {
  params_.assign(layout_.total, T(0));
  init_params(cfg.init_seed);
}

template <typename T>
void Model<T>::init_params(std::uint64_t seed) {
  Rng rng(seed);
  for (const TensorSpec& t : layout_.tensors) {
    const bool is_bias = t.shape.size() == 1;
    if (is_bias) {
      std::fill_n(params_.begin() + t.offset, t.size, T(0));
      continue;
    }
    std::size_t fan_in = 1;
    for (std::size_t d = 1; d < t.shape.size(); ++d) {
      fan_in *= static_cast<std::size_t>(t.shape[d]);
    }
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < t.size; ++i) {
      params_[t.offset + i] = static_cast<T>(rng.normal(0.0, stddev));
    }
  }
}

template <typename T>
std::vector<T> Model<T>::forward(const Raster& image) const {
  Acts<T> a;
  run_forward(cfg_, layout_, params_, image, a);
  return std::move(a.prob);
}

template <typename T>
SoftMask Model<T>::forward_prob(const Raster& image) const {
  Acts<T> a;
  run_forward(cfg_, layout_, params_, image, a);
  const std::size_t plane = static_cast<std::size_t>(a.h) * a.w;
  SoftMask out = Raster::zeros(a.w, a.h);
  for (std::size_t i = 0; i < plane; ++i) {
    out.values[i] = static_cast<float>(a.prob[plane + i]);
  }
  return out;
}

template <typename T>
LossValue<T> loss_and_grad(const Model<T>& model,
                           std::span<const BatchSample> batch,
                           std::vector<T>& grad) {
  if (batch.empty()) throw ContractError("loss: empty batch");
  for (const BatchSample& s : batch) {
    if (s.image == nullptr || s.target == nullptr) {
      throw ContractError("loss: null sample");
    }
    if (s.image->width != s.target->width ||
        s.image->height != s.target->height) {
      throw ContractError("loss: image and target shapes differ");
    }
    if (!is_soft_mask(*s.target)) {
      throw ContractError("loss: target outside [0,1]");
    }
  }

  const int nb = static_cast<int>(batch.size());
  const ModelConfig& cfg = model.config();
  const ParamLayout& lay = model.layout();
  std::vector<Acts<T>> acts(nb);
  std::vector<double> ce_part(nb, 0.0);
  std::vector<double> inter_part(nb, 0.0);
  std::vector<double> sum_part(nb, 0.0);
  std::int64_t n_total = 0;
  for (const BatchSample& s : batch) {
    n_total += static_cast<std::int64_t>(s.image->width) * s.image->height;
  }
  const double n_inv = 1.0 / static_cast<double>(n_total);

  parallel_for(nb, [&](int bi) {
    Acts<T>& a = acts[bi];
    run_forward(cfg, lay, model.params(), *batch[bi].image, a);
    const std::size_t plane = static_cast<std::size_t>(a.h) * a.w;
    const float* tgt = batch[bi].target->values.data();
    double ce = 0.0;
    double inter = 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < plane; ++i) {
      const double yf = tgt[i];
      const double yb = 1.0 - yf;
      const double pb = static_cast<double>(a.prob[i]);
      const double pf = static_cast<double>(a.prob[plane + i]);
      const double qb = std::clamp(pb, kProbFloor, 1.0 - kProbFloor);
      const double qf = std::clamp(pf, kProbFloor, 1.0 - kProbFloor);
      ce -= yb * std::log(qb) + yf * std::log(qf);
      inter += yb * pb + yf * pf;
      sum += yb + pb + yf + pf;
    }
    ce_part[bi] = ce;
    inter_part[bi] = inter;
    sum_part[bi] = sum;
  });

  double ce_sum = 0.0;
  double inter = 0.0;
  double denom = 0.0;
  for (int bi = 0; bi < nb; ++bi) {
    ce_sum += ce_part[bi];
    inter += inter_part[bi];
    denom += sum_part[bi];
  }

  LossValue<T> loss;
  loss.ce = static_cast<T>(ce_sum * n_inv);
  loss.dice = static_cast<T>(1.0 - 2.0 * inter / denom);
  loss.total = loss.ce + loss.dice;

  const int c1 = cfg.hidden1();
  const int c2 = cfg.hidden2();
  const T* w2 = model.params().data() + lay.find("conv2.w").offset;
  const T* w3 = model.params().data() + lay.find("conv3.w").offset;
  std::vector<std::vector<T>> grad_part(nb);

  parallel_for(nb, [&](int bi) {
    const Acts<T>& a = acts[bi];
    const std::size_t plane = static_cast<std::size_t>(a.h) * a.w;
    const float* tgt = batch[bi].target->values.data();
    std::vector<T>& g = grad_part[bi];
    g.assign(lay.total, T(0));

    // d loss / d logits via the softmax Jacobian.
    std::vector<T> dz(plane * 2);
    for (std::size_t i = 0; i < plane; ++i) {
      const double yf = tgt[i];
      const double yb = 1.0 - yf;
      const double pb = static_cast<double>(a.prob[i]);
      const double pf = static_cast<double>(a.prob[plane + i]);
      double gb = -2.0 * yb / denom + 2.0 * inter / (denom * denom);
      double gf = -2.0 * yf / denom + 2.0 * inter / (denom * denom);
      if (pb > kProbFloor && pb < 1.0 - kProbFloor) gb -= yb / pb * n_inv;
      if (pf > kProbFloor && pf < 1.0 - kProbFloor) gf -= yf / pf * n_inv;
      const double dot = gb * pb + gf * pf;
      dz[i] = static_cast<T>(pb * (gb - dot));
      dz[plane + i] = static_cast<T>(pf * (gf - dot));
    }

    T* dw3 = g.data() + lay.find("conv3.w").offset;
    T* db3 = g.data() + lay.find("conv3.b").offset;
    std::vector<T> da2(plane * c2, T(0));
    for (int j = 0; j < 2; ++j) {
      const T* dzj = dz.data() + j * plane;
      T acc = 0;
      for (std::size_t i = 0; i < plane; ++i) acc += dzj[i];
      db3[j] += acc;
      for (int c = 0; c < c2; ++c) {
        const T* a2c = a.a2.data() + c * plane;
        T dot = 0;
        for (std::size_t i = 0; i < plane; ++i) dot += dzj[i] * a2c[i];
        dw3[static_cast<std::size_t>(j) * c2 + c] += dot;
        const T wv = w3[static_cast<std::size_t>(j) * c2 + c];
        T* dst = da2.data() + c * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] += wv * dzj[i];
      }
    }
    for (std::size_t i = 0; i < da2.size(); ++i) {
      if (a.y2[i] <= T(0)) da2[i] = T(0);
    }

    conv3_backward_params(da2.data(), c2, a.a1.data(), c1, a.h, a.w,
                          g.data() + lay.find("conv2.w").offset,
                          g.data() + lay.find("conv2.b").offset);
    std::vector<T> da1(plane * c1, T(0));
    conv3_backward_data(da2.data(), c2, a.h, a.w, w2, c1, da1.data());
    for (std::size_t i = 0; i < da1.size(); ++i) {
      if (a.y1[i] <= T(0)) da1[i] = T(0);
    }
    conv3_backward_params(da1.data(), c1, a.x.data(), cfg.in_channels, a.h,
                          a.w, g.data() + lay.find("conv1.w").offset,
                          g.data() + lay.find("conv1.b").offset);
  });

  grad.assign(lay.total, T(0));
  for (int bi = 0; bi < nb; ++bi) {
    const std::vector<T>& g = grad_part[bi];
    for (std::size_t i = 0; i < lay.total; ++i) grad[i] += g[i];
  }
  return loss;
}

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("adam: lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("adam: beta1 in [0,1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam: beta2 in [0,1)");
  if (!(eps > 0.0)) throw ConfigError("adam: eps must be > 0");
}

template <typename T>
void AdamState<T>::reset(std::size_t n) {
  m.assign(n, T(0));
  v.assign(n, T(0));
  t = 0;
}

template <typename T>
void adam_step(std::vector<T>& params, const std::vector<T>& grad,
               AdamState<T>& state, const AdamConfig& cfg) {
  cfg.validate();
  if (params.size() != grad.size() || params.size() != state.m.size() ||
      params.size() != state.v.size()) {
    throw ContractError("adam: parameter, gradient, and state sizes differ");
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = static_cast<double>(grad[i]);
    const double m = cfg.beta1 * static_cast<double>(state.m[i]) + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * static_cast<double>(state.v[i]) + (1.0 - cfg.beta2) * g * g;
    state.m[i] = static_cast<T>(m);
    state.v[i] = static_cast<T>(v);
    const double update = cfg.lr * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
    params[i] = static_cast<T>(static_cast<double>(params[i]) - update);
  }
}

template <typename T>
void ema_update(std::vector<T>& teacher, const std::vector<T>& student,
                double alpha, std::int64_t n) {
  if (!(alpha >= 0.0 && alpha < 1.0)) {
    throw ConfigError("ema: alpha must be in [0,1)");
  }
  if (n < 0) throw ContractError("ema: negative iteration");
  if (n == 0) {
    teacher = student;
    return;
  }
  if (teacher.size() != student.size()) {
    throw ContractError("ema: teacher and student sizes differ");
  }
  for (std::size_t i = 0; i < teacher.size(); ++i) {
    teacher[i] = static_cast<T>(alpha * static_cast<double>(teacher[i]) +
                                (1.0 - alpha) * static_cast<double>(student[i]));
  }
}

void TrainerConfig::validate() const {
  adam.validate();
  if (!(ema_alpha >= 0.0 && ema_alpha < 1.0)) {
    throw ConfigError("trainer: ema_alpha must be in [0,1)");
  }
  if (batch_size < 1) throw ConfigError("trainer: batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("trainer: epochs must be >= 1");
}

void BaselineConfig::validate() const {
  if (!(pixelwise_k > 0.0 && pixelwise_k < 1.0)) {
    throw ConfigError("baseline: pixelwise_k must be in (0,1)");
  }
  if (!(bootstrap_floor >= 0.3 && bootstrap_floor <= 1.0)) {
    throw ConfigError("baseline: bootstrap_floor must be in [0.3,1]");
  }
  if (bootstrap_epochs < 1) {
    throw ConfigError("baseline: bootstrap_epochs must be >= 1");
  }
}

SoftMask pixelwise_correct(const BinaryMask& noisy, const SoftMask& prob,
                           double k) {
  if (!(k > 0.0 && k < 1.0)) {
    throw ConfigError("pixelwise_correct: threshold must be in (0,1)");
  }
  if (!noisy.same_shape(prob)) {
    throw ContractError("pixelwise_correct: shape mismatch");
  }
  if (!is_binary_mask(noisy)) {
    throw ContractError("pixelwise_correct: noisy mask is not binary");
  }
  SoftMask out = Raster::zeros(noisy.width, noisy.height);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    const float pf = prob.values[i];
    const float conf = std::max(pf, 1.0f - pf);
    if (conf >= static_cast<float>(k)) {
      out.values[i] = pf >= 0.5f ? 1.0f : 0.0f;
    } else {
      out.values[i] = noisy.values[i];
    }
  }
  return out;
}

double bootstrap_beta(int epoch, const BaselineConfig& cfg) {
  cfg.validate();
  if (epoch < 0) throw ContractError("bootstrap_beta: negative epoch");
  const int e = std::min(epoch, cfg.bootstrap_epochs);
  return std::pow(cfg.bootstrap_floor,
                  static_cast<double>(e) / cfg.bootstrap_epochs);
}

SoftMask bootstrap_targets(const BinaryMask& noisy, const SoftMask& prob,
                           double beta) {
  if (!(beta >= 0.3 && beta <= 1.0)) {
    throw ContractError("bootstrap_targets: beta must be in [0.3,1]");
  }
  if (!noisy.same_shape(prob)) {
    throw ContractError("bootstrap_targets: shape mismatch");
  }
  SoftMask out = Raster::zeros(noisy.width, noisy.height);
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    out.values[i] = static_cast<float>(beta * noisy.values[i] +
                                       (1.0 - beta) * prob.values[i]);
  }
  return out;
}

namespace {

constexpr char kCkptMagic[8] = {'A', 'I', 'O', '2', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

void write_block(std::ofstream& out, const void* data, std::size_t bytes) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
}

void read_block(std::ifstream& in, void* data, std::size_t bytes,
                const std::filesystem::path& path) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
  if (in.gcount() != static_cast<std::streamsize>(bytes)) {
    throw IoError("checkpoint: truncated file " + path.string());
  }
}

}  // namespace

void write_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
  if (c.student.size() != c.layout.total || c.teacher.size() != c.layout.total ||
      c.adam_m.size() != c.layout.total || c.adam_v.size() != c.layout.total) {
    throw ContractError("checkpoint: section sizes disagree with layout");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open " + path.string());
  const nlohmann::json header = {
      {"epoch", c.epoch}, {"adam_t", c.adam_t}, {"layout", c.layout.to_json()}};
  const std::string hs = header.dump();
  const std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
  write_block(out, kCkptMagic, sizeof(kCkptMagic));
  write_block(out, &kCkptVersion, sizeof(kCkptVersion));
  write_block(out, &hlen, sizeof(hlen));
  write_block(out, hs.data(), hs.size());
  const std::size_t bytes = c.layout.total * sizeof(float);
  write_block(out, c.student.data(), bytes);
  write_block(out, c.teacher.data(), bytes);
  write_block(out, c.adam_m.data(), bytes);
  write_block(out, c.adam_v.data(), bytes);
  if (!out) throw IoError("checkpoint: write failed for " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open " + path.string());
  char magic[8];
  read_block(in, magic, sizeof(magic), path);
  if (std::memcmp(magic, kCkptMagic, sizeof(magic)) != 0) {
    throw IoError("checkpoint: bad magic in " + path.string());
  }
  std::uint32_t version = 0;
  std::uint32_t hlen = 0;
  read_block(in, &version, sizeof(version), path);
  if (version != kCkptVersion) {
    throw IoError("checkpoint: unsupported version in " + path.string());
  }
  read_block(in, &hlen, sizeof(hlen), path);
  std::string hs(hlen, '\0');
  read_block(in, hs.data(), hs.size(), path);
  Checkpoint c;
  try {
    const nlohmann::json header = nlohmann::json::parse(hs);
    c.epoch = header.at("epoch").get<int>();
    c.adam_t = header.at("adam_t").get<std::int64_t>();
    c.layout = ParamLayout::from_json(header.at("layout"));
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint: bad header in " + path.string() + ": " + e.what());
  }
  const std::size_t bytes = c.layout.total * sizeof(float);
  c.student.resize(c.layout.total);
  c.teacher.resize(c.layout.total);
  c.adam_m.resize(c.layout.total);
  c.adam_v.resize(c.layout.total);
  read_block(in, c.student.data(), bytes, path);
  read_block(in, c.teacher.data(), bytes, path);
  read_block(in, c.adam_m.data(), bytes, path);
  read_block(in, c.adam_v.data(), bytes, path);
  if (in.peek() != std::ifstream::traits_type::eof()) {
    throw IoError("checkpoint: trailing bytes in " + path.string());
  }
  return c;
}

template class Model<float>;
template class Model<double>;
template struct AdamState<float>;
template struct AdamState<double>;
template LossValue<float> loss_and_grad(const Model<float>&,
                                        std::span<const BatchSample>,
                                        std::vector<float>&);
template LossValue<double> loss_and_grad(const Model<double>&,
                                         std::span<const BatchSample>,
                                         std::vector<double>&);
template void adam_step(std::vector<float>&, const std::vector<float>&,
                        AdamState<float>&, const AdamConfig&);
template void adam_step(std::vector<double>&, const std::vector<double>&,
                        AdamState<double>&, const AdamConfig&);
template void ema_update(std::vector<float>&, const std::vector<float>&,
                         double, std::int64_t);
template void ema_update(std::vector<double>&, const std::vector<double>&,
                         double, std::int64_t);

}  // namespace aio2

#include "aio2/o2c.hpp"

#include <algorithm>

#include "aio2/errors.hpp"

namespace aio2 {

void O2cConfig::validate() const {
  if (filter_size < 1 || filter_size % 2 == 0) {
    throw ConfigError("o2c: filter_size must be odd and >= 1");
  }
  if (!(prediction_threshold > 0.0 && prediction_threshold < 1.0)) {
    throw ConfigError("o2c: prediction_threshold must be in (0,1)");
  }
  if (!(min_overlap_fraction >= 0.0 && min_overlap_fraction < 1.0)) {
    throw ConfigError("o2c: min_overlap_fraction must be in [0,1)");
  }
}

CorrectedTarget correct(const BinaryMask& noisy, const SoftMask& prob,
                        const O2cConfig& config) {
  config.validate();
  if (!noisy.same_shape(prob)) {
    throw ContractError("o2c: noisy mask and probability map differ in shape");
  }
  if (!is_binary_mask(noisy)) {
    throw ContractError("o2c: noisy mask is not binary");
  }
  if (!is_soft_mask(prob)) {
    throw ContractError("o2c: probabilities outside [0,1]");
  }

  const std::size_t n = noisy.values.size();
  BinaryMask pred = Raster::zeros(noisy.width, noisy.height);
  for (std::size_t i = 0; i < n; ++i) {
    pred.values[i] = prob.values[i] >= config.prediction_threshold ? 1.0f : 0.0f;
  }

  const ComponentMap components = connected_components(pred);
  std::vector<std::int64_t> area(components.n_components + 1, 0);
  std::vector<std::int64_t> overlap(components.n_components + 1, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const int id = components.labels[i];
    if (id == 0) continue;
    ++area[id];
    if (noisy.values[i] != 0.0f) ++overlap[id];
  }

  std::vector<bool> keep(components.n_components + 1, false);
  int added = 0;
  for (int id = 1; id <= components.n_components; ++id) {
    keep[id] = static_cast<double>(overlap[id]) <=
               config.min_overlap_fraction * static_cast<double>(area[id]);
    added += keep[id];
  }

  BinaryMask candidates = Raster::zeros(noisy.width, noisy.height);
  for (std::size_t i = 0; i < n; ++i) {
    const int id = components.labels[i];
    if (id != 0 && keep[id]) candidates.values[i] = 1.0f;
  }

  CorrectedTarget out;
  out.added_components = added;
  out.soft_mask = box_filter(candidates, config.filter_size);
  for (std::size_t i = 0; i < n; ++i) {
    out.soft_mask.values[i] = std::max(out.soft_mask.values[i], noisy.values[i]);
  }
  return out;
}

}  // namespace aio2

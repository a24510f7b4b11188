#pragma once

#include "aio2/raster.hpp"

namespace aio2 {

struct O2cConfig {
  // Box-filter width for softening added objects. Must be odd.
  int filter_size = 5;
  // Foreground probability at or above this becomes a predicted pixel.
  double prediction_threshold = 0.5;
  // A predicted component is dropped when its overlap with the noisy
  // foreground exceeds this fraction of the component area. Zero drops
  // anything that touches a labeled object in even one pixel.
  double min_overlap_fraction = 0.0;

  void validate() const;
};

struct CorrectedTarget {
  SoftMask soft_mask;
  // Predicted components that survived the overlap check.
  int added_components = 0;
};

// Builds a soft training target from the noisy labels and the current
// foreground probabilities. Labeled objects are kept at exactly 1; predicted
// components disjoint from them are box-filtered in and everything else is
// discarded. Pure function: no state survives between calls.
CorrectedTarget correct(const BinaryMask& noisy, const SoftMask& prob,
                        const O2cConfig& config);

}  // namespace aio2

#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace aio2 {

// Row-major, channel-interleaved scalar grid. Binary and soft masks are
// single-channel rasters whose values live in {0,1} / [0,1].
struct Raster {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<float> values;

  static Raster zeros(int width, int height, int channels = 1);

  float& at(int x, int y, int c = 0) {
    return values[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int x, int y, int c = 0) const {
    return values[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }

  std::size_t pixel_count() const {
    return static_cast<std::size_t>(width) * height;
  }
  bool same_shape(const Raster& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

using BinaryMask = Raster;  // channels = 1, values in {0,1}
using SoftMask = Raster;    // channels = 1, values in [0,1]

bool is_binary_mask(const Raster& r);
bool is_soft_mask(const Raster& r);

// Connected-component labeling of a binary mask. Label 0 is background;
// labels 1..n_components are contiguous and assigned in raster-scan order
// of the first pixel encountered.
struct ComponentMap {
  int width = 0;
  int height = 0;
  int n_components = 0;
  std::vector<std::int32_t> labels;  // row-major, one per pixel
};

// 8-connectivity. Throws ContractError on non-binary input.
ComponentMap connected_components(const BinaryMask& mask);

enum class ObjectTag : std::uint8_t { Untagged, Marked, Omitted };

struct ObjectComponent {
  int id = 0;
  std::vector<std::int32_t> pixels;  // linear indices y*width+x, ascending
  int min_x = 0, min_y = 0, max_x = 0, max_y = 0;
  int area = 0;
  ObjectTag tag = ObjectTag::Untagged;
};

struct ObjectSet {
  int width = 0;
  int height = 0;
  std::vector<ObjectComponent> components;
};

ObjectSet extract_objects(const ComponentMap& cc);

// Pixels of one component split by Chebyshev distance to the component's
// exterior (anything outside the component, including out-of-raster).
// Distance <= depth is ambiguous, the rest unambiguous.
struct BoundaryBand {
  std::vector<std::int32_t> ambiguous;
  std::vector<std::int32_t> unambiguous;
};

BoundaryBand boundary_band(std::span<const std::int32_t> component, int width,
                           int height, int depth);

// k x k mean filter with zero padding, normalized by k^2 and clamped to
// [0,1]. k must be odd. Exact on binary input (integer summed-area table).
SoftMask box_filter(const BinaryMask& mask, int k);

}  // namespace aio2

#include "aio2/raster.hpp"

#include <algorithm>
#include <limits>

#include "aio2/errors.hpp"

namespace aio2 {

Raster Raster::zeros(int width, int height, int channels) {
  Raster r;
  r.width = width;
  r.height = height;
  r.channels = channels;
  r.values.assign(static_cast<std::size_t>(width) * height * channels, 0.0f);
  return r;
}

bool is_binary_mask(const Raster& r) {
  if (r.channels != 1) return false;
  for (float v : r.values) {
    if (v != 0.0f && v != 1.0f) return false;
  }
  return true;
}

bool is_soft_mask(const Raster& r) {
  if (r.channels != 1) return false;
  for (float v : r.values) {
    if (!(v >= 0.0f && v <= 1.0f)) return false;
  }
  return true;
}

ComponentMap connected_components(const BinaryMask& mask) {
  if (!is_binary_mask(mask)) {
    throw ContractError("connected_components: input is not a binary mask");
  }
  const int w = mask.width;
  const int h = mask.height;
  ComponentMap cc;
  cc.width = w;
  cc.height = h;
  cc.labels.assign(static_cast<std::size_t>(w) * h, 0);

  std::vector<std::int32_t> stack;
  std::int32_t next = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::int32_t p = y * w + x;
      if (mask.values[p] == 0.0f || cc.labels[p] != 0) continue;
      ++next;
      cc.labels[p] = next;
      stack.clear();
      stack.push_back(p);
      while (!stack.empty()) {
        const std::int32_t q = stack.back();
        stack.pop_back();
        const int qx = q % w;
        const int qy = q / w;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            if (dx == 0 && dy == 0) continue;
            const int nx = qx + dx;
            const int ny = qy + dy;
            if (nx < 0 || nx >= w || ny < 0 || ny >= h) continue;
            const std::int32_t n = ny * w + nx;
            if (mask.values[n] != 0.0f && cc.labels[n] == 0) {
              cc.labels[n] = next;
              stack.push_back(n);
            }
          }
        }
      }
    }
  }
  cc.n_components = next;
  return cc;
}

ObjectSet extract_objects(const ComponentMap& cc) {
  ObjectSet set;
  set.width = cc.width;
  set.height = cc.height;
  set.components.resize(cc.n_components);
  for (int i = 0; i < cc.n_components; ++i) {
    auto& c = set.components[i];
    c.id = i + 1;
    c.min_x = cc.width;
    c.min_y = cc.height;
    c.max_x = -1;
    c.max_y = -1;
  }
  for (std::int32_t p = 0; p < static_cast<std::int32_t>(cc.labels.size()); ++p) {
    const std::int32_t id = cc.labels[p];
    if (id == 0) continue;
    auto& c = set.components[id - 1];
    c.pixels.push_back(p);
    const int x = p % cc.width;
    const int y = p / cc.width;
    c.min_x = std::min(c.min_x, x);
    c.min_y = std::min(c.min_y, y);
    c.max_x = std::max(c.max_x, x);
    c.max_y = std::max(c.max_y, y);
  }
  for (auto& c : set.components) c.area = static_cast<int>(c.pixels.size());
  return set;
}

BoundaryBand boundary_band(std::span<const std::int32_t> component, int width,
                           int height, int depth) {
  if (component.empty()) {
    throw ContractError("boundary_band: component is empty");
  }
  if (depth < 1) {
    throw ContractError("boundary_band: depth must be >= 1");
  }
  (void)height;

  int min_x = std::numeric_limits<int>::max(), min_y = min_x;
  int max_x = -1, max_y = -1;
  for (std::int32_t p : component) {
    const int x = p % width;
    const int y = p / width;
    min_x = std::min(min_x, x);
    min_y = std::min(min_y, y);
    max_x = std::max(max_x, x);
    max_y = std::max(max_y, y);
  }

  // Local grid with a one-pixel exterior pad; everything not in the
  // component (other objects, background, off-raster) is distance 0.
  const int bw = max_x - min_x + 3;
  const int bh = max_y - min_y + 3;
  const int big = std::numeric_limits<int>::max() / 2;
  std::vector<int> dist(static_cast<std::size_t>(bw) * bh, 0);
  for (std::int32_t p : component) {
    const int x = p % width - min_x + 1;
    const int y = p / width - min_y + 1;
    dist[static_cast<std::size_t>(y) * bw + x] = big;
  }

  // Two-pass chamfer; unit steps in all 8 directions give exact Chebyshev
  // distance to the nearest zero cell.
  for (int y = 1; y < bh; ++y) {
    for (int x = 0; x < bw; ++x) {
      int& d = dist[static_cast<std::size_t>(y) * bw + x];
      if (d == 0) continue;
      const int* up = &dist[static_cast<std::size_t>(y - 1) * bw + x];
      int best = up[0];
      if (x > 0) best = std::min({best, up[-1], dist[static_cast<std::size_t>(y) * bw + x - 1]});
      if (x + 1 < bw) best = std::min(best, up[1]);
      d = std::min(d, best + 1);
    }
  }
  for (int y = bh - 2; y >= 0; --y) {
    for (int x = bw - 1; x >= 0; --x) {
      int& d = dist[static_cast<std::size_t>(y) * bw + x];
      if (d == 0) continue;
      const int* dn = &dist[static_cast<std::size_t>(y + 1) * bw + x];
      int best = dn[0];
      if (x + 1 < bw) best = std::min({best, dn[1], dist[static_cast<std::size_t>(y) * bw + x + 1]});
      if (x > 0) best = std::min(best, dn[-1]);
      d = std::min(d, best + 1);
    }
  }

  BoundaryBand band;
  for (std::int32_t p : component) {
    const int x = p % width - min_x + 1;
    const int y = p / width - min_y + 1;
    if (dist[static_cast<std::size_t>(y) * bw + x] <= depth) {
      band.ambiguous.push_back(p);
    } else {
      band.unambiguous.push_back(p);
    }
  }
  return band;
}

SoftMask box_filter(const BinaryMask& mask, int k) {
  if (k < 1 || k % 2 == 0) {
    throw ConfigError("box_filter: filter size must be odd and >= 1");
  }
  if (!is_binary_mask(mask)) {
    throw ContractError("box_filter: input is not a binary mask");
  }
  const int w = mask.width;
  const int h = mask.height;
  SoftMask out = Raster::zeros(w, h);
  if (k == 1) {
    out.values = mask.values;
    return out;
  }

  // Integer summed-area table: sat[y][x] = sum of mask over [0,y) x [0,x).
  std::vector<std::int64_t> sat(static_cast<std::size_t>(w + 1) * (h + 1), 0);
  for (int y = 0; y < h; ++y) {
    std::int64_t row = 0;
    for (int x = 0; x < w; ++x) {
      row += mask.values[static_cast<std::size_t>(y) * w + x] != 0.0f ? 1 : 0;
      sat[static_cast<std::size_t>(y + 1) * (w + 1) + x + 1] =
          sat[static_cast<std::size_t>(y) * (w + 1) + x + 1] + row;
    }
  }
  const int r = k / 2;
  // Count / k^2 as a single rounded division so any other correct counter
  // reproduces these values bit for bit.
  const float denom = static_cast<float>(k) * static_cast<float>(k);
  for (int y = 0; y < h; ++y) {
    const int y0 = std::max(0, y - r);
    const int y1 = std::min(h, y + r + 1);
    for (int x = 0; x < w; ++x) {
      const int x0 = std::max(0, x - r);
      const int x1 = std::min(w, x + r + 1);
      const std::int64_t s =
          sat[static_cast<std::size_t>(y1) * (w + 1) + x1] -
          sat[static_cast<std::size_t>(y0) * (w + 1) + x1] -
          sat[static_cast<std::size_t>(y1) * (w + 1) + x0] +
          sat[static_cast<std::size_t>(y0) * (w + 1) + x0];
      out.values[static_cast<std::size_t>(y) * w + x] =
          static_cast<float>(s) / denom;
    }
  }
  return out;
}

}  // namespace aio2

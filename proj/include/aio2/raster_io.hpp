#pragma once

#include <filesystem>

#include "aio2/raster.hpp"

namespace aio2 {

// Binary mask <-> 8-bit PGM "P5" (0 = background, 255 = foreground).
void write_mask_pgm(const std::filesystem::path& path, const BinaryMask& mask);
BinaryMask read_mask_pgm(const std::filesystem::path& path);

// Float raster <-> raw little-endian float32 (row-major, channel-interleaved)
// plus a JSON sidecar {"width","height","channels"}. The sidecar path is the
// data path with its extension replaced by ".json".
void write_raster_f32(const std::filesystem::path& path, const Raster& raster);
Raster read_raster_f32(const std::filesystem::path& path);

}  // namespace aio2

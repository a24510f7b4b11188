#include "aio2/raster_io.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <vector>

#include <json.hpp>

#include "aio2/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "raster files are little-endian; big-endian hosts unsupported");

namespace aio2 {

namespace {

std::filesystem::path sidecar_path(const std::filesystem::path& data_path) {
  std::filesystem::path p = data_path;
  p.replace_extension(".json");
  return p;
}

int read_pgm_token(std::istream& in, const std::filesystem::path& path) {
  // Skips whitespace and '#' comment lines between header tokens.
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  if (c == EOF) throw IoError("truncated PGM header: " + path.string());
  int value = 0;
  bool any = false;
  while (c != EOF && std::isdigit(c)) {
    value = value * 10 + (c - '0');
    any = true;
    c = in.get();
  }
  if (!any) throw IoError("malformed PGM header: " + path.string());
  return value;
}

}  // namespace

void write_mask_pgm(const std::filesystem::path& path, const BinaryMask& mask) {
  if (!is_binary_mask(mask)) {
    throw ContractError("write_mask_pgm: raster is not a binary mask");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out << "P5\n" << mask.width << " " << mask.height << "\n255\n";
  std::vector<std::uint8_t> row(static_cast<std::size_t>(mask.width));
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      row[static_cast<std::size_t>(x)] = mask.at(x, y) != 0.0f ? 255 : 0;
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

BinaryMask read_mask_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  char m0 = 0, m1 = 0;
  in.get(m0);
  in.get(m1);
  if (m0 != 'P' || m1 != '5') {
    throw IoError("not a P5 PGM: " + path.string());
  }
  const int w = read_pgm_token(in, path);
  const int h = read_pgm_token(in, path);
  const int maxval = read_pgm_token(in, path);
  if (maxval != 255) {
    throw IoError("mask PGM must have maxval 255: " + path.string());
  }
  if (w <= 0 || h <= 0) throw IoError("bad PGM dimensions: " + path.string());
  std::vector<std::uint8_t> raw(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(raw.data()),
          static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) {
    throw IoError("truncated PGM data: " + path.string());
  }
  BinaryMask mask = Raster::zeros(w, h);
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] == 255) {
      mask.values[i] = 1.0f;
    } else if (raw[i] != 0) {
      throw IoError("mask PGM has values other than 0/255: " + path.string());
    }
  }
  return mask;
}

void write_raster_f32(const std::filesystem::path& path, const Raster& raster) {
  nlohmann::json meta = {{"width", raster.width},
                         {"height", raster.height},
                         {"channels", raster.channels}};
  std::ofstream side(sidecar_path(path));
  if (!side) throw IoError("cannot open for writing: " + sidecar_path(path).string());
  side << meta.dump(2) << "\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(raster.values.data()),
            static_cast<std::streamsize>(raster.values.size() * sizeof(float)));
  if (!out) throw IoError("write failed: " + path.string());
}

Raster read_raster_f32(const std::filesystem::path& path) {
  std::ifstream side(sidecar_path(path));
  if (!side) throw IoError("missing sidecar: " + sidecar_path(path).string());
  nlohmann::json meta;
  try {
    side >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad sidecar " + sidecar_path(path).string() + ": " + e.what());
  }
  Raster r;
  r.width = meta.at("width").get<int>();
  r.height = meta.at("height").get<int>();
  r.channels = meta.at("channels").get<int>();
  if (r.width <= 0 || r.height <= 0 || r.channels < 1) {
    throw IoError("bad raster shape in sidecar: " + sidecar_path(path).string());
  }
  const std::size_t count =
      static_cast<std::size_t>(r.width) * r.height * r.channels;
  r.values.resize(count);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  in.read(reinterpret_cast<char*>(r.values.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(count * sizeof(float))) {
    throw IoError("raster data size mismatch: " + path.string());
  }
  return r;
}

}  // namespace aio2

#include "pmrf/field_io.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "pmrf/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "field format assumes a little-endian host");

namespace pmrf {

namespace {

constexpr char kMagic[4] = {'P', 'M', 'R', 'F'};

template <typename T>
void write_raw(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
void read_raw(std::ifstream& in, T& value) {
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
}

}  // namespace

void save_field(const std::filesystem::path& path, const Grid2D& field) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw FormatError("save_field: cannot open " + path.string());
  }
  out.write(kMagic, sizeof(kMagic));
  write_raw(out, kFieldFormatVersion);
  write_raw(out, static_cast<std::uint32_t>(field.rows()));
  write_raw(out, static_cast<std::uint32_t>(field.cols()));
  out.write(reinterpret_cast<const char*>(field.data()),
            static_cast<std::streamsize>(field.size() * sizeof(double)));
  if (!out) {
    throw FormatError("save_field: write failed for " + path.string());
  }
}

Grid2D load_field(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError("load_field: cannot open " + path.string());
  }
  char magic[4] = {};
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw FormatError("load_field: bad magic in " + path.string());
  }
  std::uint16_t version = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  read_raw(in, version);
  read_raw(in, rows);
  read_raw(in, cols);
  if (!in || version != kFieldFormatVersion) {
    throw FormatError("load_field: unsupported version in " + path.string());
  }
  if (rows == 0 || cols == 0 || rows > (1u << 20) || cols > (1u << 20)) {
    throw FormatError("load_field: implausible shape in " + path.string());
  }
  Grid2D field(static_cast<int>(rows), static_cast<int>(cols));
  in.read(reinterpret_cast<char*>(field.data()),
          static_cast<std::streamsize>(field.size() * sizeof(double)));
  if (!in || in.gcount() != static_cast<std::streamsize>(field.size() * sizeof(double))) {
    throw FormatError("load_field: truncated payload in " + path.string());
  }
  in.peek();
  if (!in.eof()) {
    throw FormatError("load_field: trailing bytes in " + path.string());
  }
  for (std::size_t i = 0; i < field.size(); ++i) {
    if (!std::isfinite(field[i])) {
      throw FormatError("load_field: non-finite payload in " + path.string());
    }
  }
  return field;
}

Grid2D mask_to_grid(const SolidMask& mask) {
  const int g = mask.resolution;
  Grid2D grid(g, g, 0.0);
  for (int iy = 0; iy < g; ++iy) {
    for (int ix = 0; ix < g; ++ix) {
      grid(iy, ix) = mask.solid(ix, iy) ? 1.0 : 0.0;
    }
  }
  return grid;
}

SolidMask grid_to_mask(const Grid2D& grid) {
  if (grid.rows() != grid.cols()) {
    throw FormatError("grid_to_mask: mask grids must be square");
  }
  SolidMask mask;
  mask.resolution = grid.rows();
  mask.cells.resize(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] != 0.0 && grid[i] != 1.0) {
      throw FormatError("grid_to_mask: entries must be 0 or 1");
    }
    mask.cells[i] = grid[i] != 0.0 ? 1 : 0;
  }
  return mask;
}

}  // namespace pmrf

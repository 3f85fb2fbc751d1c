#pragma once

#include <filesystem>

#include "pmrf/grid.hpp"
#include "pmrf/microstructure.hpp"

namespace pmrf {

// Binary field format: magic "PMRF", version u16, rows u32, cols u32 (all
// little-endian), then rows*cols row-major IEEE-754 doubles. Round-trips are
// bitwise; loads reject bad headers, truncation, and non-finite payloads.
inline constexpr std::uint16_t kFieldFormatVersion = 1;

void save_field(const std::filesystem::path& path, const Grid2D& field);
Grid2D load_field(const std::filesystem::path& path);

// Masks travel in the same container as 0/1 fields.
Grid2D mask_to_grid(const SolidMask& mask);
SolidMask grid_to_mask(const Grid2D& grid);

}  // namespace pmrf

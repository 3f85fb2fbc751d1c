#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pmrf/microstructure.hpp"
#include "pmrf/stokes.hpp"

namespace pmrf {

struct DatasetConfig {
  MicrostructureConfig microstructure;
  BoundaryConditions bc;
  int mesh_resolution = 128;
  int grid_size = 128;
  int count = 8;
  std::uint64_t master_seed = 0;
  std::string split = "train";

  void validate() const;
};

// One persisted sample: sample_NNNN/{microstructure.json, pressure.pmrf,
// vx.pmrf, vy.pmrf, meta.json}.
struct SampleRecord {
  Microstructure microstructure;
  FineField field;
  BoundaryConditions bc;
  std::uint64_t seed = 0;
  int attempts = 1;
  double porosity = 1.0;
};

// Generates `count` percolating, solved samples under out_dir. Per-sample
// seeds derive from (master_seed, split, index); non-percolating draws and
// solver failures advance the seed and are recorded in meta.json. Appends one
// diagnostics record per solve to solve_log.jsonl (wall times live only
// there, so the sample payload is byte-reproducible).
void generate_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir,
                      int workers);

std::vector<std::filesystem::path> list_sample_dirs(const std::filesystem::path& root);
SampleRecord load_sample(const std::filesystem::path& dir);

// Seed for sample `index` of a split; exposed so tests can verify the
// train/test streams never collide.
std::uint64_t sample_seed(std::uint64_t master_seed, const std::string& split, int index);

}  // namespace pmrf

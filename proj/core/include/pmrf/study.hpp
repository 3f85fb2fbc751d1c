#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pmrf/dataset.hpp"
#include "pmrf/surrogate.hpp"

namespace pmrf {

struct StudyPair {
  int n_train = 8;
  int kx = 2;
  int ky = 2;
};

// The N-versus-emulator-resolution study: one surrogate per (N, grid) pair,
// trained on prefixes of a shared training pool and scored on a shared
// held-out test set.
struct StudyConfig {
  MicrostructureConfig microstructure;
  BoundaryConditions bc;
  int mesh_resolution = 64;
  int grid_size = 128;
  std::vector<StudyPair> pairs{{8, 2, 2}, {80, 4, 4}};
  int n_test = 32;
  int predict_samples = 256;
  TrainConfig train;
  std::uint64_t master_seed = 0;
  std::string output_dir = "study_out";

  void validate() const;
};

StudyConfig study_config_from_json(const std::string& text);
std::string to_json(const StudyConfig& config);

struct PairResult {
  StudyPair pair;
  Metrics metrics;
  bool converged = false;
  double train_seconds = 0.0;
  double predict_seconds = 0.0;
};

struct StudyReport {
  std::vector<PairResult> rows;
  double generate_seconds = 0.0;
};

// Generates (or reuses) the persisted datasets, trains one surrogate per
// pair, evaluates on the shared test set, writes report.csv plus one
// predicted-vs-true SVG per pair under output_dir. report.csv and the SVGs
// are byte-reproducible for a fixed (config, master_seed); wall times go to
// timings.json only.
StudyReport run_study(const StudyConfig& config, int workers);

std::string report_csv(const StudyReport& report);

}  // namespace pmrf

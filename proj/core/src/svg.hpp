#pragma once

#include <filesystem>
#include <string>

#include "pmrf/grid.hpp"

namespace pmrf::detail {

// Predicted-vs-true figure for one test sample: three heatmap panels (truth,
// predictive mean, predictive std) plus a mid-channel profile with the
// +-1 sigma band. Output bytes are a pure function of the inputs.
void write_prediction_figure(const std::filesystem::path& path, const Grid2D& truth,
                             const Grid2D& mean, const Grid2D& stddev,
                             const std::string& title);

}  // namespace pmrf::detail

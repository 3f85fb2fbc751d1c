#include "pmrf/microstructure.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>

#include <nlohmann/json.hpp>

#include "pmrf/errors.hpp"
#include "pmrf/rng.hpp"

namespace pmrf {

namespace {

double quantize_radius(double r, double min_radius) {
  const double step = (kMaxRadius - min_radius) / (kRadiusGridPoints - 1);
  const double clamped = std::clamp(r, min_radius, kMaxRadius);
  const double idx = std::round((clamped - min_radius) / step);
  return std::clamp(min_radius + idx * step, min_radius, kMaxRadius);
}

}  // namespace

bool Microstructure::contains(double x, double y) const {
  for (const auto& e : exclusions) {
    const double dx = x - e.center[0];
    const double dy = y - e.center[1];
    if (dx * dx + dy * dy <= e.radius * e.radius) {
      return true;
    }
  }
  return false;
}

void Microstructure::validate() const {
  for (const auto& e : exclusions) {
    if (!std::isfinite(e.center[0]) || !std::isfinite(e.center[1]) ||
        e.center[0] < 0.0 || e.center[0] > 1.0 || e.center[1] < 0.0 || e.center[1] > 1.0) {
      throw InvalidArgument("microstructure: exclusion center outside the unit square");
    }
    if (!(e.radius > 0.0) || e.radius > kMaxRadius) {
      throw InvalidArgument("microstructure: radius must lie in (0, 0.5]");
    }
  }
  for (std::size_t i = 0; i < exclusions.size(); ++i) {
    for (std::size_t j = i + 1; j < exclusions.size(); ++j) {
      const double dx = exclusions[i].center[0] - exclusions[j].center[0];
      const double dy = exclusions[i].center[1] - exclusions[j].center[1];
      const double rsum = exclusions[i].radius + exclusions[j].radius;
      if (dx * dx + dy * dy < rsum * rsum) {
        throw InvalidArgument("microstructure: overlapping exclusions");
      }
    }
  }
}

void MicrostructureConfig::validate() const {
  if (count_lognormal.sigma < 0.0 || radius_lognormal.sigma < 0.0) {
    throw InvalidArgument("microstructure config: sigma parameters must be >= 0");
  }
  if (margin < 0.0 || margin >= 0.5) {
    throw InvalidArgument("microstructure config: margin must lie in [0, 0.5)");
  }
  if (max_placement_attempts < 1) {
    throw InvalidArgument("microstructure config: max_placement_attempts must be >= 1");
  }
  if (!(min_radius > 0.0) || min_radius >= kMaxRadius) {
    throw InvalidArgument("microstructure config: min_radius must lie in (0, 0.5)");
  }
  if (!lognormal_count && fixed_count < 0) {
    throw InvalidArgument("microstructure config: fixed_count must be >= 0");
  }
}

Microstructure sample_exclusions(const MicrostructureConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);

  long count = 0;
  if (config.lognormal_count) {
    count = std::lround(rng.lognormal(config.count_lognormal.mu, config.count_lognormal.sigma));
    count = std::max(count, 0L);
  } else {
    count = config.fixed_count;
  }

  std::vector<double> radii(static_cast<std::size_t>(count));
  for (auto& r : radii) {
    r = quantize_radius(rng.lognormal(config.radius_lognormal.mu, config.radius_lognormal.sigma),
                        config.min_radius);
  }
  std::sort(radii.begin(), radii.end(), std::greater<>());

  Microstructure ms;
  ms.exclusions.reserve(radii.size());
  for (const double r : radii) {
    const double lo = config.margin + r;
    const double hi = 1.0 - config.margin - r;
    if (lo > hi) {
      throw PlacementFailure("sample_exclusions: radius too large for the margin strips");
    }
    bool placed = false;
    for (int attempt = 0; attempt < config.max_placement_attempts; ++attempt) {
      const double cx = lo + rng.uniform() * (hi - lo);
      const double cy = rng.uniform();
      bool overlaps = false;
      for (const auto& e : ms.exclusions) {
        const double dx = cx - e.center[0];
        const double dy = cy - e.center[1];
        const double rsum = r + e.radius;
        if (dx * dx + dy * dy < rsum * rsum) {
          overlaps = true;
          break;
        }
      }
      if (!overlaps) {
        ms.exclusions.push_back({{cx, cy}, r});
        placed = true;
        break;
      }
    }
    if (!placed) {
      throw PlacementFailure("sample_exclusions: placement budget exhausted (config too dense)");
    }
  }
  return ms;
}

SolidMask voxelize(const Microstructure& ms, int resolution) {
  if (resolution < 2) {
    throw InvalidArgument("voxelize: resolution must be >= 2");
  }
  SolidMask mask;
  mask.resolution = resolution;
  mask.cells.assign(static_cast<std::size_t>(resolution) * resolution, 0);
  const double h = 1.0 / resolution;
  for (const auto& e : ms.exclusions) {
    const int ix0 = std::max(0, static_cast<int>(std::floor((e.center[0] - e.radius) * resolution)));
    const int ix1 = std::min(resolution - 1, static_cast<int>(std::ceil((e.center[0] + e.radius) * resolution)));
    const int iy0 = std::max(0, static_cast<int>(std::floor((e.center[1] - e.radius) * resolution)));
    const int iy1 = std::min(resolution - 1, static_cast<int>(std::ceil((e.center[1] + e.radius) * resolution)));
    const double r2 = e.radius * e.radius;
    for (int iy = iy0; iy <= iy1; ++iy) {
      const double dy = (iy + 0.5) * h - e.center[1];
      for (int ix = ix0; ix <= ix1; ++ix) {
        const double dx = (ix + 0.5) * h - e.center[0];
        if (dx * dx + dy * dy <= r2) {
          mask.cells[static_cast<std::size_t>(iy) * resolution + ix] = 1;
        }
      }
    }
  }
  return mask;
}

bool percolates(const SolidMask& mask) {
  const int g = mask.resolution;
  std::vector<std::uint8_t> visited(static_cast<std::size_t>(g) * g, 0);
  std::queue<std::pair<int, int>> frontier;
  for (int iy = 0; iy < g; ++iy) {
    if (mask.fluid(0, iy)) {
      visited[static_cast<std::size_t>(iy) * g] = 1;
      frontier.emplace(0, iy);
    }
  }
  while (!frontier.empty()) {
    const auto [ix, iy] = frontier.front();
    frontier.pop();
    if (ix == g - 1) {
      return true;
    }
    constexpr int dx[4] = {1, -1, 0, 0};
    constexpr int dy[4] = {0, 0, 1, -1};
    for (int k = 0; k < 4; ++k) {
      const int nx = ix + dx[k];
      const int ny = iy + dy[k];
      if (nx < 0 || nx >= g || ny < 0 || ny >= g) {
        continue;
      }
      auto& seen = visited[static_cast<std::size_t>(ny) * g + nx];
      if (!seen && mask.fluid(nx, ny)) {
        seen = 1;
        frontier.emplace(nx, ny);
      }
    }
  }
  return false;
}

double porosity(const SolidMask& mask) {
  const std::size_t total = mask.cells.size();
  std::size_t fluid = 0;
  for (const auto c : mask.cells) {
    fluid += (c == 0);
  }
  return static_cast<double>(fluid) / static_cast<double>(total);
}

namespace {

// 1D squared-distance transform (Felzenszwalb & Huttenlocher lower envelope).
void dt1d(const std::vector<double>& f, std::vector<double>& d, int n) {
  static constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<int> v(n);
  std::vector<double> z(n + 1);
  int k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  for (int q = 1; q < n; ++q) {
    double s;
    for (;;) {
      const int p = v[k];
      s = ((f[q] + q * q) - (f[p] + p * p)) / (2.0 * q - 2.0 * p);
      if (s <= z[k]) {
        --k;
      } else {
        break;
      }
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) {
      ++k;
    }
    const int p = v[k];
    d[q] = (q - p) * (q - p) + f[p];
  }
}

}  // namespace

Grid2D distance_to_solid(const SolidMask& mask) {
  const int g = mask.resolution;
  static constexpr double kInf = std::numeric_limits<double>::infinity();
  const double cap = std::sqrt(2.0);

  bool any_solid = false;
  for (const auto c : mask.cells) {
    if (c) {
      any_solid = true;
      break;
    }
  }
  Grid2D dist(g, g, cap);
  if (!any_solid) {
    return dist;
  }

  // Squared distances in cell units, columns then rows.
  Grid2D sq(g, g, 0.0);
  std::vector<double> f(g), d(g);
  for (int ix = 0; ix < g; ++ix) {
    for (int iy = 0; iy < g; ++iy) {
      f[iy] = mask.solid(ix, iy) ? 0.0 : kInf;
    }
    dt1d(f, d, g);
    for (int iy = 0; iy < g; ++iy) {
      sq(iy, ix) = d[iy];
    }
  }
  for (int iy = 0; iy < g; ++iy) {
    for (int ix = 0; ix < g; ++ix) {
      f[ix] = sq(iy, ix);
    }
    dt1d(f, d, g);
    for (int ix = 0; ix < g; ++ix) {
      dist(iy, ix) = std::min(std::sqrt(d[ix]) / g, cap);
    }
  }
  return dist;
}

std::string to_json(const Microstructure& ms) {
  nlohmann::json j;
  j["centers"] = nlohmann::json::array();
  j["radii"] = nlohmann::json::array();
  for (const auto& e : ms.exclusions) {
    j["centers"].push_back({e.center[0], e.center[1]});
    j["radii"].push_back(e.radius);
  }
  return j.dump(2);
}

Microstructure microstructure_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("microstructure: bad JSON: ") + e.what());
  }
  if (!j.contains("centers") || !j.contains("radii") || !j["centers"].is_array() ||
      !j["radii"].is_array() || j["centers"].size() != j["radii"].size()) {
    throw FormatError("microstructure: expected matching 'centers' and 'radii' arrays");
  }
  Microstructure ms;
  ms.exclusions.reserve(j["radii"].size());
  for (std::size_t i = 0; i < j["radii"].size(); ++i) {
    const auto& c = j["centers"][i];
    if (!c.is_array() || c.size() != 2) {
      throw FormatError("microstructure: each center must be a 2-vector");
    }
    ms.exclusions.push_back({{c[0].get<double>(), c[1].get<double>()}, j["radii"][i].get<double>()});
  }
  ms.validate();
  return ms;
}

}  // namespace pmrf

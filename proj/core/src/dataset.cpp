#include "pmrf/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pmrf/errors.hpp"
#include "pmrf/field_io.hpp"
#include "pmrf/parallel.hpp"
#include "pmrf/rng.hpp"

namespace pmrf {

namespace {

constexpr int kMaxResampleAttempts = 100;

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t hash = 1469598103934665603ULL;
  for (const unsigned char c : text) {
    hash ^= c;
    hash *= 1099511628211ULL;
  }
  return hash;
}

std::string sample_dir_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "sample_%04d", index);
  return buf;
}

nlohmann::json bc_to_json(const BoundaryConditions& bc) {
  return {{"inlet_pressure", bc.inlet_pressure},
          {"outlet_pressure", bc.outlet_pressure},
          {"wall_velocity", {bc.wall_velocity[0], bc.wall_velocity[1]}},
          {"viscosity", bc.viscosity}};
}

}  // namespace

void DatasetConfig::validate() const {
  microstructure.validate();
  bc.validate();
  if (mesh_resolution < 8) {
    throw InvalidArgument("dataset config: mesh_resolution must be >= 8");
  }
  if (grid_size < 2) {
    throw InvalidArgument("dataset config: grid_size must be >= 2");
  }
  if (count < 1) {
    throw InvalidArgument("dataset config: count must be >= 1");
  }
  if (split != "train" && split != "test") {
    throw InvalidArgument("dataset config: split must be 'train' or 'test'");
  }
}

std::uint64_t sample_seed(std::uint64_t master_seed, const std::string& split, int index) {
  return split_seed(split_seed(master_seed, fnv1a(split)), static_cast<std::uint64_t>(index));
}

void generate_dataset(const DatasetConfig& config, const std::filesystem::path& out_dir,
                      int workers) {
  config.validate();
  std::filesystem::create_directories(out_dir);

  struct SolveLogEntry {
    int index;
    std::uint64_t seed;
    int attempts;
    SolveDiagnostics diag;
  };
  std::vector<SolveLogEntry> log(static_cast<std::size_t>(config.count));

  parallel_for(config.count, workers, [&](int index) {
    std::uint64_t seed = sample_seed(config.master_seed, config.split, index);
    int attempts = 0;
    for (;;) {
      ++attempts;
      if (attempts > kMaxResampleAttempts) {
        throw SolverDivergence("generate_dataset: sample " + std::to_string(index) +
                               " failed after " + std::to_string(kMaxResampleAttempts) +
                               " attempts");
      }
      try {
        const Microstructure ms = sample_exclusions(config.microstructure, seed);
        SolveDiagnostics diag;
        const FineField field =
            solve_stokes(ms, config.bc, config.mesh_resolution, config.grid_size, &diag);

        const std::filesystem::path dir = out_dir / sample_dir_name(index);
        std::filesystem::create_directories(dir);
        {
          std::ofstream out(dir / "microstructure.json", std::ios::trunc);
          out << to_json(ms) << "\n";
        }
        save_field(dir / "pressure.pmrf", field.pressure);
        save_field(dir / "vx.pmrf", field.velocity_x);
        save_field(dir / "vy.pmrf", field.velocity_y);

        nlohmann::json meta;
        meta["index"] = index;
        meta["split"] = config.split;
        meta["seed"] = seed;
        meta["attempts"] = attempts;
        meta["mesh_resolution"] = config.mesh_resolution;
        meta["grid_size"] = config.grid_size;
        meta["porosity"] = porosity(voxelize(ms, config.grid_size));
        meta["n_exclusions"] = ms.exclusions.size();
        meta["bc"] = bc_to_json(config.bc);
        {
          std::ofstream out(dir / "meta.json", std::ios::trunc);
          out << meta.dump(2) << "\n";
        }
        log[static_cast<std::size_t>(index)] = {index, seed, attempts, diag};
        return;
      } catch (const PlacementFailure&) {
      } catch (const NonPercolating&) {
      } catch (const SingularSystem&) {
      } catch (const SolverDivergence&) {
      }
      // Advance the seed and resample; the substitution shows up in the
      // meta.json attempt count.
      seed = split_seed(seed, 0x726574727900ULL + static_cast<std::uint64_t>(attempts));
    }
  });

  std::ofstream log_out(out_dir / "solve_log.jsonl", std::ios::trunc);
  for (const auto& entry : log) {
    nlohmann::json record;
    record["index"] = entry.index;
    record["seed"] = entry.seed;
    record["attempts"] = entry.attempts;
    record["relative_residual"] = entry.diag.relative_residual;
    record["velocity_dofs"] = entry.diag.velocity_dofs;
    record["pressure_dofs"] = entry.diag.pressure_dofs;
    record["mesh_resolution"] = entry.diag.mesh_resolution;
    record["wall_seconds"] = entry.diag.wall_seconds;
    log_out << record.dump() << "\n";
  }
}

std::vector<std::filesystem::path> list_sample_dirs(const std::filesystem::path& root) {
  std::vector<std::filesystem::path> dirs;
  if (!std::filesystem::exists(root)) {
    return dirs;
  }
  for (const auto& entry : std::filesystem::directory_iterator(root)) {
    if (entry.is_directory() && entry.path().filename().string().starts_with("sample_")) {
      dirs.push_back(entry.path());
    }
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

SampleRecord load_sample(const std::filesystem::path& dir) {
  SampleRecord record;
  {
    std::ifstream in(dir / "microstructure.json");
    if (!in) {
      throw FormatError("load_sample: missing microstructure.json in " + dir.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    record.microstructure = microstructure_from_json(buffer.str());
  }
  record.field.pressure = load_field(dir / "pressure.pmrf");
  record.field.velocity_x = load_field(dir / "vx.pmrf");
  record.field.velocity_y = load_field(dir / "vy.pmrf");
  record.field.grid_size = record.field.pressure.rows();
  record.field.validate();

  std::ifstream meta_in(dir / "meta.json");
  if (!meta_in) {
    throw FormatError("load_sample: missing meta.json in " + dir.string());
  }
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_in);
    record.seed = meta.at("seed").get<std::uint64_t>();
    record.attempts = meta.at("attempts").get<int>();
    record.porosity = meta.at("porosity").get<double>();
    const auto& bc = meta.at("bc");
    record.bc.inlet_pressure = bc.at("inlet_pressure").get<double>();
    record.bc.outlet_pressure = bc.at("outlet_pressure").get<double>();
    record.bc.wall_velocity = {bc.at("wall_velocity")[0].get<double>(),
                               bc.at("wall_velocity")[1].get<double>()};
    record.bc.viscosity = bc.at("viscosity").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("load_sample: bad meta.json: ") + e.what());
  }
  return record;
}

}  // namespace pmrf

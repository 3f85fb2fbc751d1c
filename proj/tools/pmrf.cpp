// Command line front end: dataset generation, surrogate training, prediction,
// evaluation, and the N-versus-resolution study.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "pmrf/dataset.hpp"
#include "pmrf/errors.hpp"
#include "pmrf/field_io.hpp"
#include "pmrf/rng.hpp"
#include "pmrf/study.hpp"
#include "pmrf/surrogate.hpp"

namespace {

enum class LogLevel { kQuiet = 0, kInfo = 1, kDebug = 2 };

LogLevel g_log_level = LogLevel::kInfo;

void log_info(const std::string& message) {
  if (g_log_level >= LogLevel::kInfo) {
    std::cerr << "[pmrf] " << message << "\n";
  }
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw pmrf::FormatError("cannot open " + path);
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

pmrf::StudyConfig load_config(const std::string& path) {
  if (path.empty()) {
    return pmrf::StudyConfig{};
  }
  return pmrf::study_config_from_json(read_file(path));
}

bool parse_grid(const std::string& text, int& kx, int& ky) {
  const auto sep = text.find('x');
  if (sep == std::string::npos) return false;
  try {
    kx = std::stoi(text.substr(0, sep));
    ky = std::stoi(text.substr(sep + 1));
  } catch (...) {
    return false;
  }
  return kx >= 1 && ky >= 1;
}

std::vector<pmrf::SampleRecord> load_samples(const std::string& dir, int limit = -1) {
  const auto sample_dirs = pmrf::list_sample_dirs(dir);
  if (sample_dirs.empty()) {
    throw pmrf::EmptyDataset("no samples under " + dir);
  }
  std::vector<pmrf::SampleRecord> records;
  for (const auto& sample_dir : sample_dirs) {
    if (limit >= 0 && static_cast<int>(records.size()) >= limit) break;
    records.push_back(pmrf::load_sample(sample_dir));
  }
  return records;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Darcy-type reduced-order surrogate for Stokes flow through porous media"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  bool seed_given = false;
  int workers = 0;
  std::string log_level = "info";
  app.add_option("--seed", seed, "Master seed (overrides the config value)")
      ->each([&](const std::string&) { seed_given = true; });
  app.add_option("--workers", workers, "Worker threads (0 = hardware)");
  app.add_option("--log-level", log_level, "quiet|info|debug")
      ->check(CLI::IsMember({"quiet", "info", "debug"}));

  std::string config_path;
  std::string split = "train";
  std::string out_dir;
  auto* generate = app.add_subcommand("generate", "Generate and solve a dataset split");
  generate->add_option("--config", config_path, "Study config JSON")->required();
  generate->add_option("--split", split, "train|test")
      ->required()
      ->check(CLI::IsMember({"train", "test"}));
  generate->add_option("--out", out_dir, "Output directory (default <output_dir>/data/<split>)");

  std::string train_data;
  std::string grid_text = "4x4";
  std::string state_out;
  std::string train_config_path;
  auto* train_cmd = app.add_subcommand("train", "Train a surrogate on a stored dataset");
  train_cmd->add_option("--data", train_data, "Dataset directory")->required();
  train_cmd->add_option("--grid", grid_text, "Emulator grid KxK, e.g. 4x4")->required();
  train_cmd->add_option("--out", state_out, "Output posterior state JSON")->required();
  train_cmd->add_option("--config", train_config_path, "Optional study config JSON");
  int train_limit = -1;
  train_cmd->add_option("--n-train", train_limit, "Use only the first N samples");

  std::string state_path;
  std::string sample_dir;
  int n_samples = 256;
  std::string predict_out;
  auto* predict_cmd = app.add_subcommand("predict", "Predict the fields for one sample");
  predict_cmd->add_option("--state", state_path, "Posterior state JSON")->required();
  predict_cmd->add_option("--sample", sample_dir, "Sample directory")->required();
  predict_cmd->add_option("--samples", n_samples, "Monte Carlo draws");
  predict_cmd->add_option("--out", predict_out, "Output directory (default <sample>/prediction)");

  std::string eval_state;
  std::string eval_data;
  int eval_samples = 256;
  std::string eval_out;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Evaluate a surrogate on a dataset");
  evaluate_cmd->add_option("--state", eval_state, "Posterior state JSON")->required();
  evaluate_cmd->add_option("--data", eval_data, "Dataset directory")->required();
  evaluate_cmd->add_option("--samples", eval_samples, "Monte Carlo draws per sample");
  evaluate_cmd->add_option("--out", eval_out, "Metrics JSON output path");

  std::string study_config_path;
  auto* study_cmd = app.add_subcommand("study", "Run the N-versus-resolution study");
  study_cmd->add_option("--config", study_config_path, "Study config JSON")->required();

  CLI11_PARSE(app, argc, argv);

  g_log_level = log_level == "quiet" ? LogLevel::kQuiet
              : log_level == "debug" ? LogLevel::kDebug
                                     : LogLevel::kInfo;

  try {
    if (*generate) {
      pmrf::StudyConfig config = load_config(config_path);
      if (seed_given) config.master_seed = seed;
      pmrf::DatasetConfig dc;
      dc.microstructure = config.microstructure;
      dc.bc = config.bc;
      dc.mesh_resolution = config.mesh_resolution;
      dc.grid_size = config.grid_size;
      dc.master_seed = config.master_seed;
      dc.split = split;
      if (split == "train") {
        dc.count = 0;
        for (const auto& pair : config.pairs) dc.count = std::max(dc.count, pair.n_train);
      } else {
        dc.count = config.n_test;
      }
      const std::string target =
          out_dir.empty() ? config.output_dir + "/data/" + split : out_dir;
      log_info("generating " + std::to_string(dc.count) + " '" + split + "' samples into " +
               target);
      pmrf::generate_dataset(dc, target, workers);
      log_info("done");
    } else if (*train_cmd) {
      pmrf::StudyConfig config = load_config(train_config_path);
      if (seed_given) config.master_seed = seed;
      pmrf::TrainConfig tc = config.train;
      if (!parse_grid(grid_text, tc.kx, tc.ky)) {
        throw pmrf::InvalidArgument("train: --grid must look like 4x4");
      }
      tc.workers = workers;
      tc.seed = pmrf::split_seed(config.master_seed, 0x747261696e);
      const auto records = load_samples(train_data, train_limit);
      tc.bc = records.front().bc;
      std::vector<pmrf::TrainingSample> dataset;
      dataset.reserve(records.size());
      for (const auto& record : records) {
        dataset.push_back({record.microstructure, record.field});
      }
      log_info("training on " + std::to_string(dataset.size()) + " samples, emulator " +
               grid_text);
      const pmrf::PosteriorState state = pmrf::train(dataset, tc);
      std::ofstream out(state_out, std::ios::trunc);
      if (!out) throw pmrf::FormatError("cannot open " + state_out);
      out << pmrf::to_json(state) << "\n";
      log_info(std::string("ELBO iterations: ") + std::to_string(state.elbo_trace.size()) +
               (state.converged ? " (converged)" : " (max iterations)"));
    } else if (*predict_cmd) {
      const pmrf::PosteriorState state = pmrf::posterior_from_json(read_file(state_path));
      const pmrf::SampleRecord record = pmrf::load_sample(sample_dir);
      const std::uint64_t draw_seed = seed_given ? seed : state.kx * 1000003u;
      const pmrf::PredictiveField pred =
          pmrf::predict(record.microstructure, state, n_samples, draw_seed);
      const std::filesystem::path target =
          predict_out.empty() ? std::filesystem::path(sample_dir) / "prediction" : predict_out;
      std::filesystem::create_directories(target);
      pmrf::save_field(target / "pressure_mean.pmrf", pred.mean.pressure);
      pmrf::save_field(target / "vx_mean.pmrf", pred.mean.velocity_x);
      pmrf::save_field(target / "vy_mean.pmrf", pred.mean.velocity_y);
      pmrf::save_field(target / "pressure_std.pmrf", pred.stddev.pressure);
      pmrf::save_field(target / "vx_std.pmrf", pred.stddev.velocity_x);
      pmrf::save_field(target / "vy_std.pmrf", pred.stddev.velocity_y);
      log_info("wrote prediction (S=" + std::to_string(n_samples) + ") to " + target.string());
    } else if (*evaluate_cmd) {
      const pmrf::PosteriorState state = pmrf::posterior_from_json(read_file(eval_state));
      const auto records = load_samples(eval_data);
      std::vector<pmrf::PredictiveField> predictions;
      std::vector<pmrf::FineField> truths;
      std::vector<pmrf::SolidMask> masks;
      const std::uint64_t root = seed_given ? seed : 0x6576616c;
      for (std::size_t i = 0; i < records.size(); ++i) {
        predictions.push_back(pmrf::predict(records[i].microstructure, state, eval_samples,
                                            pmrf::split_seed(root, i)));
        truths.push_back(records[i].field);
        masks.push_back(pmrf::voxelize(records[i].microstructure, state.grid_size));
      }
      const pmrf::Metrics metrics = pmrf::evaluate(predictions, truths, masks);
      nlohmann::json j;
      j["mean_relative_l2"] = metrics.mean_relative_l2;
      j["block_relative_l2"] = metrics.block_relative_l2;
      j["mean_log_density"] = metrics.mean_log_density;
      j["coverage_1sigma"] = metrics.coverage_1sigma;
      j["coverage_2sigma"] = metrics.coverage_2sigma;
      j["n_points"] = metrics.n_points;
      const std::string text = j.dump(2);
      if (!eval_out.empty()) {
        std::ofstream out(eval_out, std::ios::trunc);
        out << text << "\n";
      }
      std::cout << text << "\n";
    } else if (*study_cmd) {
      pmrf::StudyConfig config = study_config_from_json(read_file(study_config_path));
      if (seed_given) config.master_seed = seed;
      log_info("running study into " + config.output_dir);
      const pmrf::StudyReport report = pmrf::run_study(config, workers);
      std::cout << pmrf::report_csv(report);
    }
  } catch (const pmrf::Error& e) {
    nlohmann::json err;
    err["error"] = std::string(typeid(e).name());
    err["message"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    nlohmann::json err;
    err["error"] = "exception";
    err["message"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}

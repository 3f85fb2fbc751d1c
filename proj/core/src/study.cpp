#include "pmrf/study.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pmrf/errors.hpp"
#include "pmrf/rng.hpp"
#include "svg.hpp"

namespace pmrf {

namespace {

constexpr std::uint64_t kTrainStream = 0x747261696e;
constexpr std::uint64_t kPredictStream = 0x70726564;

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return buf;
}

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <typename T>
void maybe_get(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) {
    out = j.at(key).get<T>();
  }
}

}  // namespace

void StudyConfig::validate() const {
  microstructure.validate();
  bc.validate();
  if (pairs.empty()) {
    throw InvalidArgument("study config: at least one (N, grid) pair required");
  }
  for (const auto& pair : pairs) {
    if (pair.n_train < 1 || pair.kx < 1 || pair.ky < 1) {
      throw InvalidArgument("study config: each pair needs n_train >= 1 and a positive grid");
    }
  }
  if (n_test < 1) {
    throw InvalidArgument("study config: n_test must be >= 1");
  }
  if (predict_samples < 2) {
    throw InvalidArgument("study config: predict_samples must be >= 2");
  }
  if (mesh_resolution < 8 || grid_size < 2) {
    throw InvalidArgument("study config: bad lattice sizes");
  }
}

StudyConfig study_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("study config: bad JSON: ") + e.what());
  }
  StudyConfig config;
  try {
    if (j.contains("microstructure")) {
      const auto& m = j["microstructure"];
      if (m.contains("count_lognormal")) {
        config.microstructure.count_lognormal.mu = m["count_lognormal"].at("mu").get<double>();
        config.microstructure.count_lognormal.sigma =
            m["count_lognormal"].at("sigma").get<double>();
      }
      if (m.contains("radius_lognormal")) {
        config.microstructure.radius_lognormal.mu = m["radius_lognormal"].at("mu").get<double>();
        config.microstructure.radius_lognormal.sigma =
            m["radius_lognormal"].at("sigma").get<double>();
      }
      maybe_get(m, "lognormal_count", config.microstructure.lognormal_count);
      maybe_get(m, "fixed_count", config.microstructure.fixed_count);
      maybe_get(m, "margin", config.microstructure.margin);
      maybe_get(m, "max_placement_attempts", config.microstructure.max_placement_attempts);
      maybe_get(m, "min_radius", config.microstructure.min_radius);
    }
    if (j.contains("boundary")) {
      const auto& b = j["boundary"];
      maybe_get(b, "inlet_pressure", config.bc.inlet_pressure);
      maybe_get(b, "outlet_pressure", config.bc.outlet_pressure);
      if (b.contains("wall_velocity")) {
        config.bc.wall_velocity = {b["wall_velocity"][0].get<double>(),
                                   b["wall_velocity"][1].get<double>()};
      }
      maybe_get(b, "viscosity", config.bc.viscosity);
    }
    if (j.contains("fine")) {
      maybe_get(j["fine"], "mesh_resolution", config.mesh_resolution);
      maybe_get(j["fine"], "grid_size", config.grid_size);
    }
    if (j.contains("study")) {
      const auto& s = j["study"];
      if (s.contains("pairs")) {
        config.pairs.clear();
        for (const auto& p : s["pairs"]) {
          StudyPair pair;
          pair.n_train = p.at("n_train").get<int>();
          pair.kx = p.at("grid")[0].get<int>();
          pair.ky = p.at("grid")[1].get<int>();
          config.pairs.push_back(pair);
        }
      }
      maybe_get(s, "n_test", config.n_test);
      maybe_get(s, "predict_samples", config.predict_samples);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      maybe_get(t, "max_iters", config.train.max_iters);
      maybe_get(t, "elbo_tol", config.train.elbo_tol);
      maybe_get(t, "e_step_max_iters", config.train.e_step_max_iters);
      maybe_get(t, "e_step_grad_tol", config.train.e_step_grad_tol);
      maybe_get(t, "mc_samples", config.train.mc_samples);
      maybe_get(t, "hyper_shape", config.train.hyper_shape);
      maybe_get(t, "hyper_rate", config.train.hyper_rate);
      maybe_get(t, "feature_resolution", config.train.feature_resolution);
    }
    maybe_get(j, "master_seed", config.master_seed);
    maybe_get(j, "output_dir", config.output_dir);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("study config: missing or ill-typed field: ") + e.what());
  }
  config.validate();
  return config;
}

std::string to_json(const StudyConfig& config) {
  nlohmann::json j;
  j["microstructure"] = {
      {"count_lognormal",
       {{"mu", config.microstructure.count_lognormal.mu},
        {"sigma", config.microstructure.count_lognormal.sigma}}},
      {"radius_lognormal",
       {{"mu", config.microstructure.radius_lognormal.mu},
        {"sigma", config.microstructure.radius_lognormal.sigma}}},
      {"lognormal_count", config.microstructure.lognormal_count},
      {"fixed_count", config.microstructure.fixed_count},
      {"margin", config.microstructure.margin},
      {"max_placement_attempts", config.microstructure.max_placement_attempts},
      {"min_radius", config.microstructure.min_radius}};
  j["boundary"] = {{"inlet_pressure", config.bc.inlet_pressure},
                   {"outlet_pressure", config.bc.outlet_pressure},
                   {"wall_velocity", {config.bc.wall_velocity[0], config.bc.wall_velocity[1]}},
                   {"viscosity", config.bc.viscosity}};
  j["fine"] = {{"mesh_resolution", config.mesh_resolution}, {"grid_size", config.grid_size}};
  auto pairs = nlohmann::json::array();
  for (const auto& pair : config.pairs) {
    pairs.push_back({{"n_train", pair.n_train}, {"grid", {pair.kx, pair.ky}}});
  }
  j["study"] = {{"pairs", std::move(pairs)},
                {"n_test", config.n_test},
                {"predict_samples", config.predict_samples}};
  j["train"] = {{"max_iters", config.train.max_iters},
                {"elbo_tol", config.train.elbo_tol},
                {"e_step_max_iters", config.train.e_step_max_iters},
                {"e_step_grad_tol", config.train.e_step_grad_tol},
                {"mc_samples", config.train.mc_samples},
                {"hyper_shape", config.train.hyper_shape},
                {"hyper_rate", config.train.hyper_rate},
                {"feature_resolution", config.train.feature_resolution}};
  j["master_seed"] = config.master_seed;
  j["output_dir"] = config.output_dir;
  return j.dump(2);
}

std::string report_csv(const StudyReport& report) {
  std::ostringstream csv;
  csv << "n_train,grid_kx,grid_ky,rel_l2,rel_l2_pressure,rel_l2_vx,rel_l2_vy,"
         "log_density,coverage_1sigma,coverage_2sigma,n_points,converged\n";
  for (const auto& row : report.rows) {
    csv << row.pair.n_train << "," << row.pair.kx << "," << row.pair.ky << ","
        << fmt(row.metrics.mean_relative_l2) << "," << fmt(row.metrics.block_relative_l2[0])
        << "," << fmt(row.metrics.block_relative_l2[1]) << ","
        << fmt(row.metrics.block_relative_l2[2]) << "," << fmt(row.metrics.mean_log_density)
        << "," << fmt(row.metrics.coverage_1sigma) << "," << fmt(row.metrics.coverage_2sigma)
        << "," << row.metrics.n_points << "," << (row.converged ? 1 : 0) << "\n";
  }
  return csv.str();
}

StudyReport run_study(const StudyConfig& config, int workers) {
  config.validate();
  const std::filesystem::path out_dir(config.output_dir);
  std::filesystem::create_directories(out_dir);

  int pool_n = 0;
  for (const auto& pair : config.pairs) {
    pool_n = std::max(pool_n, pair.n_train);
  }

  StudyReport report;
  const auto ensure_dataset = [&](const std::string& split, int count) {
    const std::filesystem::path dir = out_dir / "data" / split;
    if (static_cast<int>(list_sample_dirs(dir).size()) < count) {
      DatasetConfig dc;
      dc.microstructure = config.microstructure;
      dc.bc = config.bc;
      dc.mesh_resolution = config.mesh_resolution;
      dc.grid_size = config.grid_size;
      dc.count = count;
      dc.master_seed = config.master_seed;
      dc.split = split;
      generate_dataset(dc, dir, workers);
    }
    return dir;
  };

  const auto t_gen = std::chrono::steady_clock::now();
  const auto train_dir = ensure_dataset("train", pool_n);
  const auto test_dir = ensure_dataset("test", config.n_test);
  report.generate_seconds = seconds_since(t_gen);

  const auto train_dirs = list_sample_dirs(train_dir);
  const auto test_dirs = list_sample_dirs(test_dir);
  if (static_cast<int>(train_dirs.size()) < pool_n ||
      static_cast<int>(test_dirs.size()) < config.n_test) {
    throw InsufficientData("run_study: training pool or test set smaller than requested");
  }

  std::vector<SampleRecord> pool;
  pool.reserve(static_cast<std::size_t>(pool_n));
  for (int i = 0; i < pool_n; ++i) {
    pool.push_back(load_sample(train_dirs[static_cast<std::size_t>(i)]));
  }
  std::vector<SampleRecord> test;
  test.reserve(static_cast<std::size_t>(config.n_test));
  for (int i = 0; i < config.n_test; ++i) {
    test.push_back(load_sample(test_dirs[static_cast<std::size_t>(i)]));
  }
  std::vector<SolidMask> test_masks;
  std::vector<FineField> test_truths;
  for (const auto& record : test) {
    test_masks.push_back(voxelize(record.microstructure, config.grid_size));
    test_truths.push_back(record.field);
  }

  for (std::size_t p = 0; p < config.pairs.size(); ++p) {
    const StudyPair& pair = config.pairs[p];
    TrainConfig tc = config.train;
    tc.kx = pair.kx;
    tc.ky = pair.ky;
    tc.bc = config.bc;
    tc.workers = workers;
    tc.seed = split_seed(split_seed(config.master_seed, kTrainStream), p);

    std::vector<TrainingSample> training;
    training.reserve(static_cast<std::size_t>(pair.n_train));
    for (int i = 0; i < pair.n_train; ++i) {
      training.push_back({pool[static_cast<std::size_t>(i)].microstructure,
                          pool[static_cast<std::size_t>(i)].field});
    }

    PairResult row;
    row.pair = pair;
    const auto t_train = std::chrono::steady_clock::now();
    const PosteriorState state = train(training, tc);
    row.train_seconds = seconds_since(t_train);
    row.converged = state.converged;

    char tag[64];
    std::snprintf(tag, sizeof(tag), "N%d_K%dx%d", pair.n_train, pair.kx, pair.ky);
    {
      std::ofstream out(out_dir / (std::string("state_") + tag + ".json"), std::ios::trunc);
      out << to_json(state) << "\n";
    }

    const auto t_pred = std::chrono::steady_clock::now();
    std::vector<PredictiveField> predictions;
    predictions.reserve(test.size());
    const std::uint64_t pred_root =
        split_seed(split_seed(config.master_seed, kPredictStream), p);
    for (std::size_t i = 0; i < test.size(); ++i) {
      predictions.push_back(predict(test[i].microstructure, state, config.predict_samples,
                                    split_seed(pred_root, i)));
    }
    row.predict_seconds = seconds_since(t_pred);

    row.metrics = evaluate(predictions, test_truths, test_masks);
    report.rows.push_back(row);

    char title[128];
    std::snprintf(title, sizeof(title), "N=%d, emulator %dx%d, test sample 0 (pressure)",
                  pair.n_train, pair.kx, pair.ky);
    detail::write_prediction_figure(out_dir / (std::string("fig_") + tag + ".svg"),
                                    test_truths[0].pressure, predictions[0].mean.pressure,
                                    predictions[0].stddev.pressure, title);
  }

  {
    std::ofstream out(out_dir / "report.csv", std::ios::trunc);
    out << report_csv(report);
  }
  {
    nlohmann::json timings;
    timings["generate_seconds"] = report.generate_seconds;
    auto rows = nlohmann::json::array();
    for (const auto& row : report.rows) {
      rows.push_back({{"n_train", row.pair.n_train},
                      {"grid", {row.pair.kx, row.pair.ky}},
                      {"train_seconds", row.train_seconds},
                      {"predict_seconds", row.predict_seconds}});
    }
    timings["pairs"] = std::move(rows);
    std::ofstream out(out_dir / "timings.json", std::ios::trunc);
    out << timings.dump(2) << "\n";
  }
  return report;
}

}  // namespace pmrf

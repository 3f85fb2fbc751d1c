#include "pmrf/surrogate.hpp"

#include <cmath>

#include <Eigen/Cholesky>
#include <nlohmann/json.hpp>

#include "pmrf/errors.hpp"
#include "pmrf/rng.hpp"

namespace pmrf {

double pc_logpdf(std::span<const double> log_lambda, const FeatureMatrix& phi,
                 const PcParams& params) {
  const int k = phi.n_cells();
  if (static_cast<int>(log_lambda.size()) != k ||
      static_cast<int>(params.weights.size()) != phi.n_features) {
    throw DimensionMismatch("pc_logpdf: feature/weight/latent sizes disagree");
  }
  if (!(params.noise_variance > 0.0)) {
    throw InvalidArgument("pc_logpdf: noise variance must be positive");
  }
  const double var = params.noise_variance;
  double logpdf = -0.5 * k * std::log(2.0 * M_PI * var);
  for (int cell = 0; cell < k; ++cell) {
    double mean = 0.0;
    for (int j = 0; j < phi.n_features; ++j) {
      mean += phi.at(cell, j) * params.weights[j];
    }
    const double d = log_lambda[cell] - mean;
    logpdf -= 0.5 * d * d / var;
  }
  return logpdf;
}

CoarseDiffusivity pc_sample(const FeatureMatrix& phi, const PcParams& params,
                            std::uint64_t seed) {
  if (static_cast<int>(params.weights.size()) != phi.n_features) {
    throw DimensionMismatch("pc_sample: feature/weight sizes disagree");
  }
  if (!(params.noise_variance > 0.0)) {
    throw InvalidArgument("pc_sample: noise variance must be positive");
  }
  Rng rng(seed);
  const double sigma = std::sqrt(params.noise_variance);
  CoarseDiffusivity lam;
  lam.kx = phi.kx;
  lam.ky = phi.ky;
  lam.values.resize(static_cast<std::size_t>(phi.n_cells()));
  for (int cell = 0; cell < phi.n_cells(); ++cell) {
    double mean = 0.0;
    for (int j = 0; j < phi.n_features; ++j) {
      mean += phi.at(cell, j) * params.weights[j];
    }
    lam.values[cell] = std::exp(rng.normal(mean, sigma));
  }
  return lam;
}

double pcf_logpdf(const FineField& fine, const CoarseSolution& coarse, const SolidMask& mask,
                  const PcfParams& params) {
  const int g = fine.grid_size;
  if (coarse.grid_size != g || mask.resolution != g) {
    throw DimensionMismatch("pcf_logpdf: lattice sizes disagree");
  }
  for (const double tau : params.precisions) {
    if (!(tau > 0.0)) {
      throw InvalidArgument("pcf_logpdf: precisions must be positive");
    }
  }
  const Grid2D* fine_blocks[3] = {&fine.pressure, &fine.velocity_x, &fine.velocity_y};
  const Grid2D* coarse_blocks[3] = {&coarse.pressure, &coarse.flux_x, &coarse.flux_y};
  double logpdf = 0.0;
  for (int b = 0; b < 3; ++b) {
    const double tau = params.precisions[b];
    const double log_norm = 0.5 * std::log(tau / (2.0 * M_PI));
    double sq = 0.0;
    long n_pts = 0;
    for (int iy = 0; iy < g; ++iy) {
      for (int ix = 0; ix < g; ++ix) {
        if (mask.solid(ix, iy)) continue;
        const double d = (*fine_blocks[b])(iy, ix) - (*coarse_blocks[b])(iy, ix);
        sq += d * d;
        ++n_pts;
      }
    }
    logpdf += n_pts * log_norm - 0.5 * tau * sq;
  }
  return logpdf;
}

void PosteriorState::validate() const {
  if (!trained()) {
    throw UntrainedState("posterior state: empty");
  }
  const int j = n_features;
  const int k = kx * ky;
  if (theta.mean.size() != j || theta.cov.rows() != j || theta.cov.cols() != j ||
      static_cast<int>(alpha.size()) != j) {
    throw InvalidArgument("posterior state: theta/alpha shapes disagree");
  }
  if (!theta.cov.isApprox(theta.cov.transpose(), 1e-10)) {
    throw InvalidArgument("posterior state: theta covariance not symmetric");
  }
  if (Eigen::LLT<Eigen::MatrixXd>(theta.cov).info() != Eigen::Success) {
    throw InvalidArgument("posterior state: theta covariance not positive definite");
  }
  const auto check_gamma = [](const GammaDist& d) {
    if (!(d.shape > 0.0) || !(d.rate > 0.0)) {
      throw InvalidArgument("posterior state: gamma parameters must be positive");
    }
  };
  for (const auto& a : alpha) check_gamma(a);
  for (const auto& t : tau) check_gamma(t);
  check_gamma(sigma_inv);
  for (const auto& lat : latents) {
    if (lat.mean.size() != k || lat.cov.rows() != k || lat.cov.cols() != k) {
      throw InvalidArgument("posterior state: latent posterior shape mismatch");
    }
  }
  for (std::size_t i = 1; i < elbo_trace.size(); ++i) {
    const double slack = 1e-8 * std::max(1.0, std::abs(elbo_trace[i - 1]));
    if (elbo_trace[i] < elbo_trace[i - 1] - slack) {
      throw InvalidArgument("posterior state: ELBO trace decreased");
    }
  }
}

namespace {

nlohmann::json gamma_to_json(const GammaDist& d) {
  return {{"shape", d.shape}, {"rate", d.rate}};
}

GammaDist gamma_from_json(const nlohmann::json& j) {
  return {j.at("shape").get<double>(), j.at("rate").get<double>()};
}

nlohmann::json gaussian_to_json(const GaussianDist& d) {
  nlohmann::json j;
  j["mean"] = std::vector<double>(d.mean.data(), d.mean.data() + d.mean.size());
  auto rows = nlohmann::json::array();
  for (int r = 0; r < d.cov.rows(); ++r) {
    auto row = nlohmann::json::array();
    for (int c = 0; c < d.cov.cols(); ++c) {
      row.push_back(d.cov(r, c));
    }
    rows.push_back(std::move(row));
  }
  j["cov"] = std::move(rows);
  return j;
}

GaussianDist gaussian_from_json(const nlohmann::json& j) {
  GaussianDist d;
  const auto& mean = j.at("mean");
  d.mean.resize(static_cast<Eigen::Index>(mean.size()));
  for (std::size_t i = 0; i < mean.size(); ++i) {
    d.mean[static_cast<Eigen::Index>(i)] = mean[i].get<double>();
  }
  const auto& cov = j.at("cov");
  const auto rows = static_cast<Eigen::Index>(cov.size());
  d.cov.resize(rows, rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = cov[static_cast<std::size_t>(r)];
    if (static_cast<Eigen::Index>(row.size()) != rows) {
      throw FormatError("posterior state: covariance is not square");
    }
    for (Eigen::Index c = 0; c < rows; ++c) {
      d.cov(r, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
  }
  return d;
}

}  // namespace

std::string to_json(const PosteriorState& state) {
  nlohmann::json j;
  j["kx"] = state.kx;
  j["ky"] = state.ky;
  j["n_features"] = state.n_features;
  j["grid_size"] = state.grid_size;
  j["feature_resolution"] = state.feature_resolution;
  j["bc"] = {{"inlet_pressure", state.bc.inlet_pressure},
             {"outlet_pressure", state.bc.outlet_pressure},
             {"wall_velocity", {state.bc.wall_velocity[0], state.bc.wall_velocity[1]}},
             {"viscosity", state.bc.viscosity}};
  j["theta"] = gaussian_to_json(state.theta);
  auto alphas = nlohmann::json::array();
  for (const auto& a : state.alpha) alphas.push_back(gamma_to_json(a));
  j["alpha"] = std::move(alphas);
  j["tau"] = {gamma_to_json(state.tau[0]), gamma_to_json(state.tau[1]),
              gamma_to_json(state.tau[2])};
  j["sigma_inv"] = gamma_to_json(state.sigma_inv);
  auto latents = nlohmann::json::array();
  for (const auto& lat : state.latents) latents.push_back(gaussian_to_json(lat));
  j["latents"] = std::move(latents);
  j["elbo_trace"] = state.elbo_trace;
  j["converged"] = state.converged;
  return j.dump(2);
}

PosteriorState posterior_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("posterior state: bad JSON: ") + e.what());
  }
  PosteriorState state;
  try {
    state.kx = j.at("kx").get<int>();
    state.ky = j.at("ky").get<int>();
    state.n_features = j.at("n_features").get<int>();
    state.grid_size = j.at("grid_size").get<int>();
    state.feature_resolution = j.at("feature_resolution").get<int>();
    const auto& bc = j.at("bc");
    state.bc.inlet_pressure = bc.at("inlet_pressure").get<double>();
    state.bc.outlet_pressure = bc.at("outlet_pressure").get<double>();
    state.bc.wall_velocity = {bc.at("wall_velocity")[0].get<double>(),
                              bc.at("wall_velocity")[1].get<double>()};
    state.bc.viscosity = bc.at("viscosity").get<double>();
    state.theta = gaussian_from_json(j.at("theta"));
    for (const auto& a : j.at("alpha")) state.alpha.push_back(gamma_from_json(a));
    for (int b = 0; b < 3; ++b) state.tau[b] = gamma_from_json(j.at("tau")[b]);
    state.sigma_inv = gamma_from_json(j.at("sigma_inv"));
    for (const auto& lat : j.at("latents")) state.latents.push_back(gaussian_from_json(lat));
    state.elbo_trace = j.at("elbo_trace").get<std::vector<double>>();
    state.converged = j.at("converged").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("posterior state: missing or ill-typed field: ") + e.what());
  }
  state.validate();
  return state;
}

Metrics evaluate(const std::vector<PredictiveField>& predictions,
                 const std::vector<FineField>& truths, const std::vector<SolidMask>& masks) {
  if (predictions.size() != truths.size() || predictions.size() != masks.size()) {
    throw DimensionMismatch("evaluate: prediction/truth/mask list lengths disagree");
  }
  if (predictions.empty()) {
    throw EmptyDataset("evaluate: no samples");
  }
  Metrics metrics;
  double rel_sum = 0.0;
  std::array<double, 3> block_rel_sum{};
  double log_density_sum = 0.0;
  long covered_1 = 0;
  long covered_2 = 0;
  long total_pts = 0;

  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& pred = predictions[i];
    const auto& truth = truths[i];
    const auto& mask = masks[i];
    const int g = truth.grid_size;
    if (pred.mean.grid_size != g || mask.resolution != g) {
      throw DimensionMismatch("evaluate: lattice sizes disagree");
    }
    const Grid2D* mean_blocks[3] = {&pred.mean.pressure, &pred.mean.velocity_x,
                                    &pred.mean.velocity_y};
    const Grid2D* std_blocks[3] = {&pred.stddev.pressure, &pred.stddev.velocity_x,
                                   &pred.stddev.velocity_y};
    const Grid2D* truth_blocks[3] = {&truth.pressure, &truth.velocity_x, &truth.velocity_y};

    double err_sq = 0.0;
    double truth_sq = 0.0;
    for (int b = 0; b < 3; ++b) {
      double block_err = 0.0;
      double block_truth = 0.0;
      for (int iy = 0; iy < g; ++iy) {
        for (int ix = 0; ix < g; ++ix) {
          if (mask.solid(ix, iy)) continue;
          const double t = (*truth_blocks[b])(iy, ix);
          const double m = (*mean_blocks[b])(iy, ix);
          const double s = (*std_blocks[b])(iy, ix);
          const double d = m - t;
          block_err += d * d;
          block_truth += t * t;
          const double sigma = std::max(s, 1e-300);
          log_density_sum +=
              -0.5 * std::log(2.0 * M_PI * sigma * sigma) - 0.5 * d * d / (sigma * sigma);
          covered_1 += std::abs(d) < s;
          covered_2 += std::abs(d) < 2.0 * s;
          ++total_pts;
        }
      }
      err_sq += block_err;
      truth_sq += block_truth;
      block_rel_sum[b] += std::sqrt(block_err / std::max(block_truth, 1e-300));
    }
    rel_sum += std::sqrt(err_sq / std::max(truth_sq, 1e-300));
  }

  const auto n = static_cast<double>(predictions.size());
  metrics.mean_relative_l2 = rel_sum / n;
  for (int b = 0; b < 3; ++b) {
    metrics.block_relative_l2[b] = block_rel_sum[b] / n;
  }
  metrics.mean_log_density = log_density_sum / static_cast<double>(total_pts);
  metrics.coverage_1sigma = static_cast<double>(covered_1) / static_cast<double>(total_pts);
  metrics.coverage_2sigma = static_cast<double>(covered_2) / static_cast<double>(total_pts);
  metrics.n_points = total_pts;
  return metrics;
}

}  // namespace pmrf

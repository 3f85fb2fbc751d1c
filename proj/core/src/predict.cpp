#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "pmrf/errors.hpp"
#include "pmrf/parallel.hpp"
#include "pmrf/rng.hpp"
#include "pmrf/surrogate.hpp"

namespace pmrf {

namespace {

constexpr std::uint64_t kDrawStream = 0x647277;  // per-draw seed derivation
constexpr int kChunk = 32;                       // draws per reduction chunk

// Per-chunk accumulators. Chunks are merged in index order so the result does
// not depend on how many workers ran them.
struct ChunkPartial {
  std::array<Grid2D, 3> sum;
  std::array<Grid2D, 3> sum_sq;
  std::array<double, 3> noise_var_sum{};
  int count = 0;
};

}  // namespace

PredictiveField predict(const Microstructure& ms, const PosteriorState& state, int n_samples,
                        std::uint64_t seed) {
  if (!state.trained()) {
    throw UntrainedState("predict: state has not been trained");
  }
  state.validate();
  if (n_samples < 2) {
    throw InvalidArgument("predict: need at least 2 Monte Carlo samples");
  }
  const int g = state.grid_size;
  const int k_cells = state.kx * state.ky;
  const int n_feat = state.n_features;

  const FeatureMatrix phi_raw = extract_features(ms, state.kx, state.ky, state.feature_resolution);
  Eigen::MatrixXd phi(k_cells, n_feat);
  for (int cell = 0; cell < k_cells; ++cell) {
    for (int j = 0; j < n_feat; ++j) {
      phi(cell, j) = phi_raw.at(cell, j);
    }
  }

  const Eigen::LLT<Eigen::MatrixXd> theta_llt(state.theta.cov);
  if (theta_llt.info() != Eigen::Success) {
    throw InvalidArgument("predict: weight covariance not positive definite");
  }
  const Eigen::MatrixXd theta_chol = theta_llt.matrixL();

  const int n_chunks = (n_samples + kChunk - 1) / kChunk;
  std::vector<ChunkPartial> partials(static_cast<std::size_t>(n_chunks));

  parallel_for(n_chunks, 0, [&](int chunk) {
    auto& part = partials[static_cast<std::size_t>(chunk)];
    for (int b = 0; b < 3; ++b) {
      part.sum[b] = Grid2D(g, g, 0.0);
      part.sum_sq[b] = Grid2D(g, g, 0.0);
    }
    const int begin = chunk * kChunk;
    const int end = std::min(begin + kChunk, n_samples);
    for (int s = begin; s < end; ++s) {
      Rng rng(split_seed(seed, kDrawStream + static_cast<std::uint64_t>(s)));

      Eigen::VectorXd xi(n_feat);
      for (int j = 0; j < n_feat; ++j) {
        xi[j] = rng.normal();
      }
      const Eigen::VectorXd theta = state.theta.mean + theta_chol * xi;
      const double sigma_sq = 1.0 / rng.gamma(state.sigma_inv.shape, state.sigma_inv.rate);
      std::array<double, 3> tau_draw{};
      for (int b = 0; b < 3; ++b) {
        tau_draw[b] = rng.gamma(state.tau[b].shape, state.tau[b].rate);
      }

      CoarseDiffusivity lam;
      lam.kx = state.kx;
      lam.ky = state.ky;
      lam.values.resize(static_cast<std::size_t>(k_cells));
      const Eigen::VectorXd z_mean = phi * theta;
      const double sigma = std::sqrt(sigma_sq);
      for (int k = 0; k < k_cells; ++k) {
        const double z = std::clamp(rng.normal(z_mean[k], sigma), -40.0, 40.0);
        lam.values[static_cast<std::size_t>(k)] = std::exp(z);
      }

      const DarcyOperator op(lam, state.bc, g);
      const CoarseSolution& sol = op.solution();
      const Grid2D* fields[3] = {&sol.pressure, &sol.flux_x, &sol.flux_y};
      for (int b = 0; b < 3; ++b) {
        for (std::size_t i = 0; i < part.sum[b].size(); ++i) {
          const double v = (*fields[b])[i];
          part.sum[b][i] += v;
          part.sum_sq[b][i] += v * v;
        }
        part.noise_var_sum[b] += 1.0 / tau_draw[b];
      }
      ++part.count;
    }
  });

  // Deterministic merge in chunk order.
  std::array<Grid2D, 3> sum;
  std::array<Grid2D, 3> sum_sq;
  std::array<double, 3> noise_var_sum{};
  for (int b = 0; b < 3; ++b) {
    sum[b] = Grid2D(g, g, 0.0);
    sum_sq[b] = Grid2D(g, g, 0.0);
  }
  for (const auto& part : partials) {
    for (int b = 0; b < 3; ++b) {
      for (std::size_t i = 0; i < sum[b].size(); ++i) {
        sum[b][i] += part.sum[b][i];
        sum_sq[b][i] += part.sum_sq[b][i];
      }
      noise_var_sum[b] += part.noise_var_sum[b];
    }
  }

  PredictiveField out;
  out.sample_count = n_samples;
  out.mean.grid_size = g;
  out.stddev.grid_size = g;
  Grid2D* mean_blocks[3] = {&out.mean.pressure, &out.mean.velocity_x, &out.mean.velocity_y};
  Grid2D* std_blocks[3] = {&out.stddev.pressure, &out.stddev.velocity_x, &out.stddev.velocity_y};
  const double n = static_cast<double>(n_samples);
  for (int b = 0; b < 3; ++b) {
    *mean_blocks[b] = Grid2D(g, g, 0.0);
    *std_blocks[b] = Grid2D(g, g, 0.0);
    const double mean_noise_var = noise_var_sum[b] / n;
    for (std::size_t i = 0; i < sum[b].size(); ++i) {
      const double mean = sum[b][i] / n;
      double var = (sum_sq[b][i] - n * mean * mean) / (n - 1.0);
      var = std::max(var, 0.0) + mean_noise_var;
      (*mean_blocks[b])[i] = mean;
      (*std_blocks[b])[i] = std::sqrt(var);
    }
  }
  return out;
}

}  // namespace pmrf

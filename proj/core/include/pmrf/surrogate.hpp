#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pmrf/darcy.hpp"
#include "pmrf/features.hpp"
#include "pmrf/microstructure.hpp"
#include "pmrf/stokes.hpp"

namespace pmrf {

// Parameters of the log-linear diffusivity map p_c: per coarse cell,
// log(lambda_k) ~ Normal(phi_k . weights, noise_variance), weights shared
// across cells.
struct PcParams {
  std::vector<double> weights;
  double noise_variance = 1.0;
};

// Block indices of the coarse-to-fine map p_cf: one precision per output
// block (pressure, velocity_x, velocity_y), diagonal Gaussian centered on
// the Darcy fields, supported on fluid lattice points only.
enum FieldBlock { kPressure = 0, kVelocityX = 1, kVelocityY = 2 };

struct PcfParams {
  std::array<double, 3> precisions{1.0, 1.0, 1.0};
};

double pc_logpdf(std::span<const double> log_lambda, const FeatureMatrix& phi,
                 const PcParams& params);
CoarseDiffusivity pc_sample(const FeatureMatrix& phi, const PcParams& params,
                            std::uint64_t seed);

double pcf_logpdf(const FineField& fine, const CoarseSolution& coarse, const SolidMask& mask,
                  const PcfParams& params);

struct GammaDist {
  double shape = 1.0;
  double rate = 1.0;
  double mean() const { return shape / rate; }
};

struct GaussianDist {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

struct TrainingSample {
  Microstructure microstructure;
  FineField field;
};

struct TrainConfig {
  int kx = 4;
  int ky = 4;
  int feature_resolution = 128;
  int max_iters = 60;
  double elbo_tol = 1e-6;          // relative ELBO change stopping rule
  int e_step_max_iters = 200;
  double e_step_grad_tol = 1e-6;   // gradient norm <= tol * (1 + |objective|)
  int mc_samples = 10;             // draws for the p_cf residual expectation
  double hyper_shape = 1e-6;       // Gamma(shape, rate) hyperpriors
  double hyper_rate = 1e-6;
  std::uint64_t seed = 0;
  int workers = 0;                 // 0 = hardware concurrency
  BoundaryConditions bc;
};

// Variational posterior over all surrogate parameters plus the per-training-
// sample latent log-diffusivities. Immutable once returned by train().
struct PosteriorState {
  int kx = 0;
  int ky = 0;
  int n_features = 0;
  int grid_size = 0;
  int feature_resolution = 0;
  BoundaryConditions bc;

  GaussianDist theta;                    // q(theta_c)
  std::vector<GammaDist> alpha;          // per-weight relevance precisions
  std::array<GammaDist, 3> tau;          // per-block p_cf precisions
  GammaDist sigma_inv;                   // q(1 / sigma_c^2)
  std::vector<GaussianDist> latents;     // q_n(log lambda_c)
  std::vector<double> elbo_trace;
  bool converged = false;

  bool trained() const { return theta.mean.size() > 0; }
  void validate() const;
};

std::string to_json(const PosteriorState& state);
PosteriorState posterior_from_json(const std::string& text);

// Variational EM with Laplace E-steps over the latent log-diffusivities and
// closed-form relevance-vector M-steps. The ELBO is recorded each iteration
// and is non-decreasing up to roundoff.
PosteriorState train(const std::vector<TrainingSample>& dataset, const TrainConfig& config);

// Pointwise mean and standard deviation of the fields under the posterior.
struct PredictiveField {
  FineField mean;
  FineField stddev;
  int sample_count = 0;
};

// Monte Carlo marginalization of Eq-style predictive density: S draws through
// q(theta), the Gamma posteriors, p_c, and the Darcy solve; the p_cf noise
// variance is added to the spread. Deterministic given seed.
PredictiveField predict(const Microstructure& ms, const PosteriorState& state, int n_samples,
                        std::uint64_t seed);

struct Metrics {
  double mean_relative_l2 = 0.0;              // of the predictive mean, all blocks
  std::array<double, 3> block_relative_l2{};  // per block
  double mean_log_density = 0.0;              // per fluid lattice point
  double coverage_1sigma = 0.0;
  double coverage_2sigma = 0.0;
  long n_points = 0;
};

// Metrics over fluid lattice points only; masks give the fluid support of
// each truth field.
Metrics evaluate(const std::vector<PredictiveField>& predictions,
                 const std::vector<FineField>& truths, const std::vector<SolidMask>& masks);

}  // namespace pmrf

#pragma once

// Synthetic datasets drawn from the model's generative hierarchy with known
// parameters, for parameter-recovery checks.

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "cmreg/design.hpp"
#include "cmreg/trial_data.hpp"

namespace cmreg {

struct SimConfig {
  CovariateSchema schema;
  std::size_t n_trials = 150;
  std::size_t min_arms = 2;  // total arms per trial, reference included
  std::size_t max_arms = 4;
  // Per-category probability that a trial reports that follow-up period.
  // Resampled until at least one category is chosen.
  std::vector<double> category_probs;
  double control_fraction = 0.85;
  double x_prob = 0.5;  // Bernoulli rate for each intervention feature
  double z_prob = 0.5;  // Bernoulli rate for each study covariate
  ParameterVector true_params;
  double v_min = 0.002;
  double v_max = 0.01;
  double rho_y = 0.8;
  double rho_d = 0.8;
  std::uint64_t seed = 1;

  // Throws ConfigError.
  void validate() const;
};

// Four features (activity only, diet and activity, intensity, duration), one
// study covariate (age), three follow-up periods, and feature-by-age
// interactions for the first two features.
CovariateSchema reference_schema();

// reference_schema() with plug-in parameters of realistic magnitude.
SimConfig default_sim_config();

// One draw of y for a trial whose covariates and variances are already set:
// delta ~ N(theta, Sigma), then y ~ N(delta, V).
Eigen::VectorXd draw_outcomes(const CovariateSchema& schema, const TrialRecord& trial,
                              const ParameterVector& params, double rho_y, double rho_d,
                              std::mt19937_64& rng);

// y_i ~ N(delta_i, V_i), delta_i ~ N(theta_i, Sigma_i) on raw covariates, with
// var(d_r,t) = half the smallest arm variance at t (left to imputation).
Dataset simulate_dataset(const SimConfig& config);

}  // namespace cmreg

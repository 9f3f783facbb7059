#pragma once

// Fixed-effect linear predictor theta. Control-comparison rows carry the full
// regression (intercept, x, z, w, J); active-comparison rows are the difference
// between arm k and the reference arm, so intercept, z and w cancel.

#include <Eigen/Dense>

#include <cstddef>
#include <string>
#include <vector>

#include "cmreg/trial_data.hpp"

namespace cmreg {

struct ParameterVector {
  double alpha = 0.0;
  std::vector<double> beta;
  std::vector<double> gamma;
  std::vector<double> phi;
  std::vector<double> eta;
  double tau = 0.0;

  static ParameterVector zeros(const CovariateSchema& schema);
  // Flat layout: alpha, beta_1..n, gamma_1..p, phi_1..q-1, eta_1..l, tau.
  static ParameterVector from_flat(const CovariateSchema& schema, const Eigen::VectorXd& flat);
  Eigen::VectorXd flat() const;
  // The same layout without tau.
  Eigen::VectorXd coefficients() const;

  bool conforms_to(const CovariateSchema& schema) const;
  bool operator==(const ParameterVector&) const = default;
};

// Parameter labels in flat order, e.g. "alpha", "beta_1", ..., "tau".
std::vector<std::string> parameter_names(const CovariateSchema& schema);

struct DesignRow {
  double intercept = 0.0;
  std::vector<double> x;
  std::vector<double> z;
  std::vector<double> w;
  std::vector<double> j;

  Eigen::VectorXd flat() const;
};

// Product of the raw covariates referenced by interaction `j` (0-based).
double interaction_value(const CovariateSchema& schema, std::size_t j, const InterventionArm& arm,
                         const std::vector<double>& z, const FollowUpIndicator& time);

// `arm` indexes trial.arms; `category` must be observed in the trial.
// Throws std::out_of_range otherwise.
DesignRow design_row(const CovariateSchema& schema, const TrialRecord& trial, std::size_t arm,
                     int category, const CenteringRecord& centering = {});

// Rows ordered time-major then arm, one column per regression coefficient.
Eigen::MatrixXd design_matrix(const CovariateSchema& schema, const TrialRecord& trial,
                              const CenteringRecord& centering = {});

// Direct evaluation of the regression for every observation, same order as
// design_matrix. Agrees with design_matrix(...) * params.coefficients().
Eigen::VectorXd fixed_effects(const CovariateSchema& schema, const TrialRecord& trial,
                              const ParameterVector& params, const CenteringRecord& centering = {});

// Observations y_i in time-major, arm order.
Eigen::VectorXd observation_vector(const TrialRecord& trial);

// Subtracts dataset-wide means of every design column, taken over the
// control-comparison rows. Interactions are formed from raw covariates first.
// Centering an already-centered dataset leaves the design unchanged.
CenteredDataset center_covariates(const CenteredDataset& dataset);
CenteredDataset center_covariates(const Dataset& dataset);

}  // namespace cmreg

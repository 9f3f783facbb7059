#pragma once

// Within-study sampling covariance V_i and between-trial covariance Sigma_i.
//
// V_i is indexed time-major then arm. Entry (t,k),(t',k') is one of:
//   t == t', k == k' : v_t^(k)
//   t == t', k != k' : var(d_r,t), the reference-arm change-score variance
//   t != t', k == k' : rho_y(t,t') sqrt(v_t^(k) v_t'^(k))
//   t != t', k != k' : rho_d(t,t') sqrt(var(d_r,t) var(d_r,t'))
// Active comparisons use the same expressions with r the active reference arm.

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "cmreg/trial_data.hpp"

namespace cmreg {

enum class EntryKind : std::uint8_t {
  diagonal,
  same_time_cross_arm,
  cross_time_same_arm,
  cross_time_cross_arm,
};

struct WithinCovariance {
  Eigen::MatrixXd matrix;
  std::vector<EntryKind> provenance;  // row-major, dim * dim
  double min_eigenvalue = 0.0;
  bool repaired = false;  // tiny negative eigenvalues were clipped to zero

  std::size_t dimension() const { return static_cast<std::size_t>(matrix.rows()); }
  EntryKind kind(std::size_t r, std::size_t c) const { return provenance[r * dimension() + c]; }
};

// tau^2 on the diagonal, tau^2 / 2 everywhere else.
class BetweenCovariance {
 public:
  BetweenCovariance(std::size_t dimension, double tau);

  std::size_t dimension() const { return dimension_; }
  double tau() const { return tau_; }
  Eigen::MatrixXd matrix() const;
  // The unit-tau structure matrix S (1 on diagonal, 0.5 off).
  static Eigen::MatrixXd structure(std::size_t dimension);

 private:
  std::size_t dimension_;
  double tau_;
};

inline constexpr double kPsdRelativeTolerance = 1e-10;

// Supplied var(d_r,t) if present, otherwise half the smallest arm variance at t.
double impute_ref_change_variance(const TrialRecord& trial, int category);

// base^|t - t'|.
double rho_for_separation(double base_rho, int category, int other_category);

// Per-trial rho overrides take precedence over the base values. Throws
// NumericalError when the assembled matrix is materially non-PSD.
WithinCovariance build_within_covariance(const TrialRecord& trial, double base_rho_y,
                                         double base_rho_d);

BetweenCovariance build_between_covariance(std::size_t dimension, double tau);

// Cholesky factor of a covariance matrix with cached log-determinant.
class GaussianFactor {
 public:
  GaussianFactor() = default;
  // Returns false when `cov` is not numerically positive definite.
  bool compute(const Eigen::MatrixXd& cov);

  std::size_t dimension() const { return dim_; }
  double log_det() const { return log_det_; }
  // log N(residual; 0, cov)
  double log_density(const Eigen::VectorXd& residual) const;
  // cov^{-1} * rhs
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const { return llt_.solve(rhs); }
  Eigen::MatrixXd lower() const { return llt_.matrixL(); }

 private:
  Eigen::LLT<Eigen::MatrixXd> llt_;
  std::size_t dim_ = 0;
  double log_det_ = 0.0;
};

// Log density of N(mean, cov) at x via Cholesky. Throws NumericalError when
// cov cannot be factorized, std::invalid_argument on dimension mismatch.
double mvn_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov);

}  // namespace cmreg

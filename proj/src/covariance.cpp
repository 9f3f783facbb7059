#include "cmreg/covariance.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "cmreg/error.hpp"

namespace cmreg {

double impute_ref_change_variance(const TrialRecord& trial, int category) {
  if (auto it = trial.ref_change_var.find(category); it != trial.ref_change_var.end()) return it->second;
  double min_v = std::numeric_limits<double>::infinity();
  for (const auto& o : trial.observations) {
    if (o.category == category) min_v = std::min(min_v, o.v);
  }
  if (!std::isfinite(min_v)) {
    throw std::out_of_range("trial '" + trial.id + "' has no observation at category " + std::to_string(category));
  }
  return 0.5 * min_v;
}

double rho_for_separation(double base_rho, int category, int other_category) {
  return std::pow(base_rho, std::abs(category - other_category));
}

WithinCovariance build_within_covariance(const TrialRecord& trial, double base_rho_y, double base_rho_d) {
  const double rho_y = trial.rho_y.value_or(base_rho_y);
  const double rho_d = trial.rho_d.value_or(base_rho_d);
  const auto cats = trial.categories();
  const std::size_t arms = trial.arms.size();
  const std::size_t dim = cats.size() * arms;

  std::vector<double> ref_var(cats.size());
  for (std::size_t t = 0; t < cats.size(); ++t) ref_var[t] = impute_ref_change_variance(trial, cats[t]);
  std::vector<double> v(dim);
  for (std::size_t t = 0; t < cats.size(); ++t) {
    for (std::size_t k = 0; k < arms; ++k) v[t * arms + k] = trial.observation_variance(k, cats[t]);
  }

  WithinCovariance out;
  out.matrix.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(dim));
  out.provenance.resize(dim * dim);
  for (std::size_t r = 0; r < dim; ++r) {
    const std::size_t t = r / arms;
    const std::size_t k = r % arms;
    for (std::size_t c = r; c < dim; ++c) {
      const std::size_t t2 = c / arms;
      const std::size_t k2 = c % arms;
      double value = 0.0;
      EntryKind kind{};
      if (t == t2 && k == k2) {
        value = v[r];
        kind = EntryKind::diagonal;
      } else if (t == t2) {
        value = ref_var[t];
        kind = EntryKind::same_time_cross_arm;
      } else if (k == k2) {
        value = rho_for_separation(rho_y, cats[t], cats[t2]) * std::sqrt(v[r] * v[c]);
        kind = EntryKind::cross_time_same_arm;
      } else {
        value = rho_for_separation(rho_d, cats[t], cats[t2]) * std::sqrt(ref_var[t] * ref_var[t2]);
        kind = EntryKind::cross_time_cross_arm;
      }
      const auto ri = static_cast<Eigen::Index>(r);
      const auto ci = static_cast<Eigen::Index>(c);
      out.matrix(ri, ci) = value;
      out.matrix(ci, ri) = value;
      out.provenance[r * dim + c] = kind;
      out.provenance[c * dim + r] = kind;
    }
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(out.matrix);
  if (eig.info() != Eigen::Success) throw NumericalError(trial.id, "eigendecomposition of V failed");
  const double min_eig = eig.eigenvalues().minCoeff();
  const double max_eig = eig.eigenvalues().maxCoeff();
  out.min_eigenvalue = min_eig;
  if (min_eig < -kPsdRelativeTolerance * std::max(max_eig, 0.0)) {
    std::ostringstream msg;
    msg << "within-study covariance is not positive semi-definite (minimum eigenvalue " << min_eig
        << "); check variances and correlations";
    throw NumericalError(trial.id, msg.str());
  }
  if (min_eig < 0.0) {
    const Eigen::VectorXd clipped = eig.eigenvalues().cwiseMax(0.0);
    Eigen::MatrixXd repaired = eig.eigenvectors() * clipped.asDiagonal() * eig.eigenvectors().transpose();
    out.matrix = 0.5 * (repaired + repaired.transpose());
    out.repaired = true;
  }
  return out;
}

BetweenCovariance::BetweenCovariance(std::size_t dimension, double tau) : dimension_(dimension), tau_(tau) {
  if (dimension == 0) throw std::invalid_argument("between-trial covariance needs dimension >= 1");
  if (!(tau >= 0.0) || !std::isfinite(tau)) throw std::invalid_argument("tau must be finite and non-negative");
}

Eigen::MatrixXd BetweenCovariance::structure(std::size_t dimension) {
  const auto d = static_cast<Eigen::Index>(dimension);
  Eigen::MatrixXd s = Eigen::MatrixXd::Constant(d, d, 0.5);
  s.diagonal().setOnes();
  return s;
}

Eigen::MatrixXd BetweenCovariance::matrix() const {
  const double tau2 = tau_ * tau_;
  const auto d = static_cast<Eigen::Index>(dimension_);
  Eigen::MatrixXd m = Eigen::MatrixXd::Constant(d, d, tau2 / 2.0);
  m.diagonal().setConstant(tau2);
  return m;
}

BetweenCovariance build_between_covariance(std::size_t dimension, double tau) {
  return BetweenCovariance(dimension, tau);
}

bool GaussianFactor::compute(const Eigen::MatrixXd& cov) {
  llt_.compute(cov);
  dim_ = static_cast<std::size_t>(cov.rows());
  if (llt_.info() != Eigen::Success) return false;
  const auto L = llt_.matrixLLT();
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < L.rows(); ++i) {
    const double d = L(i, i);
    if (!(d > 0.0) || !std::isfinite(d)) return false;
    log_det += std::log(d);
  }
  log_det_ = 2.0 * log_det;
  return true;
}

double GaussianFactor::log_density(const Eigen::VectorXd& residual) const {
  const Eigen::VectorXd white = llt_.matrixL().solve(residual);
  constexpr double log_2pi = 1.8378770664093454835606594728112;
  return -0.5 * (static_cast<double>(dim_) * log_2pi + log_det_ + white.squaredNorm());
}

double mvn_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
  if (x.size() != mean.size() || cov.rows() != x.size() || cov.cols() != x.size()) {
    throw std::invalid_argument("mvn_logpdf: dimension mismatch");
  }
  GaussianFactor f;
  if (!f.compute(cov)) throw NumericalError("", "covariance matrix is not positive definite");
  return f.log_density(x - mean);
}

}  // namespace cmreg

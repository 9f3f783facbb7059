#include "cmreg/design.hpp"

#include <cmath>
#include <stdexcept>

namespace cmreg {

namespace {

std::size_t sz(int v) { return static_cast<std::size_t>(v); }

void append(Eigen::VectorXd& out, Eigen::Index& at, const std::vector<double>& v) {
  for (double x : v) out[at++] = x;
}

std::vector<double> take(const Eigen::VectorXd& flat, Eigen::Index& at, int count) {
  std::vector<double> out(sz(count));
  for (auto& x : out) x = flat[at++];
  return out;
}

double shift(const std::vector<double>& means, std::size_t j) { return means.empty() ? 0.0 : means[j]; }

}  // namespace

ParameterVector ParameterVector::zeros(const CovariateSchema& schema) {
  ParameterVector p;
  p.beta.assign(sz(schema.n), 0.0);
  p.gamma.assign(sz(schema.p), 0.0);
  p.phi.assign(sz(schema.w_count()), 0.0);
  p.eta.assign(sz(schema.l()), 0.0);
  return p;
}

ParameterVector ParameterVector::from_flat(const CovariateSchema& schema, const Eigen::VectorXd& flat) {
  if (flat.size() != schema.coefficient_count() + 1) {
    throw std::invalid_argument("parameter vector has " + std::to_string(flat.size()) + " entries, expected " +
                                std::to_string(schema.coefficient_count() + 1));
  }
  ParameterVector p;
  Eigen::Index at = 0;
  p.alpha = flat[at++];
  p.beta = take(flat, at, schema.n);
  p.gamma = take(flat, at, schema.p);
  p.phi = take(flat, at, schema.w_count());
  p.eta = take(flat, at, schema.l());
  p.tau = flat[at];
  return p;
}

Eigen::VectorXd ParameterVector::coefficients() const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(1 + beta.size() + gamma.size() + phi.size() + eta.size()));
  Eigen::Index at = 0;
  out[at++] = alpha;
  append(out, at, beta);
  append(out, at, gamma);
  append(out, at, phi);
  append(out, at, eta);
  return out;
}

Eigen::VectorXd ParameterVector::flat() const {
  const Eigen::VectorXd c = coefficients();
  Eigen::VectorXd out(c.size() + 1);
  out << c, tau;
  return out;
}

bool ParameterVector::conforms_to(const CovariateSchema& schema) const {
  return beta.size() == sz(schema.n) && gamma.size() == sz(schema.p) && phi.size() == sz(schema.w_count()) &&
         eta.size() == sz(schema.l());
}

std::vector<std::string> parameter_names(const CovariateSchema& schema) {
  std::vector<std::string> names{"alpha"};
  auto add = [&](const char* stem, int count) {
    for (int j = 1; j <= count; ++j) names.push_back(std::string(stem) + "_" + std::to_string(j));
  };
  add("beta", schema.n);
  add("gamma", schema.p);
  add("phi", schema.w_count());
  add("eta", schema.l());
  names.emplace_back("tau");
  return names;
}

Eigen::VectorXd DesignRow::flat() const {
  Eigen::VectorXd out(static_cast<Eigen::Index>(1 + x.size() + z.size() + w.size() + j.size()));
  Eigen::Index at = 0;
  out[at++] = intercept;
  append(out, at, x);
  append(out, at, z);
  append(out, at, w);
  append(out, at, j);
  return out;
}

double interaction_value(const CovariateSchema& schema, std::size_t j, const InterventionArm& arm,
                         const std::vector<double>& z, const FollowUpIndicator& time) {
  double value = 1.0;
  for (const auto& f : schema.interactions.at(j)) {
    const auto idx = sz(f.index - 1);
    switch (f.level) {
      case CovariateLevel::intervention: value *= arm.x.at(idx); break;
      case CovariateLevel::study: value *= z.at(idx); break;
      case CovariateLevel::followup: value *= time.dummy(f.index); break;
    }
  }
  return value;
}

DesignRow design_row(const CovariateSchema& schema, const TrialRecord& trial, std::size_t arm, int category,
                     const CenteringRecord& centering) {
  if (arm >= trial.arms.size()) {
    throw std::out_of_range("arm index " + std::to_string(arm) + " out of range for trial '" + trial.id + "'");
  }
  if (trial.find_observation(trial.arms[arm].id, category) == nullptr) {
    throw std::out_of_range("category " + std::to_string(category) + " not observed for arm '" +
                            trial.arms[arm].id + "' in trial '" + trial.id + "'");
  }
  const FollowUpIndicator time(category, schema.q);
  const InterventionArm& a = trial.arms[arm];

  DesignRow row;
  row.x.resize(sz(schema.n));
  row.z.assign(sz(schema.p), 0.0);
  row.w.assign(sz(schema.w_count()), 0.0);
  row.j.resize(sz(schema.l()));

  if (trial.comparison == Comparison::control) {
    row.intercept = 1.0;
    for (std::size_t j = 0; j < row.x.size(); ++j) row.x[j] = a.x[j] - shift(centering.x, j);
    for (std::size_t j = 0; j < row.z.size(); ++j) row.z[j] = trial.z[j] - shift(centering.z, j);
    for (std::size_t j = 0; j < row.w.size(); ++j) {
      row.w[j] = time.dummy(static_cast<int>(j) + 1) - shift(centering.w, j);
    }
    for (std::size_t j = 0; j < row.j.size(); ++j) {
      row.j[j] = interaction_value(schema, j, a, trial.z, time) - shift(centering.j, j);
    }
  } else {
    if (!trial.reference) {
      throw std::invalid_argument("active-comparison trial '" + trial.id + "' has no reference arm");
    }
    const InterventionArm& r = *trial.reference;
    // Column shifts cancel in the difference.
    row.intercept = 0.0;
    for (std::size_t j = 0; j < row.x.size(); ++j) row.x[j] = a.x[j] - r.x[j];
    for (std::size_t j = 0; j < row.j.size(); ++j) {
      row.j[j] = interaction_value(schema, j, a, trial.z, time) - interaction_value(schema, j, r, trial.z, time);
    }
  }
  return row;
}

Eigen::MatrixXd design_matrix(const CovariateSchema& schema, const TrialRecord& trial,
                              const CenteringRecord& centering) {
  const auto cats = trial.categories();
  Eigen::MatrixXd X(static_cast<Eigen::Index>(cats.size() * trial.arms.size()), schema.coefficient_count());
  Eigen::Index r = 0;
  for (int t : cats) {
    for (std::size_t k = 0; k < trial.arms.size(); ++k) {
      X.row(r++) = design_row(schema, trial, k, t, centering).flat().transpose();
    }
  }
  return X;
}

Eigen::VectorXd fixed_effects(const CovariateSchema& schema, const TrialRecord& trial,
                              const ParameterVector& params, const CenteringRecord& centering) {
  const auto cats = trial.categories();
  Eigen::VectorXd theta(static_cast<Eigen::Index>(cats.size() * trial.arms.size()));
  const bool control = trial.comparison == Comparison::control;
  Eigen::Index r = 0;
  for (int t : cats) {
    const FollowUpIndicator time(t, schema.q);
    for (const auto& arm : trial.arms) {
      double value = 0.0;
      if (control) {
        value += params.alpha;
        for (std::size_t j = 0; j < params.beta.size(); ++j) {
          value += params.beta[j] * (arm.x[j] - shift(centering.x, j));
        }
        for (std::size_t j = 0; j < params.gamma.size(); ++j) {
          value += params.gamma[j] * (trial.z[j] - shift(centering.z, j));
        }
        for (std::size_t j = 0; j < params.phi.size(); ++j) {
          value += params.phi[j] * (time.dummy(static_cast<int>(j) + 1) - shift(centering.w, j));
        }
        for (std::size_t j = 0; j < params.eta.size(); ++j) {
          value += params.eta[j] * (interaction_value(schema, j, arm, trial.z, time) - shift(centering.j, j));
        }
      } else {
        const InterventionArm& ref = trial.reference.value();
        for (std::size_t j = 0; j < params.beta.size(); ++j) value += params.beta[j] * (arm.x[j] - ref.x[j]);
        for (std::size_t j = 0; j < params.eta.size(); ++j) {
          value += params.eta[j] * (interaction_value(schema, j, arm, trial.z, time) -
                                    interaction_value(schema, j, ref, trial.z, time));
        }
      }
      theta[r++] = value;
    }
  }
  return theta;
}

Eigen::VectorXd observation_vector(const TrialRecord& trial) {
  const auto cats = trial.categories();
  Eigen::VectorXd y(static_cast<Eigen::Index>(cats.size() * trial.arms.size()));
  Eigen::Index r = 0;
  for (int t : cats) {
    for (const auto& arm : trial.arms) {
      const Observation* o = trial.find_observation(arm.id, t);
      if (o == nullptr) {
        throw std::out_of_range("trial '" + trial.id + "' missing observation for arm '" + arm.id + "' at " +
                                std::to_string(t));
      }
      y[r++] = o->y;
    }
  }
  return y;
}

CenteredDataset center_covariates(const CenteredDataset& dataset) {
  const CovariateSchema& schema = dataset.data.schema;
  const Eigen::Index cols = schema.coefficient_count();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(cols);
  std::size_t rows = 0;
  for (const auto& trial : dataset.data.trials) {
    if (trial.comparison != Comparison::control) continue;
    const Eigen::MatrixXd X = design_matrix(schema, trial, dataset.centering);
    sum += X.colwise().sum().transpose();
    rows += static_cast<std::size_t>(X.rows());
  }
  CenteredDataset out{dataset.data, dataset.centering};
  out.centering.rows = rows;
  if (rows == 0) return out;
  const Eigen::VectorXd mean = sum / static_cast<double>(rows);

  auto update = [&](std::vector<double>& target, Eigen::Index offset, int count) {
    if (target.empty()) target.assign(sz(count), 0.0);
    for (int j = 0; j < count; ++j) target[sz(j)] += mean[offset + j];
  };
  Eigen::Index offset = 1;
  update(out.centering.x, offset, schema.n);
  offset += schema.n;
  update(out.centering.z, offset, schema.p);
  offset += schema.p;
  update(out.centering.w, offset, schema.w_count());
  offset += schema.w_count();
  update(out.centering.j, offset, schema.l());
  return out;
}

CenteredDataset center_covariates(const Dataset& dataset) { return center_covariates(CenteredDataset{dataset, {}}); }

}  // namespace cmreg

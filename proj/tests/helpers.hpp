#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "cmreg/design.hpp"
#include "cmreg/trial_data.hpp"

namespace testutil {

inline cmreg::CovariateSchema schema(int n, int p, int q,
                                     std::vector<std::vector<cmreg::InteractionFactor>> inter = {}) {
  cmreg::CovariateSchema s;
  s.n = n;
  s.p = p;
  s.q = q;
  s.interactions = std::move(inter);
  return s;
}

// One control trial, one arm, one follow-up.
inline cmreg::TrialRecord two_arm_trial(const std::string& id, std::vector<double> x, std::vector<double> z,
                                        double y, double v, int category = 1) {
  cmreg::TrialRecord t;
  t.id = id;
  t.comparison = cmreg::Comparison::control;
  t.z = std::move(z);
  t.arms.push_back({"A", std::move(x)});
  t.observations.push_back({"A", category, y, v});
  return t;
}

inline cmreg::Dataset dataset(cmreg::CovariateSchema s, std::vector<cmreg::TrialRecord> trials) {
  cmreg::Dataset d;
  d.schema = std::move(s);
  d.trials = std::move(trials);
  return d;
}

inline cmreg::ParameterVector random_params(const cmreg::CovariateSchema& s, std::mt19937_64& rng, double tau = 0.1) {
  std::normal_distribution<double> nd(0.0, 1.0);
  cmreg::ParameterVector p = cmreg::ParameterVector::zeros(s);
  p.alpha = nd(rng);
  for (auto* v : {&p.beta, &p.gamma, &p.phi, &p.eta}) {
    for (double& e : *v) e = nd(rng);
  }
  p.tau = tau;
  return p;
}

// Dense reference log density via explicit inverse and determinant.
inline double naive_mvn_logpdf(const Eigen::VectorXd& x, const Eigen::VectorXd& m, const Eigen::MatrixXd& c) {
  const Eigen::VectorXd r = x - m;
  const double quad = r.dot(c.inverse() * r);
  return -0.5 * (static_cast<double>(x.size()) * std::log(2.0 * M_PI) + std::log(c.determinant()) + quad);
}

}  // namespace testutil

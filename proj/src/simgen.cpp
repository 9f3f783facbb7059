#include "cmreg/simgen.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <random>

#include "cmreg/covariance.hpp"
#include "cmreg/error.hpp"

namespace cmreg {

CovariateSchema reference_schema() {
  CovariateSchema s;
  s.n = 4;
  s.p = 1;
  s.q = 3;
  s.interactions = {
      {{CovariateLevel::intervention, 1}, {CovariateLevel::study, 1}},
      {{CovariateLevel::intervention, 2}, {CovariateLevel::study, 1}},
  };
  s.names = {"activity_only", "diet_and_activity", "intensity", "duration", "age_12_18",
             "medium_term", "long_term", "activity_only_x_age", "diet_and_activity_x_age"};
  return s;
}

SimConfig default_sim_config() {
  SimConfig c;
  c.schema = reference_schema();
  c.category_probs = {0.8, 0.5, 0.3};
  c.true_params.alpha = -0.04;
  c.true_params.beta = {0.004, 0.01, -0.022, 0.003};
  c.true_params.gamma = {-0.035};
  c.true_params.phi = {-0.0085, -0.0068};
  c.true_params.eta = {0.089, 0.04};
  c.true_params.tau = 0.05;
  return c;
}

void SimConfig::validate() const {
  for (const auto& msg : validate_schema(schema)) throw ConfigError("schema: " + msg);
  if (n_trials < 1) throw ConfigError("n_trials must be >= 1");
  if (min_arms < 2 || max_arms < min_arms) throw ConfigError("arm count range must satisfy 2 <= min_arms <= max_arms");
  if (category_probs.size() != static_cast<std::size_t>(schema.q)) {
    throw ConfigError("category_probs needs one probability per follow-up category");
  }
  bool any = false;
  for (double p : category_probs) {
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("category probabilities must lie in [0, 1]");
    any = any || p > 0.0;
  }
  if (!any) throw ConfigError("at least one follow-up category needs positive probability");
  if (!(control_fraction >= 0.0 && control_fraction <= 1.0)) throw ConfigError("control_fraction must lie in [0, 1]");
  if (!true_params.conforms_to(schema)) throw ConfigError("true_params do not match the schema dimensions");
  const bool needs_control = true_params.alpha != 0.0 ||
                             std::any_of(true_params.gamma.begin(), true_params.gamma.end(), [](double v) { return v != 0.0; }) ||
                             std::any_of(true_params.phi.begin(), true_params.phi.end(), [](double v) { return v != 0.0; });
  if (needs_control && control_fraction <= 0.0) {
    throw ConfigError("control_fraction must be > 0 when alpha, gamma or phi are nonzero");
  }
  if (!(true_params.tau >= 0.0)) throw ConfigError("true tau must be non-negative");
  if (!(v_min > 0.0 && v_max >= v_min)) throw ConfigError("variance range must satisfy 0 < v_min <= v_max");
  if (!(x_prob >= 0.0 && x_prob <= 1.0) || !(z_prob >= 0.0 && z_prob <= 1.0)) {
    throw ConfigError("covariate probabilities must lie in [0, 1]");
  }
  if (!(rho_y >= 0.0 && rho_y < 1.0) || !(rho_d >= 0.0 && rho_d < 1.0)) throw ConfigError("correlations must lie in [0, 1)");
}

namespace {

Eigen::VectorXd draw_mvn(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::VectorXd e(mean.size());
  for (Eigen::Index i = 0; i < e.size(); ++i) e[i] = normal(rng);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return mean + eig.eigenvectors() * root.asDiagonal() * e;
}

InterventionArm draw_arm(std::string id, const SimConfig& c, std::mt19937_64& rng) {
  std::bernoulli_distribution feature(c.x_prob);
  InterventionArm arm{std::move(id), {}};
  for (int j = 0; j < c.schema.n; ++j) arm.x.push_back(feature(rng) ? 1.0 : 0.0);
  return arm;
}

}  // namespace

Eigen::VectorXd draw_outcomes(const CovariateSchema& schema, const TrialRecord& trial,
                              const ParameterVector& params, double rho_y, double rho_d,
                              std::mt19937_64& rng) {
  const WithinCovariance within = build_within_covariance(trial, rho_y, rho_d);
  const Eigen::VectorXd theta = fixed_effects(schema, trial, params);
  const Eigen::MatrixXd sigma = build_between_covariance(trial.dimension(), params.tau).matrix();
  const Eigen::VectorXd delta = draw_mvn(theta, sigma, rng);
  return draw_mvn(delta, within.matrix, rng);
}

Dataset simulate_dataset(const SimConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  std::bernoulli_distribution is_control(config.control_fraction);
  std::bernoulli_distribution study_cov(config.z_prob);
  std::uniform_int_distribution<std::size_t> arm_count(config.min_arms, config.max_arms);
  std::uniform_real_distribution<double> variance(config.v_min, config.v_max);

  Dataset ds;
  ds.schema = config.schema;
  ds.base_rho_y = config.rho_y;
  ds.base_rho_d = config.rho_d;

  bool have_control = false;
  for (std::size_t i = 0; i < config.n_trials; ++i) {
    TrialRecord trial;
    trial.id = "S" + std::to_string(i + 1);
    // Guarantee one control trial so the dataset is always identifiable.
    const bool force_control = !have_control && i + 1 == config.n_trials && config.control_fraction > 0.0;
    trial.comparison = (is_control(rng) || force_control) ? Comparison::control : Comparison::active;
    have_control = have_control || trial.comparison == Comparison::control;
    for (int j = 0; j < config.schema.p; ++j) trial.z.push_back(study_cov(rng) ? 1.0 : 0.0);

    const std::size_t total_arms = arm_count(rng);
    for (std::size_t k = 0; k + 1 < total_arms; ++k) trial.arms.push_back(draw_arm("A" + std::to_string(k + 1), config, rng));
    if (trial.comparison == Comparison::active) trial.reference = draw_arm("R", config, rng);

    std::vector<int> cats;
    while (cats.empty()) {
      for (int t = 1; t <= config.schema.q; ++t) {
        if (std::bernoulli_distribution(config.category_probs[static_cast<std::size_t>(t - 1)])(rng)) cats.push_back(t);
      }
    }
    // Variance draws whose implied V is not PSD are redrawn.
    bool psd = false;
    for (int attempt = 0; attempt < 1000 && !psd; ++attempt) {
      trial.observations.clear();
      for (int t : cats) {
        for (const auto& arm : trial.arms) trial.observations.push_back({arm.id, t, 0.0, variance(rng)});
      }
      try {
        build_within_covariance(trial, config.rho_y, config.rho_d);
        psd = true;
      } catch (const NumericalError&) {
      }
    }
    if (!psd) throw ConfigError("variance range and correlations never give a PSD within-study covariance");

    const Eigen::VectorXd y = draw_outcomes(config.schema, trial, config.true_params, config.rho_y, config.rho_d, rng);
    // Observations were pushed in time-major, arm order, matching y.
    for (std::size_t r = 0; r < trial.observations.size(); ++r) trial.observations[r].y = y[static_cast<Eigen::Index>(r)];
    ds.trials.push_back(std::move(trial));
  }
  return ds;
}

}  // namespace cmreg

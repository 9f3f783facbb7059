#include <doctest.h>

#include <cmath>
#include <random>

#include "cmreg/covariance.hpp"
#include "cmreg/error.hpp"
#include "cmreg/io.hpp"
#include "cmreg/simgen.hpp"

using namespace cmreg;

TEST_CASE("simulated datasets are valid and deterministic") {
  SimConfig cfg = default_sim_config();
  for (std::uint64_t seed : {1u, 2u, 3u, 4u}) {
    cfg.seed = seed;
    const Dataset a = simulate_dataset(cfg);
    CHECK(validate_dataset(a).empty());
    CHECK(a.trials.size() == cfg.n_trials);
    CHECK(simulate_dataset(cfg) == a);
  }
  cfg.seed = 1;
  const Dataset a = simulate_dataset(cfg);
  cfg.seed = 2;
  CHECK(!(simulate_dataset(cfg) == a));
}

TEST_CASE("noiseless limit reproduces theta") {
  SimConfig cfg = default_sim_config();
  cfg.n_trials = 50;
  cfg.true_params.tau = 0.0;
  cfg.v_min = cfg.v_max = 1e-10;
  const Dataset ds = simulate_dataset(cfg);
  for (const auto& t : ds.trials) {
    const Eigen::VectorXd theta = fixed_effects(ds.schema, t, cfg.true_params);
    CHECK((observation_vector(t) - theta).cwiseAbs().maxCoeff() < 1e-4);
  }
}

TEST_CASE("moment matching of single-contrast observations") {
  SimConfig cfg = default_sim_config();
  cfg.n_trials = 200;
  cfg.true_params = ParameterVector::zeros(cfg.schema);
  cfg.true_params.tau = 0.05;
  cfg.min_arms = cfg.max_arms = 2;
  cfg.category_probs = {1.0, 0.0, 0.0};
  cfg.seed = 77;
  const Dataset ds = simulate_dataset(cfg);
  double sum = 0, sum2 = 0, vsum = 0;
  for (const auto& t : ds.trials) {
    REQUIRE(t.observations.size() == 1);
    sum += t.observations[0].y;
    sum2 += t.observations[0].y * t.observations[0].y;
    vsum += t.observations[0].v;
  }
  const double n = static_cast<double>(ds.trials.size());
  const double var = (sum2 - sum * sum / n) / (n - 1.0);
  const double expected = 0.05 * 0.05 + vsum / n;
  CHECK(std::abs(var - expected) / expected < 0.10);
}

TEST_CASE("empirical covariance of repeated draws converges to V + Sigma") {
  SimConfig cfg = default_sim_config();
  cfg.n_trials = 1;
  cfg.min_arms = cfg.max_arms = 3;
  cfg.category_probs = {1.0, 1.0, 1.0};
  cfg.control_fraction = 1.0;
  cfg.seed = 3;
  const Dataset ds = simulate_dataset(cfg);
  const TrialRecord& trial = ds.trials[0];
  REQUIRE(trial.dimension() == 6);

  const Eigen::MatrixXd target = build_within_covariance(trial, cfg.rho_y, cfg.rho_d).matrix +
                                 build_between_covariance(trial.dimension(), cfg.true_params.tau).matrix();
  const Eigen::VectorXd theta = fixed_effects(ds.schema, trial, cfg.true_params);

  std::mt19937_64 rng(12);
  const int reps = 100000;
  const Eigen::Index d = target.rows();
  Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(d, d);
  for (int r = 0; r < reps; ++r) {
    const Eigen::VectorXd e = draw_outcomes(ds.schema, trial, cfg.true_params, cfg.rho_y, cfg.rho_d, rng) - theta;
    acc += e * e.transpose();
  }
  const Eigen::MatrixXd empirical = acc / reps;
  CHECK((empirical - target).norm() / target.norm() < 0.05);
}

TEST_CASE("config validation") {
  SimConfig cfg = default_sim_config();
  cfg.n_trials = 0;
  CHECK_THROWS_AS(simulate_dataset(cfg), ConfigError);
  cfg = default_sim_config();
  cfg.control_fraction = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.true_params.alpha = 0.0;
  cfg.true_params.gamma = {0.0};
  cfg.true_params.phi = {0.0, 0.0};
  CHECK_NOTHROW(cfg.validate());
  cfg = default_sim_config();
  cfg.v_min = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = default_sim_config();
  cfg.category_probs = {0.5};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = default_sim_config();
  cfg.min_arms = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("sim config json round trip") {
  SimConfig cfg = default_sim_config();
  cfg.n_trials = 12;
  cfg.seed = 99;
  cfg.control_fraction = 0.6;
  const SimConfig back = sim_config_from_json(sim_config_to_json(cfg));
  CHECK(simulate_dataset(back) == simulate_dataset(cfg));
  const SimConfig partial = sim_config_from_json(nlohmann::json{{"n_trials", 7}});
  CHECK(partial.n_trials == 7);
  CHECK(partial.true_params == default_sim_config().true_params);
}

#include <doctest.h>

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "cmreg/diagnostics.hpp"
#include "cmreg/error.hpp"
#include "cmreg/sampler.hpp"
#include "cmreg/simgen.hpp"
#include "helpers.hpp"

using namespace cmreg;

namespace {

double normal_logpdf(double x, double mean, double var) {
  return -0.5 * std::log(2.0 * M_PI * var) - 0.5 * (x - mean) * (x - mean) / var;
}

// log of the integral over delta of N(y; delta, v) N(delta; theta, tau^2),
// composite Simpson over +-12 sd of the posterior of delta.
double quadrature_marginal(double y, double v, double theta, double tau) {
  const double t2 = tau * tau;
  const double post_var = 1.0 / (1.0 / v + 1.0 / t2);
  const double post_mean = post_var * (y / v + theta / t2);
  const double half = 12.0 * std::sqrt(post_var);
  const int n = 4000;
  const double h = 2.0 * half / n;
  const double lo = post_mean - half;
  auto log_f = [&](double d) { return normal_logpdf(y, d, v) + normal_logpdf(d, theta, t2); };
  const double ref = log_f(post_mean);
  double sum = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    sum += w * std::exp(log_f(lo + i * h) - ref);
  }
  return ref + std::log(sum * h / 3.0);
}

Dataset three_scalar_trials() {
  const auto s = testutil::schema(1, 1, 1);
  return testutil::dataset(s, {testutil::two_arm_trial("a", {1}, {0.2}, -0.05, 0.01),
                               testutil::two_arm_trial("b", {0}, {0.7}, 0.02, 0.004),
                               testutil::two_arm_trial("c", {1}, {0.1}, -0.11, 0.02)});
}

McmcConfig quick_config(std::size_t chains = 2) {
  McmcConfig c;
  c.chains = chains;
  c.adapt_iters = 500;
  c.burn_in = 500;
  c.samples = 1000;
  c.seed = 17;
  return c;
}

}  // namespace

TEST_CASE("log prior") {
  const auto s = testutil::schema(4, 1, 3, {{{CovariateLevel::intervention, 1}, {CovariateLevel::study, 1}}});
  PriorSpec prior;
  auto p = ParameterVector::zeros(s);

  p.tau = 6.0;
  CHECK(log_prior(p, prior) == -std::numeric_limits<double>::infinity());
  p.tau = 0.0;
  CHECK(log_prior(p, prior) == -std::numeric_limits<double>::infinity());

  p.tau = 1.0;
  const double expected = s.coefficient_count() * (-0.5 * std::log(2.0 * M_PI * 100.0 * 100.0)) + std::log(1.0 / 5.0);
  CHECK(log_prior(p, prior) == doctest::Approx(expected).epsilon(1e-14));

  p.alpha = 3.0;
  p.beta[2] = -1.0;
  const double at1 = log_prior(p, prior);
  p.tau = 2.5;
  CHECK(log_prior(p, prior) == at1);

  CHECK_THROWS_AS((PriorSpec{0.0, 1.0}.validate()), ConfigError);
  CHECK_THROWS_AS((PriorSpec{1.0, -1.0}.validate()), ConfigError);
}

TEST_CASE("marginal likelihood examples") {
  const auto s = testutil::schema(1, 0, 1);
  const auto single = testutil::dataset(s, {testutil::two_arm_trial("a", {1}, {}, -0.03, 0.01)});
  auto p = ParameterVector::zeros(s);
  p.alpha = 0.01;
  p.beta = {-0.02};
  p.tau = 0.0;
  CHECK(log_likelihood_marginal(single, p) == doctest::Approx(normal_logpdf(-0.03, -0.01, 0.01)).epsilon(1e-14));

  p.tau = 0.2;
  CHECK(log_likelihood_marginal(single, p) ==
        doctest::Approx(normal_logpdf(-0.03, -0.01, 0.01 + 0.04)).epsilon(1e-14));

  auto doubled = single;
  doubled.trials.push_back(single.trials[0]);
  doubled.trials[1].id = "b";
  CHECK(log_likelihood_marginal(doubled, p) == doctest::Approx(2.0 * log_likelihood_marginal(single, p)).epsilon(1e-14));
}

TEST_CASE("marginal likelihood equals quadrature over the latent effect") {
  const Dataset ds = three_scalar_trials();
  const Model model(ds);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> coef(-0.3, 0.3), tau(0.01, 0.4);
  for (int rep = 0; rep < 20; ++rep) {
    auto p = ParameterVector::zeros(ds.schema);
    p.alpha = coef(rng);
    p.beta = {coef(rng)};
    p.gamma = {coef(rng)};
    p.tau = tau(rng);
    double quad = 0.0;
    for (const auto& t : ds.trials) {
      const double theta = fixed_effects(ds.schema, t, p)[0];
      quad += quadrature_marginal(t.observations[0].y, t.observations[0].v, theta, p.tau);
    }
    CHECK(std::abs(model.log_likelihood_marginal(p) - quad) < 1e-6);
  }
}

TEST_CASE("latent likelihood examples") {
  const auto s = testutil::schema(1, 0, 1);
  const auto ds = testutil::dataset(s, {testutil::two_arm_trial("a", {1}, {}, 0.05, 0.01)});
  auto p = ParameterVector::zeros(s);
  p.alpha = 0.02;
  p.beta = {0.03};
  p.tau = 0.1;
  const std::vector<Eigen::VectorXd> at_y{Eigen::VectorXd::Constant(1, 0.05)};
  CHECK(log_likelihood_latent(ds, p, at_y) ==
        doctest::Approx(-0.5 * std::log(2 * M_PI * 0.01) - 0.5 * std::log(2 * M_PI * 0.01)).epsilon(1e-13));

  // delta at theta: within term plus the RE density at zero deviation
  SimConfig cfg = default_sim_config();
  cfg.n_trials = 10;
  const Dataset big = simulate_dataset(cfg);
  const Model model(big);
  std::mt19937_64 rng(1);
  auto q = testutil::random_params(big.schema, rng, 0.07);
  std::vector<Eigen::VectorXd> deltas;
  double expected = 0.0;
  for (std::size_t i = 0; i < big.trials.size(); ++i) {
    const auto& t = model.trials()[i];
    const Eigen::VectorXd theta = t.design * q.coefficients();
    deltas.push_back(theta);
    expected += mvn_logpdf(t.y, theta, t.within.matrix);
    expected += mvn_logpdf(theta, theta, q.tau * q.tau * t.structure);
  }
  CHECK(model.log_likelihood_latent(q, deltas) == doctest::Approx(expected).epsilon(1e-13));

  q.tau = 0.0;
  CHECK_THROWS_AS(model.log_likelihood_latent(q, deltas), NumericalError);
}

TEST_CASE("marginal likelihood properties") {
  SimConfig cfg = default_sim_config();
  cfg.n_trials = 40;
  const Dataset ds = simulate_dataset(cfg);
  const Model model(center_covariates(ds));
  std::mt19937_64 rng(8);
  auto p = testutil::random_params(ds.schema, rng);
  for (auto* v : {&p.beta, &p.gamma, &p.phi, &p.eta}) {
    for (double& e : *v) e *= 0.05;
  }

  SUBCASE("continuous at tau -> 0 and equal to the V-only likelihood") {
    double fixed_effect = 0.0;
    for (const auto& t : model.trials()) fixed_effect += mvn_logpdf(t.y, t.design * p.coefficients(), t.within.matrix);
    p.tau = 1e-8;
    CHECK(std::abs(model.log_likelihood_marginal(p) - fixed_effect) < 1e-6);
    p.tau = 0.0;
    CHECK(std::abs(model.log_likelihood_marginal(p) - fixed_effect) < 1e-9);
  }
  SUBCASE("additive over trials") {
    double sum = 0.0;
    for (const auto& t : ds.trials) sum += log_likelihood_marginal(testutil::dataset(ds.schema, {t}), p);
    CHECK(Model(ds).log_likelihood_marginal(p) == doctest::Approx(sum).epsilon(1e-12));
  }
  SUBCASE("workspace cache gives the same value") {
    MarginalWorkspace ws;
    const double a = model.log_likelihood_marginal(p.coefficients(), p.tau, ws);
    const double b = model.log_likelihood_marginal(p.coefficients(), p.tau, ws);
    CHECK(a == b);
    CHECK(a == model.log_likelihood_marginal(p));
  }
  SUBCASE("active-only data: constant in alpha, gamma, phi") {
    Dataset active = ds;
    std::erase_if(active.trials, [](const TrialRecord& t) { return t.comparison == Comparison::control; });
    REQUIRE(!active.trials.empty());
    const Model am(active);
    const double base = am.log_likelihood_marginal(p);
    auto pert = p;
    pert.alpha += 10.0;
    for (double& g : pert.gamma) g += 3.0;
    for (double& f : pert.phi) f -= 7.0;
    CHECK(am.log_likelihood_marginal(pert) == base);
  }
}

TEST_CASE("run_chain and run_mcmc") {
  SimConfig cfg = default_sim_config();
  cfg.n_trials = 30;
  const Dataset ds = simulate_dataset(cfg);
  const Model model(center_covariates(ds));
  const PriorSpec prior;

  SUBCASE("deterministic and thread-independent") {
    auto c = quick_config(3);
    const auto a = run_mcmc(model, prior, c);
    const auto b = run_mcmc(model, prior, c);
    c.concurrent = false;
    const auto serial = run_mcmc(model, prior, c);
    REQUIRE(a.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
      CHECK(a[k].chain_index == k);
      CHECK(a[k].draws == b[k].draws);
      CHECK(a[k].draws == serial[k].draws);
      CHECK(a[k].seed_used == chain_seed(c.seed, k));
      CHECK(a[k].draws == run_chain(model, prior, c, k).draws);
    }
    CHECK(a[0].draws != a[1].draws);
    CHECK(a[0].seed_used != a[1].seed_used);
  }
  SUBCASE("shape, support and finiteness") {
    auto c = quick_config(2);
    c.thin = 3;
    const auto out = run_mcmc(model, prior, c);
    for (const auto& ch : out) {
      CHECK(ch.draws.rows() == static_cast<Eigen::Index>(c.samples));
      CHECK(ch.draws.cols() == static_cast<Eigen::Index>(model.parameter_count()));
      CHECK(ch.draws.allFinite());
      const auto tau = ch.draws.col(ch.draws.cols() - 1);
      CHECK(tau.minCoeff() > 0.0);
      CHECK(tau.maxCoeff() < prior.tau_upper);
    }
  }
  SUBCASE("fixed parameters stay fixed") {
    auto c = quick_config(1);
    c.fixed = {{"alpha", 0.1}, {"tau", 0.05}};
    const auto ch = run_chain(model, prior, c, 0);
    CHECK((ch.draws.col(0).array() == 0.1).all());
    CHECK((ch.draws.col(ch.draws.cols() - 1).array() == 0.05).all());
    c.fixed = {{"nope", 1.0}};
    CHECK_THROWS_AS(run_chain(model, prior, c, 0), ConfigError);
    c.fixed = {{"tau", 0.0}};
    CHECK_THROWS_AS(run_chain(model, prior, c, 0), ConfigError);
  }
  SUBCASE("config validation") {
    auto c = quick_config();
    c.samples = 0;
    CHECK_THROWS_AS(run_mcmc(model, prior, c), ConfigError);
    c = quick_config();
    c.target_accept = 1.0;
    CHECK_THROWS_AS(run_mcmc(model, prior, c), ConfigError);
    CHECK_THROWS_AS(likelihood_form_from_string("joint"), ConfigError);
  }
}

TEST_CASE("acceptance rate after adaptation on a recovery-sized dataset") {
  SimConfig cfg = default_sim_config();
  cfg.seed = 101;
  const Dataset ds = simulate_dataset(cfg);
  const Model model(center_covariates(ds));
  McmcConfig c;
  c.chains = 1;
  c.adapt_iters = 2000;
  c.burn_in = 500;
  c.samples = 2000;
  const auto ch = run_chain(model, PriorSpec{}, c, 0);
  CHECK(ch.accept_rate >= 0.1);
  CHECK(ch.accept_rate <= 0.5);
}

TEST_CASE("conjugate posterior for alpha") {
  const auto s = testutil::schema(1, 0, 1);
  const double y = -0.08, v = 0.01, tau = 0.05, beta = 0.02, sd = 1e4;
  const Dataset ds = testutil::dataset(s, {testutil::two_arm_trial("a", {1}, {}, y, v)});
  const Model model(ds);
  McmcConfig c;
  c.chains = 1;
  c.adapt_iters = 2000;
  c.burn_in = 1000;
  c.samples = 20000;
  c.fixed = {{"beta_1", beta}, {"tau", tau}};
  const auto ch = run_chain(model, PriorSpec{5.0, sd}, c, 0);

  const double total_var = v + tau * tau;
  const double post_var = 1.0 / (1.0 / total_var + 1.0 / (sd * sd));
  const double post_mean = post_var * (y - beta) / total_var;

  std::vector<double> a(ch.draws.col(0).data(), ch.draws.col(0).data() + ch.draws.rows());
  const double n = static_cast<double>(a.size());
  const double mean = std::accumulate(a.begin(), a.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : a) ss += (x - mean) * (x - mean);
  const double sdev = std::sqrt(ss / (n - 1.0));
  const double se = monte_carlo_se(a);
  const double n_eff = ss / (n - 1.0) / (se * se);
  CHECK(std::abs(mean - post_mean) < 3.0 * se);
  CHECK(std::abs(sdev - std::sqrt(post_var)) < 3.0 * std::sqrt(post_var / (2.0 * n_eff)));
}

TEST_CASE("latent and marginal samplers agree") {
  const Dataset ds = three_scalar_trials();
  const Model model(center_covariates(ds));
  McmcConfig c;
  c.chains = 2;
  c.adapt_iters = 3000;
  c.burn_in = 2000;
  c.samples = 20000;
  c.seed = 2024;
  const PriorSpec prior{1.0, 10.0};
  const auto marg = run_mcmc(model, prior, c);
  c.likelihood = LikelihoodForm::latent;
  const auto lat = run_mcmc(model, prior, c);

  for (std::size_t j = 0; j < model.parameter_count(); ++j) {
    std::vector<double> a, b;
    for (const auto& col : parameter_chains(marg, j)) a.insert(a.end(), col.begin(), col.end());
    for (const auto& col : parameter_chains(lat, j)) b.insert(b.end(), col.begin(), col.end());
    const double ma = std::accumulate(a.begin(), a.end(), 0.0) / static_cast<double>(a.size());
    const double mb = std::accumulate(b.begin(), b.end(), 0.0) / static_cast<double>(b.size());
    // per-chain batch means, combined across the two independent chains
    double va = 0.0, vb = 0.0;
    for (const auto& col : parameter_chains(marg, j)) va += std::pow(monte_carlo_se(col), 2) / 4.0;
    for (const auto& col : parameter_chains(lat, j)) vb += std::pow(monte_carlo_se(col), 2) / 4.0;
    CAPTURE(j);
    CHECK(std::abs(ma - mb) < 3.0 * std::sqrt(va + vb));
  }
}

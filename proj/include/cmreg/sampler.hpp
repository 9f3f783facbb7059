#pragma once

// Log-posterior of the hierarchical model
//   y_i ~ N(delta_i, V_i),  delta_i ~ N(theta_i, Sigma_i(tau))
// and a multi-chain adaptive random-walk Metropolis sampler over
// (alpha, beta, gamma, phi, eta, tau).
//
// The marginal form integrates delta out, y_i ~ N(theta_i, V_i + Sigma_i).
// The latent form keeps delta_i as explicit state; the sampler then updates
// each delta_i from its Gaussian full conditional between Metropolis steps.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "cmreg/covariance.hpp"
#include "cmreg/design.hpp"
#include "cmreg/trial_data.hpp"

namespace cmreg {

struct PriorSpec {
  double tau_upper = 5.0;  // tau ~ Unif(0, tau_upper)
  double coeff_sd = 100.0; // every regression coefficient ~ N(0, coeff_sd^2)

  void validate() const;
};

enum class LikelihoodForm { marginal, latent };

std::string_view to_string(LikelihoodForm form);
LikelihoodForm likelihood_form_from_string(std::string_view s);

struct McmcConfig {
  std::size_t chains = 4;
  std::size_t adapt_iters = 10000;
  std::size_t burn_in = 10000;
  std::size_t samples = 20000;
  std::uint64_t seed = 20230101;
  LikelihoodForm likelihood = LikelihoodForm::marginal;
  double target_accept = 0.234;
  std::size_t thin = 1;
  bool concurrent = true;
  // Parameters held at a constant value, keyed by parameter_names() label.
  std::map<std::string, double> fixed;

  void validate() const;
};

struct ChainOutput {
  // samples x parameters, columns in parameter_names() order.
  Eigen::MatrixXd draws;
  double accept_rate = 0.0;  // Metropolis acceptance after adaptation
  std::uint64_t seed_used = 0;
  std::size_t chain_index = 0;
};

// One trial reduced to what the likelihood needs.
struct AssembledTrial {
  std::string id;
  Comparison comparison = Comparison::control;
  Eigen::MatrixXd design;     // dim x coefficient_count
  Eigen::VectorXd y;
  WithinCovariance within;
  Eigen::MatrixXd structure;  // Sigma_i / tau^2

  std::size_t dimension() const { return static_cast<std::size_t>(y.size()); }
};

// Per-trial factorizations of V_i + tau^2 S_i, valid for one tau.
struct MarginalWorkspace {
  double tau = -1.0;
  std::vector<Eigen::MatrixXd> cov;
  std::vector<GaussianFactor> factors;
  std::vector<Eigen::VectorXd> residual;
};

class Model {
 public:
  explicit Model(const CenteredDataset& dataset);
  explicit Model(const Dataset& dataset);

  const CovariateSchema& schema() const { return schema_; }
  const CenteringRecord& centering() const { return centering_; }
  const std::vector<AssembledTrial>& trials() const { return trials_; }
  std::size_t parameter_count() const { return static_cast<std::size_t>(schema_.coefficient_count()) + 1; }
  std::size_t latent_dimension() const;

  double log_likelihood_marginal(const ParameterVector& params) const;
  // Refactorizes `ws` only when tau differs from ws.tau.
  double log_likelihood_marginal(const Eigen::VectorXd& coefficients, double tau,
                                 MarginalWorkspace& ws) const;

  // Throws NumericalError for tau == 0 (Sigma_i singular).
  double log_likelihood_latent(const ParameterVector& params,
                               const std::vector<Eigen::VectorXd>& deltas) const;

 private:
  void assemble(const Dataset& dataset);

  CovariateSchema schema_;
  CenteringRecord centering_;
  std::vector<AssembledTrial> trials_;
};

double log_prior(const ParameterVector& params, const PriorSpec& prior);

double log_likelihood_marginal(const Dataset& dataset, const ParameterVector& params);
double log_likelihood_latent(const Dataset& dataset, const ParameterVector& params,
                             const std::vector<Eigen::VectorXd>& deltas);

// Deterministic per-chain seed.
std::uint64_t chain_seed(std::uint64_t seed, std::size_t chain_index);

ChainOutput run_chain(const Model& model, const PriorSpec& prior, const McmcConfig& config,
                      std::size_t chain_index);

// Output order matches chain index whether or not chains run concurrently.
std::vector<ChainOutput> run_mcmc(const Model& model, const PriorSpec& prior, const McmcConfig& config);

}  // namespace cmreg

#include "cmreg/sampler.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <exception>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <thread>

#include "cmreg/error.hpp"

namespace cmreg {

namespace {

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace

void PriorSpec::validate() const {
  if (!(tau_upper > 0.0) || !std::isfinite(tau_upper)) throw ConfigError("tau_upper must be positive");
  if (!(coeff_sd > 0.0) || !std::isfinite(coeff_sd)) throw ConfigError("coeff_sd must be positive");
}

std::string_view to_string(LikelihoodForm form) { return form == LikelihoodForm::marginal ? "marginal" : "latent"; }

LikelihoodForm likelihood_form_from_string(std::string_view s) {
  if (s == "marginal") return LikelihoodForm::marginal;
  if (s == "latent") return LikelihoodForm::latent;
  throw ConfigError("unknown likelihood form '" + std::string(s) + "' (expected marginal or latent)");
}

void McmcConfig::validate() const {
  if (chains < 1) throw ConfigError("chains must be >= 1");
  if (adapt_iters < 1) throw ConfigError("adapt_iters must be >= 1");
  if (burn_in < 1) throw ConfigError("burn_in must be >= 1");
  if (samples < 1) throw ConfigError("samples must be >= 1");
  if (thin < 1) throw ConfigError("thin must be >= 1");
  if (!(target_accept > 0.0 && target_accept < 1.0)) throw ConfigError("target_accept must lie in (0, 1)");
}

std::uint64_t chain_seed(std::uint64_t seed, std::size_t chain_index) {
  return splitmix64(seed ^ splitmix64(0xC4A1u + static_cast<std::uint64_t>(chain_index)));
}

Model::Model(const CenteredDataset& dataset) : schema_(dataset.data.schema), centering_(dataset.centering) {
  assemble(dataset.data);
}

Model::Model(const Dataset& dataset) : schema_(dataset.schema) { assemble(dataset); }

void Model::assemble(const Dataset& dataset) {
  trials_.reserve(dataset.trials.size());
  for (const auto& trial : dataset.trials) {
    AssembledTrial a;
    a.id = trial.id;
    a.comparison = trial.comparison;
    a.design = design_matrix(schema_, trial, centering_);
    a.y = observation_vector(trial);
    a.within = build_within_covariance(trial, dataset.base_rho_y, dataset.base_rho_d);
    a.structure = BetweenCovariance::structure(a.dimension());
    trials_.push_back(std::move(a));
  }
}

std::size_t Model::latent_dimension() const {
  std::size_t d = 0;
  for (const auto& t : trials_) d += t.dimension();
  return d;
}

double Model::log_likelihood_marginal(const Eigen::VectorXd& coefficients, double tau, MarginalWorkspace& ws) const {
  if (ws.factors.size() != trials_.size() || ws.tau != tau) {
    ws.cov.resize(trials_.size());
    ws.factors.resize(trials_.size());
    ws.residual.resize(trials_.size());
    const double tau2 = tau * tau;
    for (std::size_t i = 0; i < trials_.size(); ++i) {
      const auto& t = trials_[i];
      ws.cov[i] = t.within.matrix + tau2 * t.structure;
      if (!ws.factors[i].compute(ws.cov[i])) {
        ws.tau = -1.0;
        throw NumericalError(t.id, "V + Sigma is not positive definite (tau = " + std::to_string(tau) + ")");
      }
    }
    ws.tau = tau;
  }
  double total = 0.0;
  for (std::size_t i = 0; i < trials_.size(); ++i) {
    const auto& t = trials_[i];
    ws.residual[i].noalias() = t.y - t.design * coefficients;
    total += ws.factors[i].log_density(ws.residual[i]);
  }
  return total;
}

double Model::log_likelihood_marginal(const ParameterVector& params) const {
  MarginalWorkspace ws;
  return log_likelihood_marginal(params.coefficients(), params.tau, ws);
}

double Model::log_likelihood_latent(const ParameterVector& params, const std::vector<Eigen::VectorXd>& deltas) const {
  if (deltas.size() != trials_.size()) throw std::invalid_argument("one delta vector per trial required");
  if (!(params.tau > 0.0)) {
    throw NumericalError("", "latent likelihood requires tau > 0 (Sigma is singular); use the marginal form");
  }
  const Eigen::VectorXd coeffs = params.coefficients();
  const double tau2 = params.tau * params.tau;
  double total = 0.0;
  for (std::size_t i = 0; i < trials_.size(); ++i) {
    const auto& t = trials_[i];
    if (deltas[i].size() != t.y.size()) throw std::invalid_argument("delta dimension mismatch for trial " + t.id);
    GaussianFactor within;
    if (!within.compute(t.within.matrix)) throw NumericalError(t.id, "V is not positive definite");
    GaussianFactor between;
    if (!between.compute(tau2 * t.structure)) throw NumericalError(t.id, "Sigma is not positive definite");
    total += within.log_density(t.y - deltas[i]);
    total += between.log_density(deltas[i] - t.design * coeffs);
  }
  return total;
}

double log_prior(const ParameterVector& params, const PriorSpec& prior) {
  if (!(params.tau > 0.0 && params.tau < prior.tau_upper)) return kNegInf;
  const Eigen::VectorXd c = params.coefficients();
  const double var = prior.coeff_sd * prior.coeff_sd;
  const double norm = -0.5 * (kLog2Pi + std::log(var));
  return static_cast<double>(c.size()) * norm - 0.5 * c.squaredNorm() / var - std::log(prior.tau_upper);
}

double log_likelihood_marginal(const Dataset& dataset, const ParameterVector& params) {
  return Model(dataset).log_likelihood_marginal(params);
}

double log_likelihood_latent(const Dataset& dataset, const ParameterVector& params,
                             const std::vector<Eigen::VectorXd>& deltas) {
  return Model(dataset).log_likelihood_latent(params, deltas);
}

namespace {

// Unconstrained sampler coordinates: the regression coefficients followed by log(tau).
class ChainRunner {
 public:
  ChainRunner(const Model& model, const PriorSpec& prior, const McmcConfig& config, std::size_t chain_index)
      : model_(model),
        prior_(prior),
        config_(config),
        chain_index_(chain_index),
        seed_(chain_seed(config.seed, chain_index)),
        rng_(seed_),
        dim_(model.parameter_count()),
        tau_index_(dim_ - 1) {
    const auto names = parameter_names(model.schema());
    fixed_value_.assign(dim_, std::numeric_limits<double>::quiet_NaN());
    is_fixed_.assign(dim_, false);
    for (const auto& [name, value] : config.fixed) {
      bool found = false;
      for (std::size_t j = 0; j < names.size(); ++j) {
        if (names[j] == name) {
          is_fixed_[j] = true;
          fixed_value_[j] = value;
          found = true;
        }
      }
      if (!found) throw ConfigError("cannot fix unknown parameter '" + name + "'");
    }
    if (is_fixed_[tau_index_] && !(fixed_value_[tau_index_] > 0.0 && fixed_value_[tau_index_] < prior.tau_upper)) {
      throw ConfigError("fixed tau must lie inside (0, tau_upper)");
    }
    for (std::size_t j = 0; j < dim_; ++j) {
      if (!is_fixed_[j]) free_.push_back(j);
    }
    latent_ = config.likelihood == LikelihoodForm::latent;
    if (latent_) {
      const auto& trials = model.trials();
      structure_factor_.resize(trials.size());
      for (std::size_t i = 0; i < trials.size(); ++i) {
        if (!structure_factor_[i].compute(trials[i].structure)) {
          throw NumericalError(trials[i].id, "random-effects structure is not positive definite");
        }
      }
    }
  }

  ChainOutput run() {
    initialize();

    const std::size_t d_free = std::max<std::size_t>(free_.size(), 1);
    double log_lambda = std::log(2.38 / std::sqrt(static_cast<double>(d_free)));
    Eigen::VectorXd mean = state_;
    Eigen::VectorXd var = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(dim_), 0.05 * 0.05);

    const std::size_t retained_iters = config_.samples * config_.thin;
    const std::size_t total = config_.adapt_iters + config_.burn_in + retained_iters;
    ChainOutput out;
    out.chain_index = chain_index_;
    out.seed_used = seed_;
    out.draws.resize(static_cast<Eigen::Index>(config_.samples), static_cast<Eigen::Index>(dim_));

    std::size_t accepted = 0;
    std::size_t row = 0;
    Eigen::VectorXd proposal(state_.size());
    for (std::size_t it = 0; it < total; ++it) {
      if (latent_) draw_deltas();

      proposal = state_;
      const double scale = std::exp(log_lambda);
      for (std::size_t j : free_) {
        const auto jj = static_cast<Eigen::Index>(j);
        proposal[jj] += scale * std::sqrt(var[jj]) * normal_(rng_);
      }
      const double lp_prop = free_.empty() ? current_lp_ : log_target(proposal, proposal_ws_);
      const double log_ratio = lp_prop - current_lp_;
      double accept_prob = 0.0;
      if (std::isfinite(lp_prop)) accept_prob = log_ratio >= 0.0 ? 1.0 : std::exp(log_ratio);
      const bool accept = !free_.empty() && std::log(uniform_(rng_)) < log_ratio && std::isfinite(lp_prop);
      if (accept) {
        state_.swap(proposal);
        current_lp_ = lp_prop;
        std::swap(current_ws_, proposal_ws_);
      }

      if (it < config_.adapt_iters) {
        const double gain = std::pow(static_cast<double>(it) + 2.0, -0.6);
        log_lambda += gain * (accept_prob - config_.target_accept);
        for (std::size_t j : free_) {
          const auto jj = static_cast<Eigen::Index>(j);
          const double dev = state_[jj] - mean[jj];
          mean[jj] += gain * dev;
          var[jj] = std::max(var[jj] + gain * (dev * dev - var[jj]), 1e-16);
        }
        continue;
      }
      if (accept) ++accepted;
      if (it >= config_.adapt_iters + config_.burn_in) {
        const std::size_t k = it - config_.adapt_iters - config_.burn_in;
        if ((k + 1) % config_.thin == 0) {
          out.draws.row(static_cast<Eigen::Index>(row++)) = to_params(state_).transpose();
        }
      }
    }
    out.accept_rate = static_cast<double>(accepted) / static_cast<double>(config_.burn_in + retained_iters);
    return out;
  }

 private:
  Eigen::VectorXd to_params(const Eigen::VectorXd& u) const {
    Eigen::VectorXd p = u;
    const auto ti = static_cast<Eigen::Index>(tau_index_);
    p[ti] = is_fixed_[tau_index_] ? fixed_value_[tau_index_] : std::exp(u[ti]);
    return p;
  }

  double log_target(const Eigen::VectorXd& u, MarginalWorkspace& ws) const {
    const auto ti = static_cast<Eigen::Index>(tau_index_);
    const double log_tau = u[ti];
    const double tau = std::exp(log_tau);
    if (!(tau > 0.0 && tau < prior_.tau_upper)) return kNegInf;
    const Eigen::VectorXd coeffs = u.head(ti);
    const double var = prior_.coeff_sd * prior_.coeff_sd;
    double lp = -0.5 * coeffs.squaredNorm() / var;
    if (!is_fixed_[tau_index_]) lp += log_tau;  // Jacobian of tau = exp(u)
    if (latent_) {
      lp += latent_random_effects(coeffs, tau);
    } else {
      lp += model_.log_likelihood_marginal(coeffs, tau, ws);
    }
    return lp;
  }

  // sum_i log N(delta_i; theta_i, tau^2 S_i)
  double latent_random_effects(const Eigen::VectorXd& coeffs, double tau) const {
    const auto& trials = model_.trials();
    double total = 0.0;
    const double log_tau2 = 2.0 * std::log(tau);
    for (std::size_t i = 0; i < trials.size(); ++i) {
      const Eigen::VectorXd r = deltas_[i] - trials[i].design * coeffs;
      const double d = static_cast<double>(r.size());
      const Eigen::VectorXd white = structure_factor_[i].lower().triangularView<Eigen::Lower>().solve(r);
      total += -0.5 * (d * kLog2Pi + d * log_tau2 + structure_factor_[i].log_det() + white.squaredNorm() / (tau * tau));
    }
    return total;
  }

  // delta_i | y_i, theta_i, tau ~ N(theta + K (y - theta), Sigma - K Sigma), K = Sigma (V + Sigma)^-1.
  void draw_deltas() {
    const auto& trials = model_.trials();
    const auto ti = static_cast<Eigen::Index>(tau_index_);
    const double tau = std::exp(state_[ti]);
    const Eigen::VectorXd coeffs = state_.head(ti);
    for (std::size_t i = 0; i < trials.size(); ++i) {
      const auto& t = trials[i];
      const Eigen::MatrixXd sigma = tau * tau * t.structure;
      const Eigen::MatrixXd total = t.within.matrix + sigma;
      Eigen::LLT<Eigen::MatrixXd> llt(total);
      if (llt.info() != Eigen::Success) throw NumericalError(t.id, "V + Sigma is not positive definite");
      const Eigen::VectorXd theta = t.design * coeffs;
      const Eigen::MatrixXd gain = llt.solve(sigma).transpose();  // Sigma (V + Sigma)^-1, Sigma symmetric
      const Eigen::VectorXd mean = theta + gain * (t.y - theta);
      Eigen::MatrixXd cov = sigma - gain * sigma;
      cov = 0.5 * (cov + cov.transpose());
      Eigen::VectorXd e(t.y.size());
      for (Eigen::Index j = 0; j < e.size(); ++j) e[j] = normal_(rng_);
      Eigen::LLT<Eigen::MatrixXd> cl(cov);
      if (cl.info() == Eigen::Success) {
        deltas_[i] = mean + cl.matrixL() * e;
      } else {
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
        const Eigen::VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
        deltas_[i] = mean + eig.eigenvectors() * root.asDiagonal() * e;
      }
    }
    // Conditioning state changed: cached target is stale.
    current_lp_ = log_target(state_, current_ws_);
  }

  void initialize() {
    const auto ti = static_cast<Eigen::Index>(tau_index_);
    std::normal_distribution<double> jitter(0.0, 0.01);
    if (latent_) {
      deltas_.clear();
      for (const auto& t : model_.trials()) deltas_.push_back(t.y);
    }
    for (int attempt = 0; attempt < 100; ++attempt) {
      state_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim_));
      double tau = 0.1 * prior_.tau_upper;
      for (Eigen::Index j = 0; j < ti; ++j) state_[j] = jitter(rng_);
      tau += jitter(rng_);
      state_[ti] = tau > 0.0 ? std::log(tau) : kNegInf;
      for (std::size_t j = 0; j < dim_; ++j) {
        if (!is_fixed_[j]) continue;
        const auto jj = static_cast<Eigen::Index>(j);
        state_[jj] = j == tau_index_ ? std::log(fixed_value_[j]) : fixed_value_[j];
      }
      current_lp_ = std::isfinite(state_[ti]) ? log_target(state_, current_ws_) : kNegInf;
      if (std::isfinite(current_lp_)) return;
    }
    throw NumericalError("", "chain " + std::to_string(chain_index_) +
                                 ": log-posterior is -inf at the start point after 100 jittered retries");
  }

  const Model& model_;
  const PriorSpec& prior_;
  const McmcConfig& config_;
  std::size_t chain_index_;
  std::uint64_t seed_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::size_t dim_;
  std::size_t tau_index_;
  std::vector<bool> is_fixed_;
  std::vector<double> fixed_value_;
  std::vector<std::size_t> free_;
  bool latent_ = false;
  std::vector<GaussianFactor> structure_factor_;
  std::vector<Eigen::VectorXd> deltas_;
  Eigen::VectorXd state_;
  double current_lp_ = kNegInf;
  MarginalWorkspace current_ws_;
  MarginalWorkspace proposal_ws_;
};

}  // namespace

ChainOutput run_chain(const Model& model, const PriorSpec& prior, const McmcConfig& config, std::size_t chain_index) {
  prior.validate();
  config.validate();
  return ChainRunner(model, prior, config, chain_index).run();
}

std::vector<ChainOutput> run_mcmc(const Model& model, const PriorSpec& prior, const McmcConfig& config) {
  prior.validate();
  config.validate();
  if (model.centering().empty()) {
    std::clog << "warning: sampling an uncentered design; centering covariates usually improves mixing\n";
  }
  std::vector<ChainOutput> out(config.chains);
  std::vector<std::exception_ptr> errors(config.chains);
  auto work = [&](std::size_t c) {
    try {
      out[c] = ChainRunner(model, prior, config, c).run();
    } catch (...) {
      errors[c] = std::current_exception();
    }
  };
  if (config.concurrent && config.chains > 1) {
    std::vector<std::thread> threads;
    threads.reserve(config.chains);
    for (std::size_t c = 0; c < config.chains; ++c) threads.emplace_back(work, c);
    for (auto& t : threads) t.join();
  } else {
    for (std::size_t c = 0; c < config.chains; ++c) work(c);
  }

  std::ostringstream msg;
  std::size_t failed = 0;
  for (std::size_t c = 0; c < errors.size(); ++c) {
    if (!errors[c]) continue;
    try {
      std::rethrow_exception(errors[c]);
    } catch (const std::exception& e) {
      msg << (failed ? "; " : "") << "chain " << c << ": " << e.what();
    }
    ++failed;
  }
  if (failed == 1) std::rethrow_exception(*std::find_if(errors.begin(), errors.end(), [](auto& e) { return bool(e); }));
  if (failed > 1) throw NumericalError("", msg.str());
  return out;
}

}  // namespace cmreg

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <optional>
#include <string>
#include <vector>

#include "cmreg/covariance.hpp"
#include "cmreg/design.hpp"
#include "cmreg/diagnostics.hpp"
#include "cmreg/error.hpp"
#include "cmreg/io.hpp"
#include "cmreg/sampler.hpp"
#include "cmreg/simgen.hpp"

namespace py = pybind11;
using namespace cmreg;

namespace {

py::object to_python(const nlohmann::json& j) {
  return py::module_::import("json").attr("loads")(j.dump());
}

ParameterVector params_from_array(const CovariateSchema& schema, const Eigen::VectorXd& flat) {
  const auto expected = static_cast<Eigen::Index>(schema.coefficient_count() + 1);
  if (flat.size() != expected) {
    throw py::value_error("expected " + std::to_string(expected) + " parameters, got " +
                          std::to_string(flat.size()));
  }
  return ParameterVector::from_flat(schema, flat);
}

const TrialRecord& trial_at(const Dataset& ds, std::size_t i) {
  if (i >= ds.trials.size()) throw py::index_error("trial index out of range");
  return ds.trials[i];
}

py::dict summary_row(const ParameterSummary& s) {
  py::dict d;
  d["name"] = s.name;
  d["median"] = s.median;
  d["ci_low"] = s.ci_low;
  d["ci_high"] = s.ci_high;
  d["p_below"] = s.p_below;
  d["p_above"] = s.p_above;
  d["r_hat"] = s.r_hat;
  return d;
}

}  // namespace

PYBIND11_MODULE(_cmreg, m) {
  m.doc() = "Hierarchical meta-regression for multi-arm, multi-time trial data";

  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::class_<Dataset>(m, "Dataset")
      .def_static("loads", [](const std::string& text) { return load_dataset(text); }, py::arg("text"),
                  "Parse and validate a JSON document.")
      .def_static("load", [](const std::string& path) { return load_dataset_file(path); }, py::arg("path"))
      .def_static("parse", [](const std::string& text) { return parse_dataset(text); }, py::arg("text"),
                  "Parse without running the invariant checks.")
      .def("dumps", [](const Dataset& ds) { return save_dataset(ds); })
      .def("save", [](const Dataset& ds, const std::string& path) { save_dataset_file(ds, path); },
           py::arg("path"))
      .def("violations",
           [](const Dataset& ds) {
             std::vector<std::pair<std::string, std::string>> out;
             for (const auto& v : validate_dataset(ds)) out.emplace_back(v.trial_id, v.message);
             return out;
           })
      .def_property_readonly("trial_ids",
                             [](const Dataset& ds) {
                               std::vector<std::string> ids;
                               for (const auto& t : ds.trials) ids.push_back(t.id);
                               return ids;
                             })
      .def_property_readonly("parameter_names", [](const Dataset& ds) { return parameter_names(ds.schema); })
      .def_property_readonly("schema", [](const Dataset& ds) { return to_python(schema_to_json(ds.schema)); })
      .def_readwrite("rho_y", &Dataset::base_rho_y)
      .def_readwrite("rho_d", &Dataset::base_rho_d)
      .def("__len__", [](const Dataset& ds) { return ds.trials.size(); })
      .def(
          "observations",
          [](const Dataset& ds, std::size_t i) { return observation_vector(trial_at(ds, i)); },
          py::arg("trial"), "Outcome vector of one trial, time-major then arm.")
      .def(
          "design_matrix",
          [](const Dataset& ds, std::size_t i) { return design_matrix(ds.schema, trial_at(ds, i)); },
          py::arg("trial"))
      .def(
          "within_covariance",
          [](const Dataset& ds, std::size_t i, std::optional<double> rho_y, std::optional<double> rho_d) {
            return build_within_covariance(trial_at(ds, i), rho_y.value_or(ds.base_rho_y),
                                           rho_d.value_or(ds.base_rho_d))
                .matrix;
          },
          py::arg("trial"), py::arg("rho_y") = py::none(), py::arg("rho_d") = py::none())
      .def(
          "fixed_effects",
          [](const Dataset& ds, std::size_t i, const Eigen::VectorXd& params) {
            return fixed_effects(ds.schema, trial_at(ds, i), params_from_array(ds.schema, params));
          },
          py::arg("trial"), py::arg("params"));

  py::class_<Model>(m, "Model")
      .def(py::init([](const Dataset& ds, bool center) {
             require_valid(ds);
             return center ? Model(center_covariates(ds)) : Model(ds);
           }),
           py::arg("dataset"), py::arg("center") = true)
      .def_property_readonly("parameter_names", [](const Model& mo) { return parameter_names(mo.schema()); })
      .def_property_readonly("latent_dimension", &Model::latent_dimension)
      .def_property_readonly("centering", [](const Model& mo) { return to_python(centering_to_json(mo.centering())); })
      .def(
          "log_likelihood_marginal",
          [](const Model& mo, const Eigen::VectorXd& params) {
            return mo.log_likelihood_marginal(params_from_array(mo.schema(), params));
          },
          py::arg("params"))
      .def(
          "log_likelihood_latent",
          [](const Model& mo, const Eigen::VectorXd& params, const std::vector<Eigen::VectorXd>& deltas) {
            return mo.log_likelihood_latent(params_from_array(mo.schema(), params), deltas);
          },
          py::arg("params"), py::arg("deltas"))
      .def(
          "log_prior",
          [](const Model& mo, const Eigen::VectorXd& params, double tau_upper, double coeff_sd) {
            const PriorSpec prior{tau_upper, coeff_sd};
            prior.validate();
            return log_prior(params_from_array(mo.schema(), params), prior);
          },
          py::arg("params"), py::arg("tau_upper") = 5.0, py::arg("coeff_sd") = 100.0)
      .def(
          "sample",
          [](const Model& mo, std::size_t chains, std::size_t adapt, std::size_t burn_in, std::size_t samples,
             std::uint64_t seed, const std::string& likelihood, std::size_t thin, double tau_upper,
             double coeff_sd, bool concurrent) {
            McmcConfig cfg;
            cfg.chains = chains;
            cfg.adapt_iters = adapt;
            cfg.burn_in = burn_in;
            cfg.samples = samples;
            cfg.seed = seed;
            cfg.likelihood = likelihood_form_from_string(likelihood);
            cfg.thin = thin;
            cfg.concurrent = concurrent;
            cfg.validate();
            const PriorSpec prior{tau_upper, coeff_sd};
            prior.validate();

            std::vector<ChainOutput> out;
            {
              py::gil_scoped_release release;
              out = run_mcmc(mo, prior, cfg);
            }
            py::list draws;
            std::vector<double> rates;
            std::vector<std::uint64_t> seeds;
            for (const auto& c : out) {
              draws.append(py::cast(c.draws));
              rates.push_back(c.accept_rate);
              seeds.push_back(c.seed_used);
            }
            py::list summary;
            for (const auto& s : summarize(out, parameter_names(mo.schema()))) summary.append(summary_row(s));
            py::dict result;
            result["names"] = parameter_names(mo.schema());
            result["draws"] = draws;
            result["accept_rates"] = rates;
            result["chain_seeds"] = seeds;
            result["summary"] = summary;
            return result;
          },
          py::arg("chains") = 4, py::arg("adapt") = 10000, py::arg("burn_in") = 10000,
          py::arg("samples") = 20000, py::arg("seed") = 20230101, py::arg("likelihood") = "marginal",
          py::arg("thin") = 1, py::arg("tau_upper") = 5.0, py::arg("coeff_sd") = 100.0,
          py::arg("concurrent") = true,
          "Run the sampler. Returns a dict with parameter names, one draws array per chain, "
          "acceptance rates, chain seeds and a posterior summary.");

  m.def(
      "simulate",
      [](std::optional<std::string> config_json, std::optional<std::uint64_t> seed,
         std::optional<std::size_t> trials) {
        SimConfig cfg = config_json ? sim_config_from_json(nlohmann::json::parse(*config_json))
                                    : default_sim_config();
        if (seed) cfg.seed = *seed;
        if (trials) cfg.n_trials = *trials;
        return simulate_dataset(cfg);
      },
      py::arg("config") = py::none(), py::arg("seed") = py::none(), py::arg("trials") = py::none(),
      "Draw a synthetic dataset. `config` is a JSON string; missing keys keep their defaults.");

  m.def("default_sim_config", [] { return to_python(sim_config_to_json(default_sim_config())); });

  m.def(
      "gelman_rubin", [](const std::vector<std::vector<double>>& chains) { return gelman_rubin(chains); },
      py::arg("chains"));
  m.def(
      "shrink_factor_trace",
      [](const std::vector<std::vector<double>>& chains, std::size_t step) {
        std::vector<std::pair<std::size_t, double>> out;
        for (const auto& p : shrink_factor_trace(chains, step)) out.emplace_back(p.iteration, p.r_hat);
        return out;
      },
      py::arg("chains"), py::arg("step"));
  m.def(
      "monte_carlo_se", [](const std::vector<double>& draws) { return monte_carlo_se(draws); },
      py::arg("draws"));

  m.def(
      "mvn_logpdf",
      [](const Eigen::VectorXd& x, const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov) {
        return mvn_logpdf(x, mean, cov);
      },
      py::arg("x"), py::arg("mean"), py::arg("cov"));
  m.def(
      "between_covariance",
      [](std::size_t dim, double tau) { return build_between_covariance(dim, tau).matrix(); },
      py::arg("dimension"), py::arg("tau"));
}

#include "cmreg/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <regex>
#include <sstream>

#include "cmreg/diagnostics.hpp"
#include "cmreg/error.hpp"
#include "cmreg/io.hpp"
#include "cmreg/simgen.hpp"

namespace cmreg::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_chain_tsv(const fs::path& path, const ChainOutput& chain, const std::vector<std::string>& names) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "iteration";
  for (const auto& n : names) out << '\t' << n;
  out << '\n';
  for (Eigen::Index r = 0; r < chain.draws.rows(); ++r) {
    out << r + 1;
    for (Eigen::Index c = 0; c < chain.draws.cols(); ++c) out << '\t' << format_double(chain.draws(r, c));
    out << '\n';
  }
}

struct ChainFile {
  std::vector<std::string> names;
  Eigen::MatrixXd draws;
};

ChainFile read_chain_tsv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  ChainFile f;
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ":1", "empty chain file");
  {
    std::istringstream hs(line);
    std::string cell;
    std::getline(hs, cell, '\t');
    while (std::getline(hs, cell, '\t')) f.names.push_back(cell);
  }
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    std::getline(ls, cell, '\t');
    std::vector<double> row;
    while (std::getline(ls, cell, '\t')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ParseError(path.string() + ":" + std::to_string(lineno), "not a number: '" + cell + "'");
      }
    }
    if (row.size() != f.names.size()) {
      throw ParseError(path.string() + ":" + std::to_string(lineno), "expected " + std::to_string(f.names.size()) + " values");
    }
    rows.push_back(std::move(row));
  }
  f.draws.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(f.names.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) f.draws(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
  }
  return f;
}

std::size_t default_trace_step(std::size_t samples) { return std::max<std::size_t>(10, samples / 50); }

std::vector<std::vector<ShrinkPoint>> all_traces(const std::vector<ChainOutput>& chains, std::size_t params,
                                                 std::size_t step) {
  std::vector<std::vector<ShrinkPoint>> traces;
  for (std::size_t j = 0; j < params; ++j) traces.push_back(shrink_factor_trace(parameter_chains(chains, j), step));
  return traces;
}

json mcmc_to_json(const McmcConfig& c) {
  json fixed = json::object();
  for (const auto& [k, v] : c.fixed) fixed[k] = v;
  return {{"chains", c.chains},     {"adapt_iters", c.adapt_iters},
          {"burn_in", c.burn_in},   {"samples", c.samples},
          {"thin", c.thin},         {"seed", c.seed},
          {"target_accept", c.target_accept}, {"likelihood", std::string(to_string(c.likelihood))},
          {"fixed", fixed}};
}

void apply_manifest(FitOptions& o, const json& m, bool data_given) {
  try {
    if (!data_given) o.data = m.at("data").get<std::string>();
    const json& mc = m.at("mcmc");
    o.mcmc.chains = mc.at("chains").get<std::size_t>();
    o.mcmc.adapt_iters = mc.at("adapt_iters").get<std::size_t>();
    o.mcmc.burn_in = mc.at("burn_in").get<std::size_t>();
    o.mcmc.samples = mc.at("samples").get<std::size_t>();
    o.mcmc.thin = mc.at("thin").get<std::size_t>();
    o.mcmc.seed = mc.at("seed").get<std::uint64_t>();
    o.mcmc.target_accept = mc.at("target_accept").get<double>();
    o.mcmc.likelihood = likelihood_form_from_string(mc.at("likelihood").get<std::string>());
    o.mcmc.fixed.clear();
    if (mc.contains("fixed")) {
      for (const auto& [k, v] : mc["fixed"].items()) o.mcmc.fixed[k] = v.get<double>();
    }
    o.prior.tau_upper = m.at("prior").at("tau_upper").get<double>();
    o.prior.coeff_sd = m.at("prior").at("coeff_sd").get<double>();
    o.rho_y = m.at("correlations").at("rho_y").get<double>();
    o.rho_d = m.at("correlations").at("rho_d").get<double>();
    o.center = m.at("center").get<bool>();
    o.diagnostics = m.at("diagnostics").get<bool>();
    o.trace_step = m.at("trace_step").get<std::size_t>();
  } catch (const json::exception& e) {
    throw ParseError("manifest", e.what());
  }
}

}  // namespace

std::string content_hash(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

int cmd_validate(const fs::path& data, std::ostream& out, std::ostream& err) {
  std::string text;
  try {
    text = read_text_file(data);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  }
  Dataset ds;
  try {
    ds = parse_dataset(text);
  } catch (const ParseError& e) {
    err << "parse error at " << e.what() << '\n';
    return kExitInput;
  }
  const auto violations = validate_dataset(ds);
  for (const auto& v : violations) {
    out << (v.trial_id.empty() ? std::string("dataset") : "trial " + v.trial_id) << ": " << v.message << '\n';
  }
  out << violations.size() << " violations\n";
  return violations.empty() ? kExitOk : kExitInput;
}

int cmd_fit(FitOptions o, std::ostream& out, std::ostream& err) {
  std::string text;
  Dataset ds;
  try {
    std::optional<std::string> expected_hash;
    if (o.manifest) {
      const json m = json::parse(read_text_file(*o.manifest));
      apply_manifest(o, m, !o.data.empty());
      expected_hash = m.value("data_hash", std::string());
    }
    if (o.data.empty()) throw ConfigError("--data is required");
    if (o.out.empty()) throw ConfigError("--out is required");
    text = read_text_file(o.data);
    if (expected_hash && !expected_hash->empty() && *expected_hash != content_hash(text)) {
      throw ConfigError("data file '" + o.data.string() + "' differs from the one recorded in the manifest");
    }
    ds = load_dataset(text);
    if (o.rho_y) ds.base_rho_y = *o.rho_y;
    if (o.rho_d) ds.base_rho_d = *o.rho_d;
    require_valid(ds);
    o.prior.validate();
    o.mcmc.validate();
    if (o.diagnostics && o.mcmc.chains < 2) throw ConfigError("R-hat requires >= 2 chains (pass --no-diagnostics for a single chain)");
  } catch (const ParseError& e) {
    err << "parse error at " << e.what() << '\n';
    return kExitInput;
  } catch (const json::exception& e) {
    err << "parse error in manifest: " << e.what() << '\n';
    return kExitInput;
  } catch (const NumericalError&) {
    throw;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  }

  const std::vector<std::string> names = parameter_names(ds.schema);
  std::vector<ChainOutput> chains;
  CenteringRecord centering;
  try {
    CenteredDataset prepared = o.center ? center_covariates(ds) : CenteredDataset{ds, {}};
    centering = prepared.centering;
    const Model model(prepared);
    chains = run_mcmc(model, o.prior, o.mcmc);
  } catch (const NumericalError& e) {
    err << "model error: " << e.what() << '\n';
    return kExitModel;
  }

  try {
    fs::create_directories(o.out / "chains");
    for (const auto& c : chains) {
      write_chain_tsv(o.out / "chains" / ("chain_" + std::to_string(c.chain_index + 1) + ".tsv"), c, names);
    }
    const PosteriorSummary summary = summarize(chains, names);
    {
      std::ofstream f(o.out / "summary.tsv");
      write_summary_tsv(f, summary);
    }
    write_summary_tsv(out, summary);

    const std::size_t step = o.trace_step ? o.trace_step : default_trace_step(o.mcmc.samples);
    if (o.diagnostics) {
      std::ofstream f(o.out / "rhat_trace.tsv");
      write_shrink_trace_tsv(f, names, all_traces(chains, names.size(), step));
    }

    json accept = json::array();
    for (const auto& c : chains) accept.push_back(c.accept_rate);
    json chain_seeds = json::array();
    for (const auto& c : chains) chain_seeds.push_back(c.seed_used);
    json manifest{{"tool", "cmreg"},
                  {"version", kVersion},
                  {"data", o.data.string()},
                  {"data_hash", content_hash(text)},
                  {"mcmc", mcmc_to_json(o.mcmc)},
                  {"prior", {{"tau_upper", o.prior.tau_upper}, {"coeff_sd", o.prior.coeff_sd}}},
                  {"correlations", {{"rho_y", ds.base_rho_y}, {"rho_d", ds.base_rho_d}}},
                  {"center", o.center},
                  {"diagnostics", o.diagnostics},
                  {"trace_step", step},
                  {"centering", centering_to_json(centering)},
                  {"parameters", names},
                  {"covariate_names", ds.schema.names},
                  {"chain_seeds", chain_seeds},
                  {"accept_rates", accept}};
    std::ofstream f(o.out / "manifest.json");
    f << manifest.dump(2) << '\n';
  } catch (const std::exception& e) {
    err << "error writing outputs: " << e.what() << '\n';
    return kExitInput;
  }
  return kExitOk;
}

int cmd_simulate(const SimulateOptions& o, std::ostream& out, std::ostream& err) {
  try {
    SimConfig config = o.config ? sim_config_from_json(json::parse(read_text_file(*o.config))) : default_sim_config();
    if (o.trials) config.n_trials = *o.trials;
    if (o.seed) config.seed = *o.seed;
    const Dataset ds = simulate_dataset(config);
    if (o.out.empty() || o.out == "-") {
      out << save_dataset(ds);
    } else {
      save_dataset_file(ds, o.out);
      out << "wrote " << ds.trials.size() << " trials to " << o.out.string() << '\n';
    }
  } catch (const ParseError& e) {
    err << "parse error at " << e.what() << '\n';
    return kExitInput;
  } catch (const json::exception& e) {
    err << "parse error in config: " << e.what() << '\n';
    return kExitInput;
  } catch (const NumericalError& e) {
    err << "model error: " << e.what() << '\n';
    return kExitModel;
  } catch (const std::exception& e) {
    err << "config error: " << e.what() << '\n';
    return kExitInput;
  }
  return kExitOk;
}

int cmd_diagnose(const DiagnoseOptions& o, std::ostream& out, std::ostream& err) {
  std::vector<ChainOutput> chains;
  std::vector<std::string> names;
  try {
    const fs::path dir = o.run / "chains";
    if (!fs::is_directory(dir)) throw std::runtime_error("no chains directory in '" + o.run.string() + "'");
    std::vector<std::pair<int, fs::path>> files;
    const std::regex pattern(R"(chain_(\d+)\.tsv)");
    for (const auto& entry : fs::directory_iterator(dir)) {
      std::smatch m;
      const std::string fname = entry.path().filename().string();
      if (std::regex_match(fname, m, pattern)) files.emplace_back(std::stoi(m[1]), entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& [k, path] : files) {
      ChainFile f = read_chain_tsv(path);
      if (names.empty()) names = f.names;
      if (f.names != names) throw ParseError(path.string(), "parameter columns differ between chain files");
      ChainOutput c;
      c.chain_index = static_cast<std::size_t>(k - 1);
      c.draws = std::move(f.draws);
      chains.push_back(std::move(c));
    }
    if (chains.size() < 2) throw ConfigError("R-hat requires >= 2 chains, found " + std::to_string(chains.size()));
    for (const auto& c : chains) {
      if (c.draws.rows() != chains.front().draws.rows()) throw ConfigError("chain files have different lengths");
    }
    if (chains.front().draws.rows() < 10) throw ConfigError("R-hat requires at least 10 draws per chain");
  } catch (const ParseError& e) {
    err << "parse error at " << e.what() << '\n';
    return kExitInput;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitInput;
  }

  write_summary_tsv(out, summarize(chains, names));
  if (o.trace_out) {
    const auto samples = static_cast<std::size_t>(chains.front().draws.rows());
    const std::size_t step = o.trace_step ? o.trace_step : default_trace_step(samples);
    std::ofstream f(*o.trace_out);
    if (!f) {
      err << "error: cannot write '" << o.trace_out->string() << "'\n";
      return kExitInput;
    }
    write_shrink_trace_tsv(f, names, all_traces(chains, names.size(), step));
  }
  return kExitOk;
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Complex meta-regression for multi-arm, multi-follow-up trials", "cmreg"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  std::string validate_data;
  auto* validate = app.add_subcommand("validate", "Check a data file against every dataset invariant");
  validate->add_option("--data", validate_data, "Data file")->required();

  FitOptions fit_opts;
  std::string fit_data, fit_out, fit_manifest, likelihood = "marginal";
  double rho_y = -1.0, rho_d = -1.0;
  bool no_center = false;
  auto* fit = app.add_subcommand("fit", "Fit the model by multi-chain MCMC");
  fit->add_option("--data", fit_data, "Data file");
  fit->add_option("--out", fit_out, "Output directory")->required();
  fit->add_option("--manifest", fit_manifest, "Replay the settings recorded in a run manifest");
  fit->add_option("--chains", fit_opts.mcmc.chains, "Number of chains")->capture_default_str();
  fit->add_option("--adapt", fit_opts.mcmc.adapt_iters, "Adaptation iterations")->capture_default_str();
  fit->add_option("--burn-in", fit_opts.mcmc.burn_in, "Burn-in iterations after adaptation")->capture_default_str();
  fit->add_option("--samples", fit_opts.mcmc.samples, "Retained draws per chain")->capture_default_str();
  fit->add_option("--thin", fit_opts.mcmc.thin, "Keep every k-th draw")->capture_default_str();
  fit->add_option("--seed", fit_opts.mcmc.seed, "Random seed")->capture_default_str();
  fit->add_option("--target-accept", fit_opts.mcmc.target_accept, "Adaptation target acceptance rate")->capture_default_str();
  fit->add_option("--tau-upper", fit_opts.prior.tau_upper, "Upper bound of the uniform prior on tau")->capture_default_str();
  fit->add_option("--coeff-sd", fit_opts.prior.coeff_sd, "Normal prior SD for regression coefficients")->capture_default_str();
  fit->add_option("--rho-y", rho_y, "Override the base correlation between follow-ups of one contrast");
  fit->add_option("--rho-d", rho_d, "Override the base correlation of reference-arm change scores");
  fit->add_option("--likelihood", likelihood, "marginal or latent")->check(CLI::IsMember({"marginal", "latent"}));
  fit->add_flag("--no-center", no_center, "Fit on raw covariates");
  fit->add_flag("--diagnostics,!--no-diagnostics", fit_opts.diagnostics, "Compute R-hat (needs >= 2 chains)");
  fit->add_flag("--serial", [&](std::int64_t) { fit_opts.mcmc.concurrent = false; }, "Run chains one after another");
  fit->add_option("--trace-step", fit_opts.trace_step, "Draws between R-hat trace points");

  SimulateOptions sim_opts;
  std::string sim_config, sim_out;
  std::size_t sim_trials = 0;
  std::uint64_t sim_seed = 0;
  auto* simulate = app.add_subcommand("simulate", "Generate a synthetic data file from known parameters");
  simulate->add_option("--config", sim_config, "Simulation config (JSON)");
  simulate->add_option("--out", sim_out, "Output data file ('-' for stdout)");
  auto* trials_opt = simulate->add_option("--trials", sim_trials, "Number of trials");
  auto* seed_opt = simulate->add_option("--seed", sim_seed, "Random seed");

  DiagnoseOptions diag_opts;
  std::string diag_run, diag_trace;
  auto* diagnose = app.add_subcommand("diagnose", "Recompute summaries and R-hat from a fit's chain files");
  diagnose->add_option("--run", diag_run, "Fit output directory")->required();
  diagnose->add_option("--step", diag_opts.trace_step, "Draws between R-hat trace points");
  diagnose->add_option("--trace", diag_trace, "Write the R-hat trace to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitInput;
  }

  try {
    if (*validate) return cmd_validate(validate_data, out, err);
    if (*fit) {
      fit_opts.data = fit_data;
      fit_opts.out = fit_out;
      if (!fit_manifest.empty()) fit_opts.manifest = fit_manifest;
      fit_opts.mcmc.likelihood = likelihood_form_from_string(likelihood);
      if (rho_y >= 0.0 || fit->count("--rho-y")) fit_opts.rho_y = rho_y;
      if (rho_d >= 0.0 || fit->count("--rho-d")) fit_opts.rho_d = rho_d;
      fit_opts.center = !no_center;
      return cmd_fit(fit_opts, out, err);
    }
    if (*simulate) {
      if (!sim_config.empty()) sim_opts.config = sim_config;
      sim_opts.out = sim_out;
      if (trials_opt->count()) sim_opts.trials = sim_trials;
      if (seed_opt->count()) sim_opts.seed = sim_seed;
      return cmd_simulate(sim_opts, out, err);
    }
    if (*diagnose) {
      diag_opts.run = diag_run;
      if (!diag_trace.empty()) diag_opts.trace_out = diag_trace;
      return cmd_diagnose(diag_opts, out, err);
    }
  } catch (const NumericalError& e) {
    err << "model error: " << e.what() << '\n';
    return kExitModel;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitModel;
  }
  return kExitInput;
}

}  // namespace cmreg::cli

#include "cmreg/io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cmreg/error.hpp"

namespace cmreg {

using nlohmann::json;

namespace {

std::string child(const std::string& where, const std::string& key) { return where + "/" + key; }
std::string child(const std::string& where, std::size_t i) { return where + "/" + std::to_string(i); }

const json& require(const json& obj, const std::string& key, const std::string& where) {
  if (!obj.is_object()) throw ParseError(where, "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw ParseError(child(where, key), "missing required field");
  return *it;
}

double as_number(const json& j, const std::string& where) {
  if (!j.is_number()) throw ParseError(where, "expected a number");
  return j.get<double>();
}

int as_int(const json& j, const std::string& where) {
  if (!j.is_number_integer()) {
    if (j.is_number_float()) {
      const double d = j.get<double>();
      if (std::floor(d) == d && std::abs(d) < 1e9) return static_cast<int>(d);
    }
    throw ParseError(where, "expected an integer");
  }
  return j.get<int>();
}

std::string as_string(const json& j, const std::string& where) {
  if (!j.is_string()) throw ParseError(where, "expected a string");
  return j.get<std::string>();
}

std::vector<double> as_numbers(const json& j, const std::string& where) {
  if (!j.is_array()) throw ParseError(where, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(as_number(j[i], child(where, i)));
  return out;
}

InterventionArm arm_from_json(const json& j, const std::string& where) {
  return {as_string(require(j, "id", where), child(where, "id")),
          as_numbers(require(j, "x", where), child(where, "x"))};
}

json arm_to_json(const InterventionArm& arm) { return {{"id", arm.id}, {"x", arm.x}}; }

std::optional<double> optional_number(const json& obj, const std::string& key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || it->is_null()) return std::nullopt;
  return as_number(*it, child(where, key));
}

TrialRecord trial_from_json(const json& j, const std::string& where) {
  TrialRecord t;
  t.id = as_string(require(j, "id", where), child(where, "id"));
  const std::string cmp = as_string(require(j, "comparison", where), child(where, "comparison"));
  if (cmp == "control") {
    t.comparison = Comparison::control;
  } else if (cmp == "active") {
    t.comparison = Comparison::active;
  } else {
    throw ParseError(child(where, "comparison"), "expected \"control\" or \"active\"");
  }
  t.z = j.contains("z") ? as_numbers(j["z"], child(where, "z")) : std::vector<double>{};

  const json& arms = require(j, "arms", where);
  if (!arms.is_array()) throw ParseError(child(where, "arms"), "expected an array");
  for (std::size_t k = 0; k < arms.size(); ++k) t.arms.push_back(arm_from_json(arms[k], child(child(where, "arms"), k)));
  if (auto it = j.find("reference_arm"); it != j.end() && !it->is_null()) {
    t.reference = arm_from_json(*it, child(where, "reference_arm"));
  }

  const json& obs = require(j, "observations", where);
  const std::string obs_at = child(where, "observations");
  if (!obs.is_array()) throw ParseError(obs_at, "expected an array");
  for (std::size_t i = 0; i < obs.size(); ++i) {
    const std::string at = child(obs_at, i);
    Observation o;
    o.arm = as_string(require(obs[i], "arm", at), child(at, "arm"));
    o.category = as_int(require(obs[i], "category", at), child(at, "category"));
    o.y = as_number(require(obs[i], "y", at), child(at, "y"));
    o.v = as_number(require(obs[i], "v", at), child(at, "v"));
    t.observations.push_back(std::move(o));
  }

  if (auto it = j.find("ref_change_var"); it != j.end() && !it->is_null()) {
    const std::string at = child(where, "ref_change_var");
    if (!it->is_object()) throw ParseError(at, "expected an object mapping category to variance");
    for (const auto& [key, value] : it->items()) {
      int category = 0;
      try {
        std::size_t used = 0;
        category = std::stoi(key, &used);
        if (used != key.size()) throw std::invalid_argument(key);
      } catch (const std::exception&) {
        throw ParseError(child(at, key), "category key must be an integer");
      }
      t.ref_change_var[category] = as_number(value, child(at, key));
    }
  }
  t.rho_y = optional_number(j, "rho_y", where);
  t.rho_d = optional_number(j, "rho_d", where);
  return t;
}

json trial_to_json(const TrialRecord& t) {
  json j;
  j["id"] = t.id;
  j["comparison"] = std::string(to_string(t.comparison));
  j["z"] = t.z;
  j["arms"] = json::array();
  for (const auto& a : t.arms) j["arms"].push_back(arm_to_json(a));
  if (t.reference) j["reference_arm"] = arm_to_json(*t.reference);
  j["observations"] = json::array();
  for (const auto& o : t.observations) {
    j["observations"].push_back({{"arm", o.arm}, {"category", o.category}, {"y", o.y}, {"v", o.v}});
  }
  if (!t.ref_change_var.empty()) {
    json r = json::object();
    for (const auto& [c, v] : t.ref_change_var) r[std::to_string(c)] = v;
    j["ref_change_var"] = r;
  }
  if (t.rho_y) j["rho_y"] = *t.rho_y;
  if (t.rho_d) j["rho_d"] = *t.rho_d;
  return j;
}

json parse_text(std::string_view text) {
  try {
    return json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    const std::size_t byte = std::min<std::size_t>(e.byte, text.size());
    const auto line = 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte > 0 ? byte - 1 : 0), '\n');
    throw ParseError("line " + std::to_string(line), "syntax error: " + std::string(e.what()));
  }
}

}  // namespace

CovariateSchema schema_from_json(const json& j, const std::string& where) {
  CovariateSchema s;
  s.n = as_int(require(j, "n", where), child(where, "n"));
  s.p = as_int(require(j, "p", where), child(where, "p"));
  s.q = as_int(require(j, "q", where), child(where, "q"));
  const int l = j.contains("l") ? as_int(j["l"], child(where, "l")) : -1;
  if (auto it = j.find("interactions"); it != j.end()) {
    const std::string at = child(where, "interactions");
    if (!it->is_array()) throw ParseError(at, "expected an array of factor sets");
    for (std::size_t a = 0; a < it->size(); ++a) {
      const json& set = (*it)[a];
      const std::string set_at = child(at, a);
      if (!set.is_array()) throw ParseError(set_at, "expected an array of factors");
      std::vector<InteractionFactor> factors;
      for (std::size_t b = 0; b < set.size(); ++b) {
        const std::string f_at = child(set_at, b);
        const std::string level = as_string(require(set[b], "level", f_at), child(f_at, "level"));
        auto parsed = covariate_level_from_string(level);
        if (!parsed) throw ParseError(child(f_at, "level"), "expected intervention, study or followup");
        factors.push_back({*parsed, as_int(require(set[b], "index", f_at), child(f_at, "index"))});
      }
      s.interactions.push_back(std::move(factors));
    }
  }
  if (l >= 0 && l != s.l()) {
    throw ParseError(child(where, "l"), "l = " + std::to_string(l) + " but " + std::to_string(s.l()) +
                                            " interactions are listed");
  }
  if (auto it = j.find("names"); it != j.end()) {
    if (!it->is_array()) throw ParseError(child(where, "names"), "expected an array of strings");
    for (std::size_t i = 0; i < it->size(); ++i) s.names.push_back(as_string((*it)[i], child(child(where, "names"), i)));
  }
  return s;
}

json schema_to_json(const CovariateSchema& s) {
  json inter = json::array();
  for (const auto& set : s.interactions) {
    json fs = json::array();
    for (const auto& f : set) fs.push_back({{"level", std::string(to_string(f.level))}, {"index", f.index}});
    inter.push_back(fs);
  }
  json j{{"n", s.n}, {"p", s.p}, {"q", s.q}, {"l", s.l()}, {"interactions", inter}};
  if (!s.names.empty()) j["names"] = s.names;
  return j;
}

Dataset dataset_from_json(const json& doc) {
  Dataset ds;
  if (!doc.is_object()) throw ParseError("/", "expected a top-level object");
  ds.schema = schema_from_json(require(doc, "schema", ""), "/schema");
  if (auto it = doc.find("correlations"); it != doc.end()) {
    if (auto r = optional_number(*it, "rho_y", "/correlations")) ds.base_rho_y = *r;
    if (auto r = optional_number(*it, "rho_d", "/correlations")) ds.base_rho_d = *r;
  }
  const json& trials = require(doc, "trials", "");
  if (!trials.is_array()) throw ParseError("/trials", "expected an array");
  for (std::size_t i = 0; i < trials.size(); ++i) ds.trials.push_back(trial_from_json(trials[i], child("/trials", i)));
  return ds;
}

json dataset_to_json(const Dataset& ds) {
  json j;
  j["schema"] = schema_to_json(ds.schema);
  j["correlations"] = {{"rho_y", ds.base_rho_y}, {"rho_d", ds.base_rho_d}};
  j["trials"] = json::array();
  for (const auto& t : ds.trials) j["trials"].push_back(trial_to_json(t));
  return j;
}

Dataset parse_dataset(std::string_view text) { return dataset_from_json(parse_text(text)); }

Dataset load_dataset(std::string_view text) {
  Dataset ds = parse_dataset(text);
  require_valid(ds);
  return ds;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Dataset load_dataset_file(const std::filesystem::path& path) { return load_dataset(read_text_file(path)); }

std::string save_dataset(const Dataset& dataset) { return dataset_to_json(dataset).dump(2) + "\n"; }

void save_dataset_file(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << save_dataset(dataset);
}

json params_to_json(const ParameterVector& p) {
  return {{"alpha", p.alpha}, {"beta", p.beta}, {"gamma", p.gamma}, {"phi", p.phi}, {"eta", p.eta}, {"tau", p.tau}};
}

ParameterVector params_from_json(const CovariateSchema& schema, const json& j, const std::string& where) {
  ParameterVector p = ParameterVector::zeros(schema);
  if (!j.is_object()) throw ParseError(where, "expected an object");
  if (j.contains("alpha")) p.alpha = as_number(j["alpha"], child(where, "alpha"));
  if (j.contains("tau")) p.tau = as_number(j["tau"], child(where, "tau"));
  auto vec = [&](const char* key, std::vector<double>& target) {
    if (!j.contains(key)) return;
    target = as_numbers(j[key], child(where, key));
  };
  vec("beta", p.beta);
  vec("gamma", p.gamma);
  vec("phi", p.phi);
  vec("eta", p.eta);
  if (!p.conforms_to(schema)) throw ParseError(where, "parameter vector lengths do not match the schema");
  return p;
}

json sim_config_to_json(const SimConfig& c) {
  return {{"schema", schema_to_json(c.schema)},
          {"n_trials", c.n_trials},
          {"min_arms", c.min_arms},
          {"max_arms", c.max_arms},
          {"category_probs", c.category_probs},
          {"control_fraction", c.control_fraction},
          {"x_prob", c.x_prob},
          {"z_prob", c.z_prob},
          {"true_params", params_to_json(c.true_params)},
          {"v_min", c.v_min},
          {"v_max", c.v_max},
          {"rho_y", c.rho_y},
          {"rho_d", c.rho_d},
          {"seed", c.seed}};
}

SimConfig sim_config_from_json(const json& j) {
  if (!j.is_object()) throw ParseError("/", "expected a top-level object");
  SimConfig c = default_sim_config();
  if (j.contains("schema")) {
    c.schema = schema_from_json(j["schema"], "/schema");
    // A new schema invalidates the default parameters and category probabilities.
    c.true_params = ParameterVector::zeros(c.schema);
    c.category_probs.assign(static_cast<std::size_t>(std::max(c.schema.q, 0)), 1.0);
  }
  auto count = [&](const char* key, std::size_t& target) {
    if (!j.contains(key)) return;
    const int v = as_int(j[key], std::string("/") + key);
    if (v < 0) throw ParseError(std::string("/") + key, "must be non-negative");
    target = static_cast<std::size_t>(v);
  };
  auto number = [&](const char* key, double& target) {
    if (j.contains(key)) target = as_number(j[key], std::string("/") + key);
  };
  count("n_trials", c.n_trials);
  count("min_arms", c.min_arms);
  count("max_arms", c.max_arms);
  if (j.contains("category_probs")) c.category_probs = as_numbers(j["category_probs"], "/category_probs");
  number("control_fraction", c.control_fraction);
  number("x_prob", c.x_prob);
  number("z_prob", c.z_prob);
  if (j.contains("true_params")) c.true_params = params_from_json(c.schema, j["true_params"], "/true_params");
  number("v_min", c.v_min);
  number("v_max", c.v_max);
  number("rho_y", c.rho_y);
  number("rho_d", c.rho_d);
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned() && !j["seed"].is_number_integer()) throw ParseError("/seed", "expected an integer");
    c.seed = j["seed"].get<std::uint64_t>();
  }
  return c;
}

json centering_to_json(const CenteringRecord& c) {
  return {{"x", c.x}, {"z", c.z}, {"w", c.w}, {"j", c.j}, {"rows", c.rows}};
}

}  // namespace cmreg

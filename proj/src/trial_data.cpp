#include "cmreg/trial_data.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "cmreg/error.hpp"

namespace cmreg {

std::string_view to_string(CovariateLevel level) {
  switch (level) {
    case CovariateLevel::intervention: return "intervention";
    case CovariateLevel::study: return "study";
    case CovariateLevel::followup: return "followup";
  }
  return "?";
}

std::optional<CovariateLevel> covariate_level_from_string(std::string_view s) {
  if (s == "intervention") return CovariateLevel::intervention;
  if (s == "study") return CovariateLevel::study;
  if (s == "followup") return CovariateLevel::followup;
  return std::nullopt;
}

std::string_view to_string(Comparison c) {
  return c == Comparison::control ? "control" : "active";
}

std::vector<std::string> validate_schema(const CovariateSchema& schema) {
  std::vector<std::string> out;
  if (schema.n < 0) out.push_back("n must be non-negative");
  if (schema.p < 0) out.push_back("p must be non-negative");
  if (schema.q < 1) out.push_back("q must be at least 1");
  for (std::size_t j = 0; j < schema.interactions.size(); ++j) {
    const auto& factors = schema.interactions[j];
    const std::string tag = "interaction " + std::to_string(j + 1) + ": ";
    if (factors.empty()) out.push_back(tag + "empty factor set");
    for (std::size_t a = 0; a < factors.size(); ++a) {
      const auto& f = factors[a];
      int bound = 0;
      switch (f.level) {
        case CovariateLevel::intervention: bound = schema.n; break;
        case CovariateLevel::study: bound = schema.p; break;
        case CovariateLevel::followup: bound = schema.q - 1; break;
      }
      if (f.index < 1 || f.index > bound) {
        out.push_back(tag + std::string(to_string(f.level)) + " index " + std::to_string(f.index) +
                      " out of range 1.." + std::to_string(bound));
      }
      for (std::size_t b = 0; b < a; ++b) {
        if (factors[b] == f) out.push_back(tag + "repeated factor");
      }
    }
  }
  const auto expected = static_cast<std::size_t>(schema.n + schema.p + schema.w_count() + schema.l());
  if (!schema.names.empty() && schema.names.size() != expected) {
    out.push_back("names has " + std::to_string(schema.names.size()) + " entries, expected " +
                  std::to_string(expected));
  }
  return out;
}

FollowUpIndicator::FollowUpIndicator(int category, int q) : category_(category), q_(q) {
  if (q < 1 || category < 1 || category > q) {
    throw std::out_of_range("follow-up category " + std::to_string(category) + " outside 1.." +
                            std::to_string(q));
  }
}

FollowUpIndicator FollowUpIndicator::from_dummies(const std::vector<double>& w) {
  const int q = static_cast<int>(w.size()) + 1;
  int category = 1;
  for (std::size_t j = 0; j < w.size(); ++j) {
    if (w[j] == 1.0) {
      if (category != 1) throw std::invalid_argument("follow-up dummies with more than one period set");
      category = static_cast<int>(j) + 2;
    } else if (w[j] != 0.0) {
      throw std::invalid_argument("follow-up dummy not 0/1");
    }
  }
  return FollowUpIndicator(category, q);
}

std::vector<double> FollowUpIndicator::dummies() const {
  std::vector<double> w(static_cast<std::size_t>(q_ - 1), 0.0);
  if (category_ > 1) w[static_cast<std::size_t>(category_ - 2)] = 1.0;
  return w;
}

std::vector<int> TrialRecord::categories() const {
  std::set<int> cats;
  for (const auto& o : observations) cats.insert(o.category);
  return {cats.begin(), cats.end()};
}

std::optional<std::size_t> TrialRecord::arm_index(std::string_view arm_id) const {
  for (std::size_t k = 0; k < arms.size(); ++k) {
    if (arms[k].id == arm_id) return k;
  }
  return std::nullopt;
}

const Observation* TrialRecord::find_observation(std::string_view arm_id, int category) const {
  for (const auto& o : observations) {
    if (o.arm == arm_id && o.category == category) return &o;
  }
  return nullptr;
}

double TrialRecord::observation_variance(std::size_t arm, int category) const {
  const Observation* o = find_observation(arms.at(arm).id, category);
  if (o == nullptr) {
    throw std::out_of_range("trial '" + id + "' has no observation for arm '" + arms[arm].id +
                            "' at category " + std::to_string(category));
  }
  return o->v;
}

namespace {

bool is_binary(double v) { return v == 0.0 || v == 1.0; }

void check_arm(const InterventionArm& arm, const CovariateSchema& schema, std::vector<std::string>& out) {
  if (arm.id.empty()) out.push_back("arm with empty id");
  if (arm.x.size() != static_cast<std::size_t>(schema.n)) {
    out.push_back("arm '" + arm.id + "': x has " + std::to_string(arm.x.size()) + " entries, expected " +
                  std::to_string(schema.n));
  }
  for (double v : arm.x) {
    if (!is_binary(v)) {
      out.push_back("arm '" + arm.id + "': non-binary intervention covariate");
      break;
    }
  }
}

bool valid_rho(double r) { return std::isfinite(r) && r >= 0.0 && r < 1.0; }

}  // namespace

std::vector<std::string> validate_trial(const TrialRecord& trial, const CovariateSchema& schema) {
  std::vector<std::string> out;
  if (trial.id.empty()) out.push_back("empty trial id");

  if (trial.z.size() != static_cast<std::size_t>(schema.p)) {
    out.push_back("z has " + std::to_string(trial.z.size()) + " entries, expected " + std::to_string(schema.p));
  }
  if (std::any_of(trial.z.begin(), trial.z.end(), [](double v) { return !std::isfinite(v); })) {
    out.push_back("non-finite study covariate");
  }

  if (trial.arms.empty()) out.push_back("no non-reference arms");
  std::set<std::string> ids;
  for (const auto& arm : trial.arms) {
    check_arm(arm, schema, out);
    if (!ids.insert(arm.id).second) out.push_back("duplicate arm id '" + arm.id + "'");
  }

  if (trial.comparison == Comparison::active) {
    if (!trial.reference) {
      out.push_back("active-comparison trial missing reference-arm covariates");
    } else {
      check_arm(*trial.reference, schema, out);
      if (!ids.insert(trial.reference->id).second) {
        out.push_back("duplicate arm id '" + trial.reference->id + "'");
      }
    }
  } else if (trial.reference) {
    out.push_back("control-comparison trial carries reference-arm covariates");
  }

  if (trial.observations.empty()) out.push_back("no observations");
  std::set<std::pair<std::string, int>> seen;
  std::map<std::string, std::set<int>> arm_categories;
  for (const auto& o : trial.observations) {
    const std::string at = "observation (" + o.arm + ", " + std::to_string(o.category) + ")";
    if (!trial.arm_index(o.arm)) {
      if (trial.reference && trial.reference->id == o.arm) {
        out.push_back(at + ": observation recorded for the reference arm");
      } else {
        out.push_back(at + ": unknown arm");
      }
    }
    if (o.category < 1 || o.category > schema.q) {
      out.push_back(at + ": category outside 1.." + std::to_string(schema.q));
    }
    if (!std::isfinite(o.y)) out.push_back(at + ": non-finite y");
    if (!(std::isfinite(o.v) && o.v > 0.0)) out.push_back(at + ": variance must be positive and finite");
    if (!seen.insert({o.arm, o.category}).second) out.push_back(at + ": duplicate (arm, time)");
    arm_categories[o.arm].insert(o.category);
  }

  const auto cats = trial.categories();
  const std::set<int> all(cats.begin(), cats.end());
  for (const auto& arm : trial.arms) {
    auto it = arm_categories.find(arm.id);
    if (it == arm_categories.end()) {
      if (!trial.observations.empty()) out.push_back("arm '" + arm.id + "' has no observations");
    } else if (it->second != all) {
      out.push_back("arm '" + arm.id + "' not observed at the same follow-up categories as the other arms");
    }
  }

  for (const auto& [category, value] : trial.ref_change_var) {
    const std::string at = "ref_change_var[" + std::to_string(category) + "]";
    if (!all.count(category)) {
      out.push_back(at + ": category not observed in trial");
      continue;
    }
    if (!(std::isfinite(value) && value > 0.0)) {
      out.push_back(at + ": reference variance must be positive and finite");
      continue;
    }
    double min_v = std::numeric_limits<double>::infinity();
    for (const auto& o : trial.observations) {
      if (o.category == category) min_v = std::min(min_v, o.v);
    }
    if (value > min_v) out.push_back(at + ": reference variance exceeds observation variance");
  }

  if (trial.rho_y && !valid_rho(*trial.rho_y)) out.push_back("rho_y override outside [0, 1)");
  if (trial.rho_d && !valid_rho(*trial.rho_d)) out.push_back("rho_d override outside [0, 1)");
  return out;
}

std::vector<DatasetViolation> validate_dataset(const Dataset& dataset) {
  std::vector<DatasetViolation> out;
  for (auto& msg : validate_schema(dataset.schema)) out.push_back({"", "schema: " + msg});
  if (!valid_rho(dataset.base_rho_y)) out.push_back({"", "base rho_y outside [0, 1)"});
  if (!valid_rho(dataset.base_rho_d)) out.push_back({"", "base rho_d outside [0, 1)"});
  if (dataset.trials.empty()) out.push_back({"", "dataset has no trials"});

  std::set<std::string> ids;
  bool any_control = false;
  for (const auto& trial : dataset.trials) {
    if (!trial.id.empty() && !ids.insert(trial.id).second) {
      out.push_back({trial.id, "duplicate trial id"});
    }
    any_control = any_control || trial.comparison == Comparison::control;
    for (auto& msg : validate_trial(trial, dataset.schema)) out.push_back({trial.id, std::move(msg)});
  }
  if (!dataset.trials.empty() && !any_control) {
    out.push_back({"", "no control-comparison trial: intercept, study and follow-up effects are unidentifiable"});
  }
  return out;
}

void require_valid(const Dataset& dataset) {
  const auto violations = validate_dataset(dataset);
  if (violations.empty()) return;
  const auto& v = violations.front();
  std::ostringstream msg;
  if (!v.trial_id.empty()) msg << "trial '" << v.trial_id << "': ";
  msg << v.message;
  if (violations.size() > 1) msg << " (and " << violations.size() - 1 << " more)";
  throw ValidationError(msg.str());
}

}  // namespace cmreg

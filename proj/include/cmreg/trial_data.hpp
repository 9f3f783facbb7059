#pragma once

// Contrast-level trial data coded against a shared feature framework:
// binary intervention features x, study covariates z, categorical follow-up
// time w, and product interactions J.

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace cmreg {

enum class CovariateLevel { intervention, study, followup };

std::string_view to_string(CovariateLevel level);
std::optional<CovariateLevel> covariate_level_from_string(std::string_view s);

// One factor of an interaction product. `index` is 1-based within its level:
// intervention 1..n, study 1..p, followup 1..q-1 (the w dummy, not the category).
struct InteractionFactor {
  CovariateLevel level = CovariateLevel::intervention;
  int index = 1;

  bool operator==(const InteractionFactor&) const = default;
};

struct CovariateSchema {
  int n = 0;  // intervention features
  int p = 0;  // study covariates
  int q = 1;  // follow-up categories
  std::vector<std::vector<InteractionFactor>> interactions;
  // Optional display labels, covariate order x, z, w, J. Empty or n+p+(q-1)+l.
  std::vector<std::string> names;

  int l() const { return static_cast<int>(interactions.size()); }
  int w_count() const { return q - 1; }
  // Regression coefficients: alpha, beta, gamma, phi, eta (tau excluded).
  int coefficient_count() const { return 1 + n + p + w_count() + l(); }

  bool operator==(const CovariateSchema&) const = default;
};

std::vector<std::string> validate_schema(const CovariateSchema& schema);

// Follow-up category c in 1..q maps to the (q-1)-dummy vector with a single 1
// at position c-1 (category 1, the reference period, is all zeros).
class FollowUpIndicator {
 public:
  FollowUpIndicator(int category, int q);

  static FollowUpIndicator from_dummies(const std::vector<double>& w);

  int category() const { return category_; }
  int q() const { return q_; }
  std::vector<double> dummies() const;
  double dummy(int j) const { return category_ == j + 1 ? 1.0 : 0.0; }  // j is 1-based

 private:
  int category_;
  int q_;
};

struct InterventionArm {
  std::string id;
  std::vector<double> x;

  bool operator==(const InterventionArm&) const = default;
};

struct Observation {
  std::string arm;
  int category = 1;
  double y = 0.0;
  double v = 0.0;

  bool operator==(const Observation&) const = default;
};

enum class Comparison { control, active };

std::string_view to_string(Comparison c);

struct TrialRecord {
  std::string id;
  Comparison comparison = Comparison::control;
  std::vector<double> z;
  std::vector<InterventionArm> arms;             // non-reference arms, k = 1..A_i-1
  std::optional<InterventionArm> reference;      // active comparisons only
  std::vector<Observation> observations;
  std::map<int, double> ref_change_var;          // category -> var(d_r)
  std::optional<double> rho_y;
  std::optional<double> rho_d;

  bool operator==(const TrialRecord&) const = default;

  std::size_t contrast_count() const { return arms.size(); }
  // Sorted distinct categories appearing in observations (T_i of them).
  std::vector<int> categories() const;
  std::size_t dimension() const { return categories().size() * arms.size(); }
  std::optional<std::size_t> arm_index(std::string_view arm_id) const;
  const Observation* find_observation(std::string_view arm_id, int category) const;
  double observation_variance(std::size_t arm, int category) const;
};

struct Dataset {
  CovariateSchema schema;
  std::vector<TrialRecord> trials;
  double base_rho_y = 0.8;
  double base_rho_d = 0.8;

  bool operator==(const Dataset&) const = default;
};

std::vector<std::string> validate_trial(const TrialRecord& trial, const CovariateSchema& schema);

struct DatasetViolation {
  std::string trial_id;  // empty for schema/dataset-level problems
  std::string message;
};

std::vector<DatasetViolation> validate_dataset(const Dataset& dataset);

// Throws ValidationError naming the first offending trial and invariant.
void require_valid(const Dataset& dataset);

// Column means subtracted from the design during centering. Empty vectors
// mean no shift. The raw covariates in each TrialRecord are never modified.
struct CenteringRecord {
  std::vector<double> x;
  std::vector<double> z;
  std::vector<double> w;
  std::vector<double> j;
  std::size_t rows = 0;  // control-comparison design rows the means were taken over

  bool empty() const { return x.empty() && z.empty() && w.empty() && j.empty(); }
  bool operator==(const CenteringRecord&) const = default;
};

// A dataset together with the column shifts applied to its design.
struct CenteredDataset {
  Dataset data;
  CenteringRecord centering;
};

}  // namespace cmreg

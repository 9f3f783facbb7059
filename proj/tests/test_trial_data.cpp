#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <numeric>
#include <random>

#include "cmreg/design.hpp"
#include "cmreg/error.hpp"
#include "cmreg/io.hpp"
#include "cmreg/simgen.hpp"
#include "helpers.hpp"

using namespace cmreg;

namespace {

bool contains(const std::vector<std::string>& msgs, const std::string& needle) {
  return std::any_of(msgs.begin(), msgs.end(), [&](const std::string& m) { return m.find(needle) != std::string::npos; });
}

const char* kMinimalDoc = R"({
  "schema": {"n": 1, "p": 0, "q": 1, "l": 0, "interactions": [], "names": ["feature"]},
  "correlations": {"rho_y": 0.8, "rho_d": 0.8},
  "trials": [{"id": "T1", "comparison": "control", "z": [],
              "arms": [{"id": "A", "x": [1]}],
              "observations": [{"arm": "A", "category": 1, "y": -0.05, "v": 0.01}]}]
})";

}  // namespace

TEST_CASE("follow-up indicator maps categories to dummies bijectively") {
  for (int q = 1; q <= 6; ++q) {
    std::vector<std::vector<double>> seen;
    for (int c = 1; c <= q; ++c) {
      const FollowUpIndicator f(c, q);
      const auto w = f.dummies();
      CHECK(w.size() == static_cast<std::size_t>(q - 1));
      const double sum = std::accumulate(w.begin(), w.end(), 0.0);
      CHECK((sum == 0.0 || sum == 1.0));
      CHECK(FollowUpIndicator::from_dummies(w).category() == c);
      CHECK(std::find(seen.begin(), seen.end(), w) == seen.end());
      seen.push_back(w);
    }
  }
  CHECK(FollowUpIndicator(1, 3).dummies() == std::vector<double>{0, 0});
  CHECK(FollowUpIndicator(3, 3).dummies() == std::vector<double>{0, 1});
  CHECK_THROWS(FollowUpIndicator::from_dummies({1, 1}));
  CHECK_THROWS(FollowUpIndicator(0, 3));
  CHECK_THROWS(FollowUpIndicator(4, 3));
}

TEST_CASE("smallest legal document loads") {
  const Dataset ds = load_dataset(kMinimalDoc);
  REQUIRE(ds.trials.size() == 1);
  CHECK(ds.trials[0].categories().size() == 1);
  CHECK(ds.trials[0].arms.size() + 1 == 2);
  CHECK(ds.trials[0].observations[0].v == 0.01);
}

TEST_CASE("duplicate observation for the same arm and time is rejected") {
  auto doc = nlohmann::json::parse(kMinimalDoc);
  doc["trials"][0]["observations"].push_back({{"arm", "A"}, {"category", 1}, {"y", 0.0}, {"v", 0.02}});
  try {
    load_dataset(doc.dump());
    FAIL("expected a validation error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("duplicate (arm, time)") != std::string::npos);
    CHECK(std::string(e.what()).find("T1") != std::string::npos);
  }
}

TEST_CASE("syntax errors report a line") {
  try {
    load_dataset("{\n  \"schema\": {\n  oops\n}");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.location().rfind("line ", 0) == 0);
  }
}

TEST_CASE("structural errors report the field") {
  auto doc = nlohmann::json::parse(kMinimalDoc);
  doc["trials"][0]["observations"][0]["v"] = "big";
  try {
    load_dataset(doc.dump());
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.location().find("/trials/0/observations/0/v") != std::string::npos);
  }
}

TEST_CASE("reference-schema dataset round-trips through save and load") {
  SimConfig cfg = default_sim_config();
  cfg.n_trials = 25;
  cfg.seed = 11;
  Dataset ds = simulate_dataset(cfg);
  ds.trials[0].ref_change_var[ds.trials[0].categories().front()] = 1e-4;
  ds.trials[1].rho_y = 0.5;
  ds.trials[1].rho_d = 0.25;
  CHECK(ds.schema.n == 4);
  CHECK(ds.schema.p == 1);
  CHECK(ds.schema.q == 3);
  CHECK(ds.schema.l() == 2);
  const std::string text = save_dataset(ds);
  const Dataset back = load_dataset(text);
  CHECK(back == ds);
  CHECK(save_dataset(back) == text);
}

TEST_CASE("validate_trial flags each violated invariant") {
  const CovariateSchema s = testutil::schema(2, 1, 2);

  SUBCASE("valid trial has no violations") {
    auto t = testutil::two_arm_trial("T", {1, 0}, {0.3}, 0.1, 0.01);
    CHECK(validate_trial(t, s).empty());
  }
  SUBCASE("non-binary x") {
    auto t = testutil::two_arm_trial("T", {2, 0}, {0.3}, 0.1, 0.01);
    CHECK(contains(validate_trial(t, s), "non-binary intervention covariate"));
  }
  SUBCASE("active comparison without reference covariates") {
    auto t = testutil::two_arm_trial("T", {1, 0}, {0.3}, 0.1, 0.01);
    t.comparison = Comparison::active;
    CHECK(contains(validate_trial(t, s), "active-comparison trial missing reference-arm covariates"));
  }
  SUBCASE("control comparison with reference covariates") {
    auto t = testutil::two_arm_trial("T", {1, 0}, {0.3}, 0.1, 0.01);
    t.reference = InterventionArm{"R", {0, 0}};
    CHECK(contains(validate_trial(t, s), "control-comparison trial carries reference-arm covariates"));
  }
  SUBCASE("duplicate observation") {
    auto t = testutil::two_arm_trial("T", {1, 0}, {0.3}, 0.1, 0.01);
    t.observations.push_back(t.observations[0]);
    CHECK(contains(validate_trial(t, s), "duplicate (arm, time)"));
  }
  SUBCASE("arms observed at different categories") {
    auto t = testutil::two_arm_trial("T", {1, 0}, {0.3}, 0.1, 0.01);
    t.arms.push_back({"B", {0, 1}});
    t.observations.push_back({"B", 2, 0.1, 0.01});
    CHECK(contains(validate_trial(t, s), "same follow-up categories"));
  }
  SUBCASE("non-positive variance") {
    auto t = testutil::two_arm_trial("T", {1, 0}, {0.3}, 0.1, 0.0);
    CHECK(contains(validate_trial(t, s), "variance must be positive"));
  }
  SUBCASE("category out of range") {
    auto t = testutil::two_arm_trial("T", {1, 0}, {0.3}, 0.1, 0.01, 3);
    CHECK(contains(validate_trial(t, s), "category outside"));
  }
  SUBCASE("wrong covariate lengths") {
    auto t = testutil::two_arm_trial("T", {1}, {}, 0.1, 0.01);
    const auto v = validate_trial(t, s);
    CHECK(contains(v, "x has 1 entries"));
    CHECK(contains(v, "z has 0 entries"));
  }
  SUBCASE("rho override outside [0, 1)") {
    auto t = testutil::two_arm_trial("T", {1, 0}, {0.3}, 0.1, 0.01);
    t.rho_y = 1.0;
    CHECK(contains(validate_trial(t, s), "rho_y override"));
  }
}

TEST_CASE("reference variance above the arm variance is a violation and breaks PSD") {
  const CovariateSchema s = testutil::schema(1, 0, 1);
  TrialRecord t;
  t.id = "T";
  t.arms = {{"A", {1}}, {"B", {0}}};
  t.observations = {{"A", 1, 0.0, 0.01}, {"B", 1, 0.0, 0.02}};
  t.ref_change_var[1] = 0.015;
  CHECK(contains(validate_trial(t, s), "reference variance exceeds observation variance"));

  // The implied 2x2 block [[0.01, c], [c, 0.02]] has a negative eigenvalue
  // exactly when c^2 > 0.01 * 0.02; the validation rule c <= min v is the
  // sufficient condition we enforce.
  Eigen::Matrix2d m;
  m << 0.01, 0.015, 0.015, 0.02;
  CHECK(Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(m).eigenvalues().minCoeff() < 0.0);

  t.ref_change_var[1] = 0.01;
  CHECK(validate_trial(t, s).empty());
}

TEST_CASE("dataset-level checks") {
  const CovariateSchema s = testutil::schema(1, 0, 1);
  auto a = testutil::two_arm_trial("T", {1}, {}, 0.1, 0.01);
  a.comparison = Comparison::active;
  a.reference = InterventionArm{"R", {0}};
  auto ds = testutil::dataset(s, {a});
  auto v = validate_dataset(ds);
  CHECK(std::any_of(v.begin(), v.end(), [](const auto& d) { return d.message.find("no control-comparison") != std::string::npos; }));

  ds.trials.push_back(testutil::two_arm_trial("T", {1}, {}, 0.1, 0.01));
  v = validate_dataset(ds);
  CHECK(std::any_of(v.begin(), v.end(), [](const auto& d) { return d.message == "duplicate trial id"; }));
  CHECK_THROWS_AS(require_valid(ds), ValidationError);

  CHECK(!validate_dataset(testutil::dataset(s, {})).empty());
}

TEST_CASE("schema validation") {
  CHECK(validate_schema(testutil::schema(2, 1, 3, {{{CovariateLevel::intervention, 1}, {CovariateLevel::followup, 2}}})).empty());
  CHECK(!validate_schema(testutil::schema(2, 1, 3, {{{CovariateLevel::intervention, 3}}})).empty());
  CHECK(!validate_schema(testutil::schema(2, 1, 3, {{{CovariateLevel::followup, 3}}})).empty());
  CHECK(!validate_schema(testutil::schema(2, 1, 3, {{}})).empty());
  CHECK(!validate_schema(testutil::schema(2, 1, 3, {{{CovariateLevel::study, 1}, {CovariateLevel::study, 1}}})).empty());
  CHECK(!validate_schema(testutil::schema(2, 1, 0)).empty());
}

TEST_CASE("observation count equals T times contrasts on generated data") {
  SimConfig cfg = default_sim_config();
  cfg.n_trials = 60;
  const Dataset ds = simulate_dataset(cfg);
  for (const auto& t : ds.trials) CHECK(t.observations.size() == t.categories().size() * t.arms.size());
}

TEST_CASE("centering") {
  const CovariateSchema s = testutil::schema(2, 1, 2, {{{CovariateLevel::intervention, 1}, {CovariateLevel::study, 1}}});

  SUBCASE("constant column centers to zero") {
    auto ds = testutil::dataset(s, {testutil::two_arm_trial("A", {1, 0}, {0.2}, 0, 0.01),
                                    testutil::two_arm_trial("B", {1, 1}, {0.9}, 0, 0.01)});
    const auto c = center_covariates(ds);
    for (const auto& t : c.data.trials) CHECK(design_row(s, t, 0, 1, c.centering).x[0] == 0.0);
  }
  SUBCASE("balanced binary column centers to plus and minus one half") {
    auto ds = testutil::dataset(s, {testutil::two_arm_trial("A", {1, 0}, {0.2}, 0, 0.01),
                                    testutil::two_arm_trial("B", {0, 1}, {0.9}, 0, 0.01)});
    const auto c = center_covariates(ds);
    CHECK(c.centering.x[0] == 0.5);
    CHECK(design_row(s, c.data.trials[0], 0, 1, c.centering).x[0] == 0.5);
    CHECK(design_row(s, c.data.trials[1], 0, 1, c.centering).x[0] == -0.5);
    CHECK(c.data == ds);  // raw covariates untouched
  }
  SUBCASE("generated data: zero column means, idempotent") {
    SimConfig cfg = default_sim_config();
    cfg.n_trials = 80;
    cfg.seed = 5;
    const Dataset ds = simulate_dataset(cfg);
    const auto c = center_covariates(ds);
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(ds.schema.coefficient_count());
    std::size_t rows = 0;
    for (const auto& t : ds.trials) {
      if (t.comparison != Comparison::control) continue;
      const Eigen::MatrixXd X = design_matrix(ds.schema, t, c.centering);
      sum += X.colwise().sum().transpose();
      rows += static_cast<std::size_t>(X.rows());
    }
    CHECK(rows == c.centering.rows);
    const Eigen::VectorXd mean = sum / static_cast<double>(rows);
    CHECK(mean[0] == 1.0);
    CHECK(mean.tail(mean.size() - 1).cwiseAbs().maxCoeff() < 1e-12);

    const auto twice = center_covariates(c);
    for (const auto& t : ds.trials) {
      const Eigen::MatrixXd a = design_matrix(ds.schema, t, c.centering);
      const Eigen::MatrixXd b = design_matrix(ds.schema, t, twice.centering);
      CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
  SUBCASE("interaction means come from raw products") {
    auto ds = testutil::dataset(s, {testutil::two_arm_trial("A", {1, 0}, {0.5}, 0, 0.01),
                                    testutil::two_arm_trial("B", {1, 0}, {1.0}, 0, 0.01),
                                    testutil::two_arm_trial("C", {0, 0}, {1.0}, 0, 0.01)});
    const auto c = center_covariates(ds);
    CHECK(c.centering.j[0] == doctest::Approx((0.5 + 1.0 + 0.0) / 3.0).epsilon(1e-15));
    // mean(x1) * mean(z1) would give 2/3 * 5/6, which differs
    CHECK(c.centering.j[0] != doctest::Approx(2.0 / 3.0 * 5.0 / 6.0));
  }
}

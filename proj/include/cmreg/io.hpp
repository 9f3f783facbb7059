#pragma once

// JSON data files. Layout:
//
// {
//   "schema": {"n": 4, "p": 1, "q": 3, "l": 2,
//              "interactions": [[{"level": "intervention", "index": 1},
//                                {"level": "study", "index": 1}], ...],
//              "names": [...]},
//   "correlations": {"rho_y": 0.8, "rho_d": 0.8},
//   "trials": [{"id": "T1", "comparison": "control" | "active",
//               "z": [...], "arms": [{"id": "A", "x": [...]}],
//               "reference_arm": {"id": "R", "x": [...]},      (active only)
//               "observations": [{"arm": "A", "category": 1, "y": -0.05, "v": 0.01}],
//               "ref_change_var": {"1": 0.004},                 (optional)
//               "rho_y": 0.7, "rho_d": 0.7}]                    (optional)
// }

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

#include <json.hpp>

#include "cmreg/simgen.hpp"
#include "cmreg/trial_data.hpp"

namespace cmreg {

// Structural decoding only; throws ParseError with a JSON pointer location.
Dataset dataset_from_json(const nlohmann::json& doc);
nlohmann::json dataset_to_json(const Dataset& dataset);

// Parses the text, then runs every invariant check. Throws ParseError with
// the line for syntax errors, ValidationError for invariant violations.
Dataset load_dataset(std::string_view text);
Dataset load_dataset_file(const std::filesystem::path& path);
// Parses without validating, for reporting violations.
Dataset parse_dataset(std::string_view text);

std::string save_dataset(const Dataset& dataset);
void save_dataset_file(const Dataset& dataset, const std::filesystem::path& path);

nlohmann::json schema_to_json(const CovariateSchema& schema);
CovariateSchema schema_from_json(const nlohmann::json& j, const std::string& where = "/schema");

nlohmann::json params_to_json(const ParameterVector& params);
ParameterVector params_from_json(const CovariateSchema& schema, const nlohmann::json& j,
                                 const std::string& where);

nlohmann::json sim_config_to_json(const SimConfig& config);
// Missing keys keep their default_sim_config() values.
SimConfig sim_config_from_json(const nlohmann::json& j);

nlohmann::json centering_to_json(const CenteringRecord& centering);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace cmreg

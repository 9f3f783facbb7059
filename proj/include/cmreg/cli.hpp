#pragma once

// Command implementations behind the `cmreg` executable.
//
// Exit codes: 0 success, 1 model or sampler failure, 2 input error.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

#include "cmreg/sampler.hpp"

namespace cmreg::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitModel = 1;
inline constexpr int kExitInput = 2;

struct FitOptions {
  std::filesystem::path data;
  std::filesystem::path out;
  std::optional<std::filesystem::path> manifest;  // replay a previous run's settings
  PriorSpec prior;
  McmcConfig mcmc;
  std::optional<double> rho_y;
  std::optional<double> rho_d;
  bool center = true;
  bool diagnostics = true;
  std::size_t trace_step = 0;  // 0: choose from the sample count
};

struct SimulateOptions {
  std::optional<std::filesystem::path> config;
  std::filesystem::path out;
  std::optional<std::size_t> trials;
  std::optional<std::uint64_t> seed;
};

struct DiagnoseOptions {
  std::filesystem::path run;
  std::size_t trace_step = 0;
  std::optional<std::filesystem::path> trace_out;
};

int cmd_validate(const std::filesystem::path& data, std::ostream& out, std::ostream& err);
int cmd_fit(FitOptions options, std::ostream& out, std::ostream& err);
int cmd_simulate(const SimulateOptions& options, std::ostream& out, std::ostream& err);
int cmd_diagnose(const DiagnoseOptions& options, std::ostream& out, std::ostream& err);

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// 64-bit FNV-1a of a byte string, hex encoded; recorded in run manifests.
std::string content_hash(std::string_view bytes);

}  // namespace cmreg::cli

#pragma once

#include <cstddef>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "cmreg/sampler.hpp"

namespace cmreg {

// Potential scale reduction factor for one parameter.
//
// With m chains of length s, chain means xbar_c and grand mean xbar:
//   W   = (1/m) sum_c (1/s) sum_i (x_ci - xbar_c)^2
//   B/s = (1/(m-1)) sum_c (xbar_c - xbar)^2
//   V   = W + (1 + 1/m) B/s
//   R   = sqrt(V / W)
// W uses the 1/s normalization in both numerator and denominator, so
// identical chains (B = 0) give exactly 1. This is the classic
// ((s-1)/s) W' + (1 + 1/m) B/s over W' form with W' the unbiased
// within-chain variance, rescaled by s/(s-1).
// Requires >= 2 chains of equal length >= 10.
double gelman_rubin(const std::vector<std::vector<double>>& chains);

struct ShrinkPoint {
  std::size_t iteration = 0;
  double r_hat = 0.0;
};

// R-hat on growing prefixes every `window_step` draws; the last point is
// always the full chain length.
std::vector<ShrinkPoint> shrink_factor_trace(const std::vector<std::vector<double>>& chains,
                                             std::size_t window_step);

// Linear interpolation between order statistics (type 7). `sorted` ascending.
double quantile_sorted(const std::vector<double>& sorted, double prob);

// Batch-means Monte Carlo standard error of the draw mean.
double monte_carlo_se(const std::vector<double>& draws);

struct ParameterSummary {
  std::string name;
  double median = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double p_below = 0.0;  // fraction of draws strictly < 0
  double p_above = 0.0;  // fraction strictly > 0
  double r_hat = 0.0;    // NaN with a single chain
};

using PosteriorSummary = std::vector<ParameterSummary>;

// Column `j` of every chain, one vector per chain.
std::vector<std::vector<double>> parameter_chains(const std::vector<ChainOutput>& chains, std::size_t j);

PosteriorSummary summarize(const std::vector<ChainOutput>& chains, const std::vector<std::string>& names);

// Header "name median ci_low ci_high p_below p_above r_hat", tab separated.
void write_summary_tsv(std::ostream& out, const PosteriorSummary& summary);
void write_shrink_trace_tsv(std::ostream& out, const std::vector<std::string>& names,
                            const std::vector<std::vector<ShrinkPoint>>& traces);

}  // namespace cmreg

#include "cmreg/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <stdexcept>

namespace cmreg {

namespace {

void check_chains(const std::vector<std::vector<double>>& chains) {
  if (chains.size() < 2) throw std::invalid_argument("R-hat requires >= 2 chains");
  const std::size_t s = chains.front().size();
  for (const auto& c : chains) {
    if (c.size() != s) throw std::invalid_argument("R-hat requires chains of equal length");
  }
  if (s < 10) throw std::invalid_argument("R-hat requires at least 10 draws per chain");
}

double rhat_prefix(const std::vector<std::vector<double>>& chains, std::size_t s) {
  const auto m = static_cast<double>(chains.size());
  const auto n = static_cast<double>(s);
  std::vector<double> means(chains.size());
  double within = 0.0;
  for (std::size_t c = 0; c < chains.size(); ++c) {
    double mean = 0.0;
    for (std::size_t i = 0; i < s; ++i) mean += chains[c][i];
    mean /= n;
    double ss = 0.0;
    for (std::size_t i = 0; i < s; ++i) {
      const double d = chains[c][i] - mean;
      ss += d * d;
    }
    means[c] = mean;
    within += ss / n;
  }
  within /= m;
  double grand = 0.0;
  for (double x : means) grand += x;
  grand /= m;
  double between_over_s = 0.0;
  for (double x : means) between_over_s += (x - grand) * (x - grand);
  between_over_s /= (m - 1.0);

  if (within == 0.0) return between_over_s == 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
  const double pooled = within + (1.0 + 1.0 / m) * between_over_s;
  return std::sqrt(pooled / within);
}

}  // namespace

double gelman_rubin(const std::vector<std::vector<double>>& chains) {
  check_chains(chains);
  return rhat_prefix(chains, chains.front().size());
}

std::vector<ShrinkPoint> shrink_factor_trace(const std::vector<std::vector<double>>& chains, std::size_t window_step) {
  check_chains(chains);
  if (window_step == 0) throw std::invalid_argument("window_step must be >= 1");
  const std::size_t s = chains.front().size();
  std::vector<ShrinkPoint> out;
  for (std::size_t len = window_step; len < s; len += window_step) {
    if (len >= 10) out.push_back({len, rhat_prefix(chains, len)});
  }
  out.push_back({s, rhat_prefix(chains, s)});
  return out;
}

double quantile_sorted(const std::vector<double>& sorted, double prob) {
  if (sorted.empty()) throw std::invalid_argument("quantile of empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double monte_carlo_se(const std::vector<double>& draws) {
  const std::size_t n = draws.size();
  if (n < 4) throw std::invalid_argument("monte_carlo_se needs at least 4 draws");
  const auto size = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n))));
  const std::size_t batches = n / size;
  std::vector<double> means(batches, 0.0);
  for (std::size_t b = 0; b < batches; ++b) {
    for (std::size_t i = 0; i < size; ++i) means[b] += draws[b * size + i];
    means[b] /= static_cast<double>(size);
  }
  double grand = 0.0;
  for (double x : means) grand += x;
  grand /= static_cast<double>(batches);
  double ss = 0.0;
  for (double x : means) ss += (x - grand) * (x - grand);
  const double var_batch = ss / static_cast<double>(batches - 1);
  return std::sqrt(var_batch / static_cast<double>(batches));
}

std::vector<std::vector<double>> parameter_chains(const std::vector<ChainOutput>& chains, std::size_t j) {
  std::vector<std::vector<double>> out;
  out.reserve(chains.size());
  for (const auto& c : chains) {
    const auto col = c.draws.col(static_cast<Eigen::Index>(j));
    out.emplace_back(col.data(), col.data() + col.size());
  }
  return out;
}

PosteriorSummary summarize(const std::vector<ChainOutput>& chains, const std::vector<std::string>& names) {
  if (chains.empty()) throw std::invalid_argument("summarize needs at least one chain");
  const auto cols = static_cast<std::size_t>(chains.front().draws.cols());
  if (names.size() != cols) throw std::invalid_argument("summarize: one name per parameter column required");
  PosteriorSummary out;
  for (std::size_t j = 0; j < cols; ++j) {
    const auto per_chain = parameter_chains(chains, j);
    std::vector<double> pooled;
    for (const auto& c : per_chain) pooled.insert(pooled.end(), c.begin(), c.end());
    std::sort(pooled.begin(), pooled.end());

    ParameterSummary s;
    s.name = names[j];
    s.median = quantile_sorted(pooled, 0.5);
    s.ci_low = quantile_sorted(pooled, 0.025);
    s.ci_high = quantile_sorted(pooled, 0.975);
    const auto total = static_cast<double>(pooled.size());
    const auto below = std::lower_bound(pooled.begin(), pooled.end(), 0.0) - pooled.begin();
    const auto above = pooled.end() - std::upper_bound(pooled.begin(), pooled.end(), 0.0);
    s.p_below = static_cast<double>(below) / total;
    s.p_above = static_cast<double>(above) / total;

    bool equal_lengths = true;
    for (const auto& c : per_chain) equal_lengths = equal_lengths && c.size() == per_chain.front().size();
    s.r_hat = (per_chain.size() >= 2 && equal_lengths && per_chain.front().size() >= 10)
                  ? gelman_rubin(per_chain)
                  : std::numeric_limits<double>::quiet_NaN();
    out.push_back(std::move(s));
  }
  return out;
}

void write_summary_tsv(std::ostream& out, const PosteriorSummary& summary) {
  out << "name\tmedian\tci_low\tci_high\tp_below\tp_above\tr_hat\n";
  const auto flags = out.flags();
  const auto prec = out.precision();
  out << std::setprecision(10);
  for (const auto& s : summary) {
    out << s.name << '\t' << s.median << '\t' << s.ci_low << '\t' << s.ci_high << '\t' << s.p_below << '\t'
        << s.p_above << '\t' << s.r_hat << '\n';
  }
  out.flags(flags);
  out.precision(prec);
}

void write_shrink_trace_tsv(std::ostream& out, const std::vector<std::string>& names,
                            const std::vector<std::vector<ShrinkPoint>>& traces) {
  if (names.size() != traces.size()) throw std::invalid_argument("one trace per parameter name required");
  out << "iteration";
  for (const auto& n : names) out << '\t' << n;
  out << '\n';
  if (traces.empty()) return;
  const auto prec = out.precision();
  out << std::setprecision(10);
  for (std::size_t i = 0; i < traces.front().size(); ++i) {
    out << traces.front()[i].iteration;
    for (const auto& t : traces) out << '\t' << t.at(i).r_hat;
    out << '\n';
  }
  out.precision(prec);
}

}  // namespace cmreg

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include "esmc/core.hpp"
#include "esmc/samplers.hpp"

namespace esmc::diagnostics {

struct Autocorrelation {
  std::vector<double> values;  // lags 0..max_lag
  bool degenerate = false;     // zero-variance series; every lag reported as 1
};

/// Biased sample ACF r_l = sum (x_t - m)(x_{t+l} - m) / sum (x_t - m)^2.
inline Autocorrelation autocorrelation(std::span<const double> series, std::int64_t max_lag) {
  const auto n = static_cast<std::int64_t>(series.size());
  if (max_lag < 0 || n <= max_lag) throw UsageError("autocorrelation: series length must exceed max_lag");
  double mean = 0.0;
  for (double x : series) mean += x;
  mean /= static_cast<double>(n);
  double denom = 0.0;
  for (double x : series) denom += (x - mean) * (x - mean);
  Autocorrelation acf;
  acf.values.assign(static_cast<std::size_t>(max_lag + 1), 1.0);
  if (!(denom > 0.0)) {
    acf.degenerate = true;
    return acf;
  }
  for (std::int64_t lag = 1; lag <= max_lag; ++lag) {
    double num = 0.0;
    for (std::int64_t t = 0; t + lag < n; ++t)
      num += (series[static_cast<std::size_t>(t)] - mean) * (series[static_cast<std::size_t>(t + lag)] - mean);
    acf.values[static_cast<std::size_t>(lag)] = num / denom;
  }
  return acf;
}

/// Effective sample size by Geyer's initial monotone sequence estimator.
inline double effective_sample_size(std::span<const double> series) {
  const auto n = static_cast<std::int64_t>(series.size());
  if (n < 4) return static_cast<double>(n);
  double mean = 0.0;
  for (double x : series) mean += x;
  mean /= static_cast<double>(n);
  double denom = 0.0;
  for (double x : series) denom += (x - mean) * (x - mean);
  if (!(denom > 0.0)) return static_cast<double>(n);
  auto rho = [&](std::int64_t lag) {
    double num = 0.0;
    for (std::int64_t t = 0; t + lag < n; ++t)
      num += (series[static_cast<std::size_t>(t)] - mean) * (series[static_cast<std::size_t>(t + lag)] - mean);
    return num / denom;
  };
  double tau = -1.0;
  double previous_pair = std::numeric_limits<double>::infinity();
  for (std::int64_t k = 0; 2 * k + 1 < n; ++k) {
    double pair = (k == 0 ? 1.0 : rho(2 * k)) + rho(2 * k + 1);
    if (pair <= 0.0) break;
    pair = std::min(pair, previous_pair);
    tau += 2.0 * pair;
    previous_pair = pair;
  }
  return static_cast<double>(n) / std::max(tau, 1.0 / static_cast<double>(n));
}

/// Uniform bins over [lo, hi).
struct BinSpec {
  double lo;
  double hi;
  int bins;

  void validate() const {
    if (bins < 1 || !(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi))
      throw UsageError("bin spec: need bins >= 1 and finite lo < hi");
  }
  double width() const { return (hi - lo) / bins; }
};

/// Normalized histogram of the in-range samples.
inline std::vector<double> histogram(std::span<const double> samples, const BinSpec& spec) {
  spec.validate();
  std::vector<double> p(static_cast<std::size_t>(spec.bins), 0.0);
  std::int64_t in_range = 0;
  for (double x : samples) {
    if (!(x >= spec.lo && x < spec.hi)) continue;
    auto b = static_cast<std::int64_t>((x - spec.lo) / spec.width());
    b = std::clamp<std::int64_t>(b, 0, spec.bins - 1);
    p[static_cast<std::size_t>(b)] += 1.0;
    ++in_range;
  }
  if (in_range == 0) throw UsageError("histogram: no samples inside the bin range");
  for (double& v : p) v /= static_cast<double>(in_range);
  return p;
}

/// Bin masses of exp(-V) by composite Simpson per bin, renormalized over bins.
template <TargetDensity Target>
std::vector<double> target_bin_masses(const Target& target, const BinSpec& spec, int simpson_intervals = 64) {
  spec.validate();
  if (target.dim() != 1) throw UsageError("target_bin_masses: target must be one-dimensional");
  if (simpson_intervals < 2 || simpson_intervals % 2) throw UsageError("Simpson rule needs an even interval count");
  const int n_points = spec.bins * simpson_intervals + 1;
  const double step = spec.width() / simpson_intervals;
  std::vector<double> potential(static_cast<std::size_t>(n_points));
  Vector x(1);
  for (int i = 0; i < n_points; ++i) {
    x[0] = spec.lo + step * i;
    potential[static_cast<std::size_t>(i)] = checked_potential(target, x);
  }
  const double shift = *std::min_element(potential.begin(), potential.end());
  std::vector<double> masses(static_cast<std::size_t>(spec.bins), 0.0);
  double total = 0.0;
  for (int b = 0; b < spec.bins; ++b) {
    double sum = 0.0;
    for (int j = 0; j <= simpson_intervals; ++j) {
      const double weight = (j == 0 || j == simpson_intervals) ? 1.0 : (j % 2 ? 4.0 : 2.0);
      sum += weight * std::exp(shift - potential[static_cast<std::size_t>(b * simpson_intervals + j)]);
    }
    masses[static_cast<std::size_t>(b)] = sum * step / 3.0;
    total += masses[static_cast<std::size_t>(b)];
  }
  for (double& m : masses) m /= total;
  return masses;
}

/// D_KL(p || q) over bins; 0 log 0 = 0 and q is floored at 1e-12.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) throw UsageError("kl_divergence: bin counts differ");
  constexpr double kFloor = 1e-12;
  double kl = 0.0;
  for (std::size_t b = 0; b < p.size(); ++b) {
    if (p[b] > 0.0) kl += p[b] * std::log(p[b] / std::max(q[b], kFloor));
  }
  return kl;
}

/// KL divergence between the sample histogram and the binned target.
template <TargetDensity Target>
double histogram_kl(std::span<const double> samples, const Target& target, const BinSpec& spec) {
  const auto p = histogram(samples, spec);
  const auto q = target_bin_masses(target, spec);
  return kl_divergence(p, q);
}

/// Mean and diagonal (n - 1 denominator) covariance of a sample set.
inline Moments sample_moments(std::span<const Vector> samples) {
  if (samples.size() < 2) throw UsageError("sample_moments: need at least two samples");
  const Index dim = samples.front().size();
  Vector mean = Vector::Zero(dim);
  for (const auto& s : samples) mean += s;
  mean /= static_cast<double>(samples.size());
  Vector var = Vector::Zero(dim);
  for (const auto& s : samples) var += (s - mean).cwiseAbs2();
  var /= static_cast<double>(samples.size() - 1);
  return {mean, var};
}

/// Post-burn-in samples of all chains, in chain order.
inline std::vector<Vector> pooled_samples(std::span<const Chain> chains) {
  std::vector<Vector> out;
  for (const auto& c : chains)
    out.insert(out.end(), c.samples.begin() + static_cast<std::ptrdiff_t>(c.burn_in), c.samples.end());
  return out;
}

struct MomentErrors {
  double e1;
  double e2;
};

/// e1 = |mean| / N (mean error), e2 = (1/N) sqrt(sum_k ((S_kk - Sigma_kk) / Sigma_kk)^2).
inline MomentErrors moment_errors(const Moments& sampled, const Moments& exact) {
  const auto n = static_cast<double>(exact.mean.size());
  esmc::detail::require_same_dim(sampled.mean.size(), exact.mean.size(), "moment_errors");
  const double e1 = (sampled.mean - exact.mean).norm() / n;
  const double e2 = (sampled.cov_diag - exact.cov_diag).cwiseQuotient(exact.cov_diag).norm() / n;
  return {e1, e2};
}

inline MomentErrors moment_errors(std::span<const Chain> chains, const Moments& exact) {
  const auto pooled = pooled_samples(chains);
  return moment_errors(sample_moments(pooled), exact);
}

/// Fraction of samples in each of m equal polar sectors [2 pi j / m, 2 pi (j+1) / m).
inline std::vector<double> sector_fractions(std::span<const Vector> samples, int m) {
  if (samples.empty()) throw UsageError("angular_symmetry_stat: no samples");
  if (m < 1) throw UsageError("angular_symmetry_stat: need m >= 1 sectors");
  std::vector<double> counts(static_cast<std::size_t>(m), 0.0);
  const double sector = 2.0 * std::numbers::pi / m;
  for (const auto& s : samples) {
    if (s.size() != 2) throw UsageError("angular_symmetry_stat: samples must be two-dimensional");
    double theta = std::atan2(s[1], s[0]);
    if (theta < 0.0) theta += 2.0 * std::numbers::pi;
    const auto j = std::clamp(static_cast<int>(theta / sector), 0, m - 1);
    counts[static_cast<std::size_t>(j)] += 1.0;
  }
  for (double& c : counts) c /= static_cast<double>(samples.size());
  return counts;
}

/// Standard deviation of the per-sector sample fractions. Zero for equal counts.
inline double angular_symmetry_stat(std::span<const Vector> samples, int m) {
  const auto fractions = sector_fractions(samples, m);
  double var = 0.0;
  for (double f : fractions) var += (f - 1.0 / m) * (f - 1.0 / m);
  return std::sqrt(var / m);
}

/// Delta t_e = T / (segments per proposal).
inline double effective_time_step(std::int64_t segments_total, std::int64_t proposals, double duration) {
  if (proposals < 1) throw UsageError("effective_time_step: need at least one proposal");
  if (segments_total < 1) throw UsageError("effective_time_step: need at least one segment");
  return duration / (static_cast<double>(segments_total) / static_cast<double>(proposals));
}

/// Summary of one chain (or of a pooled set of chains).
struct ChainStats {
  double acceptance = 0.0;
  std::vector<double> acf;  // component 0
  bool acf_degenerate = false;
  Vector mean;
  Vector cov_diag;
  std::optional<double> e1, e2;
  std::optional<double> kl;
  std::optional<double> dt_effective;
  std::optional<double> angular_std;
};

struct StatsOptions {
  std::int64_t max_lag = 50;
  std::optional<BinSpec> kl_bins;       // 1D targets
  std::optional<double> duration;       // ESMC proposals: effective time step
  std::optional<int> angular_sectors;   // 2D targets
  std::optional<Moments> exact;
};

inline ChainStats chain_stats(std::span<const Chain> chains, const StatsOptions& opt) {
  if (chains.empty()) throw UsageError("chain_stats: no chains");
  ChainStats stats;
  std::int64_t accepted = 0, retained = 0, segments = 0, proposals = 0;
  for (const auto& c : chains) {
    accepted += static_cast<std::int64_t>(std::llround(c.acceptance_ratio() * static_cast<double>(c.retained())));
    retained += c.retained();
    segments += c.total_segments();
    proposals += c.size();
  }
  stats.acceptance = static_cast<double>(accepted) / static_cast<double>(retained);
  const auto pooled = pooled_samples(chains);
  const auto moments = sample_moments(pooled);
  stats.mean = moments.mean;
  stats.cov_diag = moments.cov_diag;

  const auto first = chains.front().component(0);
  const auto max_lag = std::min<std::int64_t>(opt.max_lag, static_cast<std::int64_t>(first.size()) - 1);
  auto acf = autocorrelation(first, max_lag);
  stats.acf = std::move(acf.values);
  stats.acf_degenerate = acf.degenerate;

  if (opt.exact) {
    const auto err = moment_errors(moments, *opt.exact);
    stats.e1 = err.e1;
    stats.e2 = err.e2;
  }
  if (opt.duration && segments > 0) stats.dt_effective = effective_time_step(segments, proposals, *opt.duration);
  if (opt.angular_sectors && moments.mean.size() == 2) stats.angular_std = angular_symmetry_stat(pooled, *opt.angular_sectors);
  return stats;
}

/// As above, plus the histogram KL against a 1D target.
template <TargetDensity Target>
ChainStats chain_stats(std::span<const Chain> chains, const Target& target, const StatsOptions& opt) {
  auto stats = chain_stats(chains, opt);
  if (opt.kl_bins && target.dim() == 1) {
    std::vector<double> xs;
    for (const auto& v : pooled_samples(chains)) xs.push_back(v[0]);
    stats.kl = histogram_kl(xs, target, *opt.kl_bins);
  }
  return stats;
}

}  // namespace esmc::diagnostics

#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <limits>
#include <mutex>
#include <optional>
#include <string_view>
#include <thread>
#include <variant>
#include <vector>

#include "esmc/core.hpp"
#include "esmc/integrators.hpp"

namespace esmc {

/// Proposal covariances share the SPD algebra of mass matrices.
using Covariance = MassMatrix;

/// Random-walk Metropolis with Gaussian increments of the given covariance.
struct RwmcParams {
  Covariance proposal_covariance;
};

/// Leapfrog HMC: round(T / dt) steps (at least one) per proposal.
struct HmcParams {
  double dt;
  double duration;
};

/// Energy-stepping MC: exact terraced flow of height h for time T.
struct EsmcParams {
  double h;
  double duration;
  int max_retries = 10;
  TrajectoryOptions trajectory{};
};

using SamplerParams = std::variant<RwmcParams, HmcParams, EsmcParams>;

inline std::string_view sampler_name(const SamplerParams& params) {
  switch (params.index()) {
    case 0: return "rwmc";
    case 1: return "hmc";
    default: return "esmc";
  }
}

inline void validate(const SamplerParams& params) {
  std::visit(
      [](const auto& p) {
        using P = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<P, HmcParams>) {
          if (!(p.dt > 0.0) || !(p.duration > 0.0)) throw UsageError("hmc: dt and T must be > 0");
        } else if constexpr (std::is_same_v<P, EsmcParams>) {
          if (!(p.h > 0.0) || !(p.duration > 0.0)) throw UsageError("esmc: h and T must be > 0");
          if (p.max_retries < 0) throw UsageError("esmc: max_retries must be >= 0");
        }
      },
      params);
}

/// Leapfrog step count for an HMC proposal.
inline std::int64_t leapfrog_steps(const HmcParams& params) {
  return std::max<std::int64_t>(1, std::llround(params.duration / params.dt));
}

struct RwmcStep {
  Vector q;
  bool accepted;
};

/// Metropolis step with symmetric proposal q + xi, xi ~ N(0, C); accepted with
/// probability min(1, exp(V(q) - V(q~))).
template <TargetDensity Target>
RwmcStep rwmc_step(const Vector& q, const Target& target, const RwmcParams& params, Rng& rng) {
  Vector proposal = q + params.proposal_covariance.scale_standard_normal(rng.normal_vector(q.size()));
  const double log_ratio = target.potential(q) - target.potential(proposal);
  const double u = rng.uniform();
  // log(u) < log_ratio, with u == 0 and log_ratio >= 0 both accepting.
  if (log_ratio >= 0.0 || (std::isfinite(log_ratio) && u < std::exp(log_ratio))) return {std::move(proposal), true};
  return {q, false};
}

struct HmcStep {
  Vector q;
  bool accepted;
  double proposal_energy;  // H of the proposed phase point; NaN if divergent
  double energy_error;     // H(proposal) - H(start)
  bool divergent;
};

/// HMC step: fresh momentum, leapfrog proposal, Metropolis test on Delta H.
/// A non-finite proposal counts as a (divergent) rejection.
template <TargetDensity Target>
HmcStep hmc_step(const Vector& q, const Target& target, const MassMatrix& mass, const HmcParams& params, Rng& rng) {
  const Vector p = sample_momentum(mass, rng);
  const PhasePoint start{q, mass.apply_inverse(p), 0.0};
  const double h0 = hamiltonian(start, target, mass);
  const double u = rng.uniform();
  double h1 = std::numeric_limits<double>::quiet_NaN();
  PhasePoint end;
  try {
    end = leapfrog_trajectory(start, target, mass, params.dt, leapfrog_steps(params));
    h1 = target.potential(end.q) + kinetic_energy(end.v, mass);
  } catch (const IntegratorError&) {
  } catch (const EvaluationError&) {
  }
  if (!std::isfinite(h1)) return {q, false, h1, h1, true};
  const double log_ratio = h0 - h1;
  if (log_ratio >= 0.0 || u < std::exp(log_ratio)) return {std::move(end.q), true, h1, h1 - h0, false};
  return {q, false, h1, h1 - h0, false};
}

/// Compact per-segment trace row.
struct TraceRow {
  std::int64_t step;
  double t_start;
  double t_end;
  SegmentEvent event;
  double level;
};

struct EsmcStep {
  Vector q;
  std::int64_t segments;
  double start_energy;  // terraced Hamiltonian at the start of the accepted trajectory
  double end_energy;
  int retries;          // proposals restarted after an integrator failure
  std::vector<SegmentRecord> events;
};

/// ESMC step: v = M^{-1} p with p ~ N(0, M), then the exact terraced flow for
/// time T. Always accepted. An integrator failure (non-transversal crossing,
/// runaway trajectory) restarts the proposal with a fresh momentum.
template <TargetDensity Target>
EsmcStep esmc_step(const Vector& q, const Target& target, const MassMatrix& mass, const EsmcParams& params,
                   Rng& rng) {
  const Terrace terrace(params.h);
  for (int attempt = 0;; ++attempt) {
    const Vector p = sample_momentum(mass, rng);
    try {
      auto traj = energy_trajectory(PhasePoint{q, mass.apply_inverse(p), 0.0}, target, mass, terrace,
                                    params.duration, params.trajectory);
      return {std::move(traj.end.q), traj.segments, traj.start_energy, traj.end_energy, attempt,
              std::move(traj.events)};
    } catch (const IntegratorError&) {
      if (attempt >= params.max_retries) throw;
    }
  }
}

enum class InitKind { kStandardNormal, kExactDraw };

/// Fixed starting point or a distribution to draw it from.
using InitialState = std::variant<Vector, InitKind>;

struct ChainSettings {
  std::int64_t samples = 5000;
  double burn_in_fraction = 0.1;
  InitialState init = InitKind::kStandardNormal;
  std::optional<MassMatrix> mass;  // identity when unset
  bool record_trace = false;       // ESMC only
};

/// Chain of post-step states with per-step metadata.
struct Chain {
  std::uint64_t chain_id = 0;
  std::string_view sampler;
  Vector initial;
  std::vector<Vector> samples;
  std::vector<std::uint8_t> accepted;
  std::vector<double> hamiltonians;     // NaN for RWMC
  std::vector<std::int64_t> segments;   // -1 for non-ESMC
  std::int64_t burn_in = 0;
  std::int64_t retries = 0;             // ESMC restarted proposals
  std::int64_t divergences = 0;         // HMC non-finite proposals
  double max_energy_drift = 0.0;        // ESMC, relative terraced-energy drift
  std::vector<TraceRow> trace;

  std::int64_t size() const { return static_cast<std::int64_t>(samples.size()); }
  std::int64_t retained() const { return size() - burn_in; }

  /// Post-burn-in samples of component k.
  std::vector<double> component(Index k, bool include_burn_in = false) const {
    std::vector<double> out;
    const std::int64_t first = include_burn_in ? 0 : burn_in;
    out.reserve(static_cast<std::size_t>(size() - first));
    for (std::int64_t i = first; i < size(); ++i) out.push_back(samples[static_cast<std::size_t>(i)][k]);
    return out;
  }

  double acceptance_ratio(bool include_burn_in = false) const {
    const std::int64_t first = include_burn_in ? 0 : burn_in;
    std::int64_t count = 0;
    for (std::int64_t i = first; i < size(); ++i) count += accepted[static_cast<std::size_t>(i)];
    return static_cast<double>(count) / static_cast<double>(size() - first);
  }

  std::int64_t total_segments() const {
    std::int64_t total = 0;
    for (auto s : segments) total += std::max<std::int64_t>(s, 0);
    return total;
  }
};

inline std::int64_t burn_in_count(std::int64_t samples, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw UsageError("burn-in fraction must be in [0, 1)");
  const auto burn_in = static_cast<std::int64_t>(std::llround(static_cast<double>(samples) * fraction));
  if (!(samples > burn_in)) throw UsageError("chain length must exceed the burn-in");
  return burn_in;
}

template <TargetDensity Target>
Vector initial_state(const Target& target, const InitialState& init, Rng& rng) {
  if (const auto* fixed = std::get_if<Vector>(&init)) {
    detail::require_same_dim(fixed->size(), static_cast<Index>(target.dim()), "initial state");
    return *fixed;
  }
  if (std::get<InitKind>(init) == InitKind::kStandardNormal) return rng.normal_vector(target.dim());
  if constexpr (requires(const Target& t, Rng& r) { { t.draw_exact(r) } -> std::convertible_to<Vector>; }) {
    return target.draw_exact(rng);
  } else {
    throw UsageError("initial state: target has no exact sampler");
  }
}

/// Runs one chain. Streams: (seed, chain_id, init) for the starting point and
/// (seed, chain_id, transition) for every step, so a chain depends only on
/// (seed, chain_id, settings).
template <TargetDensity Target>
Chain run_chain(const Target& target, const SamplerParams& params, const ChainSettings& settings,
                std::uint64_t seed, std::uint64_t chain_id) {
  validate(params);
  const auto burn_in = burn_in_count(settings.samples, settings.burn_in_fraction);
  const MassMatrix mass = settings.mass ? *settings.mass : MassMatrix::identity(target.dim());
  detail::require_same_dim(mass.dim(), static_cast<Index>(target.dim()), "run_chain mass matrix");

  Rng init_rng(seed, chain_id, StreamPhase::kInit);
  Rng rng(seed, chain_id, StreamPhase::kTransition);

  Chain chain;
  chain.chain_id = chain_id;
  chain.sampler = sampler_name(params);
  chain.burn_in = burn_in;
  chain.initial = initial_state(target, settings.init, init_rng);
  const auto n = static_cast<std::size_t>(settings.samples);
  chain.samples.reserve(n);
  chain.accepted.reserve(n);
  chain.hamiltonians.reserve(n);
  chain.segments.reserve(n);

  constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
  Vector q = chain.initial;
  for (std::int64_t step = 0; step < settings.samples; ++step) {
    std::visit(
        [&](const auto& p) {
          using P = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<P, RwmcParams>) {
            auto r = rwmc_step(q, target, p, rng);
            q = std::move(r.q);
            chain.accepted.push_back(r.accepted);
            chain.hamiltonians.push_back(kNaN);
            chain.segments.push_back(-1);
          } else if constexpr (std::is_same_v<P, HmcParams>) {
            auto r = hmc_step(q, target, mass, p, rng);
            q = std::move(r.q);
            chain.accepted.push_back(r.accepted);
            chain.hamiltonians.push_back(r.proposal_energy);
            chain.segments.push_back(-1);
            chain.divergences += r.divergent;
          } else {
            EsmcParams esmc = p;
            esmc.trajectory.record_events = settings.record_trace;
            auto r = esmc_step(q, target, mass, esmc, rng);
            q = std::move(r.q);
            chain.accepted.push_back(1);
            chain.hamiltonians.push_back(r.end_energy);
            chain.segments.push_back(r.segments);
            chain.retries += r.retries;
            chain.max_energy_drift = std::max(
                chain.max_energy_drift, std::abs(r.end_energy - r.start_energy) / (1.0 + std::abs(r.start_energy)));
            for (const auto& e : r.events) chain.trace.push_back({step, e.t_start, e.t_end, e.event, e.level});
          }
        },
        params);
    chain.samples.push_back(q);
  }
  return chain;
}

/// Runs chains 0..n_chains-1 on up to `threads` workers. Results are ordered by
/// chain id and do not depend on the thread count.
template <TargetDensity Target>
std::vector<Chain> run_chains(const Target& target, const SamplerParams& params, const ChainSettings& settings,
                              std::uint64_t seed, int n_chains, unsigned threads = 0) {
  if (n_chains < 1) throw UsageError("run_chains: need at least one chain");
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(n_chains));
  std::vector<Chain> chains(static_cast<std::size_t>(n_chains));
  std::atomic<int> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (int c = next++; c < n_chains; c = next++) {
      try {
        chains[static_cast<std::size_t>(c)] = run_chain(target, params, settings, seed, static_cast<std::uint64_t>(c));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned i = 0; i < threads; ++i) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return chains;
}

}  // namespace esmc

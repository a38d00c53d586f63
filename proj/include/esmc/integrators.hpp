#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <string_view>
#include <vector>

#include "esmc/core.hpp"

namespace esmc {

/// Energy-step height h of the terraced potential V_h = h floor(V / h).
class Terrace {
 public:
  explicit Terrace(double h) : h_(h) {
    if (!(h > 0.0) || !std::isfinite(h)) throw UsageError("terrace height h must be finite and > 0");
  }
  double h() const { return h_; }

 private:
  double h_;
};

/// h floor(V / h); satisfies result <= V < result + h.
inline double terraced_potential(double potential, double h) {
  if (!(h > 0.0)) throw UsageError("terraced_potential: h must be > 0");
  return h * std::floor(potential / h);
}

enum class Boundary { kLower, kUpper };

/// Potential values bounding the current terrace.
struct Levels {
  double lower;
  double upper;
};

/// First point along a ray where V reaches one of the terrace levels.
struct Crossing {
  double s;
  Boundary boundary;
};

struct RootOptions {
  double tol = 1e-12;       // |V - level| <= tol * (upper - lower)
  int max_iterations = 200;
  double safety = 0.5;      // marching stride aims for safety * h change in V
  double eps = 1e-30;       // guards the stride against a vanishing slope
  int max_halvings = 80;
};

namespace detail {

/// Half-width of the band around a level surface inside which a point counts
/// as lying on it. Must cover the root tolerance, since a located crossing may
/// sit on either side of the level by up to tol * h.
inline double level_slack(double h, double level, double tol = RootOptions{}.tol) {
  return 4.0 * tol * h + 4.0 * std::numeric_limits<double>::epsilon() * std::abs(level);
}

inline std::string describe_ray(const Vector& q, const Vector& v, double a, double b) {
  std::ostringstream os;
  os.precision(17);
  os << "q = " << format_vector(q) << ", v = " << format_vector(v) << ", bracket = [" << a << ", " << b << "]";
  return os.str();
}

}  // namespace detail

/// Smallest s in (0, s_max] at which V(q + s v) reaches levels.lower or
/// levels.upper, i.e. where the ray leaves the terrace.
///
/// The ray is marched with strides aimed at a safety * h change in V, each
/// stride halved until |dV/ds| * ds <= h at its far end. The first bracket is
/// refined by safeguarded regula falsi (bisection whenever the bracket fails
/// to halve) until |V - level| <= tol * h.
template <TargetDensity Target>
std::optional<Crossing> smallest_root(const Target& target, const Vector& q, const Vector& v, double s_max,
                                      Levels levels, const RootOptions& opt = {}) {
  if (!(s_max > 0.0)) throw UsageError("smallest_root: s_max must be > 0");
  const double h = levels.upper - levels.lower;
  if (!(h > 0.0)) throw UsageError("smallest_root: upper level must exceed lower level");
  const double slack_lo = detail::level_slack(h, levels.lower, opt.tol);
  const double slack_hi = detail::level_slack(h, levels.upper, opt.tol);

  auto position = [&](double s) -> Vector { return q + s * v; };
  auto outside_upper = [&](double value) { return value >= levels.upper + slack_hi; };
  auto outside_lower = [&](double value) { return value < levels.lower - slack_lo; };

  double s = 0.0;
  double value_here = checked_potential(target, q);
  double slope = target.gradient(q).dot(v);
  if (!std::isfinite(slope)) throw EvaluationError("non-finite gradient at q = " + detail::format_vector(q));

  while (s < s_max) {
    double ds = std::min(s_max - s, opt.safety * h / (std::abs(slope) + opt.eps));
    double s_next = 0.0, value = 0.0, slope_next = 0.0;
    for (int halving = 0;; ++halving) {
      s_next = (ds >= s_max - s) ? s_max : s + ds;
      const Vector x = position(s_next);
      value = checked_potential(target, x);
      slope_next = target.gradient(x).dot(v);
      if (std::abs(slope_next) * (s_next - s) <= h || halving >= opt.max_halvings) break;
      ds *= 0.5;
    }

    // Both ends inside, but V may turn around between them and poke through a
    // level. Bisect on the slope until a point outside turns up or a linear
    // bound shows the turning point stays inside.
    const bool turns_up = slope < 0.0 && slope_next > 0.0;
    const bool turns_down = slope > 0.0 && slope_next < 0.0;
    if ((turns_up && !outside_lower(value)) || (turns_down && !outside_upper(value))) {
      double a = s, b = s_next, va = value_here, vb = value, ga = slope, gb = slope_next;
      for (int it = 0; it < opt.max_iterations; ++it) {
        const double extreme = turns_up ? std::max(va + ga * (b - a), vb - gb * (b - a))
                                        : std::min(va + ga * (b - a), vb - gb * (b - a));
        if (turns_up ? !outside_lower(extreme) : !outside_upper(extreme)) break;
        const double mid = 0.5 * (a + b);
        if (!(mid > a && mid < b)) break;
        const Vector x = position(mid);
        const double vm = checked_potential(target, x);
        const double gm = target.gradient(x).dot(v);
        if (turns_up ? outside_lower(vm) : outside_upper(vm)) {
          s_next = mid;
          value = vm;
          slope_next = gm;
          break;
        }
        if ((gm < 0.0) == turns_up) {
          a = mid, va = vm, ga = gm;
        } else {
          b = mid, vb = vm, gb = gm;
        }
      }
    }

    const bool up = outside_upper(value);
    if (up || outside_lower(value)) {
      const Boundary boundary = up ? Boundary::kUpper : Boundary::kLower;
      const double level = up ? levels.upper : levels.lower;
      // Oriented residual: positive outside the terrace.
      auto residual = [&](double si) {
        const double vi = checked_potential(target, position(si));
        return up ? vi - level : level - vi;
      };
      double a = s, b = s_next;
      double fa = up ? value_here - level : level - value_here;
      double fb = up ? value - level : level - value;
      // A start on this very level has f ~ 0 at s = 0, so points next to it
      // pass the residual test without being roots. Bisect until the left end
      // is clearly inside.
      bool left_on_level = fa > -(up ? slack_hi : slack_lo);
      fa = std::min(fa, 0.0);
      if (!left_on_level && std::abs(fb) <= opt.tol * h) return Crossing{b, boundary};
      double previous_width = b - a;
      int slow_steps = 0;
      for (int it = 0; it < opt.max_iterations; ++it) {
        double trial;
        if (left_on_level || slow_steps >= 2 || fb == fa) {
          trial = 0.5 * (a + b);
          slow_steps = 0;
        } else {
          trial = b - fb * (b - a) / (fb - fa);
          if (!(trial > a && trial < b)) trial = 0.5 * (a + b);
        }
        if (!(trial > a && trial < b)) {
          // Bracket exhausted at double precision.
          return Crossing{b, boundary};
        }
        const double ft = residual(trial);
        if (!left_on_level && std::abs(ft) <= opt.tol * h) return Crossing{trial, boundary};
        if (ft > 0.0) {
          b = trial;
          fb = ft;
        } else {
          a = trial;
          fa = ft;
          if (ft <= -(up ? slack_hi : slack_lo)) left_on_level = false;
        }
        const double width = b - a;
        slow_steps = (width > 0.5 * previous_width) ? slow_steps + 1 : 0;
        previous_width = width;
      }
      throw RootNotConvergedError("smallest_root: no convergence; " + detail::describe_ray(q, v, a, b));
    }
    s = s_next;
    value_here = value;
    slope = slope_next;
  }
  return std::nullopt;
}

enum class SegmentEvent { kUphillDiffraction, kDownhillDiffraction, kReflection, kTimeExhausted };

inline std::string_view to_string(SegmentEvent event) {
  switch (event) {
    case SegmentEvent::kUphillDiffraction: return "uphill_diffraction";
    case SegmentEvent::kDownhillDiffraction: return "downhill_diffraction";
    case SegmentEvent::kReflection: return "reflection";
    case SegmentEvent::kTimeExhausted: return "time_exhausted";
  }
  return "unknown";
}

struct VelocityUpdate {
  Vector v;
  SegmentEvent event;
};

/// Velocity jump across a level surface with normal n = grad V.
///
/// An uphill crossing (v.n >= 0) that lacks the normal kinetic energy to climb
/// h reflects specularly in the M^{-1} metric; otherwise the velocity is
/// diffracted along M^{-1} n so that 1/2 v^T M v drops (uphill) or rises
/// (downhill) by exactly h.
inline VelocityUpdate update_velocity(const Vector& v, const Vector& n, double h, const MassMatrix& mass) {
  detail::require_same_dim(v.size(), n.size(), "update_velocity");
  if (!(h > 0.0)) throw UsageError("update_velocity: h must be > 0");
  const Vector minv_n = mass.apply_inverse(n);
  const double a = n.dot(minv_n);
  if (!(a > std::numeric_limits<double>::min()) || !std::isfinite(a))
    throw TransversalityError("update_velocity: vanishing normal n = " + detail::format_vector(n));
  const double b = v.dot(n);
  const double jump = b >= 0.0 ? h : -h;
  const double discriminant = b * b - 2.0 * jump * a;
  if (discriminant <= 0.0) return {v - (2.0 * b / a) * minv_n, SegmentEvent::kReflection};
  const double lambda = (-b + std::copysign(std::sqrt(discriminant), jump)) / a;
  return {v + lambda * minv_n,
          jump > 0.0 ? SegmentEvent::kUphillDiffraction : SegmentEvent::kDownhillDiffraction};
}

/// One rectilinear piece of an energy-stepping trajectory.
struct SegmentRecord {
  double t_start;
  double t_end;
  Vector q_start;
  Vector v;
  SegmentEvent event;
  double level;  // V_h on the segment
};

/// Phase point plus the index k of the terrace [k h, (k+1) h) it occupies.
///
/// After a crossing the position lies on a level surface, where floor(V / h)
/// is ill-defined in floating point, so the terrace is carried explicitly.
struct TerracedState {
  PhasePoint point;
  std::int64_t level = 0;
};

/// Terrace index for a point with potential V moving with dV/dt = slope. A
/// point on (or within rounding of) a level surface belongs to the terrace
/// it is entering.
inline std::int64_t classify_terrace(double potential, double slope, double h) {
  const double slack = detail::level_slack(h, potential);
  double shifted = potential;
  if (slope > 0.0) shifted += slack;
  else if (slope < 0.0) shifted -= slack;
  return static_cast<std::int64_t>(std::floor(shifted / h));
}

template <TargetDensity Target>
TerracedState make_terraced_state(const PhasePoint& pp, const Target& target, double h) {
  detail::require_same_dim(pp.q.size(), pp.v.size(), "energy-stepping state");
  detail::require_same_dim(pp.q.size(), static_cast<Index>(target.dim()), "energy-stepping state");
  const double potential = checked_potential(target, pp.q);
  const double slope = target.gradient(pp.q).dot(pp.v);
  return {pp, classify_terrace(potential, slope, h)};
}

/// 1/2 v^T M v + V_h for a state with explicitly tracked terrace.
inline double terraced_hamiltonian(const TerracedState& state, double h, const MassMatrix& mass) {
  return static_cast<double>(state.level) * h + kinetic_energy(state.point.v, mass);
}

/// Advances `state` by one segment: free flight to the next terrace crossing
/// (followed by the velocity jump) or to t_final, whichever comes first.
template <TargetDensity Target>
SegmentRecord advance_segment(TerracedState& state, const Target& target, const MassMatrix& mass, double h,
                              double t_final, const RootOptions& opt = {}) {
  PhasePoint& pp = state.point;
  if (!(pp.t < t_final)) throw UsageError("advance_segment: t must be < t_final");
  const double lower = static_cast<double>(state.level) * h;
  const Levels levels{lower, static_cast<double>(state.level + 1) * h};
  SegmentRecord record{pp.t, t_final, pp.q, pp.v, SegmentEvent::kTimeExhausted, lower};

  const double s_max = t_final - pp.t;
  const auto crossing = smallest_root(target, pp.q, pp.v, s_max, levels, opt);
  if (!crossing) {
    pp.q += s_max * pp.v;
    pp.t = t_final;
    return record;
  }

  pp.q += crossing->s * pp.v;
  pp.t += crossing->s;
  const Vector normal = target.gradient(pp.q);
  const double slope = pp.v.dot(normal);
  const bool consistent = crossing->boundary == Boundary::kUpper ? slope > 0.0 : slope < 0.0;
  if (!consistent) {
    std::ostringstream os;
    os.precision(17);
    os << "energy step: non-transversal crossing of the "
       << (crossing->boundary == Boundary::kUpper ? "upper" : "lower") << " level of terrace [" << levels.lower
       << ", " << levels.upper << ") at s = " << crossing->s << " (s_max = " << s_max << ", v.n = " << slope
       << "); " << detail::describe_ray(record.q_start, record.v, 0.0, crossing->s);
    throw TransversalityError(os.str());
  }
  auto update = update_velocity(pp.v, normal, h, mass);
  pp.v = std::move(update.v);
  if (update.event == SegmentEvent::kUphillDiffraction) ++state.level;
  else if (update.event == SegmentEvent::kDownhillDiffraction) --state.level;
  record.t_end = pp.t;
  record.event = update.event;
  return record;
}

/// Single energy step Phi_h from pp toward t_final.
template <TargetDensity Target>
PhasePoint energy_step(const PhasePoint& pp, const Target& target, const MassMatrix& mass, const Terrace& terrace,
                       double t_final, const RootOptions& opt = {}) {
  auto state = make_terraced_state(pp, target, terrace.h());
  advance_segment(state, target, mass, terrace.h(), t_final, opt);
  return state.point;
}

struct TrajectoryOptions {
  std::int64_t max_segments = 10'000'000;
  bool record_events = false;
  RootOptions root{};
};

struct TrajectoryResult {
  PhasePoint end;
  std::int64_t segments = 0;
  std::int64_t start_level = 0;
  std::int64_t end_level = 0;
  double start_energy = 0.0;  // terraced Hamiltonian H_h
  double end_energy = 0.0;
  std::vector<SegmentRecord> events;

  /// |H_h(end) - H_h(start)| / (1 + |H_h(start)|)
  double relative_energy_drift() const {
    return std::abs(end_energy - start_energy) / (1.0 + std::abs(start_energy));
  }
};

/// Exact flow Psi_T of the terraced Hamiltonian for duration `duration`.
template <TargetDensity Target>
TrajectoryResult energy_trajectory(const PhasePoint& pp0, const Target& target, const MassMatrix& mass,
                                   const Terrace& terrace, double duration, const TrajectoryOptions& opt = {}) {
  if (!(duration > 0.0) || !std::isfinite(duration)) throw UsageError("energy_trajectory: T must be > 0");
  const double h = terrace.h();
  auto state = make_terraced_state(pp0, target, h);
  const double t_final = pp0.t + duration;

  TrajectoryResult result;
  result.start_level = state.level;
  result.start_energy = terraced_hamiltonian(state, h, mass);
  while (state.point.t < t_final) {
    if (result.segments >= opt.max_segments) {
      std::ostringstream os;
      os << "energy_trajectory: exceeded " << opt.max_segments << " segments at t = " << state.point.t;
      throw RunawayTrajectoryError(os.str());
    }
    auto record = advance_segment(state, target, mass, h, t_final, opt.root);
    ++result.segments;
    if (opt.record_events) result.events.push_back(std::move(record));
  }
  state.point.t = t_final;
  result.end = std::move(state.point);
  result.end_level = state.level;
  result.end_energy = terraced_hamiltonian(TerracedState{result.end, result.end_level}, h, mass);
  return result;
}

/// Velocity Verlet in momentum form (p = M v): half kick, drift, half kick.
template <TargetDensity Target>
PhasePoint leapfrog_trajectory(const PhasePoint& pp0, const Target& target, const MassMatrix& mass, double dt,
                               std::int64_t n_steps) {
  if (!(dt > 0.0)) throw UsageError("leapfrog_trajectory: dt must be > 0");
  if (n_steps < 1) throw UsageError("leapfrog_trajectory: n_steps must be >= 1");
  detail::require_same_dim(pp0.q.size(), pp0.v.size(), "leapfrog_trajectory");
  Vector q = pp0.q;
  Vector p = mass.apply(pp0.v);
  Vector grad = target.gradient(q);
  for (std::int64_t i = 0; i < n_steps; ++i) {
    p -= 0.5 * dt * grad;
    q += dt * mass.apply_inverse(p);
    grad = target.gradient(q);
    p -= 0.5 * dt * grad;
    if (!q.allFinite() || !p.allFinite()) throw IntegratorError("leapfrog_trajectory: non-finite state");
  }
  return {q, mass.apply_inverse(p), pp0.t + dt * static_cast<double>(n_steps)};
}

}  // namespace esmc

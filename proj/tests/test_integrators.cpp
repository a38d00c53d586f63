#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "esmc/integrators.hpp"
#include "esmc/targets.hpp"
#include "test_support.hpp"

namespace esmc {
namespace {

using testing::Constant;
using testing::PairWell;
using testing::Quadratic;
using testing::Ramp;

Vector vec(std::initializer_list<double> xs) {
  Vector v(static_cast<Index>(xs.size()));
  Index i = 0;
  for (double x : xs) v[i++] = x;
  return v;
}

double cross(const Vector& a, const Vector& b) { return a[0] * b[1] - a[1] * b[0]; }

TEST(TerracedPotential, FloorOfPositive) { EXPECT_DOUBLE_EQ(terraced_potential(1.7, 0.5), 1.5); }
TEST(TerracedPotential, FloorOfNegative) { EXPECT_DOUBLE_EQ(terraced_potential(-0.3, 0.5), -0.5); }
TEST(TerracedPotential, LevelMapsToItself) { EXPECT_DOUBLE_EQ(terraced_potential(2.0, 0.5), 2.0); }

TEST(TerracedPotential, BracketsThePotential) {
  Rng rng(3, 0);
  for (int i = 0; i < 1000; ++i) {
    const double v = 50.0 * rng.normal();
    const double h = 0.01 + rng.uniform();
    const double vh = terraced_potential(v, h);
    EXPECT_LE(vh, v);
    EXPECT_LT(v, vh + h);
  }
}

TEST(Terrace, RejectsNonPositiveHeight) {
  EXPECT_THROW(Terrace(0.0), UsageError);
  EXPECT_THROW(Terrace(-1.0), UsageError);
  EXPECT_THROW(Terrace(std::nan("")), UsageError);
}

TEST(SmallestRoot, HarmonicUpperCrossingClosedForm) {
  // 1/2 (1 + s)^2 = 1  =>  s = sqrt(2) - 1.
  const double expected = std::sqrt(2.0) - 1.0;
  const auto root = smallest_root(Quadratic{}, vec({1.0}), vec({1.0}), 10.0, Levels{0.5, 1.0});
  ASSERT_TRUE(root);
  EXPECT_EQ(root->boundary, Boundary::kUpper);
  EXPECT_NEAR(root->s, expected, 1e-11);
  EXPECT_NEAR(0.5 * (1.0 + root->s) * (1.0 + root->s), 1.0, 1e-12 * 0.5);
}

TEST(SmallestRoot, NoCrossingBeforeSMax) {
  EXPECT_FALSE(smallest_root(Quadratic{}, vec({1.0}), vec({1.0}), 0.1, Levels{0.5, 1.0}));
}

TEST(SmallestRoot, ConstantPotentialNeverCrosses) {
  EXPECT_FALSE(smallest_root(Constant{2, 0.3}, vec({0.0, 0.0}), vec({1.0, -2.0}), 1e6, Levels{0.0, 1.0}));
}

TEST(SmallestRoot, LowerCrossingClosedForm) {
  // 1/2 (2 - s)^2 = 1  =>  s = 2 - sqrt(2).
  const auto root = smallest_root(Quadratic{}, vec({2.0}), vec({-1.0}), 10.0, Levels{1.0, 3.0});
  ASSERT_TRUE(root);
  EXPECT_EQ(root->boundary, Boundary::kLower);
  EXPECT_NEAR(root->s, 2.0 - std::sqrt(2.0), 1e-11);
}

TEST(SmallestRoot, FindsTheFirstOfSeveralCrossings) {
  // The ray passes through the well: V = 1/2 (s - 2)^2 reaches 1/2 at s = 1,
  // leaves the terrace [1/2, 5) downward there, and would cross 1/2 again at s = 3.
  const auto root = smallest_root(Quadratic{}, vec({-2.0}), vec({1.0}), 10.0, Levels{0.5, 5.0});
  ASSERT_TRUE(root);
  EXPECT_EQ(root->boundary, Boundary::kLower);
  EXPECT_NEAR(root->s, 1.0, 1e-11);
}

TEST(SmallestRoot, StartOnLevelMovingInwardFindsTheFarExit) {
  // Start exactly on V = 1/2 moving downhill, so inside [0, 1/2); the ray
  // exits through the same level on the far side of the well at s = 2.
  const auto root = smallest_root(Quadratic{}, vec({1.0}), vec({-1.0}), 10.0, Levels{0.0, 0.5});
  ASSERT_TRUE(root);
  EXPECT_EQ(root->boundary, Boundary::kUpper);
  EXPECT_NEAR(root->s, 2.0, 1e-11);
}

TEST(SmallestRoot, StartJustBelowUpperLevelDoesNotReportASpuriousRoot) {
  // Captured from an 8-dimensional Gaussian run: V(q) sits within 3.4e-13 of
  // the upper level while moving downhill. The ray turns around and exits
  // through the upper level much later; a crossing at s ~ 1e-13 is wrong.
  const targets::DiagGaussian target(8);
  const Vector q = vec({0.013708352461838991, -0.55090491639601746, 0.10745266686876526, -0.035041609924558861,
                        0.070323516167695596, -0.11687708594003229, -0.056028883208433217, -0.10617397249665975});
  const Vector v = vec({0.50168173896166413, -0.52047226512560896, 0.29488185630024005, -0.20599537983580099,
                        0.65324039902745445, 0.0064184803411251323, 0.59287587151493781, 0.51707092934398668});
  const double h = std::sqrt(8.0) / 2.0;
  const auto root = smallest_root(target, q, v, 4.4620490658510557, Levels{0.0, h});
  ASSERT_TRUE(root);
  EXPECT_EQ(root->boundary, Boundary::kUpper);
  EXPECT_GT(root->s, 1e-3);
  EXPECT_GT(target.gradient(q + root->s * v).dot(v), 0.0);
  EXPECT_NEAR(target.potential(q + root->s * v), h, 1e-12 * h);
}

TEST(SmallestRoot, ShallowDipBelowTheLowerLevelInsideOneStride) {
  // V(s) = 1/2 (1/2)^2 + 1/2 (s - 1.2)^2 dips 1e-3 below the lower level
  // around s = 1.2, a much narrower window than the marching stride there.
  const double base = 0.125;
  const auto root =
      smallest_root(Quadratic{2}, vec({0.5, -1.2}), vec({0.0, 1.0}), 10.0, Levels{base + 1e-3, base + 1.001});
  ASSERT_TRUE(root);
  EXPECT_EQ(root->boundary, Boundary::kLower);
  EXPECT_NEAR(root->s, 1.2 - std::sqrt(2e-3), 1e-10);
}

TEST(SmallestRoot, ShallowBumpAboveTheUpperLevelInsideOneStride) {
  // V(s) = 1 - 1/2 (s - 1.2)^2 along the ray pokes 1e-3 above the upper level.
  const auto root = smallest_root(Quadratic{1, -1.0}, vec({-1.2}), vec({1.0}), 10.0, Levels{-1.001, -1e-3});
  ASSERT_TRUE(root);
  EXPECT_EQ(root->boundary, Boundary::kUpper);
  EXPECT_NEAR(root->s, 1.2 - std::sqrt(2e-3), 1e-10);
}

// Property: reversing the end velocity retraces the trajectory, including
// through near-tangent visits to a level. Round-off grows with the number of
// segments, so trajectories are kept to tens of crossings.
TEST(EnergyTrajectoryProperty, TimeReversibleFromRandomStates) {
  const targets::DiagGaussian target(4);
  const auto mass = MassMatrix::identity(4);
  Rng rng(5, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const PhasePoint pp{rng.normal_vector(4), rng.normal_vector(4), 0.0};
    const auto fwd = energy_trajectory(pp, target, mass, Terrace(0.25), 1.0);
    const auto back = energy_trajectory(PhasePoint{fwd.end.q, -fwd.end.v, 0.0}, target, mass, Terrace(0.25), 1.0);
    ASSERT_LE((back.end.q - pp.q).norm() / pp.q.norm(), 1e-8) << "trial " << trial;
    ASSERT_LE((back.end.v + pp.v).norm() / pp.v.norm(), 1e-8) << "trial " << trial;
  }
}

TEST(SmallestRoot, RejectsBadArguments) {
  EXPECT_THROW(smallest_root(Quadratic{}, vec({1.0}), vec({1.0}), 0.0, Levels{0.5, 1.0}), UsageError);
  EXPECT_THROW(smallest_root(Quadratic{}, vec({1.0}), vec({1.0}), 1.0, Levels{1.0, 1.0}), UsageError);
}

TEST(UpdateVelocity, BarrierTooHighReflects) {
  const auto u = update_velocity(vec({1.0, 0.1}), vec({0.0, 1.0}), 10.0, MassMatrix::identity(2));
  EXPECT_EQ(u.event, SegmentEvent::kReflection);
  EXPECT_NEAR(u.v[0], 1.0, 1e-12);
  EXPECT_NEAR(u.v[1], -0.1, 1e-12);
}

TEST(UpdateVelocity, UphillDiffraction) {
  // 1/2 v'^2 = 1/2 2^2 - 1.5  =>  v' = 1.
  const auto u = update_velocity(vec({0.0, 2.0}), vec({0.0, 1.0}), 1.5, MassMatrix::identity(2));
  EXPECT_EQ(u.event, SegmentEvent::kUphillDiffraction);
  EXPECT_NEAR(u.v[0], 0.0, 1e-12);
  EXPECT_NEAR(u.v[1], 1.0, 1e-12);
  EXPECT_NEAR(kinetic_energy(u.v, MassMatrix::identity(2)), 2.0 - 1.5, 1e-12);
}

TEST(UpdateVelocity, DownhillDiffraction) {
  // 1/2 v'^2 = 1/2 + 1.5  =>  v' = -2.
  const auto u = update_velocity(vec({0.0, -1.0}), vec({0.0, 1.0}), 1.5, MassMatrix::identity(2));
  EXPECT_EQ(u.event, SegmentEvent::kDownhillDiffraction);
  EXPECT_NEAR(u.v[0], 0.0, 1e-12);
  EXPECT_NEAR(u.v[1], -2.0, 1e-12);
  EXPECT_NEAR(kinetic_energy(u.v, MassMatrix::identity(2)), 0.5 + 1.5, 1e-12);
}

TEST(UpdateVelocity, ObliqueDiffractionKeepsTangentialPart) {
  // n = (1, 1)/sqrt 2 direction, unnormalized. Tangential velocity is kept.
  const Vector n = vec({2.0, 2.0});
  const Vector v = vec({3.0, 1.0});
  const auto u = update_velocity(v, n, 0.5, MassMatrix::identity(2));
  EXPECT_EQ(u.event, SegmentEvent::kUphillDiffraction);
  const Vector t = vec({1.0, -1.0});
  EXPECT_NEAR(u.v.dot(t), v.dot(t), 1e-12);
  EXPECT_NEAR(0.5 * u.v.squaredNorm(), 0.5 * v.squaredNorm() - 0.5, 1e-12);
}

TEST(UpdateVelocity, MassWeightedReflectionPreservesKineticEnergy) {
  const auto mass = MassMatrix::diagonal(vec({2.0, 0.5}));
  const Vector v = vec({0.3, 0.2});
  const auto u = update_velocity(v, vec({1.0, 3.0}), 5.0, mass);
  EXPECT_EQ(u.event, SegmentEvent::kReflection);
  EXPECT_NEAR(kinetic_energy(u.v, mass), kinetic_energy(v, mass), 1e-15);
}

TEST(UpdateVelocity, VanishingNormalIsIntegratorError) {
  EXPECT_THROW(update_velocity(vec({1.0, 0.0}), vec({0.0, 0.0}), 1.0, MassMatrix::identity(2)), TransversalityError);
}

TEST(EnergyStep, FreeFlightInFlatRegion) {
  const PhasePoint pp{vec({1.0, 2.0}), vec({0.5, -0.25}), 1.0};
  const auto end = energy_step(pp, Constant{2, 0.7}, MassMatrix::identity(2), Terrace(0.5), 5.0);
  EXPECT_NEAR(end.q[0], 1.0 + 4.0 * 0.5, 1e-15);
  EXPECT_NEAR(end.q[1], 2.0 - 4.0 * 0.25, 1e-15);
  EXPECT_EQ(end.v, pp.v);
  EXPECT_EQ(end.t, 5.0);
}

TEST(EnergyStep, UphillDiffractionOnARamp) {
  // V = q_1, terrace [0, 1.5): the level 1.5 is reached at s = (1.5 - 0.25) / 2.
  const PhasePoint pp{vec({0.0, 0.25}), vec({0.0, 2.0}), 0.0};
  const auto end = energy_step(pp, Ramp{}, MassMatrix::identity(2), Terrace(1.5), 10.0);
  EXPECT_NEAR(end.t, 0.625, 1e-12);
  EXPECT_NEAR(end.q[1], 1.5, 1e-12);
  EXPECT_NEAR(end.v[1], 1.0, 1e-12);
  EXPECT_NEAR(end.v[0], 0.0, 1e-15);
}

TEST(EnergyStep, ReflectionPreservesSpeed) {
  const PhasePoint pp{vec({0.0, 9.9}), vec({1.0, 0.1}), 0.0};
  const auto end = energy_step(pp, Ramp{}, MassMatrix::identity(2), Terrace(10.0), 10.0);
  EXPECT_NEAR(end.t, 1.0, 1e-10);
  EXPECT_NEAR(end.v[1], -0.1, 1e-12);
  EXPECT_NEAR(end.v.norm(), pp.v.norm(), 1e-14 * pp.v.norm());
}

TEST(EnergyStep, ClipsToFinalTime) {
  const PhasePoint pp{vec({0.0, 0.25}), vec({0.0, 2.0}), 0.0};
  const auto end = energy_step(pp, Ramp{}, MassMatrix::identity(2), Terrace(1.5), 0.5);
  EXPECT_EQ(end.t, 0.5);
  EXPECT_NEAR(end.q[1], 1.25, 1e-15);
  EXPECT_EQ(end.v, pp.v);
}

TEST(EnergyTrajectory, AtRestAtTheMinimum) {
  const PhasePoint pp{vec({0.0, 0.0}), vec({0.0, 0.0}), 0.0};
  const auto r = energy_trajectory(pp, Quadratic{2, 1.0}, MassMatrix::identity(2), Terrace(0.3), 4.0);
  EXPECT_EQ(r.segments, 1);
  EXPECT_EQ(r.end.q, pp.q);
  EXPECT_EQ(r.end.v, pp.v);
  EXPECT_EQ(r.end.t, 4.0);
}

TEST(EnergyTrajectory, EndsExactlyAtT) {
  const PhasePoint pp{vec({0.3}), vec({1.1}), 0.7};
  const auto r = energy_trajectory(pp, Quadratic{}, MassMatrix::identity(1), Terrace(0.05), 3.3);
  EXPECT_EQ(r.end.t, 0.7 + 3.3);
  EXPECT_GE(r.segments, 1);
}

TEST(EnergyTrajectory, KeplerOrbitConservesAngularMomentum) {
  const targets::Kepler kepler;
  const Vector q = vec({1.0, 0.0}), v = vec({0.0, 1.2});
  const double energy = 0.5 * 1.44 - 1.0;
  const double period = 2.0 * std::numbers::pi * std::pow(-1.0 / (2.0 * energy), 1.5);
  const auto r = energy_trajectory(PhasePoint{q, v, 0.0}, kepler, MassMatrix::identity(2), Terrace(0.05), period);
  const double l0 = cross(q, v);
  EXPECT_LE(std::abs(cross(r.end.q, r.end.v) - l0) / std::abs(l0), 1e-9);
  EXPECT_LE(r.relative_energy_drift(), 1e-9);
}

TEST(EnergyTrajectory, TimeReversible) {
  const targets::GaussMixture2D target;
  const auto mass = MassMatrix::identity(2);
  const PhasePoint pp{vec({0.5, 0.8}), vec({1.3, -0.7}), 0.0};
  const auto forward = energy_trajectory(pp, target, mass, Terrace(0.25), 3.0);
  ASSERT_GT(forward.segments, 3);
  const auto back = energy_trajectory(PhasePoint{forward.end.q, -forward.end.v, 0.0}, target, mass, Terrace(0.25), 3.0);
  EXPECT_LE((back.end.q - pp.q).norm() / pp.q.norm(), 1e-8);
  EXPECT_LE((back.end.v + pp.v).norm() / pp.v.norm(), 1e-8);
}

TEST(EnergyTrajectory, RunawayCapIsEnforced) {
  TrajectoryOptions opt;
  opt.max_segments = 3;
  const PhasePoint pp{vec({1.0}), vec({1.0}), 0.0};
  EXPECT_THROW(energy_trajectory(pp, Quadratic{1, 100.0}, MassMatrix::identity(1), Terrace(0.01), 10.0, opt),
               RunawayTrajectoryError);
}

TEST(EnergyTrajectory, RejectsNonPositiveDuration) {
  const PhasePoint pp{vec({1.0}), vec({0.0}), 0.0};
  EXPECT_THROW(energy_trajectory(pp, Quadratic{}, MassMatrix::identity(1), Terrace(0.1), 0.0), UsageError);
}

TEST(Leapfrog, OneHarmonicStepByHand) {
  // p_half = 0 - 0.05 * 1; q = 1 + 0.1 * p_half; p = p_half - 0.05 * q.
  const double p_half = -0.05;
  const double q1 = 1.0 + 0.1 * p_half;
  const double p1 = p_half - 0.05 * q1;
  const auto end = leapfrog_trajectory(PhasePoint{vec({1.0}), vec({0.0}), 0.0}, Quadratic{}, MassMatrix::identity(1),
                                       0.1, 1);
  EXPECT_NEAR(end.q[0], q1, 1e-15);
  EXPECT_NEAR(end.v[0], p1, 1e-15);
  EXPECT_NEAR(end.q[0], 0.995, 1e-15);
  EXPECT_NEAR(end.v[0], -0.09975, 1e-15);
}

TEST(Leapfrog, ZeroForceDrifts) {
  const auto mass = MassMatrix::diagonal(vec({2.0, 4.0}));
  const Vector p = vec({1.0, -2.0});
  const auto end = leapfrog_trajectory(PhasePoint{vec({0.0, 1.0}), mass.apply_inverse(p), 0.0}, Constant{2, 0.0}, mass,
                                       0.25, 8);
  EXPECT_NEAR(end.q[0], 0.0 + 8 * 0.25 * 0.5, 1e-14);
  EXPECT_NEAR(end.q[1], 1.0 + 8 * 0.25 * -0.5, 1e-14);
  EXPECT_DOUBLE_EQ(end.t, 2.0);
}

TEST(Leapfrog, HarmonicEnergyErrorStaysBounded) {
  const Quadratic target;
  const auto mass = MassMatrix::identity(1);
  PhasePoint pp{vec({1.0}), vec({0.0}), 0.0};
  const double h0 = hamiltonian(pp, target, mass);
  double worst = 0.0;
  for (int block = 0; block < 100; ++block) {
    pp = leapfrog_trajectory(pp, target, mass, 0.1, 100);
    worst = std::max(worst, std::abs(hamiltonian(pp, target, mass) - h0));
  }
  EXPECT_LT(worst, 0.01 * h0);
}

TEST(Leapfrog, BlowUpIsIntegratorError) {
  const PhasePoint pp{vec({1.0}), vec({0.0}), 0.0};
  EXPECT_THROW(leapfrog_trajectory(pp, Quadratic{1, 1e4}, MassMatrix::identity(1), 10.0, 400), IntegratorError);
}

// Property: the terraced Hamiltonian is conserved over random trajectories.
TEST(EnergyTrajectoryProperty, TerracedEnergyConserved) {
  const targets::GaussMixture2D mixture;
  const targets::DiagGaussian gauss(6);
  const targets::Flower2D flower(1.0 / 3.0, 15);
  const targets::Bimodal1D bimodal;
  Rng rng(17, 0);
  double worst = 0.0;
  auto run = [&](const auto& target, double scale) {
    const Index n = target.dim();
    const auto mass = MassMatrix::identity(n);
    const PhasePoint pp{scale * rng.normal_vector(n), rng.normal_vector(n), 0.0};
    const double h = 0.05 + rng.uniform();
    const auto r = energy_trajectory(pp, target, mass, Terrace(h), 1.0 + 4.0 * rng.uniform());
    worst = std::max(worst, r.relative_energy_drift());
    EXPECT_NEAR(r.end_energy, static_cast<double>(r.end_level) * h + kinetic_energy(r.end.v, mass),
                1e-12 * (1.0 + std::abs(r.end_energy)));
  };
  for (int i = 0; i < 40; ++i) {
    run(mixture, 2.0);
    run(gauss, 0.5);
    run(flower, 1.0);
    run(bimodal, 3.0);
  }
  EXPECT_LE(worst, 1e-9);
}

// Property: each reflection keeps 1/2 v^T M v and each diffraction moves it by -/+ h.
TEST(EnergyTrajectoryProperty, PerEventKineticEnergyJumps) {
  const targets::GaussMixture2D target;
  const auto mass = MassMatrix::diagonal(vec({1.5, 0.7}));
  Rng rng(23, 0);
  int reflections = 0, diffractions = 0;
  for (int trial = 0; trial < 20; ++trial) {
    TrajectoryOptions opt;
    opt.record_events = true;
    const double h = 0.1 + 0.5 * rng.uniform();
    const PhasePoint pp{2.0 * rng.normal_vector(2), rng.normal_vector(2), 0.0};
    const auto r = energy_trajectory(pp, target, mass, Terrace(h), 5.0, opt);
    for (std::size_t i = 0; i + 1 < r.events.size(); ++i) {
      const auto& e = r.events[i];
      const double before = kinetic_energy(e.v, mass);
      const double after = kinetic_energy(r.events[i + 1].v, mass);
      const double scale = std::max(1.0, before);
      switch (e.event) {
        case SegmentEvent::kReflection:
          EXPECT_NEAR(after, before, 1e-12 * scale);
          ++reflections;
          break;
        case SegmentEvent::kUphillDiffraction:
          EXPECT_NEAR(after, before - h, 1e-12 * scale);
          ++diffractions;
          break;
        case SegmentEvent::kDownhillDiffraction:
          EXPECT_NEAR(after, before + h, 1e-12 * scale);
          ++diffractions;
          break;
        case SegmentEvent::kTimeExhausted:
          ADD_FAILURE() << "time-exhausted segment before the last one";
      }
    }
    ASSERT_FALSE(r.events.empty());
    EXPECT_EQ(r.events.back().event, SegmentEvent::kTimeExhausted);
  }
  EXPECT_GT(reflections, 0);
  EXPECT_GT(diffractions, 0);
}

// Property: a pair potential V(q_0 - q_1) conserves total momentum sum M v.
TEST(EnergyTrajectoryProperty, LinearMomentumConserved) {
  const auto mass = MassMatrix::diagonal(vec({1.0, 2.0}));
  Rng rng(29, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const PhasePoint pp{rng.normal_vector(2), rng.normal_vector(2), 0.0};
    const auto r = energy_trajectory(pp, PairWell{}, mass, Terrace(0.05), 5.0);
    const double p0 = mass.apply(pp.v).sum();
    const double p1 = mass.apply(r.end.v).sum();
    EXPECT_LE(std::abs(p1 - p0), 1e-9 * std::max(1.0, std::abs(p0)));
  }
}

// Property: a central potential conserves angular momentum q x v.
TEST(EnergyTrajectoryProperty, AngularMomentumConserved) {
  const targets::Kepler kepler;
  const auto mass = MassMatrix::identity(2);
  Rng rng(31, 0);
  for (int trial = 0; trial < 20; ++trial) {
    const double radius = 0.8 + 0.6 * rng.uniform();
    const double angle = 2.0 * std::numbers::pi * rng.uniform();
    const Vector q = vec({radius * std::cos(angle), radius * std::sin(angle)});
    const Vector v = vec({-std::sin(angle), std::cos(angle)}) * (0.9 + 0.3 * rng.uniform()) / std::sqrt(radius);
    const auto r = energy_trajectory(PhasePoint{q, v, 0.0}, kepler, mass, Terrace(0.02), 4.0);
    EXPECT_LE(std::abs(cross(r.end.q, r.end.v) - cross(q, v)) / std::abs(cross(q, v)), 1e-9);
  }
}

// Property: the Kepler end state approaches a fine leapfrog reference as h shrinks.
TEST(EnergyTrajectoryProperty, KeplerErrorDecreasesWithH) {
  const targets::Kepler kepler;
  const auto mass = MassMatrix::identity(2);
  const Vector q = vec({1.0, 0.0}), v = vec({0.0, 1.2});
  const double duration = std::numbers::pi;
  const auto ref = leapfrog_trajectory(PhasePoint{q, v, 0.0}, kepler, mass, 1e-5, std::llround(duration / 1e-5));
  double previous = std::numeric_limits<double>::infinity();
  for (double h : {0.4, 0.2, 0.1, 0.05}) {
    const auto r = energy_trajectory(PhasePoint{q, v, 0.0}, kepler, mass, Terrace(h), duration);
    Vector err(4);
    err << r.end.q - ref.q, r.end.v - ref.v;
    EXPECT_LT(err.norm(), previous) << "h = " << h;
    previous = err.norm();
  }
}

}  // namespace
}  // namespace esmc

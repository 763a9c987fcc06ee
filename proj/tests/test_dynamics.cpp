#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "nvspin/dynamics.hpp"
#include "nvspin/errors.hpp"
#include "nvspin/units.hpp"

using namespace nvspin;
using namespace nvspin::literals;

namespace {

const NVParams kParams{2880.75_MHz, 3.95_MHz, 0, 0};
const EffectiveParams kEff{2880.75_MHz, 3.95_MHz, {}};

// Lab-frame DOP853 integrations from tests/oracles/oracles.py.
constexpr double kLabRabiPb125 = 0.500154426143;
constexpr double kLabRabiPb250 = 0.999999969890;
constexpr double kLabRfPb1250 = 0.506324174371;
constexpr double kOracleW = 0.20900651892832722;

DriveField mw(double rx, double ry, double f) { return {Eigen::Vector3d(rx, ry, 0), f, 0.0, DriveKind::Mw}; }
DriveField rf(double rz, double f, double phase = 0.0) { return {Eigen::Vector3d(0, 0, rz), f, phase, DriveKind::Rf}; }

}  // namespace

TEST_CASE("MW rotating-frame Hamiltonian") {
  const auto h = rotating_frame_mw(kEff, 2884.70_MHz, mw(2_MHz, 1_MHz, 2884.70_MHz));
  CHECK(h.is_hermitian());
  const auto z = SpinState::zero(), b = SpinState::bright(), d = SpinState::dark();
  CHECK(std::abs(h.element(b, b)) < 1e-6);
  CHECK(h.element(d, d).real() == doctest::Approx(-7.9e6));
  CHECK(std::abs(h.element(b, z) - Complex(1e6, 0)) < 1e-6);
  // y drive: <D|H|0> = -i r_y / 2
  CHECK(std::abs(h.element(d, z) - Complex(0, -0.5e6)) < 1e-6);
  CHECK(std::abs(h.element(d, b)) < 1e-9);
}

TEST_CASE("double-rotating-frame Hamiltonian") {
  const auto h = rotating_frame_rf(kEff, 2880.75_MHz, 7.9_MHz, rf(0.2_MHz, 7.9_MHz));
  CHECK(h.is_hermitian());
  const auto b = SpinState::bright(), d = SpinState::dark();
  CHECK(std::abs(h.element(b, b)) < 1e-6);
  CHECK(std::abs(h.element(d, d)) < 1e-6);
  CHECK(std::abs(h.element(d, b) - Complex(0.1e6, 0)) < 1e-6);

  const auto hp = rotating_frame_rf(kEff, 2880.75_MHz, 7.9_MHz, rf(0.2_MHz, 7.9_MHz, 0.5));
  CHECK(std::abs(std::abs(hp.element(d, b)) - 0.1e6) < 1e-6);
}

TEST_CASE("frame hamiltonians reject drives the frame cannot represent") {
  const DriveField drives[] = {rf(0.2_MHz, 7.9_MHz)};
  CHECK_THROWS_AS(frame_hamiltonian(kParams, drives, MwRotatingFrame{2884.70_MHz}), ConfigError);
  CHECK_NOTHROW(frame_hamiltonian(kParams, drives, DoubleRotatingFrame{2884.70_MHz, 7.9_MHz}));
  CHECK_NOTHROW(frame_hamiltonian(kParams, drives, LabFrame{}));
}

TEST_CASE("drive validation") {
  CHECK_THROWS_AS(mw(NAN, 0, 1_MHz).validate(), InvalidInput);
  CHECK_THROWS_AS(mw(1_MHz, 0, -1_MHz).validate(), InvalidInput);
  CHECK_THROWS_AS(DephasingModel{-1.0}.validate(), InvalidInput);
}

TEST_CASE("resonant MW Rabi in the rotating frame follows sin^2") {
  const double rabi = 2.381_MHz;
  const DriveField drives[] = {mw(rabi, 0, 2884.70_MHz)};
  PropagationOptions opts;
  opts.samples = 21;
  const auto r = propagate(SpinState::zero(), kParams, drives, MwRotatingFrame{2884.70_MHz}, 1_us, opts);
  REQUIRE(r.trajectory.size() == 21);
  for (const auto& s : r.trajectory) {
    const double expect = std::pow(std::sin(kTwoPi * 0.5 * rabi * s.time), 2);
    CHECK(s.state.population(SpinState::bright()) == doctest::Approx(expect).epsilon(0).scale(1).epsilon(1e-12));
  }
  // A constant generator needs one exact exponential.
  CHECK(propagate(SpinState::zero(), kParams, drives, MwRotatingFrame{2884.70_MHz}, 1_us).steps == 1);
}

TEST_CASE("lab-frame integration matches the ODE oracle") {
  const DriveField drives[] = {mw(2_MHz, 0, 2884.70_MHz)};
  // Midpoint error scales as dt^2: ~1.3e-4 at 100 steps per period.
  PropagationOptions opts;
  opts.step.steps_per_period = 1600;
  const auto r1 = propagate(SpinState::zero(), kParams, drives, LabFrame{}, 125_ns, opts);
  CHECK(std::abs(r1.final_state.population(SpinState::bright()) - kLabRabiPb125) < 1e-6);
  const auto r2 = propagate(SpinState::zero(), kParams, drives, LabFrame{}, 250_ns, opts);
  CHECK(std::abs(r2.final_state.population(SpinState::bright()) - kLabRabiPb250) < 1e-6);

  const DriveField rf_drive[] = {rf(0.2_MHz, 7.9_MHz)};
  const auto r3 = propagate(SpinState::bright(), kParams, rf_drive, LabFrame{}, 1.25_us, opts);
  CHECK(std::abs(r3.final_state.population(SpinState::bright()) - kLabRfPb1250) < 1e-6);
}

TEST_CASE("B-D block integration equals the closed form") {
  const double rz = 0.2_MHz;
  for (double detuning : {-0.3_MHz, 0.0, 0.1_MHz, 0.4_MHz}) {
    const double f_rf = 7.9_MHz - detuning;
    const DriveField drives[] = {rf(rz, f_rf)};
    const FrameSpec frame = DoubleRotatingFrame{2884.70_MHz, f_rf};
    PropagationOptions opts;
    opts.samples = 11;
    const auto r = propagate(SpinState::bright(), kParams, drives, frame, 10_us, opts);
    for (const auto& s : r.trajectory) {
      const double w = s.state.population(SpinState::dark()) - s.state.population(SpinState::bright());
      CHECK(std::abs(w - rabi_population_difference(s.time, rz, detuning)) < 1e-9);
    }
  }
}

TEST_CASE("closed-form population difference") {
  CHECK(rabi_population_difference(0.3_us, 1_MHz, 0.5_MHz) == doctest::Approx(kOracleW).epsilon(1e-14));
  CHECK(rabi_population_difference(0.0, 1_MHz, 0.0) == -1.0);
  CHECK(rabi_population_difference(0.5_us, 1_MHz, 0.0) == doctest::Approx(1.0));
  CHECK(rabi_population_difference(1.0, 0.0, 0.0) == -1.0);
  CHECK(rabi_population_difference(0.2_us, 1_MHz, 0.7_MHz) == rabi_population_difference(0.2_us, 1_MHz, -0.7_MHz));
  CHECK_THROWS_AS(rabi_population_difference(-1.0, 1_MHz, 0.0), InvalidInput);
}

TEST_CASE("step policy") {
  const DriveField drives[] = {mw(2_MHz, 0, 2884.70_MHz)};
  const auto lab = frame_hamiltonian(kParams, drives, LabFrame{});
  StepPolicy coarse;
  coarse.max_step = 1.0 / (10.0 * lab.max_frequency);
  CHECK_THROWS_AS(step_count(lab, 1_us, coarse), ConfigError);
  StepPolicy fine;
  fine.max_step = 1.0 / (60.0 * lab.max_frequency);
  CHECK(step_count(lab, 1_us, fine) >= static_cast<std::size_t>(60.0 * lab.max_frequency * 1e-6));
  StepPolicy too_few;
  too_few.steps = 3;
  CHECK_THROWS_AS(step_count(lab, 1_us, too_few), ConfigError);

  const auto rot = frame_hamiltonian(kParams, drives, MwRotatingFrame{2884.70_MHz});
  CHECK(rot.constant);
  CHECK(step_count(rot, 1_us, StepPolicy{}) == 1);
  CHECK_NOTHROW(step_count(rot, 1_us, coarse));
}

TEST_CASE("frame changes invert each other") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n;
  const FrameSpec frames[] = {LabFrame{}, MwRotatingFrame{2884.70_MHz}, DoubleRotatingFrame{2884.70_MHz, 7.9_MHz}};
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = SpinState::normalized(Vector3c(Complex(n(rng), n(rng)), Complex(n(rng), n(rng)), Complex(n(rng), n(rng))));
    const double t = std::abs(n(rng)) * 1e-6;
    for (const auto& a : frames) {
      for (const auto& b : frames) {
        const auto back = change_frame(change_frame(s, a, b, t), b, a, t);
        CHECK((back.amplitudes() - s.amplitudes()).norm() < 1e-12);
        const Populations pa = populations(s), pb = populations(change_frame(s, a, b, t));
        CHECK(pa.bright == doctest::Approx(pb.bright));
        CHECK(pa.dark == doctest::Approx(pb.dark));
      }
    }
  }
}

TEST_CASE("rotating-frame and lab-frame trajectories agree after frame change") {
  const DriveField drives[] = {mw(2_MHz, 0, 2884.70_MHz)};
  PropagationOptions opts;
  opts.step.steps_per_period = 200;
  const auto lab = propagate(SpinState::zero(), kParams, drives, LabFrame{}, 200_ns, opts);
  const auto rot = propagate(SpinState::zero(), kParams, drives, MwRotatingFrame{2884.70_MHz}, 200_ns);
  const auto rot_in_lab = change_frame(rot.final_state, MwRotatingFrame{2884.70_MHz}, LabFrame{}, 200_ns);
  CHECK(std::abs(lab.final_state.overlap(rot_in_lab)) == doctest::Approx(1.0).epsilon(3 * 2e6 / 2884.70e6));
}

TEST_CASE("propagators are unitary") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1e6);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix3c m;
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) m(i, j) = Complex(n(rng), n(rng));
    }
    const auto h = HermitianOperator3::from_matrix(0.5 * (m + m.adjoint()));
    const Matrix3c u = step_propagator(h, 1e-7);
    CHECK((u.adjoint() * u - Matrix3c::Identity()).norm() < 1e-13);
  }
}

TEST_CASE("unitarity drift over many steps") {
  const DriveField drives[] = {mw(2_MHz, 1_MHz, 2884.70_MHz)};
  PropagationOptions opts;
  opts.step.steps = 100000;
  const auto r = propagate(SpinState::zero(), kParams, drives, LabFrame{}, 0.5_us, opts);
  CHECK(r.steps == 100000);
  CHECK(std::abs(r.final_state.norm() - 1.0) < 1e-10);
}

TEST_CASE("density-matrix propagation") {
  CHECK_THROWS_AS(DensityMatrix::from_matrix(Matrix3c::Identity()), InvalidInput);
  const DriveField drives[] = {mw(2_MHz, 0, 2884.70_MHz)};
  const FrameSpec frame = MwRotatingFrame{2884.70_MHz};

  SUBCASE("without dephasing it matches the pure state") {
    const auto pure = propagate(SpinState::zero(), kParams, drives, frame, 333_ns);
    const auto mixed = propagate(DensityMatrix::from_state(SpinState::zero()), kParams, drives, frame, 333_ns, {});
    CHECK(mixed.final_state.population(SpinState::bright()) ==
          doctest::Approx(pure.final_state.population(SpinState::bright())).epsilon(1e-12));
  }
  SUBCASE("dephasing preserves trace and damps the oscillation towards 1/2") {
    const auto r = propagate(DensityMatrix::from_state(SpinState::zero()), kParams, drives, frame, 20_us,
                             DephasingModel{0.5_us});
    CHECK(r.final_state.trace() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.final_state.population(SpinState::bright()) == doctest::Approx(0.5).epsilon(1e-3));
    CHECK((r.final_state.matrix() - r.final_state.matrix().adjoint()).norm() < 1e-12);
  }
}

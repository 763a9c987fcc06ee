#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "nvspin/errors.hpp"
#include "nvspin/experiments.hpp"
#include "nvspin/units.hpp"

using namespace nvspin;
using namespace nvspin::literals;

namespace {

const NVParams kParams{2880.75_MHz, 3.95_MHz, 0, 0};
const EffectiveParams kEff = effective_params(kParams);

// Dressed lines for rz = 1 MHz, f_rf = 7.5 MHz from tests/oracles/oracles.py.
struct OracleLine {
  double center, weight;
  Level via;
};
const OracleLine kOracleLines[] = {
    {2876461483.5192866, 0.68569533817705186, Level::Dark},
    {2877538516.4807134, 0.31430466182294808, Level::Dark},
    {2883961483.5192866, 0.31430466182294808, Level::Bright},
    {2885038516.4807134, 0.68569533817705186, Level::Bright},
};

std::vector<double> grid(double from, double to, std::size_t n) {
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = from + (to - from) * static_cast<double>(i) / static_cast<double>(n - 1);
  return g;
}

std::vector<double> minima_positions(const SampledTrace& t) {
  const auto& y = t.column("signal");
  std::vector<double> out;
  for (std::size_t i = 1; i + 1 < y.size(); ++i) {
    if (y[i] < y[i - 1] && y[i] <= y[i + 1]) out.push_back(t.axis[i]);
  }
  return out;
}

DriveField rf(double rz, double f) { return {Eigen::Vector3d(0, 0, rz), f, 0.0, DriveKind::Rf}; }

}  // namespace

TEST_CASE("pl_readout is affine in P0") {
  const ReadoutModel m{2.0, 0.25};
  CHECK(pl_readout(SpinState::zero(), m) == 2.0);
  CHECK(pl_readout(SpinState::bright(), m) == doctest::Approx(1.5));
  CHECK(pl_readout(0.5, m) == doctest::Approx(1.75));
  CHECK(m.dark_level() == doctest::Approx(1.5));
  const auto rho = DensityMatrix::from_matrix(Matrix3c(Eigen::Vector3cd(0.25, 0.5, 0.25).asDiagonal()));
  CHECK(pl_readout(rho, m) == doctest::Approx(1.75));
  CHECK_THROWS_AS(ReadoutModel({0.0, 0.3}).validate(), InvalidInput);
  CHECK_THROWS_AS(ReadoutModel({1.0, 1.5}).validate(), InvalidInput);
}

TEST_CASE("CW-ODMR without RF") {
  OdmrConfig cfg;
  cfg.grid = grid(2.87_GHz, 2.89_GHz, 401);
  const auto s = simulate_cw_odmr(kParams, cfg, ReadoutModel{});
  s.validate();
  const auto mins = minima_positions(s);
  REQUIRE(mins.size() == 2);
  CHECK(mins[0] == doctest::Approx(2876.80e6).epsilon(1e-12));
  CHECK(mins[1] == doctest::Approx(2884.70e6).epsilon(1e-12));
  for (double v : s.column("signal")) {
    CHECK(v <= 1.0);
    CHECK(v >= 0.7 - 1e-15);
  }
  CHECK(s.metadata.at("d_prime_hz") == "2880750000");

  cfg.grid = {2.0, 1.0};
  CHECK_THROWS_AS(simulate_cw_odmr(kParams, cfg, ReadoutModel{}), InvalidInput);
  cfg.grid = {1.0, 2.0};
  cfg.linewidth = 0.0;
  CHECK_THROWS_AS(simulate_cw_odmr(kParams, cfg, ReadoutModel{}), InvalidInput);
}

TEST_CASE("dressed ODMR lines match the eigensolve oracle") {
  const auto lines = odmr_lines(kEff, rf(1_MHz, 7.5_MHz), Eigen::Vector3d(1, 1, 0));
  REQUIRE(lines.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(std::abs(lines[i].center - kOracleLines[i].center) < 1e-6);
    CHECK(lines[i].weight == doctest::Approx(kOracleLines[i].weight).epsilon(1e-9));
    CHECK(lines[i].via == kOracleLines[i].via);
  }
  CHECK_THROWS_AS(odmr_lines(kEff, std::nullopt, Eigen::Vector3d(0, 0, 1)), InvalidInput);
  const auto only_b = odmr_lines(kEff, std::nullopt, Eigen::Vector3d(1, 0, 0));
  REQUIRE(only_b.size() == 1);
  CHECK(only_b[0].via == Level::Bright);
}

TEST_CASE("resonant RF splits each dip by rabi_z") {
  for (double rz : {0.1_MHz, 0.2_MHz, 0.5_MHz, 1.0_MHz}) {
    const auto lines = odmr_lines(kEff, rf(rz, 2.0 * kEff.e_x_prime), Eigen::Vector3d(1, 1, 0));
    REQUIRE(lines.size() == 4);
    CHECK(lines[1].center - lines[0].center == doctest::Approx(rz).epsilon(1e-9));
    CHECK(lines[3].center - lines[2].center == doctest::Approx(rz).epsilon(1e-9));
    for (const auto& l : lines) CHECK(l.weight == doctest::Approx(0.5));
  }

  OdmrConfig cfg;
  cfg.grid = grid(2874_MHz, 2888_MHz, 7001);
  cfg.linewidth = 50_kHz;
  cfg.rf = rf(0.5_MHz, 7.9_MHz);
  const auto mins = minima_positions(simulate_cw_odmr(kParams, cfg, ReadoutModel{}));
  REQUIRE(mins.size() == 4);
  CHECK(std::abs((mins[1] - mins[0]) - 0.5e6) <= 2e3);
  CHECK(std::abs((mins[3] - mins[2]) - 0.5e6) <= 2e3);
}

TEST_CASE("far-detuned RF leaves the spectrum unchanged") {
  OdmrConfig off;
  off.grid = grid(2.87_GHz, 2.89_GHz, 2001);
  OdmrConfig on = off;
  on.rf = rf(0.01_MHz, 7.9_MHz + 100 * 0.01_MHz);
  const auto a = simulate_cw_odmr(kParams, off, ReadoutModel{}).column("signal");
  const auto b = simulate_cw_odmr(kParams, on, ReadoutModel{}).column("signal");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  CHECK(worst < 0.01 * 0.3);
}

TEST_CASE("MW Rabi") {
  const auto pi = calibrate_pi_pulse(kParams, Level::Bright, 2.381_MHz);
  CHECK(pi.drive.frequency == doctest::Approx(2884.70e6));
  CHECK(pi.duration == doctest::Approx(210e-9).epsilon(1e-3));

  std::vector<double> t;
  for (int i = 0; i <= 1000; ++i) t.push_back(i * 1e-9);
  const auto trace = simulate_mw_rabi(kParams, pi.drive, t, ReadoutModel{});
  trace.validate();
  CHECK(trace.column("signal")[0] == 1.0);
  const auto mins = minima_positions(trace);
  REQUIRE(!mins.empty());
  CHECK(std::abs(mins.front() - 210e-9) <= 1e-9);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double sum = trace.column("p_zero")[i] + trace.column("p_bright")[i] + trace.column("p_dark")[i];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(trace.column("p_dark")[i] < 1e-12);
  }

  SUBCASE("dark target uses the y drive") {
    const auto d = calibrate_pi_pulse(kParams, Level::Dark, 1_MHz);
    const double ts[] = {0.0, d.duration};
    const auto tr = simulate_mw_rabi(kParams, d.drive, ts, ReadoutModel{});
    CHECK(tr.column("p_dark")[1] == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("detuning equal to rabi halves the amplitude at sqrt2 rabi") {
    DriveField det = pi.drive;
    det.frequency += 2.381_MHz;
    const double t_half = 1.0 / (2.0 * std::sqrt(2.0) * 2.381_MHz);
    const double ts[] = {0.0, 0.5 * t_half, t_half};
    const auto tr = simulate_mw_rabi(kParams, det, ts, ReadoutModel{});
    CHECK(tr.column("p_bright")[2] == doctest::Approx(0.5).epsilon(1e-9));
    CHECK(tr.column("p_bright")[1] == doctest::Approx(0.25).epsilon(1e-9));
  }
  SUBCASE("invalid inputs") {
    const double bad[] = {1e-7, 0.5e-7};
    CHECK_THROWS_AS(simulate_mw_rabi(kParams, pi.drive, bad, ReadoutModel{}), InvalidInput);
    const double neg[] = {-1e-9};
    CHECK_THROWS_AS(simulate_mw_rabi(kParams, pi.drive, neg, ReadoutModel{}), InvalidInput);
    CHECK_THROWS_AS(calibrate_pi_pulse(kParams, Level::Zero, 1_MHz), InvalidInput);
  }
  SUBCASE("dephasing damps towards an equal mixture") {
    SimulationOptions opts;
    opts.dephasing.t2_star = 0.2_us;
    const double ts[] = {0.0, 5_us};
    const auto tr = simulate_mw_rabi(kParams, pi.drive, ts, ReadoutModel{}, opts);
    CHECK(tr.column("p_bright")[1] == doctest::Approx(0.5).epsilon(1e-3));
  }
}

TEST_CASE("B-D Rabi") {
  const auto pi = calibrate_pi_pulse(kParams, Level::Bright, 2.381_MHz);
  CHECK(pi_pulse_fidelity(kParams, pi) > kMinPiFidelity);
  const ReadoutModel readout;
  const double rz = 0.2_MHz;

  std::vector<double> taus;
  for (int i = 0; i <= 50; ++i) taus.push_back(i * 0.2e-6);
  const auto trace = simulate_bd_rabi(kParams, pi, rf(rz, 7.9_MHz), taus, readout);
  trace.validate();
  CHECK(trace.column("signal")[0] == doctest::Approx(readout.baseline).epsilon(1e-12));
  for (std::size_t i = 0; i < taus.size(); ++i) {
    CHECK(std::abs(trace.column("p_bright")[i] - trace.column("p_bright_analytic")[i]) < 1e-6);
    // The mapping pulse converts P_B into P_0.
    CHECK(trace.column("signal")[i] == doctest::Approx(pl_readout(trace.column("p_bright")[i], readout)).epsilon(1e-9));
  }
  const double t_flip[] = {1.0 / (2.0 * rz)};
  const auto flipped = simulate_bd_rabi(kParams, pi, rf(rz, 7.9_MHz), t_flip, readout);
  CHECK(flipped.column("p_bright")[0] < 1e-12);
  CHECK(flipped.column("signal")[0] == doctest::Approx(readout.dark_level()).epsilon(1e-9));

  SUBCASE("uncalibrated pulse names its fidelity") {
    PiPulse bad = pi;
    bad.duration *= 0.5;
    try {
      simulate_bd_rabi(kParams, bad, rf(rz, 7.9_MHz), taus, readout);
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("fidelity 0.5") != std::string::npos);
    }
  }
  SUBCASE("wrong drive kinds") {
    CHECK_THROWS_AS(simulate_bd_rabi(kParams, pi, pi.drive, taus, readout), InvalidInput);
  }
}

TEST_CASE("B-D chevron") {
  ChevronConfig cfg;
  cfg.mw_pi = calibrate_pi_pulse(kParams, Level::Bright, 2.381_MHz);
  cfg.rf = rf(0.2_MHz, 7.9_MHz);
  cfg.axis_values = grid(7.9_MHz - 0.4_MHz, 7.9_MHz + 0.4_MHz, 9);
  cfg.durations = grid(0.0, 8_us, 17);
  const auto map = simulate_bd_chevron(kParams, cfg, ReadoutModel{});
  map.validate();
  const std::size_t rows = map.row_axis.size(), cols = map.col_axis.size();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      CHECK(std::abs(map.at("p_bright", r, c) - map.at("p_bright_analytic", r, c)) < 1e-6);
      CHECK(std::abs(map.at("p_bright", r, c) - map.at("p_bright", rows - 1 - r, c)) < 1e-9);
    }
  }
  for (std::size_t c = 0; c < cols; ++c) {
    const double w = rabi_population_difference(map.col_axis[c], 0.2_MHz, 0.0);
    CHECK(map.at("p_bright", 4, c) == doctest::Approx(0.5 * (1.0 - w)).epsilon(1e-6));
  }

  ChevronConfig by_rabi = cfg;
  by_rabi.axis = ChevronAxis::RfRabi;
  by_rabi.axis_values = {0.1_MHz, 0.2_MHz, 0.4_MHz};
  const auto m2 = simulate_bd_chevron(kParams, by_rabi, ReadoutModel{});
  CHECK(m2.row_axis_name == "rf_rabi_hz");
  CHECK(m2.at("p_bright", 2, 0) == doctest::Approx(1.0));

  by_rabi.axis_values = {0.2_MHz, 0.1_MHz};
  CHECK_THROWS_AS(simulate_bd_chevron(kParams, by_rabi, ReadoutModel{}), InvalidInput);
}

TEST_CASE("pulse sequences") {
  const auto parsed = parse_sequence("laser 3us\nmw freq=2884.7MHz rabi=(2.381MHz,0,0) dur=210ns\nreadout\n");
  REQUIRE(parsed.ok());
  const auto run = run_sequence(kParams, parsed.sequence(), ReadoutModel{});
  REQUIRE(run.readout_signal);
  CHECK(*run.readout_signal < 0.7 + 1e-4);
  CHECK(populations(run.final_state).bright > 0.9999);
  run.trajectory.validate();
  CHECK(run.trajectory.axis.back() == doctest::Approx(3.21e-6));

  SUBCASE("B-D sequence reproduces simulate_bd_rabi") {
    const auto pi = calibrate_pi_pulse(kParams, Level::Bright, 2.381_MHz);
    const double tau = 1.7e-6;
    MwSegment mw;
    mw.frequency = pi.drive.frequency;
    mw.rabi = {pi.drive.rabi.x(), 0.0, 0.0};
    mw.duration = pi.duration;
    RfSegment rfs;
    rfs.frequency = 7.9_MHz;
    rfs.rabi = {0.0, 0.0, 0.2_MHz};
    rfs.duration = tau;
    const PulseSequence seq{{LaserSegment{1e-6}, mw, rfs, mw, ReadoutSegment{}}};
    const auto r = run_sequence(kParams, seq, ReadoutModel{});
    const double t[] = {tau};
    const auto ref = simulate_bd_rabi(kParams, pi, rf(0.2_MHz, 7.9_MHz), t, ReadoutModel{});
    CHECK(*r.readout_signal == doctest::Approx(ref.column("signal")[0]).epsilon(1e-9));
  }
  SUBCASE("lasers reset and waits keep populations") {
    const PulseSequence seq{{LaserSegment{1e-6}, WaitSegment{1e-6}, ReadoutSegment{}}};
    const auto r = run_sequence(kParams, seq, ReadoutModel{});
    CHECK(*r.readout_signal == doctest::Approx(1.0));
  }
  CHECK_THROWS_AS(run_sequence(kParams, PulseSequence{}, ReadoutModel{}), InvalidInput);
}

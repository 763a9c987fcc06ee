#include "nvspin/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nvspin/errors.hpp"
#include "nvspin/units.hpp"

namespace nvspin {

namespace {

// e^{i 2 pi cycles}, reduced to the fractional cycle first.
Complex unit_phasor(double cycles) {
  const double frac = cycles - std::floor(cycles);
  return std::polar(1.0, kTwoPi * frac);
}

HermitianOperator3 drive_operator(const Eigen::Vector3d& rabi) {
  return spin_x() * rabi.x() + spin_y() * rabi.y() + spin_z() * rabi.z();
}

// One RWA coupling term c/2 e^{i(2 pi residual t - s phase)} |a><b|, with a, b
// indices into the {|0>, |B>, |D>} level basis.
struct RwaCoupling {
  int a = 0;
  int b = 0;
  Complex amplitude;  // c / 2 with the drive phase folded in
  double residual = 0.0;
};

struct RwaModel {
  Eigen::Vector3d diagonal;  // level energies minus frame rates
  std::vector<RwaCoupling> couplings;

  bool constant() const {
    return std::all_of(couplings.begin(), couplings.end(), [](const RwaCoupling& c) { return c.residual == 0.0; });
  }

  HermitianOperator3 at(double t) const {
    Matrix3c h_level = Matrix3c::Zero();
    for (int k = 0; k < 3; ++k) h_level(k, k) = diagonal(k);
    for (const auto& c : couplings) {
      const Complex v = c.residual == 0.0 ? c.amplitude : c.amplitude * unit_phasor(c.residual * t);
      h_level(c.a, c.b) += v;
      h_level(c.b, c.a) += std::conj(v);
    }
    const Matrix3c& q = level_basis();
    return HermitianOperator3::from_matrix(q * h_level * q.adjoint());
  }

  double max_frequency() const {
    double f = diagonal.cwiseAbs().maxCoeff();
    double residual = 0.0;
    double coupling = 0.0;
    for (const auto& c : couplings) {
      residual = std::max(residual, std::abs(c.residual));
      coupling += 2.0 * std::abs(c.amplitude);
    }
    return f + residual + coupling;
  }
};

RwaModel build_rwa_model(const EffectiveParams& eff, std::span<const DriveField> drives, const FrameSpec& frame) {
  const Eigen::Vector3d rates = frame_rates(frame);
  const Eigen::Vector3d energies(0.0, eff.d_prime + eff.e_x_prime, eff.d_prime - eff.e_x_prime);
  RwaModel model{energies - rates, {}};

  const Matrix3c& q = level_basis();
  const bool double_frame = std::holds_alternative<DoubleRotatingFrame>(frame);
  for (const auto& drive : drives) {
    drive.validate();
    if (drive.kind == DriveKind::Rf && !double_frame) {
      throw ConfigError("RF drives need the double-rotating frame (or the lab frame)");
    }
    // MW couples |0> to |B>, |D>; RF couples |B> to |D>.
    std::vector<std::pair<int, int>> pairs;
    if (drive.kind == DriveKind::Mw) {
      pairs = {{1, 0}, {2, 0}};
    } else {
      pairs = {{2, 1}};
    }
    const Matrix3c v = drive_operator(drive.rabi).matrix();
    for (auto [a, b] : pairs) {
      const Complex c = q.col(a).dot(v * q.col(b));
      if (c == Complex(0.0, 0.0)) continue;
      const double nu = rates(a) - rates(b);
      if (nu == 0.0) throw ConfigError("frame does not rotate the driven transition; RWA undefined");
      const double s = nu > 0.0 ? 1.0 : -1.0;
      const Complex amp = 0.5 * c * std::polar(1.0, -s * drive.phase);
      model.couplings.push_back({a, b, amp, nu - s * drive.frequency});
    }
  }
  return model;
}

double spectral_spread(const HermitianOperator3& h) {
  const auto es = eigensystem(h);
  return es[2].value - es[0].value;
}

}  // namespace

void DriveField::validate() const {
  if (!rabi.allFinite()) throw InvalidInput("drive Rabi vector must be finite");
  if (!std::isfinite(frequency) || frequency < 0.0) throw InvalidInput("drive frequency must be finite and >= 0");
  if (!std::isfinite(phase)) throw InvalidInput("drive phase must be finite");
}

void DephasingModel::validate() const {
  if (t2_star && !(std::isfinite(*t2_star) && *t2_star > 0.0)) throw InvalidInput("T2* must be positive");
}

// ---------------------------------------------------------------------------
// DensityMatrix
// ---------------------------------------------------------------------------

DensityMatrix DensityMatrix::from_state(const SpinState& state) {
  return DensityMatrix(state.amplitudes() * state.amplitudes().adjoint());
}

DensityMatrix DensityMatrix::from_matrix(const Matrix3c& rho) {
  if (!rho.allFinite()) throw InvalidInput("density matrix has non-finite entries");
  if ((rho - rho.adjoint()).cwiseAbs().maxCoeff() > 1e-12) throw InvalidInput("density matrix is not Hermitian");
  if (std::abs(rho.trace().real() - 1.0) > 1e-9) throw InvalidInput("density matrix trace is not 1");
  return DensityMatrix(rho);
}

double DensityMatrix::population(const SpinState& basis) const {
  return basis.amplitudes().dot(rho_ * basis.amplitudes()).real();
}

Populations populations(const DensityMatrix& rho) {
  return {rho.population(SpinState::zero()), rho.population(SpinState::bright()),
          rho.population(SpinState::dark())};
}

// ---------------------------------------------------------------------------
// Hamiltonians
// ---------------------------------------------------------------------------

HermitianOperator3 hamiltonian_at(double t, const NVParams& params, std::span<const DriveField> drives) {
  if (!std::isfinite(t)) throw InvalidInput("time must be finite");
  HermitianOperator3 h = build_lab_hamiltonian(params);
  for (const auto& drive : drives) {
    drive.validate();
    const double envelope = std::cos(kTwoPi * (drive.frequency * t - std::floor(drive.frequency * t)) + drive.phase);
    h += drive_operator(drive.rabi) * envelope;
  }
  return h;
}

HermitianOperator3 rotating_frame_mw(const EffectiveParams& eff, double omega_mw, const DriveField& mw) {
  if (mw.kind != DriveKind::Mw) throw InvalidInput("rotating_frame_mw expects an MW drive");
  DriveField resonant = mw;
  resonant.frequency = omega_mw;
  const DriveField drives[] = {resonant};
  return build_rwa_model(eff, drives, MwRotatingFrame{omega_mw}).at(0.0);
}

HermitianOperator3 rotating_frame_rf(const EffectiveParams& eff, double omega_mw, double omega_rf,
                                     const DriveField& rf) {
  if (rf.kind != DriveKind::Rf) throw InvalidInput("rotating_frame_rf expects an RF drive");
  DriveField resonant = rf;
  resonant.frequency = omega_rf;
  const DriveField drives[] = {resonant};
  return build_rwa_model(eff, drives, DoubleRotatingFrame{omega_mw, omega_rf}).at(0.0);
}

Eigen::Vector3d frame_rates(const FrameSpec& frame) {
  return std::visit(
      [](const auto& f) -> Eigen::Vector3d {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, LabFrame>) {
          return Eigen::Vector3d::Zero();
        } else if constexpr (std::is_same_v<T, MwRotatingFrame>) {
          return {0.0, f.omega_mw, f.omega_mw};
        } else {
          return {0.0, f.omega_mw + 0.5 * f.omega_rf, f.omega_mw - 0.5 * f.omega_rf};
        }
      },
      frame);
}

TimeDependentHamiltonian frame_hamiltonian(const NVParams& params, std::span<const DriveField> drives,
                                           const FrameSpec& frame) {
  const Eigen::Vector3d rates = frame_rates(frame);
  if (!rates.allFinite()) throw InvalidInput("frame frequencies must be finite");

  if (std::holds_alternative<LabFrame>(frame)) {
    const HermitianOperator3 static_h = build_lab_hamiltonian(params);
    double f_max = spectral_spread(static_h);
    double drive_max = 0.0;
    double rabi_sum = 0.0;
    for (const auto& d : drives) {
      d.validate();
      drive_max = std::max(drive_max, d.frequency);
      rabi_sum += d.rabi.cwiseAbs().sum();
    }
    f_max = std::max(f_max, drive_max) + rabi_sum;
    struct Tone {
      Matrix3c op;
      double frequency;
      double phase;
    };
    std::vector<Tone> tones;
    for (const auto& d : drives) tones.push_back({drive_operator(d.rabi).matrix(), d.frequency, d.phase});
    const Matrix3c h0 = static_h.matrix();
    auto at = [h0, tones](double t) {
      Matrix3c h = h0;
      for (const auto& tone : tones) {
        const double cycles = tone.frequency * t;
        h += tone.op * std::cos(kTwoPi * (cycles - std::floor(cycles)) + tone.phase);
      }
      return HermitianOperator3::from_matrix(h);
    };
    return {at, drives.empty(), f_max};
  }

  std::visit(
      [](const auto& f) {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, MwRotatingFrame>) {
          if (!(f.omega_mw >= 0.0)) throw InvalidInput("frame frequency must be >= 0");
        } else if constexpr (std::is_same_v<T, DoubleRotatingFrame>) {
          if (!(f.omega_mw >= 0.0) || !(f.omega_rf >= 0.0)) throw InvalidInput("frame frequencies must be >= 0");
        }
      },
      frame);

  const RwaModel model = build_rwa_model(effective_params(params), drives, frame);
  return {[model](double t) { return model.at(t); }, model.constant(), model.max_frequency()};
}

namespace {

Matrix3c frame_change_operator(const FrameSpec& from, const FrameSpec& to, double t) {
  const Eigen::Vector3d delta = frame_rates(to) - frame_rates(from);
  Eigen::Vector3cd phases;
  for (int k = 0; k < 3; ++k) phases(k) = unit_phasor(delta(k) * t);
  const Matrix3c& q = level_basis();
  return q * phases.asDiagonal() * q.adjoint();
}

}  // namespace

SpinState change_frame(const SpinState& state, const FrameSpec& from, const FrameSpec& to, double t) {
  return SpinState::from_amplitudes(frame_change_operator(from, to, t) * state.amplitudes());
}

DensityMatrix change_frame(const DensityMatrix& rho, const FrameSpec& from, const FrameSpec& to, double t) {
  const Matrix3c r = frame_change_operator(from, to, t);
  return DensityMatrix::from_matrix(r * rho.matrix() * r.adjoint());
}

// ---------------------------------------------------------------------------
// Propagation
// ---------------------------------------------------------------------------

Matrix3c step_propagator(const HermitianOperator3& h, double dt) {
  Eigen::SelfAdjointEigenSolver<Matrix3c> solver(h.matrix());
  if (solver.info() != Eigen::Success) throw NumericError("eigensolver failed in propagator step");
  Eigen::Vector3cd phases;
  for (int k = 0; k < 3; ++k) phases(k) = std::polar(1.0, -kTwoPi * solver.eigenvalues()(k) * dt);
  const Matrix3c& v = solver.eigenvectors();
  const Matrix3c u = v * phases.asDiagonal() * v.adjoint();
  // One Newton-Schulz step towards the nearest unitary; cached propagators
  // are reused for millions of steps.
  return 0.5 * u * (3.0 * Matrix3c::Identity() - u.adjoint() * u);
}

std::size_t step_count(const TimeDependentHamiltonian& h, double duration, const StepPolicy& policy) {
  if (!(duration >= 0.0) || !std::isfinite(duration)) throw InvalidInput("duration must be finite and >= 0");
  if (duration == 0.0) return 0;
  if (policy.steps_per_period < StepPolicy::kMinStepsPerPeriod) {
    throw ConfigError("step policy must take at least 50 steps per period of the fastest frequency");
  }
  if (policy.max_step && !(*policy.max_step > 0.0)) throw ConfigError("maximum step must be positive");

  const double bound = h.max_frequency > 0.0 ? 1.0 / (StepPolicy::kMinStepsPerPeriod * h.max_frequency)
                                             : std::numeric_limits<double>::infinity();
  auto check = [&](double dt) {
    if (!h.constant && dt > bound * (1.0 + 1e-12)) {
      std::ostringstream msg;
      msg << "time step " << dt << " s exceeds 1/(50 f_max) = " << bound << " s";
      throw ConfigError(msg.str());
    }
  };

  if (policy.steps) {
    if (*policy.steps == 0) throw ConfigError("step count must be positive");
    check(duration / static_cast<double>(*policy.steps));
    return *policy.steps;
  }
  if (policy.max_step) {
    check(*policy.max_step);
    return static_cast<std::size_t>(std::ceil(duration / *policy.max_step - 1e-9));
  }
  if (h.constant) return 1;
  const double dt = 1.0 / (policy.steps_per_period * h.max_frequency);
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(duration / dt - 1e-9)));
}

namespace {

// Splits [0, duration] at the trajectory sample times and walks each piece in
// steps no longer than `nominal`.
template <typename Apply, typename Sample>
std::size_t march(const TimeDependentHamiltonian& h, double duration, std::size_t total_steps,
                  const PropagationOptions& options, Apply apply, Sample sample) {
  std::vector<double> marks{0.0};
  if (options.samples >= 2) {
    for (std::size_t k = 1; k + 1 < options.samples; ++k) {
      marks.push_back(duration * static_cast<double>(k) / static_cast<double>(options.samples - 1));
    }
  }
  marks.push_back(duration);
  if (options.samples >= 2) sample(0.0);

  const double nominal = duration / static_cast<double>(total_steps);
  std::size_t done = 0;
  Matrix3c cached;
  double cached_dt = -1.0;
  for (std::size_t seg = 0; seg + 1 < marks.size(); ++seg) {
    const double t0 = marks[seg];
    const double length = marks[seg + 1] - t0;
    const std::size_t n =
        marks.size() == 2 ? total_steps
                          : std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(length / nominal - 1e-9)));
    const double dt = length / static_cast<double>(n);
    for (std::size_t k = 0; k < n; ++k) {
      if (h.constant) {
        if (dt != cached_dt) {
          cached = step_propagator(h.at(options.t_start), dt);
          cached_dt = dt;
        }
        apply(cached, dt);
      } else {
        const double mid = options.t_start + t0 + (static_cast<double>(k) + 0.5) * dt;
        apply(step_propagator(h.at(mid), dt), dt);
      }
    }
    done += n;
    if (options.samples >= 2 || (options.samples == 1 && seg + 2 == marks.size())) sample(marks[seg + 1]);
  }
  return done;
}

}  // namespace

Propagation evolve(const SpinState& state, const TimeDependentHamiltonian& h, double duration,
                   const PropagationOptions& options) {
  const std::size_t steps = step_count(h, duration, options.step);
  Propagation out;
  Vector3c psi = state.amplitudes();
  if (steps == 0) {
    out.final_state = state;
    if (options.samples > 0) out.trajectory.push_back({options.t_start, state});
    return out;
  }
  out.steps = march(
      h, duration, steps, options, [&](const Matrix3c& u, double) { psi = u * psi; },
      [&](double t) { out.trajectory.push_back({options.t_start + t, SpinState::from_amplitudes(psi)}); });
  out.final_state = SpinState::from_amplitudes(psi);
  return out;
}

DensityPropagation evolve(const DensityMatrix& rho, const TimeDependentHamiltonian& h, double duration,
                          const DephasingModel& dephasing, const PropagationOptions& options) {
  dephasing.validate();
  StepPolicy policy = options.step;
  // Dephasing is interleaved with the unitary steps, so even a constant
  // Hamiltonian has to be stepped finely.
  if (dephasing.t2_star && !policy.steps && duration > 0.0) {
    double dt = *dephasing.t2_star / 100.0;
    if (h.max_frequency > 0.0) dt = std::min(dt, 1.0 / (policy.steps_per_period * h.max_frequency));
    if (policy.max_step) dt = std::min(dt, *policy.max_step);
    policy.max_step = dt;
  }
  PropagationOptions opts = options;
  opts.step = policy;
  const std::size_t steps = step_count(h, duration, opts.step);

  DensityPropagation out;
  out.final_state = rho;
  if (steps == 0) {
    if (options.samples > 0) out.trajectory.push_back({options.t_start, populations(rho)});
    return out;
  }

  const Matrix3c& q = level_basis();
  std::array<Matrix3c, 3> projectors;
  for (int k = 0; k < 3; ++k) projectors[static_cast<std::size_t>(k)] = q.col(k) * q.col(k).adjoint();
  Matrix3c m = rho.matrix();
  out.steps = march(
      h, duration, steps, opts,
      [&](const Matrix3c& u, double dt) {
        m = u * m * u.adjoint();
        if (dephasing.t2_star) {
          // Level-basis coherences shrink by damp; populations are untouched.
          const double damp = std::exp(-dt / *dephasing.t2_star);
          Matrix3c diag = Matrix3c::Zero();
          for (const auto& p : projectors) diag += p * m * p;
          m = damp * m + (1.0 - damp) * diag;
        }
      },
      [&](double t) {
        const Matrix3c hm = 0.5 * (m + m.adjoint());
        out.trajectory.push_back({options.t_start + t, populations(DensityMatrix::from_matrix(hm))});
      });
  out.final_state = DensityMatrix::from_matrix(0.5 * (m + m.adjoint()));
  return out;
}

Propagation propagate(const SpinState& state, const NVParams& params, std::span<const DriveField> drives,
                      const FrameSpec& frame, double duration, const PropagationOptions& options) {
  return evolve(state, frame_hamiltonian(params, drives, frame), duration, options);
}

DensityPropagation propagate(const DensityMatrix& rho, const NVParams& params,
                             std::span<const DriveField> drives, const FrameSpec& frame, double duration,
                             const DephasingModel& dephasing, const PropagationOptions& options) {
  return evolve(rho, frame_hamiltonian(params, drives, frame), duration, dephasing, options);
}

double rabi_population_difference(double t, double rabi, double detuning) {
  if (!(t >= 0.0)) throw InvalidInput("time must be >= 0");
  const double omega = kTwoPi * rabi;
  const double delta = kTwoPi * detuning;
  const double generalized_sq = omega * omega + delta * delta;
  if (generalized_sq == 0.0) return -1.0;
  const double s = std::sin(0.5 * std::sqrt(generalized_sq) * t);
  return -1.0 + 2.0 * omega * omega / generalized_sq * s * s;
}

}  // namespace nvspin

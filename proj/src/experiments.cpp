#include "nvspin/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "nvspin/errors.hpp"
#include "nvspin/units.hpp"

namespace nvspin {

namespace {

std::string num(double v) { return format_number(v); }

void require_increasing(std::span<const double> values, std::string_view what, bool allow_equal = false) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) throw InvalidInput(std::string(what) + " contains non-finite values");
    if (i > 0 && (allow_equal ? values[i] < values[i - 1] : values[i] <= values[i - 1])) {
      throw InvalidInput(std::string(what) + " must be strictly increasing");
    }
  }
}

void require_durations(std::span<const double> durations) {
  require_increasing(durations, "duration grid");
  if (!durations.empty() && durations.front() < 0.0) throw InvalidInput("durations must be >= 0");
}

std::size_t index_of(const std::vector<Column>& columns, std::string_view name) {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i].name == name) return i;
  }
  return columns.size();
}

// Pure-state and density-matrix evolution share the experiment code paths.
struct Sample {
  double time;
  Populations pops;
};

SpinState advance(const SpinState& s, const NVParams& p, std::span<const DriveField> drives, const FrameSpec& frame,
                  double duration, double t0, const SimulationOptions& o, std::vector<Sample>* samples = nullptr,
                  std::size_t n_samples = 0) {
  PropagationOptions po{o.step, t0, samples ? n_samples : 0};
  auto r = propagate(s, p, drives, frame, duration, po);
  if (samples) {
    for (const auto& tr : r.trajectory) samples->push_back({tr.time, populations(tr.state)});
  }
  return r.final_state;
}

DensityMatrix advance(const DensityMatrix& s, const NVParams& p, std::span<const DriveField> drives,
                      const FrameSpec& frame, double duration, double t0, const SimulationOptions& o,
                      std::vector<Sample>* samples = nullptr, std::size_t n_samples = 0) {
  PropagationOptions po{o.step, t0, samples ? n_samples : 0};
  auto r = propagate(s, p, drives, frame, duration, o.dephasing, po);
  if (samples) {
    for (const auto& tr : r.trajectory) samples->push_back({tr.time, tr.populations});
  }
  return r.final_state;
}

SpinState initial(const SpinState*) { return SpinState::zero(); }
DensityMatrix initial(const DensityMatrix*) { return DensityMatrix::from_state(SpinState::zero()); }

template <typename State>
TimeTrace mw_rabi_impl(const NVParams& params, const DriveField& mw, std::span<const double> durations,
                       const ReadoutModel& readout, const SimulationOptions& options) {
  const FrameSpec frame = options.lab_frame ? FrameSpec{LabFrame{}} : FrameSpec{MwRotatingFrame{mw.frequency}};
  const DriveField drives[] = {mw};

  TimeTrace trace;
  trace.axis_name = "time_s";
  trace.axis.assign(durations.begin(), durations.end());
  std::vector<double> signal, p0, pb, pd;

  State state = initial(static_cast<const State*>(nullptr));
  double t = 0.0;
  for (double tau : durations) {
    state = advance(state, params, drives, frame, tau - t, t, options);
    t = tau;
    const Populations pops = populations(state);
    signal.push_back(pl_readout(pops.zero, readout));
    p0.push_back(pops.zero);
    pb.push_back(pops.bright);
    pd.push_back(pops.dark);
  }
  trace.columns = {{"signal", signal}, {"p_zero", p0}, {"p_bright", pb}, {"p_dark", pd}};
  return trace;
}

template <typename State>
TimeTrace bd_rabi_impl(const NVParams& params, const PiPulse& mw_pi, const DriveField& rf,
                       std::span<const double> durations, const ReadoutModel& readout,
                       const SimulationOptions& options) {
  const EffectiveParams eff = effective_params(params);
  const FrameSpec mw_frame =
      options.lab_frame ? FrameSpec{LabFrame{}} : FrameSpec{MwRotatingFrame{mw_pi.drive.frequency}};
  const FrameSpec rf_frame =
      options.lab_frame ? FrameSpec{LabFrame{}} : FrameSpec{DoubleRotatingFrame{mw_pi.drive.frequency, rf.frequency}};
  const DriveField mw_drives[] = {mw_pi.drive};
  const DriveField rf_drives[] = {rf};
  const double t_pi = mw_pi.duration;

  State prepared = advance(initial(static_cast<const State*>(nullptr)), params, mw_drives, mw_frame, t_pi, 0.0, options);
  State state = change_frame(prepared, mw_frame, rf_frame, t_pi);

  TimeTrace trace;
  trace.axis_name = "time_s";
  trace.axis.assign(durations.begin(), durations.end());
  std::vector<double> signal, pb, pb_analytic;
  double tau_prev = 0.0;
  for (double tau : durations) {
    state = advance(state, params, rf_drives, rf_frame, tau - tau_prev, t_pi + tau_prev, options);
    tau_prev = tau;
    pb.push_back(populations(state).bright);
    pb_analytic.push_back(analytic_bright_population(eff, rf, tau));

    State mapped = change_frame(state, rf_frame, mw_frame, t_pi + tau);
    mapped = advance(mapped, params, mw_drives, mw_frame, t_pi, t_pi + tau, options);
    signal.push_back(pl_readout(populations(mapped).zero, readout));
  }
  trace.columns = {{"signal", signal}, {"p_bright", pb}, {"p_bright_analytic", pb_analytic}};
  return trace;
}

void describe(Metadata& m, const NVParams& params, const EffectiveParams& eff, const ReadoutModel& readout) {
  m["d_zfs_hz"] = num(params.d_zfs);
  m["e_x_hz"] = num(params.e_x);
  m["e_y_hz"] = num(params.e_y);
  m["zeeman_x_hz"] = num(params.zeeman_x);
  m["d_prime_hz"] = num(eff.d_prime);
  m["e_x_prime_hz"] = num(eff.e_x_prime);
  m["readout_baseline"] = num(readout.baseline);
  m["readout_contrast"] = num(readout.contrast);
  if (eff.warning) m["warning"] = *eff.warning;
}

void describe(Metadata& m, std::string_view prefix, const DriveField& d) {
  const std::string p(prefix);
  m[p + "_frequency_hz"] = num(d.frequency);
  m[p + "_rabi_x_hz"] = num(d.rabi.x());
  m[p + "_rabi_y_hz"] = num(d.rabi.y());
  m[p + "_rabi_z_hz"] = num(d.rabi.z());
  m[p + "_phase_rad"] = num(d.phase);
}

void describe(Metadata& m, const SimulationOptions& o) {
  m["frame"] = o.lab_frame ? "lab" : "rotating";
  if (o.dephasing.t2_star) m["t2_star_s"] = num(*o.dephasing.t2_star);
}

}  // namespace

// ---------------------------------------------------------------------------
// Readout and containers
// ---------------------------------------------------------------------------

void ReadoutModel::validate() const {
  if (!(std::isfinite(baseline) && baseline > 0.0)) throw InvalidInput("readout baseline must be positive");
  if (!(contrast > 0.0 && contrast <= 1.0)) throw InvalidInput("readout contrast must lie in (0, 1]");
}

double pl_readout(double p_zero, const ReadoutModel& model) {
  model.validate();
  const double p = std::clamp(p_zero, 0.0, 1.0);
  return model.baseline * (1.0 - model.contrast * (1.0 - p));
}

double pl_readout(const SpinState& state, const ReadoutModel& model) {
  return pl_readout(state.population(SpinState::zero()), model);
}

double pl_readout(const DensityMatrix& rho, const ReadoutModel& model) {
  return pl_readout(rho.population(SpinState::zero()), model);
}

const std::vector<double>& SampledTrace::column(std::string_view name) const {
  const std::size_t i = index_of(columns, name);
  if (i == columns.size()) throw InvalidInput("trace has no column '" + std::string(name) + "'");
  return columns[i].values;
}

bool SampledTrace::has_column(std::string_view name) const { return index_of(columns, name) != columns.size(); }

void SampledTrace::validate() const {
  for (const auto& c : columns) {
    if (c.values.size() != axis.size()) throw InvalidInput("column '" + c.name + "' length differs from the axis");
  }
  for (std::size_t i = 1; i < axis.size(); ++i) {
    if (!(axis[i] > axis[i - 1])) throw InvalidInput("trace axis must be strictly increasing");
  }
}

const std::vector<double>& Map2D::layer(std::string_view name) const {
  const std::size_t i = index_of(layers, name);
  if (i == layers.size()) throw InvalidInput("map has no layer '" + std::string(name) + "'");
  return layers[i].values;
}

double Map2D::at(std::string_view name, std::size_t row, std::size_t col) const {
  return layer(name).at(row * col_axis.size() + col);
}

void Map2D::validate() const {
  for (const auto& l : layers) {
    if (l.values.size() != row_axis.size() * col_axis.size()) {
      throw InvalidInput("layer '" + l.name + "' size differs from the grid");
    }
  }
  require_increasing(row_axis, "row axis");
  require_increasing(col_axis, "column axis");
}

SpinState level_state(Level level) {
  switch (level) {
    case Level::Zero:
      return SpinState::zero();
    case Level::Bright:
      return SpinState::bright();
    case Level::Dark:
      return SpinState::dark();
  }
  return SpinState::zero();
}

// ---------------------------------------------------------------------------
// CW-ODMR
// ---------------------------------------------------------------------------

void OdmrConfig::validate() const {
  if (grid.empty()) throw InvalidInput("ODMR grid is empty");
  require_increasing(grid, "ODMR grid");
  if (!(std::isfinite(linewidth) && linewidth > 0.0)) throw InvalidInput("ODMR linewidth must be positive");
  if (!(depth_scale > 0.0 && depth_scale <= 1.0)) throw InvalidInput("ODMR depth scale must lie in (0, 1]");
  if (!mw_polarization.allFinite()) throw InvalidInput("MW polarization must be finite");
  if (rf) rf->validate();
}

std::vector<OdmrLine> odmr_lines(const EffectiveParams& eff, const std::optional<DriveField>& rf,
                                 const Eigen::Vector3d& mw_polarization) {
  const HermitianOperator3 probe =
      spin_x() * mw_polarization.x() + spin_y() * mw_polarization.y() + spin_z() * mw_polarization.z();
  const double to_bright = std::norm(probe.element(SpinState::bright(), SpinState::zero()));
  const double to_dark = std::norm(probe.element(SpinState::dark(), SpinState::zero()));
  const double scale = std::max(to_bright, to_dark);
  if (scale == 0.0) throw InvalidInput("MW polarization drives neither 0<->B nor 0<->D");

  std::vector<OdmrLine> lines;
  if (!rf) {
    const auto f = transition_frequencies(eff);
    if (to_bright > 0.0) lines.push_back({f.f_upper, to_bright / scale, Level::Bright});
    if (to_dark > 0.0) lines.push_back({f.f_lower, to_dark / scale, Level::Dark});
  } else {
    if (rf->kind != DriveKind::Rf) throw InvalidInput("ODMR dressing field must be an RF drive");
    const double omega_rf = rf->frequency;
    const Eigensystem dressed = eigensystem(rotating_frame_rf(eff, 0.0, omega_rf, *rf));
    std::size_t ground = 0;
    for (std::size_t k = 1; k < 3; ++k) {
      if (dressed[k].vector.population(SpinState::zero()) > dressed[ground].vector.population(SpinState::zero())) {
        ground = k;
      }
    }
    for (std::size_t k = 0; k < 3; ++k) {
      if (k == ground) continue;
      const double gap = dressed[k].value - dressed[ground].value;
      const double wb = dressed[k].vector.population(SpinState::bright()) * to_bright / scale;
      const double wd = dressed[k].vector.population(SpinState::dark()) * to_dark / scale;
      if (wb > 0.0) lines.push_back({gap + 0.5 * omega_rf, wb, Level::Bright});
      if (wd > 0.0) lines.push_back({gap - 0.5 * omega_rf, wd, Level::Dark});
    }
  }
  std::sort(lines.begin(), lines.end(), [](const OdmrLine& a, const OdmrLine& b) { return a.center < b.center; });
  return lines;
}

SpectrumTrace simulate_cw_odmr(const NVParams& params, const OdmrConfig& config, const ReadoutModel& readout) {
  config.validate();
  readout.validate();
  const EffectiveParams eff = effective_params(params);
  const auto lines = odmr_lines(eff, config.rf, config.mw_polarization);

  const double half_width = 0.5 * config.linewidth;
  const double hw2 = half_width * half_width;
  auto strength = [&](double f) {
    double sum = 0.0;
    for (const auto& line : lines) {
      const double x = f - line.center;
      sum += line.weight * hw2 / (x * x + hw2);
    }
    return sum;
  };
  // The deepest line center sets full depth; the min() only guards points
  // between heavily overlapping lines.
  double peak = 0.0;
  for (const auto& line : lines) peak = std::max(peak, strength(line.center));

  std::vector<double> signal;
  signal.reserve(config.grid.size());
  for (double f : config.grid) {
    const double dip = readout.contrast * config.depth_scale * std::min(1.0, strength(f) / peak);
    signal.push_back(readout.baseline * (1.0 - dip));
  }

  SpectrumTrace trace;
  trace.axis_name = "frequency_hz";
  trace.axis = config.grid;
  trace.columns = {{"signal", std::move(signal)}};
  describe(trace.metadata, params, eff, readout);
  trace.metadata["linewidth_hz"] = num(config.linewidth);
  trace.metadata["depth_scale"] = num(config.depth_scale);
  if (config.rf) describe(trace.metadata, "rf", *config.rf);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    trace.metadata["line" + std::to_string(i) + "_center_hz"] = num(lines[i].center);
    trace.metadata["line" + std::to_string(i) + "_weight"] = num(lines[i].weight);
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Rabi experiments
// ---------------------------------------------------------------------------

TimeTrace simulate_mw_rabi(const NVParams& params, const DriveField& mw, std::span<const double> durations,
                           const ReadoutModel& readout, const SimulationOptions& options) {
  if (mw.kind != DriveKind::Mw) throw InvalidInput("MW Rabi needs an MW drive");
  mw.validate();
  readout.validate();
  require_durations(durations);
  TimeTrace trace = options.dephasing.t2_star
                        ? mw_rabi_impl<DensityMatrix>(params, mw, durations, readout, options)
                        : mw_rabi_impl<SpinState>(params, mw, durations, readout, options);
  describe(trace.metadata, params, effective_params(params), readout);
  describe(trace.metadata, "mw", mw);
  describe(trace.metadata, options);
  return trace;
}

PiPulse calibrate_pi_pulse(const NVParams& params, Level target, double rabi) {
  if (!(std::isfinite(rabi) && rabi > 0.0)) throw InvalidInput("pi-pulse Rabi frequency must be positive");
  const auto f = transition_frequencies(effective_params(params));
  PiPulse pulse;
  pulse.drive.kind = DriveKind::Mw;
  switch (target) {
    case Level::Bright:
      pulse.drive.frequency = f.f_upper;
      pulse.drive.rabi = Eigen::Vector3d(rabi, 0.0, 0.0);
      break;
    case Level::Dark:
      pulse.drive.frequency = f.f_lower;
      pulse.drive.rabi = Eigen::Vector3d(0.0, rabi, 0.0);
      break;
    case Level::Zero:
      throw InvalidInput("a pi pulse must target |B> or |D>");
  }
  pulse.duration = 1.0 / (2.0 * rabi);
  return pulse;
}

double pi_pulse_fidelity(const NVParams& params, const PiPulse& pulse) {
  if (!(pulse.duration > 0.0)) return 0.0;
  const DriveField drives[] = {pulse.drive};
  const auto r = propagate(SpinState::zero(), params, drives, MwRotatingFrame{pulse.drive.frequency}, pulse.duration);
  return r.final_state.population(SpinState::bright());
}

double analytic_bright_population(const EffectiveParams& eff, const DriveField& rf, double tau) {
  const double coupling = std::abs(spin_z().element(SpinState::dark(), SpinState::bright())) * std::abs(rf.rabi.z());
  const double detuning = 2.0 * eff.e_x_prime - rf.frequency;
  return 0.5 * (1.0 - rabi_population_difference(tau, coupling, detuning));
}

TimeTrace simulate_bd_rabi(const NVParams& params, const PiPulse& mw_pi, const DriveField& rf,
                           std::span<const double> rf_durations, const ReadoutModel& readout,
                           const SimulationOptions& options) {
  if (mw_pi.drive.kind != DriveKind::Mw) throw InvalidInput("B-D Rabi needs an MW pi pulse");
  if (rf.kind != DriveKind::Rf) throw InvalidInput("B-D Rabi needs an RF drive");
  mw_pi.drive.validate();
  rf.validate();
  readout.validate();
  require_durations(rf_durations);

  const double fidelity = pi_pulse_fidelity(params, mw_pi);
  if (fidelity < kMinPiFidelity) {
    std::ostringstream msg;
    msg << "MW pi pulse is not calibrated: |0> -> |B> transfer fidelity " << fidelity << " < " << kMinPiFidelity;
    throw ConfigError(msg.str());
  }

  TimeTrace trace = options.dephasing.t2_star
                        ? bd_rabi_impl<DensityMatrix>(params, mw_pi, rf, rf_durations, readout, options)
                        : bd_rabi_impl<SpinState>(params, mw_pi, rf, rf_durations, readout, options);
  describe(trace.metadata, params, effective_params(params), readout);
  describe(trace.metadata, "mw", mw_pi.drive);
  describe(trace.metadata, "rf", rf);
  describe(trace.metadata, options);
  trace.metadata["mw_pi_duration_s"] = num(mw_pi.duration);
  trace.metadata["mw_pi_fidelity"] = num(fidelity);
  return trace;
}

Map2D simulate_bd_chevron(const NVParams& params, const ChevronConfig& config, const ReadoutModel& readout,
                          const SimulationOptions& options) {
  if (config.axis_values.empty() || config.durations.empty()) throw InvalidInput("chevron grids must be non-empty");
  require_increasing(config.axis_values, "chevron axis");
  require_durations(config.durations);

  Map2D map;
  map.row_axis_name = config.axis == ChevronAxis::RfFrequency ? "rf_frequency_hz" : "rf_rabi_hz";
  map.row_axis = config.axis_values;
  map.col_axis_name = "time_s";
  map.col_axis = config.durations;
  map.layers = {{"signal", {}}, {"p_bright", {}}, {"p_bright_analytic", {}}};
  for (auto& l : map.layers) l.values.reserve(map.row_axis.size() * map.col_axis.size());

  for (double value : config.axis_values) {
    DriveField rf = config.rf;
    rf.kind = DriveKind::Rf;
    if (config.axis == ChevronAxis::RfFrequency) {
      rf.frequency = value;
    } else {
      rf.rabi.z() = value;
    }
    const TimeTrace row = simulate_bd_rabi(params, config.mw_pi, rf, config.durations, readout, options);
    for (auto& l : map.layers) {
      const auto& src = row.column(l.name);
      l.values.insert(l.values.end(), src.begin(), src.end());
    }
  }

  describe(map.metadata, params, effective_params(params), readout);
  describe(map.metadata, "rf", config.rf);
  describe(map.metadata, "mw", config.mw_pi.drive);
  describe(map.metadata, options);
  map.metadata["mw_pi_duration_s"] = num(config.mw_pi.duration);
  return map;
}

// ---------------------------------------------------------------------------
// Sequences
// ---------------------------------------------------------------------------

namespace {

template <typename State>
SequenceRun run_sequence_impl(const NVParams& params, const PulseSequence& sequence, const ReadoutModel& readout,
                              std::size_t samples, const SimulationOptions& options) {
  const EffectiveParams eff = effective_params(params);
  FrameSpec frame = options.lab_frame ? FrameSpec{LabFrame{}} : FrameSpec{MwRotatingFrame{eff.d_prime}};
  double omega_mw = eff.d_prime;
  State state = initial(static_cast<const State*>(nullptr));
  double t = 0.0;

  std::vector<Sample> trajectory;
  auto record = [&](double time, const Populations& p) {
    if (trajectory.empty() || time > trajectory.back().time) trajectory.push_back({time, p});
  };
  record(0.0, populations(state));

  std::optional<double> signal;
  const std::size_t n = std::max<std::size_t>(samples, 2);
  auto drive_segment = [&](const DrivePulse& p, DriveKind kind) {
    FrameSpec target = frame;
    if (!options.lab_frame) {
      if (kind == DriveKind::Mw) {
        omega_mw = p.frequency;
        target = MwRotatingFrame{omega_mw};
      } else {
        target = DoubleRotatingFrame{omega_mw, p.frequency};
      }
    }
    state = change_frame(state, frame, target, t);
    frame = target;
    const DriveField drives[] = {
        DriveField{Eigen::Vector3d(p.rabi[0], p.rabi[1], p.rabi[2]), p.frequency, p.phase, kind}};
    std::vector<Sample> local;
    state = advance(state, params, drives, frame, p.duration, t, options, &local, n);
    for (const auto& s : local) record(s.time, s.pops);
    t += p.duration;
  };

  for (const auto& segment : sequence.segments) {
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, LaserSegment>) {
            t += s.duration;
            state = initial(static_cast<const State*>(nullptr));
            record(t, populations(state));
          } else if constexpr (std::is_same_v<T, MwSegment>) {
            drive_segment(s, DriveKind::Mw);
          } else if constexpr (std::is_same_v<T, RfSegment>) {
            drive_segment(s, DriveKind::Rf);
          } else if constexpr (std::is_same_v<T, WaitSegment>) {
            std::vector<Sample> local;
            state = advance(state, params, {}, frame, s.duration, t, options, &local, n);
            for (const auto& smp : local) record(smp.time, smp.pops);
            t += s.duration;
          } else {
            signal = pl_readout(populations(state).zero, readout);
          }
        },
        segment);
  }

  SequenceRun run;
  run.trajectory.axis_name = "time_s";
  std::vector<double> p0, pb, pd;
  for (const auto& s : trajectory) {
    run.trajectory.axis.push_back(s.time);
    p0.push_back(s.pops.zero);
    pb.push_back(s.pops.bright);
    pd.push_back(s.pops.dark);
  }
  run.trajectory.columns = {{"p_zero", p0}, {"p_bright", pb}, {"p_dark", pd}};
  describe(run.trajectory.metadata, params, eff, readout);
  describe(run.trajectory.metadata, options);
  run.readout_signal = signal;
  if constexpr (std::is_same_v<State, SpinState>) {
    run.final_state = change_frame(state, frame, LabFrame{}, t);
  } else {
    // Mixed states have no single ket; report the dominant eigenvector.
    Eigen::SelfAdjointEigenSolver<Matrix3c> es(state.matrix());
    run.final_state = SpinState::normalized(es.eigenvectors().col(2)).canonicalized();
  }
  return run;
}

}  // namespace

SequenceRun run_sequence(const NVParams& params, const PulseSequence& sequence, const ReadoutModel& readout,
                         std::size_t samples_per_segment, const SimulationOptions& options) {
  readout.validate();
  const auto diags = validate_sequence(sequence);
  if (!diags.empty()) throw InvalidInput("invalid pulse sequence: " + diags.front().to_string());
  return options.dephasing.t2_star
             ? run_sequence_impl<DensityMatrix>(params, sequence, readout, samples_per_segment, options)
             : run_sequence_impl<SpinState>(params, sequence, readout, samples_per_segment, options);
}

}  // namespace nvspin

#pragma once

// The four measurements built on the dynamics layer: CW-ODMR with and without
// an RF dressing field, MW Rabi, B<->D Rabi and the B<->D chevron map, plus
// execution of textual pulse sequences.

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nvspin/dynamics.hpp"
#include "nvspin/sequence_io.hpp"
#include "nvspin/spin_core.hpp"

namespace nvspin {

// Photoluminescence readout, linear in the |0> population.
struct ReadoutModel {
  double baseline = 1.0;
  double contrast = 0.3;

  void validate() const;
  double dark_level() const { return baseline * (1.0 - contrast); }
};

// baseline * (1 - contrast * (1 - P0))
double pl_readout(const SpinState& state, const ReadoutModel& model);
double pl_readout(const DensityMatrix& rho, const ReadoutModel& model);
double pl_readout(double p_zero, const ReadoutModel& model);

using Metadata = std::map<std::string, std::string>;

struct Column {
  std::string name;
  std::vector<double> values;
};

struct SampledTrace {
  std::string axis_name;
  std::vector<double> axis;
  std::vector<Column> columns;
  Metadata metadata;

  // Throws InvalidInput if the column does not exist.
  const std::vector<double>& column(std::string_view name) const;
  bool has_column(std::string_view name) const;
  // Equal lengths, strictly monotone axis.
  void validate() const;
};

struct TimeTrace : SampledTrace {};
struct SpectrumTrace : SampledTrace {};

struct Map2D {
  std::string row_axis_name;
  std::vector<double> row_axis;
  std::string col_axis_name;
  std::vector<double> col_axis;
  // Row-major layers of size rows * cols.
  std::vector<Column> layers;
  Metadata metadata;

  const std::vector<double>& layer(std::string_view name) const;
  double at(std::string_view name, std::size_t row, std::size_t col) const;
  void validate() const;
};

enum class Level { Zero, Bright, Dark };

SpinState level_state(Level level);

// One dip of the CW-ODMR spectrum.
struct OdmrLine {
  double center = 0.0;
  // Relative strength; 1 for a bare transition driven at full polarization.
  double weight = 0.0;
  // Bare level through which the MW probe reaches the dressed state.
  Level via = Level::Bright;
};

struct OdmrConfig {
  std::vector<double> grid;
  std::optional<DriveField> rf;
  // Relative MW probe polarization (x reaches |B>, y reaches |D>).
  Eigen::Vector3d mw_polarization{1.0, 1.0, 0.0};
  double linewidth = 1e6;  // Lorentzian FWHM, Hz
  // Depth of the deepest dip as a fraction of the readout contrast, in (0, 1].
  double depth_scale = 1.0;

  void validate() const;
};

// Dressed-state transition lines. Without RF: D'+E' (via |B>) and D'-E' (via
// |D>). With RF: eigenstates of the double-rotating-frame Hamiltonian, probed
// through their |B> and |D> components, shifted back by +/- omega_rf/2.
std::vector<OdmrLine> odmr_lines(const EffectiveParams& eff, const std::optional<DriveField>& rf,
                                 const Eigen::Vector3d& mw_polarization);

// Columns: "signal". Dip fraction contrast * depth_scale * S(f) / S_peak with
// S(f) = sum_k w_k L_k(f) and S_peak the largest S over the line centers.
SpectrumTrace simulate_cw_odmr(const NVParams& params, const OdmrConfig& config, const ReadoutModel& readout);

struct SimulationOptions {
  // Integrate the full cosine-driven lab Hamiltonian instead of RWA frames.
  bool lab_frame = false;
  StepPolicy step;
  DephasingModel dephasing;
};

// Columns: "signal", "p_zero", "p_bright", "p_dark".
TimeTrace simulate_mw_rabi(const NVParams& params, const DriveField& mw, std::span<const double> durations,
                           const ReadoutModel& readout, const SimulationOptions& options = {});

struct PiPulse {
  DriveField drive;
  double duration = 0.0;
};

// Resonant pulse on 0 <-> target with duration 1/(2 rabi).
PiPulse calibrate_pi_pulse(const NVParams& params, Level target, double rabi);

// In-frame |0> -> |B> transfer probability of the pulse.
double pi_pulse_fidelity(const NVParams& params, const PiPulse& pulse);

inline constexpr double kMinPiFidelity = 0.999;

// |0> -> MW pi -> RF(tau) -> MW pi -> readout.
// Columns: "signal", "p_bright" (before the mapping pulse), "p_bright_analytic".
TimeTrace simulate_bd_rabi(const NVParams& params, const PiPulse& mw_pi, const DriveField& rf,
                           std::span<const double> rf_durations, const ReadoutModel& readout,
                           const SimulationOptions& options = {});

// Closed-form P_B(tau) = (1 - w)/2.
double analytic_bright_population(const EffectiveParams& eff, const DriveField& rf, double tau);

enum class ChevronAxis { RfFrequency, RfRabi };

struct ChevronConfig {
  ChevronAxis axis = ChevronAxis::RfFrequency;
  // RF frequencies (Hz) or RF rabi_z amplitudes (Hz), strictly increasing.
  std::vector<double> axis_values;
  std::vector<double> durations;
  // Template for the fixed RF parameters; the swept one is overwritten.
  DriveField rf{Eigen::Vector3d(0.0, 0.0, 0.2e6), 7.9e6, 0.0, DriveKind::Rf};
  PiPulse mw_pi;
};

// Rows follow axis_values, columns follow durations.
// Layers: "signal", "p_bright", "p_bright_analytic".
Map2D simulate_bd_chevron(const NVParams& params, const ChevronConfig& config, const ReadoutModel& readout,
                          const SimulationOptions& options = {});

struct SequenceRun {
  // Columns: "p_zero", "p_bright", "p_dark".
  TimeTrace trajectory;
  SpinState final_state = SpinState::zero();
  std::optional<double> readout_signal;
};

// Laser segments reset to |0>, MW segments run in the MW frame, RF segments in
// the double-rotating frame, waits evolve freely.
SequenceRun run_sequence(const NVParams& params, const PulseSequence& sequence, const ReadoutModel& readout,
                         std::size_t samples_per_segment = 16, const SimulationOptions& options = {});

}  // namespace nvspin

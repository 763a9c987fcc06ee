#pragma once

// Driven dynamics of the spin-1 manifold: lab-frame drive Hamiltonian,
// rotating-frame (RWA) Hamiltonians, piecewise-constant propagation and the
// closed-form detuned Rabi formula.

#include <functional>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "nvspin/spin_core.hpp"

namespace nvspin {

enum class DriveKind { Mw, Rf };

// One cosine drive tone rabi . S cos(2 pi f t + phase).
struct DriveField {
  // gamma_e B^(x,y,z) / 2pi in Hz.
  Eigen::Vector3d rabi = Eigen::Vector3d::Zero();
  double frequency = 0.0;
  double phase = 0.0;
  DriveKind kind = DriveKind::Mw;

  void validate() const;
};

struct LabFrame {};

// Rotates |B>, |D> at omega_mw relative to |0>.
struct MwRotatingFrame {
  double omega_mw = 0.0;
};

// Adds a further +omega_rf/2 on |B> and -omega_rf/2 on |D>.
struct DoubleRotatingFrame {
  double omega_mw = 0.0;
  double omega_rf = 0.0;
};

using FrameSpec = std::variant<LabFrame, MwRotatingFrame, DoubleRotatingFrame>;

// Phenomenological pure dephasing of |0>/|B>/|D> coherences.
struct DephasingModel {
  std::optional<double> t2_star;

  void validate() const;
};

struct StepPolicy {
  // Upper bound on the step; absent means the default 1/(steps_per_period f_max).
  std::optional<double> max_step;
  double steps_per_period = 100.0;
  // Fixed number of steps, overriding the above when set.
  std::optional<std::size_t> steps;

  // Coarsest step permitted for time-dependent Hamiltonians: 1/(50 f_max).
  static constexpr double kMinStepsPerPeriod = 50.0;
};

// Hamiltonian as a function of absolute time, in the coordinates of one frame.
struct TimeDependentHamiltonian {
  std::function<HermitianOperator3(double)> at;
  bool constant = false;
  // Largest frequency scale present (Hz); sets the step bound.
  double max_frequency = 0.0;
};

// Mixed state, needed once dephasing is switched on.
class DensityMatrix {
 public:
  static DensityMatrix from_state(const SpinState& state);
  // Throws InvalidInput unless Hermitian with unit trace.
  static DensityMatrix from_matrix(const Matrix3c& rho);

  const Matrix3c& matrix() const { return rho_; }
  double population(const SpinState& basis) const;
  double trace() const { return rho_.trace().real(); }

 private:
  explicit DensityMatrix(Matrix3c rho) : rho_(std::move(rho)) {}
  Matrix3c rho_;
};

Populations populations(const DensityMatrix& rho);

struct PropagationOptions {
  StepPolicy step;
  // Absolute lab time at the start; drive phases and frame phases use it.
  double t_start = 0.0;
  // Number of evenly spaced trajectory samples (including both end points
  // when >= 2). Zero disables sampling.
  std::size_t samples = 0;
};

struct TrajectorySample {
  double time = 0.0;
  SpinState state = SpinState::zero();
};

struct Propagation {
  SpinState final_state = SpinState::zero();
  std::vector<TrajectorySample> trajectory;
  std::size_t steps = 0;
};

struct DensityTrajectorySample {
  double time = 0.0;
  Populations populations;
};

struct DensityPropagation {
  DensityMatrix final_state = DensityMatrix::from_state(SpinState::zero());
  std::vector<DensityTrajectorySample> trajectory;
  std::size_t steps = 0;
};

// H_NV + sum_drives sum_j rabi_j S_j cos(2 pi f t + phase).
HermitianOperator3 hamiltonian_at(double t, const NVParams& params, std::span<const DriveField> drives);

// RWA Hamiltonian in the MW frame for a drive at omega_mw:
//   (D'-w+E')|B><B| + (D'-w-E')|D><D| + couplings 0<->B (x) and 0<->D (y).
HermitianOperator3 rotating_frame_mw(const EffectiveParams& eff, double omega_mw, const DriveField& mw);

// RWA Hamiltonian in the double-rotating frame for an RF drive at omega_rf:
//   (D'-w+E'-wrf/2)|B><B| + (D'-w-E'+wrf/2)|D><D| + (rabi_z/2)(|B><D| + h.c.)
HermitianOperator3 rotating_frame_rf(const EffectiveParams& eff, double omega_mw, double omega_rf,
                                     const DriveField& rf);

// Hamiltonian generator in the given frame. In rotating frames MW drives
// couple 0<->B/D and RF drives couple B<->D; counter-rotating terms are
// dropped. Throws ConfigError for RF drives in the MW-only frame.
TimeDependentHamiltonian frame_hamiltonian(const NVParams& params, std::span<const DriveField> drives,
                                           const FrameSpec& frame);

// Frame rates (Hz) of |0>, |B>, |D>.
Eigen::Vector3d frame_rates(const FrameSpec& frame);

// Re-expresses a state given in frame `from` at absolute time t in frame `to`.
SpinState change_frame(const SpinState& state, const FrameSpec& from, const FrameSpec& to, double t);
DensityMatrix change_frame(const DensityMatrix& rho, const FrameSpec& from, const FrameSpec& to, double t);

// exp(-i 2 pi H dt) by eigendecomposition.
Matrix3c step_propagator(const HermitianOperator3& h, double dt);

// Number of steps taken over `duration` under `policy`. Throws ConfigError when an
// explicit bound exceeds 1/(50 f_max) for a time-dependent Hamiltonian.
std::size_t step_count(const TimeDependentHamiltonian& h, double duration, const StepPolicy& policy);

Propagation evolve(const SpinState& state, const TimeDependentHamiltonian& h, double duration,
                   const PropagationOptions& options = {});

DensityPropagation evolve(const DensityMatrix& rho, const TimeDependentHamiltonian& h, double duration,
                          const DephasingModel& dephasing, const PropagationOptions& options = {});

Propagation propagate(const SpinState& state, const NVParams& params, std::span<const DriveField> drives,
                      const FrameSpec& frame, double duration, const PropagationOptions& options = {});

DensityPropagation propagate(const DensityMatrix& rho, const NVParams& params,
                             std::span<const DriveField> drives, const FrameSpec& frame, double duration,
                             const DephasingModel& dephasing, const PropagationOptions& options = {});

// Population difference P_D - P_B of a two-level system starting in |B>:
//   w = -1 + 2 W^2/(W^2 + d^2) sin^2(sqrt(W^2 + d^2) t / 2)
// with W = 2 pi rabi and d = 2 pi detuning.
double rabi_population_difference(double t, double rabi, double detuning);

}  // namespace nvspin

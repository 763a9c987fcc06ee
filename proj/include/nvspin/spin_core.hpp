#pragma once

// Spin-1 ground-state manifold of the NV center: basis, operators, static
// Hamiltonians and eigensystem utilities.
//
// Basis ordering is (m_s = +1, 0, -1) throughout. Matrix entries are linear
// frequencies in Hz.

#include <array>
#include <complex>
#include <optional>
#include <string>

#include <Eigen/Dense>

namespace nvspin {

using Complex = std::complex<double>;
using Matrix3c = Eigen::Matrix3cd;
using Vector3c = Eigen::Vector3cd;

// Normalized three-component amplitude vector over (+1, 0, -1).
class SpinState {
 public:
  static constexpr double kNormTolerance = 1e-9;

  // Throws InvalidInput unless |a| = 1 within kNormTolerance.
  static SpinState from_amplitudes(const Vector3c& amplitudes);
  // Rescales to unit norm. Throws InvalidInput for zero or non-finite input.
  static SpinState normalized(const Vector3c& amplitudes);

  static SpinState plus_one();
  static SpinState zero();
  static SpinState minus_one();
  // (|+1> + |-1>)/sqrt2
  static SpinState bright();
  // (|+1> - |-1>)/sqrt2
  static SpinState dark();

  const Vector3c& amplitudes() const { return amps_; }
  Complex operator[](int i) const { return amps_(i); }
  double norm() const { return amps_.norm(); }

  // <other|this>
  Complex overlap(const SpinState& other) const { return other.amps_.dot(amps_); }
  // |<basis|this>|^2
  double population(const SpinState& basis) const { return std::norm(overlap(basis)); }

  // Global phase fixed so the largest-magnitude component (first one on
  // ties) is real and non-negative.
  SpinState canonicalized() const;

  bool operator==(const SpinState&) const = default;

 private:
  explicit SpinState(Vector3c amplitudes) : amps_(std::move(amplitudes)) {}
  Vector3c amps_;
};

// Populations in the {|0>, |B>, |D>} basis.
struct Populations {
  double zero = 0.0;
  double bright = 0.0;
  double dark = 0.0;
};

Populations populations(const SpinState& state);

// Columns are |0>, |B>, |D> expressed in the (+1, 0, -1) basis.
const Matrix3c& level_basis();

class HermitianOperator3 {
 public:
  static constexpr double kHermitianTolerance = 1e-12;

  HermitianOperator3() : m_(Matrix3c::Zero()) {}

  // Throws InvalidInput for non-finite entries or M != M^dagger beyond
  // kHermitianTolerance relative to the largest entry.
  static HermitianOperator3 from_matrix(const Matrix3c& m);

  // |ket><ket|-style projector sum c * |a><b| + conj(c) * |b><a|.
  static HermitianOperator3 coupling(const SpinState& a, const SpinState& b, Complex c);
  static HermitianOperator3 projector(const SpinState& a, double weight);

  const Matrix3c& matrix() const { return m_; }
  Complex operator()(int row, int col) const { return m_(row, col); }

  // <bra|H|ket>
  Complex element(const SpinState& bra, const SpinState& ket) const;
  bool is_hermitian(double tolerance = kHermitianTolerance) const;

  HermitianOperator3 operator+(const HermitianOperator3& o) const { return HermitianOperator3(m_ + o.m_); }
  HermitianOperator3 operator-(const HermitianOperator3& o) const { return HermitianOperator3(m_ - o.m_); }
  HermitianOperator3 operator-() const { return HermitianOperator3(-m_); }
  HermitianOperator3 operator*(double s) const { return HermitianOperator3(m_ * s); }
  HermitianOperator3& operator+=(const HermitianOperator3& o) {
    m_ += o.m_;
    return *this;
  }

 private:
  explicit HermitianOperator3(Matrix3c m) : m_(std::move(m)) {}
  Matrix3c m_;
};

inline HermitianOperator3 operator*(double s, const HermitianOperator3& h) { return h * s; }

const HermitianOperator3& spin_x();
const HermitianOperator3& spin_y();
const HermitianOperator3& spin_z();

// Static spin-Hamiltonian parameters, all linear frequencies in Hz.
struct NVParams {
  double d_zfs = 0.0;     // zero-field splitting D
  double e_x = 0.0;       // strain E_x
  double e_y = 0.0;       // strain E_y
  double zeeman_x = 0.0;  // g mu_B B_x, field orthogonal to the NV axis

  static constexpr double kRegimeRatio = 10.0;

  // Throws InvalidInput for non-finite values or d_zfs <= 0.
  void validate() const;
  // d_zfs >= 10 zeeman_x and zeeman_x >= 10 |e_y|, or zeeman_x = e_y = 0.
  bool perturbative() const;

  bool operator==(const NVParams&) const = default;
};

struct EffectiveParams {
  double d_prime = 0.0;
  double e_x_prime = 0.0;
  // Set when the source parameters lie outside the perturbative regime.
  std::optional<std::string> warning;
};

struct TransitionFrequencies {
  double f_upper = 0.0;  // D' + E'_x, 0 <-> B
  double f_lower = 0.0;  // D' - E'_x, 0 <-> D
  double f_bd = 0.0;     // 2 E'_x
};

struct Eigenpair {
  double value = 0.0;
  SpinState vector = SpinState::zero();
};

using Eigensystem = std::array<Eigenpair, 3>;

// D Sz^2 + E_x (Sx^2 - Sy^2) + E_y (SxSy + SySx) + zeeman_x Sx.
HermitianOperator3 build_lab_hamiltonian(const NVParams& params);

// Second-order elimination of the transverse Zeeman term:
//   D'   = D   + (3/2) z^2 / (D + E_x)
//   E'_x = E_x + (1/2) z^2 / (D + E_x)
EffectiveParams effective_params(const NVParams& params);

// D' Sz^2 + E'_x (Sx^2 - Sy^2). Eigenvectors |0>, |B>, |D>.
HermitianOperator3 build_effective_hamiltonian(const EffectiveParams& eff);

// Ascending eigenvalues, orthonormal canonicalized eigenvectors. Degenerate
// subspaces are spanned by the basis closest to {|0>, |B>, |D>}.
Eigensystem eigensystem(const HermitianOperator3& h);

TransitionFrequencies transition_frequencies(const EffectiveParams& eff);

}  // namespace nvspin

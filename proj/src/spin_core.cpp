#include "nvspin/spin_core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "nvspin/errors.hpp"

namespace nvspin {

namespace {

const double kInvSqrt2 = 1.0 / std::sqrt(2.0);

bool all_finite(const Matrix3c& m) {
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (!std::isfinite(m(i, j).real()) || !std::isfinite(m(i, j).imag())) return false;
    }
  }
  return true;
}

double max_abs(const Matrix3c& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace

// ---------------------------------------------------------------------------
// SpinState
// ---------------------------------------------------------------------------

SpinState SpinState::from_amplitudes(const Vector3c& amplitudes) {
  if (!amplitudes.allFinite()) throw InvalidInput("spin state has non-finite amplitudes");
  const double n = amplitudes.norm();
  if (std::abs(n - 1.0) > kNormTolerance) {
    std::ostringstream msg;
    msg << "spin state is not normalized (norm " << n << ")";
    throw InvalidInput(msg.str());
  }
  return SpinState(amplitudes);
}

SpinState SpinState::normalized(const Vector3c& amplitudes) {
  if (!amplitudes.allFinite()) throw InvalidInput("spin state has non-finite amplitudes");
  const double n = amplitudes.norm();
  if (n == 0.0) throw InvalidInput("cannot normalize the zero vector");
  return SpinState(amplitudes / n);
}

SpinState SpinState::plus_one() { return SpinState(Vector3c(1.0, 0.0, 0.0)); }
SpinState SpinState::zero() { return SpinState(Vector3c(0.0, 1.0, 0.0)); }
SpinState SpinState::minus_one() { return SpinState(Vector3c(0.0, 0.0, 1.0)); }
SpinState SpinState::bright() { return SpinState(Vector3c(kInvSqrt2, 0.0, kInvSqrt2)); }
SpinState SpinState::dark() { return SpinState(Vector3c(kInvSqrt2, 0.0, -kInvSqrt2)); }

SpinState SpinState::canonicalized() const {
  const double largest = amps_.cwiseAbs().maxCoeff();
  if (largest == 0.0) return *this;
  int pivot = 0;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(amps_(i)) >= largest * (1.0 - 1e-9)) {
      pivot = i;
      break;
    }
  }
  const Complex phase = std::conj(amps_(pivot)) / std::abs(amps_(pivot));
  Vector3c out = amps_ * phase;
  out(pivot) = Complex(std::abs(out(pivot)), 0.0);
  return SpinState(out);
}

const Matrix3c& level_basis() {
  static const Matrix3c basis = [] {
    Matrix3c b;
    b.col(0) = SpinState::zero().amplitudes();
    b.col(1) = SpinState::bright().amplitudes();
    b.col(2) = SpinState::dark().amplitudes();
    return b;
  }();
  return basis;
}

Populations populations(const SpinState& state) {
  return {state.population(SpinState::zero()), state.population(SpinState::bright()),
          state.population(SpinState::dark())};
}

// ---------------------------------------------------------------------------
// HermitianOperator3
// ---------------------------------------------------------------------------

HermitianOperator3 HermitianOperator3::from_matrix(const Matrix3c& m) {
  if (!all_finite(m)) throw InvalidInput("operator has non-finite entries");
  HermitianOperator3 h(m);
  if (!h.is_hermitian()) throw InvalidInput("operator is not Hermitian");
  return h;
}

HermitianOperator3 HermitianOperator3::coupling(const SpinState& a, const SpinState& b, Complex c) {
  const Matrix3c ab = a.amplitudes() * b.amplitudes().adjoint();
  return HermitianOperator3(c * ab + std::conj(c) * ab.adjoint());
}

HermitianOperator3 HermitianOperator3::projector(const SpinState& a, double weight) {
  return HermitianOperator3(weight * (a.amplitudes() * a.amplitudes().adjoint()));
}

Complex HermitianOperator3::element(const SpinState& bra, const SpinState& ket) const {
  return bra.amplitudes().dot(m_ * ket.amplitudes());
}

bool HermitianOperator3::is_hermitian(double tolerance) const {
  const double scale = std::max(1.0, max_abs(m_));
  return max_abs(m_ - m_.adjoint()) <= tolerance * scale;
}

const HermitianOperator3& spin_x() {
  static const HermitianOperator3 op = [] {
    Matrix3c m;
    m << 0, 1, 0,
         1, 0, 1,
         0, 1, 0;
    return HermitianOperator3::from_matrix(m * kInvSqrt2);
  }();
  return op;
}

const HermitianOperator3& spin_y() {
  static const HermitianOperator3 op = [] {
    const Complex i(0.0, 1.0);
    Matrix3c m;
    m << 0.0, -i, 0.0,
         i, 0.0, -i,
         0.0, i, 0.0;
    return HermitianOperator3::from_matrix(m * kInvSqrt2);
  }();
  return op;
}

const HermitianOperator3& spin_z() {
  static const HermitianOperator3 op = [] {
    Matrix3c m = Matrix3c::Zero();
    m(0, 0) = 1.0;
    m(2, 2) = -1.0;
    return HermitianOperator3::from_matrix(m);
  }();
  return op;
}

// ---------------------------------------------------------------------------
// Parameters and Hamiltonians
// ---------------------------------------------------------------------------

void NVParams::validate() const {
  if (!std::isfinite(d_zfs) || !std::isfinite(e_x) || !std::isfinite(e_y) || !std::isfinite(zeeman_x)) {
    throw InvalidInput("NV parameters must be finite");
  }
  if (d_zfs <= 0.0) throw InvalidInput("zero-field splitting must be positive");
}

bool NVParams::perturbative() const {
  if (zeeman_x == 0.0 && e_y == 0.0) return true;
  const double z = std::abs(zeeman_x);
  return d_zfs >= kRegimeRatio * z && z >= kRegimeRatio * std::abs(e_y);
}

HermitianOperator3 build_lab_hamiltonian(const NVParams& params) {
  params.validate();
  const Matrix3c& sx = spin_x().matrix();
  const Matrix3c& sy = spin_y().matrix();
  const Matrix3c& sz = spin_z().matrix();
  const Matrix3c h = params.d_zfs * (sz * sz) + params.e_x * (sx * sx - sy * sy) +
                     params.e_y * (sx * sy + sy * sx) + params.zeeman_x * sx;
  return HermitianOperator3::from_matrix(h);
}

EffectiveParams effective_params(const NVParams& params) {
  params.validate();
  const double denom = params.d_zfs + params.e_x;
  if (denom == 0.0) throw InvalidInput("effective parameters are singular at D + E_x = 0");
  const double shift = params.zeeman_x * params.zeeman_x / denom;
  EffectiveParams eff{params.d_zfs + 1.5 * shift, params.e_x + 0.5 * shift, std::nullopt};
  if (!params.perturbative()) {
    eff.warning = "parameters outside the perturbative regime D >> g mu_B B_x >> |E_y|";
  }
  return eff;
}

HermitianOperator3 build_effective_hamiltonian(const EffectiveParams& eff) {
  if (!std::isfinite(eff.d_prime) || !std::isfinite(eff.e_x_prime)) {
    throw InvalidInput("effective parameters must be finite");
  }
  const Matrix3c& sx = spin_x().matrix();
  const Matrix3c& sy = spin_y().matrix();
  const Matrix3c& sz = spin_z().matrix();
  return HermitianOperator3::from_matrix(eff.d_prime * (sz * sz) + eff.e_x_prime * (sx * sx - sy * sy));
}

TransitionFrequencies transition_frequencies(const EffectiveParams& eff) {
  return {eff.d_prime + eff.e_x_prime, eff.d_prime - eff.e_x_prime, 2.0 * eff.e_x_prime};
}

// ---------------------------------------------------------------------------
// Eigensystem
// ---------------------------------------------------------------------------

namespace {

// Orthonormal basis of the subspace spanned by `vectors`, built from the
// projections of the |0>, |B>, |D> reference states.
std::vector<Vector3c> resolve_degenerate(const std::vector<Vector3c>& vectors) {
  Matrix3c projector = Matrix3c::Zero();
  for (const auto& v : vectors) projector += v * v.adjoint();

  const Matrix3c& refs = level_basis();
  std::array<int, 3> order{0, 1, 2};
  std::array<double, 3> weight{};
  for (int r = 0; r < 3; ++r) weight[r] = (projector * refs.col(r)).norm();
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return weight[a] > weight[b] + 1e-12; });

  std::vector<std::pair<int, Vector3c>> chosen;
  for (int r : order) {
    if (chosen.size() == vectors.size()) break;
    Vector3c candidate = projector * refs.col(r);
    for (const auto& [idx, q] : chosen) candidate -= q * q.dot(candidate);
    const double n = candidate.norm();
    if (n > 1e-6) chosen.emplace_back(r, candidate / n);
  }
  std::sort(chosen.begin(), chosen.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  std::vector<Vector3c> out;
  for (auto& [idx, q] : chosen) out.push_back(q);
  // Unreachable for a genuine eigenspace, but keep the solver's vectors then.
  if (out.size() != vectors.size()) return vectors;
  return out;
}

}  // namespace

Eigensystem eigensystem(const HermitianOperator3& h) {
  if (!all_finite(h.matrix())) throw InvalidInput("operator has non-finite entries");
  if (!h.is_hermitian()) throw InvalidInput("eigensystem requires a Hermitian operator");

  const Matrix3c m = 0.5 * (h.matrix() + h.matrix().adjoint());
  Eigen::SelfAdjointEigenSolver<Matrix3c> solver(m);
  if (solver.info() != Eigen::Success) throw NumericError("Hermitian eigensolver failed");

  const Eigen::Vector3d values = solver.eigenvalues();
  const Matrix3c vectors = solver.eigenvectors();
  const double tolerance = 1e-10 * std::max(1.0, max_abs(m));

  Eigensystem out;
  int start = 0;
  while (start < 3) {
    int end = start + 1;
    while (end < 3 && values(end) - values(end - 1) <= tolerance) ++end;

    std::vector<Vector3c> group;
    for (int k = start; k < end; ++k) group.push_back(vectors.col(k));
    if (group.size() > 1) group = resolve_degenerate(group);

    // Degenerate members share the group's mean eigenvalue.
    double mean = 0.0;
    for (int k = start; k < end; ++k) mean += values(k);
    mean /= (end - start);
    for (int k = start; k < end; ++k) {
      const double value = group.size() > 1 ? mean : values(k);
      out[k] = Eigenpair{value, SpinState::normalized(group[k - start]).canonicalized()};
    }
    start = end;
  }
  return out;
}

}  // namespace nvspin

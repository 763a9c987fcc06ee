#pragma once

// Parameter recovery: Lorentzian dip fits, Rabi fits and the two-dip
// (D', E') inversion.

#include <optional>
#include <string>
#include <vector>

#include "nvspin/errors.hpp"
#include "nvspin/experiments.hpp"
#include "nvspin/spin_core.hpp"

namespace nvspin {

class FitError : public NumericError {
 public:
  using NumericError::NumericError;
};

struct Dip {
  double center = 0.0;  // Hz
  double fwhm = 0.0;    // Hz
  double depth = 0.0;   // signal units, > 0
};

struct DipFitResult {
  // Sorted by center.
  std::vector<Dip> dips;
  double baseline = 0.0;
  double residual_rms = 0.0;
  bool converged = false;
  int iterations = 0;
  std::string message;
};

inline constexpr int kMaxDips = 6;

// Fits baseline - sum_k depth_k (fwhm_k/2)^2 / ((f - center_k)^2 + (fwhm_k/2)^2)
// to `column`. Seeds come from the n_dips deepest local minima of the 3-point
// smoothed data. Throws FitError when fewer minima exist.
DipFitResult fit_dips(const SpectrumTrace& spectrum, int n_dips, const std::string& column = "signal");

// Which bare level the upper of the two dips belongs to.
enum class UpperDip { Bright, Dark };

struct ExtractedParams {
  EffectiveParams eff;
  double f_bd = 0.0;
  double f_bright = 0.0;
  double f_dark = 0.0;
  bool degenerate = false;
};

// D' = midpoint, |E'| = half the separation, f_bd = separation. E' is
// positive when the upper dip is the |B> transition.
ExtractedParams extract_params(double f1, double f2, UpperDip upper = UpperDip::Bright);

struct RabiFitOptions {
  std::string column = "signal";
  // Signal swing of a complete 0 <-> B transfer (baseline * contrast). Needed
  // to split the generalized frequency into rabi and detuning.
  std::optional<double> full_scale;
  bool fit_decay = false;
};

struct RabiFitResult {
  double rabi = 0.0;         // Hz
  double detuning = 0.0;     // Hz, >= 0
  double generalized = 0.0;  // sqrt(rabi^2 + detuning^2)
  double amplitude = 0.0;
  double offset = 0.0;
  std::optional<double> decay_time;  // s
  double residual_rms = 0.0;
  double generalized_sigma = 0.0;
  // Detuning not resolvable from the amplitude; reported as 0.
  bool ill_conditioned = false;
  bool converged = false;
  int iterations = 0;

  double pi_time() const { return 0.5 / rabi; }
};

// Fits offset + amplitude * (1 - cos(2 pi f t) exp(-t/T)) / 2 on a uniform
// time grid (>= 16 samples). Throws FitError("no oscillation detected") when
// the spectrum shows no peak above the noise floor.
RabiFitResult fit_rabi(const TimeTrace& trace, const RabiFitOptions& options = {});

}  // namespace nvspin

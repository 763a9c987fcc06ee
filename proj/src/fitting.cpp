#include "nvspin/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nvspin/least_squares.hpp"
#include "nvspin/units.hpp"

namespace nvspin {

namespace {

std::vector<double> smooth3(const std::vector<double>& y) {
  std::vector<double> s(y);
  for (std::size_t i = 1; i + 1 < y.size(); ++i) s[i] = (y[i - 1] + y[i] + y[i + 1]) / 3.0;
  return s;
}

double quantile(std::vector<double> v, double q) {
  const auto k = static_cast<std::size_t>(q * static_cast<double>(v.size() - 1));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

struct Seed {
  std::size_t index;
  double depth;
  double half_width;
};

std::vector<Seed> seed_dips(const std::vector<double>& f, const std::vector<double>& s, double baseline, int n_dips) {
  std::vector<Seed> minima;
  for (std::size_t i = 1; i + 1 < s.size(); ++i) {
    if (s[i] < s[i - 1] && s[i] <= s[i + 1] && s[i] < baseline) minima.push_back({i, baseline - s[i], 0.0});
  }
  std::sort(minima.begin(), minima.end(), [](const Seed& a, const Seed& b) { return a.depth > b.depth; });

  std::vector<Seed> picked;
  for (const auto& m : minima) {
    if (static_cast<int>(picked.size()) == n_dips) break;
    // Two minima with no rise above half depth between them belong to one dip.
    const double half = baseline - 0.5 * m.depth;
    const bool merged = std::any_of(picked.begin(), picked.end(), [&](const Seed& p) {
      const auto [lo, hi] = std::minmax(p.index, m.index);
      return *std::max_element(s.begin() + static_cast<std::ptrdiff_t>(lo), s.begin() + static_cast<std::ptrdiff_t>(hi) + 1) <
             half;
    });
    if (!merged) picked.push_back(m);
  }
  if (static_cast<int>(picked.size()) < n_dips) {
    throw FitError("found " + std::to_string(picked.size()) + " local minima, need " + std::to_string(n_dips));
  }

  const double step = (f.back() - f.front()) / static_cast<double>(f.size() - 1);
  for (auto& p : picked) {
    const double half = baseline - 0.5 * p.depth;
    std::size_t lo = p.index, hi = p.index;
    while (lo > 0 && s[lo] < half) --lo;
    while (hi + 1 < s.size() && s[hi] < half) ++hi;
    p.half_width = std::max(0.5 * (f[hi] - f[lo]), step) / 2.0 + 0.5 * step;
  }
  return picked;
}

void require_uniform(const std::vector<double>& t) {
  const double dt = (t.back() - t.front()) / static_cast<double>(t.size() - 1);
  if (!(dt > 0.0)) throw InvalidInput("time axis must be increasing");
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (std::abs((t[i] - t[i - 1]) - dt) > 1e-6 * dt) throw InvalidInput("Rabi fit needs a uniform time grid");
  }
}

}  // namespace

DipFitResult fit_dips(const SpectrumTrace& spectrum, int n_dips, const std::string& column) {
  if (n_dips < 1 || n_dips > kMaxDips) throw InvalidInput("n_dips must lie in 1.." + std::to_string(kMaxDips));
  spectrum.validate();
  const auto& f = spectrum.axis;
  const auto& y = spectrum.column(column);
  if (f.size() < static_cast<std::size_t>(8 * n_dips)) {
    throw InvalidInput("spectrum needs at least " + std::to_string(8 * n_dips) + " points");
  }

  const std::vector<double> s = smooth3(y);
  const double baseline0 = quantile(y, 0.9);
  const auto seeds = seed_dips(f, s, baseline0, n_dips);

  // Normalized axis x = (f - mid) / half_span keeps the problem well scaled.
  const double mid = 0.5 * (f.front() + f.back());
  const double scale = 0.5 * (f.back() - f.front());
  const auto m = static_cast<Eigen::Index>(f.size());
  Eigen::VectorXd x(m), yv(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    x[i] = (f[static_cast<std::size_t>(i)] - mid) / scale;
    yv[i] = y[static_cast<std::size_t>(i)];
  }

  Eigen::VectorXd p0(1 + 3 * n_dips);
  p0[0] = baseline0;
  for (int k = 0; k < n_dips; ++k) {
    p0[1 + 3 * k] = (f[seeds[static_cast<std::size_t>(k)].index] - mid) / scale;
    p0[2 + 3 * k] = seeds[static_cast<std::size_t>(k)].half_width / scale;
    p0[3 + 3 * k] = seeds[static_cast<std::size_t>(k)].depth;
  }

  auto model = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd& jac) {
    r.setConstant(p[0]);
    jac.col(0).setOnes();
    for (int k = 0; k < n_dips; ++k) {
      const double c = p[1 + 3 * k], h = p[2 + 3 * k], d = p[3 + 3 * k];
      for (Eigen::Index i = 0; i < m; ++i) {
        const double u = x[i] - c;
        const double den = u * u + h * h;
        const double lor = h * h / den;
        r[i] -= d * lor;
        jac(i, 1 + 3 * k) = -d * 2.0 * u * h * h / (den * den);
        jac(i, 2 + 3 * k) = -d * 2.0 * h * u * u / (den * den);
        jac(i, 3 + 3 * k) = -lor;
      }
    }
    r -= yv;
  };

  const LmResult lm = levenberg_marquardt(model, p0, m);

  DipFitResult out;
  out.baseline = lm.params[0];
  for (int k = 0; k < n_dips; ++k) {
    out.dips.push_back({mid + scale * lm.params[1 + 3 * k], 2.0 * scale * std::abs(lm.params[2 + 3 * k]),
                        lm.params[3 + 3 * k]});
  }
  std::sort(out.dips.begin(), out.dips.end(), [](const Dip& a, const Dip& b) { return a.center < b.center; });
  out.residual_rms = std::sqrt(lm.residuals.squaredNorm() / static_cast<double>(m));
  out.iterations = lm.iterations;
  out.converged = lm.converged;
  out.message = lm.message;

  for (const auto& d : out.dips) {
    if (!(d.fwhm > 0.0 && d.depth > 0.0 && d.center >= f.front() && d.center <= f.back())) {
      out.converged = false;
      out.message = "fitted dip violates fwhm > 0, depth > 0 or lies outside the data span";
    }
  }
  return out;
}

ExtractedParams extract_params(double f1, double f2, UpperDip upper) {
  if (!(std::isfinite(f1) && std::isfinite(f2) && f1 > 0.0 && f2 > 0.0)) {
    throw InvalidInput("dip frequencies must be positive");
  }
  const double lo = std::min(f1, f2), hi = std::max(f1, f2);
  ExtractedParams out;
  out.eff.d_prime = 0.5 * (lo + hi);
  out.f_bd = hi - lo;
  out.eff.e_x_prime = (upper == UpperDip::Bright ? 0.5 : -0.5) * out.f_bd;
  out.f_bright = upper == UpperDip::Bright ? hi : lo;
  out.f_dark = upper == UpperDip::Bright ? lo : hi;
  out.degenerate = lo == hi;
  if (out.degenerate) out.eff.warning = "degenerate dips: E' is 0";
  return out;
}

RabiFitResult fit_rabi(const TimeTrace& trace, const RabiFitOptions& options) {
  trace.validate();
  const auto& t = trace.axis;
  const auto& y = trace.column(options.column);
  if (t.size() < 16) throw InvalidInput("Rabi fit needs at least 16 samples");
  require_uniform(t);
  if (options.full_scale && !(*options.full_scale > 0.0)) throw InvalidInput("full scale must be positive");

  const std::size_t n = t.size();
  const double span = t.back() - t.front();
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);
  double spread = 0.0;
  for (double v : y) spread = std::max(spread, std::abs(v - mean));
  if (!(spread > 1e-12 * std::max(1.0, std::abs(mean)))) throw FitError("no oscillation detected");

  // Zero-padded (8x) discrete spectrum of the mean-subtracted trace, in
  // cycles per span.
  std::vector<double> power;
  std::vector<double> cycles;
  const double nyquist = 0.5 * static_cast<double>(n - 1);
  for (double k = 0.5; k <= nyquist; k += 0.125) {
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double u = (t[i] - t.front()) / span;
      acc += (y[i] - mean) * std::polar(1.0, -kTwoPi * k * u);
    }
    cycles.push_back(k);
    power.push_back(std::norm(acc));
  }
  const auto peak = static_cast<std::size_t>(std::max_element(power.begin(), power.end()) - power.begin());
  const double floor = quantile(power, 0.5);
  if (!(power[peak] > 20.0 * floor)) throw FitError("no oscillation detected");
  if (cycles[peak] < 1.0) throw FitError("trace spans less than one oscillation period");

  Eigen::VectorXd u(static_cast<Eigen::Index>(n)), yv(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    u[static_cast<Eigen::Index>(i)] = (t[i] - t.front()) / span;
    yv[static_cast<Eigen::Index>(i)] = y[i];
  }

  // Coarse scan: offset and amplitude are linear given the frequency.
  double best_f = cycles[peak], best_o = mean, best_a = 0.0, best_cost = INFINITY;
  for (int j = 0; j <= 240; ++j) {
    const double fc = cycles[peak] * (0.7 + 0.6 * j / 240.0);
    Eigen::MatrixXd basis(u.size(), 2);
    basis.col(0).setOnes();
    basis.col(1) = 0.5 * (1.0 - (kTwoPi * fc * u).array().cos());
    const Eigen::Vector2d coef = basis.colPivHouseholderQr().solve(yv);
    const double cost = (basis * coef - yv).squaredNorm();
    if (cost < best_cost) {
      best_cost = cost;
      best_f = fc;
      best_o = coef[0];
      best_a = coef[1];
    }
  }

  const bool decay = options.fit_decay;
  Eigen::VectorXd p0(decay ? 4 : 3);
  p0 << best_o, best_a, best_f;
  if (decay) p0[3] = 0.0;

  auto model = [&](const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd& jac) {
    const double g = decay ? p[3] : 0.0;
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      const double ph = kTwoPi * p[2] * u[i];
      const double e = std::exp(-g * u[i]);
      const double c = std::cos(ph);
      r[i] = p[0] + p[1] * 0.5 * (1.0 - c * e) - yv[i];
      jac(i, 0) = 1.0;
      jac(i, 1) = 0.5 * (1.0 - c * e);
      jac(i, 2) = p[1] * 0.5 * std::sin(ph) * kTwoPi * u[i] * e;
      if (decay) jac(i, 3) = p[1] * 0.5 * c * e * u[i];
    }
  };
  const LmResult lm = levenberg_marquardt(model, p0, u.size());

  RabiFitResult out;
  out.offset = lm.params[0];
  out.amplitude = lm.params[1];
  out.generalized = std::abs(lm.params[2]) / span;
  if (decay && lm.params[3] > 0.0) out.decay_time = span / lm.params[3];
  out.residual_rms = std::sqrt(lm.residuals.squaredNorm() / static_cast<double>(n));
  out.iterations = lm.iterations;
  out.converged = lm.converged;
  double sigma_amp = 0.0;
  if (lm.covariance.size() > 0) {
    out.generalized_sigma = std::sqrt(std::max(0.0, lm.covariance(2, 2))) / span;
    sigma_amp = std::sqrt(std::max(0.0, lm.covariance(1, 1)));
  }

  // Amplitude ratio A = rabi^2 / (rabi^2 + detuning^2).
  out.rabi = out.generalized;
  out.detuning = 0.0;
  out.ill_conditioned = true;
  if (options.full_scale) {
    const double ratio = std::abs(out.amplitude) / *options.full_scale;
    const double sigma_ratio = sigma_amp / *options.full_scale;
    if (1.0 - ratio > std::max(2.0 * sigma_ratio, 1e-9)) {
      out.rabi = out.generalized * std::sqrt(ratio);
      out.detuning = out.generalized * std::sqrt(1.0 - ratio);
      out.ill_conditioned = false;
    }
  }
  if (!(out.rabi > 0.0) || !std::isfinite(out.rabi)) {
    out.converged = false;
  }
  return out;
}

}  // namespace nvspin

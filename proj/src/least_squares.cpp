#include "nvspin/least_squares.hpp"

#include <cmath>

#include "nvspin/errors.hpp"

namespace nvspin {

namespace {

Eigen::MatrixXd covariance_of(const Eigen::MatrixXd& jac, const Eigen::VectorXd& r) {
  const Eigen::Index m = jac.rows(), n = jac.cols();
  if (m <= n) return {};
  const Eigen::MatrixXd jtj = jac.transpose() * jac;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(jtj);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return {};
  const Eigen::VectorXd d = ldlt.vectorD();
  if (d.minCoeff() <= 1e-14 * d.maxCoeff()) return {};
  const double sigma2 = r.squaredNorm() / static_cast<double>(m - n);
  return sigma2 * ldlt.solve(Eigen::MatrixXd::Identity(n, n));
}

}  // namespace

LmResult levenberg_marquardt(const ResidualFunction& f, Eigen::VectorXd p, Eigen::Index n_residuals,
                             const LmOptions& options) {
  const Eigen::Index n = p.size();
  if (n == 0 || n_residuals < n) throw InvalidInput("least squares needs at least as many residuals as parameters");
  if (!p.allFinite()) throw InvalidInput("initial parameters must be finite");

  Eigen::VectorXd r(n_residuals), r_try(n_residuals);
  Eigen::MatrixXd jac(n_residuals, n), jac_try(n_residuals, n);
  f(p, r, jac);
  if (!r.allFinite() || !jac.allFinite()) throw NumericError("residuals are not finite at the initial guess");

  LmResult out;
  double cost = 0.5 * r.squaredNorm();
  out.cost_history.push_back(cost);
  double lambda = options.initial_lambda;
  double nu = 2.0;

  for (int it = 0; it < options.max_iterations; ++it) {
    out.iterations = it + 1;
    const Eigen::MatrixXd jtj = jac.transpose() * jac;
    const Eigen::VectorXd g = jac.transpose() * r;
    if (g.cwiseAbs().maxCoeff() < options.g_tol) {
      out.converged = true;
      out.message = "gradient below tolerance";
      break;
    }

    // Marquardt scaling: damp along the diagonal of J^T J.
    Eigen::VectorXd diag = jtj.diagonal().cwiseMax(1e-300);
    Eigen::MatrixXd a = jtj;
    a.diagonal() += lambda * diag;
    const Eigen::VectorXd dp = a.ldlt().solve(-g);
    if (!dp.allFinite()) {
      lambda *= nu;
      nu *= 2.0;
      continue;
    }

    const Eigen::VectorXd p_try = p + dp;
    f(p_try, r_try, jac_try);
    const double cost_try = r_try.allFinite() ? 0.5 * r_try.squaredNorm() : INFINITY;
    const double predicted = -(dp.dot(g) + 0.5 * dp.dot(jtj * dp));
    const double rho = predicted > 0.0 ? (cost - cost_try) / predicted : -1.0;

    const bool small_step = dp.norm() < options.x_tol * (p.norm() + options.x_tol);
    if (cost_try <= cost && jac_try.allFinite()) {
      p = p_try;
      r.swap(r_try);
      jac.swap(jac_try);
      cost = cost_try;
      out.cost_history.push_back(cost);
      lambda *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * std::max(rho, 0.0) - 1.0, 3));
      nu = 2.0;
    } else {
      lambda *= nu;
      nu *= 2.0;
    }
    if (small_step) {
      out.converged = true;
      out.message = "parameter change below tolerance";
      break;
    }
    if (lambda > 1e300) {
      out.message = "damping diverged";
      break;
    }
  }
  if (!out.converged && out.message.empty()) out.message = "maximum iterations reached";

  out.params = p;
  out.residuals = r;
  out.cost = cost;
  out.covariance = covariance_of(jac, r);
  return out;
}

}  // namespace nvspin

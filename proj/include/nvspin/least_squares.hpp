#pragma once

// Levenberg-Marquardt for small dense problems. Accepted steps never increase
// the cost 0.5 * |r|^2.

#include <Eigen/Dense>
#include <functional>
#include <string>
#include <vector>

namespace nvspin {

// Fills residuals r (size m) and Jacobian J (m x n) at parameters p.
using ResidualFunction = std::function<void(const Eigen::VectorXd& p, Eigen::VectorXd& r, Eigen::MatrixXd& J)>;

struct LmOptions {
  int max_iterations = 200;
  // Converged once |dp| < x_tol * (|p| + x_tol).
  double x_tol = 1e-10;
  // Converged once max |J^T r| < g_tol.
  double g_tol = 1e-14;
  double initial_lambda = 1e-3;
};

struct LmResult {
  Eigen::VectorXd params;
  Eigen::VectorXd residuals;
  // sigma^2 (J^T J)^-1 with sigma^2 = |r|^2 / (m - n); empty if singular.
  Eigen::MatrixXd covariance;
  double cost = 0.0;
  // Cost after every accepted step, starting with the initial guess.
  std::vector<double> cost_history;
  int iterations = 0;
  bool converged = false;
  std::string message;
};

LmResult levenberg_marquardt(const ResidualFunction& f, Eigen::VectorXd p0, Eigen::Index n_residuals,
                             const LmOptions& options = {});

}  // namespace nvspin

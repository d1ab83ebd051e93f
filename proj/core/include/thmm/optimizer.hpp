#pragma once

#include <Eigen/Core>

#include <functional>
#include <string>
#include <vector>

namespace thmm {

/// Value and gradient of an objective to be maximized. Returns false when the
/// point is infeasible (non-finite value); the line search then backs off.
using ObjectiveFn = std::function<bool(const Eigen::VectorXd& x, double* value, Eigen::VectorXd* grad)>;

struct OptimizerOptions {
  int max_iterations = 1000;
  double gradient_tolerance = 1e-6;  // max-norm of the free gradient
  double function_tolerance = 1e-12;
  double parameter_tolerance = 1e-12;
  int lbfgs_rank = 20;
};

struct OptimizerResult {
  Eigen::VectorXd x;
  double value = 0.0;
  double gradient_max_norm = 0.0;
  int iterations = 0;
  bool converged = false;  // solver reported convergence
  bool usable = false;     // finite value at a point the solver accepted
  std::string message;
};

/// Maximizes `f` over the entries of `x0` flagged in `free`, holding the rest
/// fixed. L-BFGS with a Wolfe line search.
OptimizerResult maximize(const ObjectiveFn& f, const Eigen::VectorXd& x0, const std::vector<bool>& free,
                         const OptimizerOptions& options);

}  // namespace thmm

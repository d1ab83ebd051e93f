#include "thmm/optimizer.hpp"

#include <ceres/gradient_problem.h>
#include <ceres/gradient_problem_solver.h>

#include <cmath>
#include <stdexcept>

namespace thmm {

namespace {

class MaskedObjective final : public ceres::FirstOrderFunction {
 public:
  MaskedObjective(const ObjectiveFn& f, const Eigen::VectorXd& base, const std::vector<int>& index)
      : f_(f), base_(base), index_(index) {}

  bool Evaluate(const double* params, double* cost, double* gradient) const override {
    Eigen::VectorXd x = base_;
    for (std::size_t k = 0; k < index_.size(); ++k) x[index_[k]] = params[k];
    double value = 0.0;
    Eigen::VectorXd g;
    if (!f_(x, &value, gradient ? &g : nullptr) || !std::isfinite(value)) return false;
    *cost = -value;
    if (gradient) {
      for (std::size_t k = 0; k < index_.size(); ++k) {
        gradient[k] = -g[index_[k]];
        if (!std::isfinite(gradient[k])) return false;
      }
    }
    return true;
  }

  int NumParameters() const override { return static_cast<int>(index_.size()); }

 private:
  const ObjectiveFn& f_;
  const Eigen::VectorXd& base_;
  const std::vector<int>& index_;
};

}  // namespace

OptimizerResult maximize(const ObjectiveFn& f, const Eigen::VectorXd& x0, const std::vector<bool>& free,
                         const OptimizerOptions& options) {
  if (free.size() != static_cast<std::size_t>(x0.size())) throw std::invalid_argument("maximize: mask size mismatch");
  std::vector<int> index;
  for (std::size_t k = 0; k < free.size(); ++k)
    if (free[k]) index.push_back(static_cast<int>(k));

  OptimizerResult out;
  out.x = x0;
  if (index.empty()) {
    out.usable = f(x0, &out.value, nullptr) && std::isfinite(out.value);
    out.converged = out.usable;
    out.message = "no free parameters";
    return out;
  }

  std::vector<double> params(index.size());
  for (std::size_t k = 0; k < index.size(); ++k) params[k] = x0[index[k]];

  ceres::GradientProblem problem(new MaskedObjective(f, x0, index));
  ceres::GradientProblemSolver::Options opts;
  opts.line_search_direction_type = ceres::LBFGS;
  opts.max_lbfgs_rank = options.lbfgs_rank;
  opts.max_num_iterations = options.max_iterations;
  opts.gradient_tolerance = options.gradient_tolerance;
  opts.function_tolerance = options.function_tolerance;
  opts.parameter_tolerance = options.parameter_tolerance;
  opts.logging_type = ceres::SILENT;
  opts.minimizer_progress_to_stdout = false;
  ceres::GradientProblemSolver::Summary summary;
  ceres::Solve(opts, problem, params.data(), &summary);

  for (std::size_t k = 0; k < index.size(); ++k) out.x[index[k]] = params[k];
  Eigen::VectorXd g;
  out.usable = f(out.x, &out.value, &g) && std::isfinite(out.value);
  if (out.usable) {
    double norm = 0.0;
    for (int k : index) norm = std::max(norm, std::abs(g[k]));
    out.gradient_max_norm = norm;
  }
  out.iterations = static_cast<int>(summary.iterations.size());
  out.converged = out.usable && summary.termination_type == ceres::CONVERGENCE;
  out.message = summary.message;
  return out;
}

}  // namespace thmm

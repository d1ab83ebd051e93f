#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "thmm/likelihood.hpp"
#include "thmm/model.hpp"
#include "thmm/optimizer.hpp"
#include "thmm/parameters.hpp"

namespace thmm {

class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FitOptions {
  int n_starts = 50;
  std::vector<double> sharpness_schedule{5.0, 25.0, 100.0, 250.0, 500.0};
  double target_b = 500.0;
  double epsilon_sep = 0.15;
  double separation_weight = 1e4;
  double qreml_tol = 1e-3;
  int qreml_max_iter = 50;
  double lambda_max = 1e8;
  double inner_opt_tol = 1e-6;
  int inner_max_iter = 1000;
  double fd_step = 1e-5;
  std::vector<double> hessian_jitter{0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2};
  double start_sigma = 0.2;
  double detection_threshold = 1e-3;
  std::uint64_t seed = 1;

  /// Throws InvalidInput.
  void validate() const;
};

/// One optimizer run on the working vector.
struct ModeFit {
  Eigen::VectorXd working;
  double loglik = 0.0;     // unpenalized log-likelihood at the mode
  double objective = 0.0;  // maximized objective (penalty and separation term included)
  double gradient_max_norm = 0.0;
  int iterations = 0;
  bool converged = false;
  bool usable = false;  // finite objective at the returned point
};

struct StartDiagnostic {
  int start = 0;
  bool ok = false;
  double value = 0.0;
  std::string message;
};

struct NullFit {
  ModelSpec spec;
  Eigen::VectorXd working;  // full THMM layout with beta0 = 0
  ThetaParams theta;
  double loglik = 0.0;
  bool converged = false;
  int best_start = 0;
  std::vector<StartDiagnostic> starts;
};

struct HessianResult {
  Eigen::MatrixXd matrix;  // negative Hessian of l - lambda ||beta0||_1
  double logdet = 0.0;
  double jitter = 0.0;
};

struct QremlStep {
  double lambda = 0.0;
  double beta_sum = 0.0;
  double loglik = 0.0;
  double marginal_loglik = 0.0;
};

struct FitResult {
  ModelSpec spec;
  ThetaParams theta_hat;
  Beta0 beta0_hat;
  Eigen::VectorXd working;
  double lambda_hat = 0.0;
  double loglik = 0.0;
  double null_loglik = 0.0;
  double marginal_loglik = 0.0;
  double hessian_logdet = 0.0;
  double hessian_jitter = 0.0;
  double inner_gradient_norm = 0.0;
  std::vector<std::vector<double>> nu_series;
  std::vector<CovariateScaling> threshold_scaling;
  std::vector<std::optional<double>> thresholds_original;
  std::vector<bool> disturbance_detected;
  int qreml_iterations = 0;
  bool converged = false;
  bool capped = false;  // lambda hit lambda_max: converged to the null model
  std::vector<QremlStep> trace;
};

/// Penalized objective l - lambda ||beta0||_1 - separation hinge, on the
/// working vector, with its gradient.
class PenalizedObjective {
 public:
  PenalizedObjective(const Likelihood& lik, double lambda, double sharpness, bool separation,
                     const FitOptions& options);

  /// Returns the objective; `loglik` receives the plain log-likelihood.
  double evaluate(const Eigen::VectorXd& working, Eigen::VectorXd* grad, double* loglik = nullptr) const;

 private:
  const Likelihood& lik_;
  double lambda_;
  double sharpness_;
  bool separation_;
  double epsilon_;
  double weight_;
};

/// W * max(0, eps - max_i |G^B_ii - G^D_ii|)^2 with both TPMs at the covariate
/// means. Writes its gradient into `grad` (resized) when non-null.
double separation_penalty(const ParameterLayout& layout, const Eigen::VectorXd& working,
                          const std::vector<double>& covariate_means, double epsilon, double weight,
                          Eigen::VectorXd* grad);

/// max_i |G^B_ii - G^D_ii| at the covariate means.
double regime_separation(const ParameterLayout& layout, const Eigen::VectorXd& working,
                         const std::vector<double>& covariate_means);

/// Maximizes the objective over `free` entries from `init`.
ModeFit optimize_mode(const Likelihood& lik, const Eigen::VectorXd& init, const std::vector<bool>& free,
                      double lambda, double sharpness, bool separation, const FitOptions& options);

/// Deterministic single-regime starting point: quantile-based emission means,
/// persistence 0.8, uniform initial distribution, beta0 = 0.
Eigen::VectorXd null_initial_working(const ModelSpec& spec, const TrackData& data);

/// The null point embedded in the THMM: baseline at the null estimates, the
/// disturbed diagonal moved by epsilon + 0.05, beta0 = 0.
Eigen::VectorXd separated_start(const ParameterLayout& layout, const Eigen::VectorXd& null_working,
                                const std::vector<double>& covariate_means, const FitOptions& options);

/// Single-regime HMM fit by multi-start optimization. Throws ConvergenceError
/// when every start fails.
NullFit fit_null(const TrackData& data, const ModelSpec& spec, const FitOptions& options);

/// Unpenalized THMM fit with emissions held at the null estimates while the
/// sharpness steps through the schedule. `fixed_slots` keeps those beta0
/// entries at zero. Returns the best final-stage mode over the starts.
ModeFit progressive_sharpness_fit(const TrackData& data, const ModelSpec& spec, const NullFit& null_fit,
                                  const FitOptions& options, const std::vector<int>& fixed_slots = {});

/// Mode of the penalized objective at fixed lambda, all parameters free
/// (except beta0 entries in `fixed_slots`).
ModeFit fit_penalized(const Likelihood& lik, double lambda, const Eigen::VectorXd& init, const FitOptions& options,
                      const std::vector<int>& fixed_slots = {});

/// Negative Hessian of l - lambda ||beta0||_1 at `working`, by central
/// differences of the analytic gradient. Coordinates are the working scale
/// except beta0, which enters on its natural scale; the penalty is then linear
/// and drops out of the second derivatives. Jitter escalates through
/// options.hessian_jitter until the matrix is positive definite.
HessianResult negative_hessian(const Likelihood& lik, const Eigen::VectorXd& working, double lambda,
                               const FitOptions& options);

/// Symmetrize and escalate jitter; throws NumericalError if never positive definite.
HessianResult regularize_hessian(const Eigen::MatrixXd& h, const std::vector<double>& jitter);

double marginal_loglik(double loglik_at_mode, const Beta0& beta0_hat, double lambda, double hessian_logdet, int p2);

/// lambda = p2 / sum(beta0). Sets `capped` and returns lambda_max when the sum
/// is below 1e-12.
double qreml_update(const Beta0& beta0_hat, double lambda_max, bool* capped = nullptr);

/// Full pipeline: null fit, progressive initialization, then alternating
/// penalized modes and lambda updates.
FitResult qreml_loop(const TrackData& data, const ModelSpec& spec, const FitOptions& options);

/// Per-slot detection: nu_t above the threshold at any step where the slot is active.
std::vector<bool> detect_disturbance(const TrackData& data, const std::vector<std::vector<double>>& nu, int p2,
                                     double threshold);

/// Runs fit(start) for each start and keeps the highest objective; ties go to
/// the lower start index. Failed starts are recorded, not fatal, unless all fail.
ModeFit multi_start(const std::function<ModeFit(int)>& fit, int n_starts, std::vector<StartDiagnostic>* diagnostics);

/// Random start: Gaussian perturbation of the free working entries.
Eigen::VectorXd perturb_start(const Eigen::VectorXd& base, const std::vector<bool>& free, double sigma,
                              std::uint64_t seed, int start);

}  // namespace thmm

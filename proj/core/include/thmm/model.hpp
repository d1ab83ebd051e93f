#pragma once

#include <Eigen/Core>

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "thmm/distributions.hpp"

namespace thmm {

class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DegenerateCovariate : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

enum class Family { gamma, vonmises };

std::string to_string(Family f);
Family family_from_string(const std::string& s);

struct StreamSpec {
  std::string name;
  Family family = Family::gamma;
  // Von Mises streams are centred at zero unless the location is estimated.
  bool estimate_location = false;
};

struct TpmCovariateSpec {
  std::string name;
  // One slope per transition shared by both regimes.
  bool shared = false;
};

struct ModelSpec {
  int n_states = 2;
  std::vector<StreamSpec> streams;
  std::vector<TpmCovariateSpec> tpm_covariates;
  std::vector<std::string> threshold_covariates;
  double sharpness = 500.0;

  int n_pairs() const { return n_states * (n_states - 1); }
  int n_tpm_covariates() const { return static_cast<int>(tpm_covariates.size()); }
  int p2() const { return static_cast<int>(threshold_covariates.size()); }

  /// Throws InvalidInput when a structural invariant is broken.
  void validate() const;
};

/// Logit-link coefficients for one regime. Row `pair_index(i, j)` holds the
/// intercept followed by one slope per TPM covariate for the off-diagonal
/// entry (i, j); diagonal predictors are fixed at zero.
struct TransitionCoefficients {
  int n_states = 0;
  Eigen::MatrixXd alpha;

  static TransitionCoefficients zeros(int n_states, int n_covariates);

  static int pair_index(int n_states, int i, int j) {
    return i * (n_states - 1) + (j < i ? j : j - 1);
  }
  int n_covariates() const { return static_cast<int>(alpha.cols()) - 1; }
  double& intercept(int i, int j) { return alpha(pair_index(n_states, i, j), 0); }
  double intercept(int i, int j) const { return alpha(pair_index(n_states, i, j), 0); }
  double& slope(int i, int j, int m) { return alpha(pair_index(n_states, i, j), 1 + m); }
  double slope(int i, int j, int m) const { return alpha(pair_index(n_states, i, j), 1 + m); }
};

struct RegimeCoefficients {
  TransitionCoefficients baseline;
  TransitionCoefficients disturbed;
};

/// Threshold coefficients, stored on the log scale so every entry stays
/// strictly positive during optimization. A log value of -inf is an exact zero.
struct Beta0 {
  Eigen::VectorXd log_values;

  static Beta0 from_values(std::span<const double> values);
  static Beta0 zeros(int p2);

  int size() const { return static_cast<int>(log_values.size()); }
  Eigen::VectorXd values() const {
    return log_values.unaryExpr([](double v) { return std::exp(v); });  // exact zero at -inf
  }
  double l1_norm() const { return values().sum(); }
};

/// A covariate mapped affinely onto [0, 1]. For a mutually exclusive slot the
/// inactive steps are exactly zero and do not take part in the min/max.
struct StandardizedCovariate {
  std::vector<double> values;
  double orig_min = 0.0;
  double orig_max = 1.0;

  double to_original(double standardized) const {
    return standardized * (orig_max - orig_min) + orig_min;
  }
};

using StreamParams = std::variant<GammaParams, VonMisesParams>;

struct ThetaParams {
  // emissions[state][stream]
  std::vector<std::vector<StreamParams>> emissions;
  RegimeCoefficients coeffs;
  Eigen::VectorXd delta_baseline;
  Eigen::VectorXd delta_disturbed;

  void validate(const ModelSpec& spec) const;
};

/// Min-max standardization. Entries flagged in `forced_zero_mask` are left out
/// of the min/max and mapped by the same affine map.
StandardizedCovariate standardize(std::span<const double> u,
                                  const std::vector<bool>* forced_zero_mask = nullptr);

/// Standardizes one mutually exclusive slot: min/max over active entries only,
/// inactive entries are set to exactly 0. A slot with no active entry comes
/// back all zero with the unit range.
StandardizedCovariate standardize_slot(std::span<const double> u, const std::vector<bool>& active);

/// Multinomial-logit TPM for one regime at covariate row `omega`.
Eigen::MatrixXd build_tpm(const TransitionCoefficients& coeffs, std::span<const double> omega);

/// Intercept-only coefficients whose TPM has the given diagonal and equal
/// off-diagonal entries in each row.
TransitionCoefficients persistence_to_coeffs(std::span<const double> diag, int n_covariates = 0);

double stable_sigmoid(double z);

/// Smoothed step [1 + exp(-b (beta0' u - 1))]^-1.
double mixture_prob(std::span<const double> beta0_values, std::span<const double> u, double b);
double mixture_prob(const Beta0& beta0, std::span<const double> u, double b);

/// Coefficients at or below this are reported as shrunk to zero.
inline constexpr double kBetaZeroTolerance = 1e-12;

/// Threshold 1/beta0 mapped back to the covariate's original units; nullopt
/// when the coefficient is shrunk to zero.
std::optional<double> threshold_original_scale(double beta0_hat, const StandardizedCovariate& cov);

/// Gamma/von Mises parameters of a state used as a single stream.
inline const GammaParams& as_gamma(const StreamParams& p) { return std::get<GammaParams>(p); }
inline const VonMisesParams& as_vonmises(const StreamParams& p) { return std::get<VonMisesParams>(p); }

}  // namespace thmm

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include "thmm/estimation.hpp"
#include "thmm/likelihood.hpp"
#include "thmm/model.hpp"

namespace thmm {

struct BlrtConfig {
  int B = 100;
  std::vector<int> null_slots;  // beta0 slots fixed at zero under H0; empty = all
  double alpha = 0.05;
  std::uint64_t seed = 1;

  /// Throws InvalidInput.
  void validate(int p2) const;
  /// The slots fixed under H0, with the empty default expanded.
  std::vector<int> resolved_null_slots(int p2) const;
};

/// Unpenalized fit of one hypothesis.
struct HypothesisFit {
  Eigen::VectorXd working;
  ThetaParams theta;
  Beta0 beta0;
  double loglik = 0.0;
};

struct BlrtResult {
  double null_loglik = 0.0;
  double alt_loglik = 0.0;
  double observed_lr = 0.0;
  std::vector<double> bootstrap_lrs;  // valid replicates, in replicate order
  int n_failed = 0;
  std::vector<std::string> failures;
  double p_value = 1.0;
  bool reject = false;
};

/// Fit with the listed slots held at zero. All slots fixed gives the
/// single-regime model; otherwise an unpenalized THMM fit.
HypothesisFit fit_hypothesis(const TrackData& data, const ModelSpec& spec, const std::vector<int>& fixed_slots,
                             const FitOptions& options);

/// 2 (l_H1 - l_H0), with l_H1 floored at l_H0.
double likelihood_ratio(double alt_loglik, double null_loglik);

/// Share of bootstrap statistics strictly greater than the observed one.
double bootstrap_p_value(double observed, const std::vector<double>& bootstrap);

/// Parametric bootstrap likelihood-ratio test of H0 (null slots at zero)
/// against the THMM with every slot free.
BlrtResult blrt(const TrackData& data, const ModelSpec& spec, const BlrtConfig& config, const FitOptions& options,
                int threads = 1);

}  // namespace thmm

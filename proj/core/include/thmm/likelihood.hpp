#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "thmm/model.hpp"
#include "thmm/parameters.hpp"

namespace thmm {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Track {
  std::string id;
  RowMatrix observations;          // T x streams, NaN marks a missing entry
  RowMatrix tpm_covariates;        // T x C
  RowMatrix threshold_covariates;  // T x p2, standardized
  std::vector<bool> baseline_mask; // empty or length T; true forces nu_t = 0

  int length() const { return static_cast<int>(observations.rows()); }
  bool masked(int t) const { return !baseline_mask.empty() && baseline_mask[static_cast<std::size_t>(t)]; }
};

struct CovariateScaling {
  std::string name;
  double orig_min = 0.0;
  double orig_max = 1.0;
};

struct TrackData {
  std::vector<Track> tracks;
  std::vector<CovariateScaling> threshold_scaling;  // one per slot

  int total_length() const;
  /// Throws InvalidInput on misaligned or empty data.
  void validate(const ModelSpec& spec) const;
};

/// Log-likelihood of the two-regime model on a fixed dataset, evaluated on the
/// flat working vector of ParameterLayout. The transition into step t uses the
/// covariates and mixture probability at t; the first step of every track uses
/// the mixed initial vector (1 - nu_1) delta_B + nu_1 delta_D.
class Likelihood {
 public:
  Likelihood(const ModelSpec& spec, const TrackData& data);

  const ParameterLayout& layout() const { return layout_; }
  const TrackData& data() const { return *data_; }

  /// Log-likelihood; fills `grad` (size layout().size()) when non-null.
  double evaluate(const Eigen::VectorXd& working, double sharpness, Eigen::VectorXd* grad = nullptr) const;

  /// Per-track smoothed mixture probabilities.
  std::vector<std::vector<double>> nu_series(const Eigen::VectorXd& working, double sharpness) const;

  /// Most probable state path per track under the mixed per-step transitions.
  /// Ties go to the lower state index.
  std::vector<std::vector<int>> viterbi(const Eigen::VectorXd& working, double sharpness) const;

  /// Column means of the TPM covariates over all steps.
  const std::vector<double>& covariate_means() const { return covariate_means_; }

 private:
  ParameterLayout layout_;
  const TrackData* data_;
  std::vector<RowMatrix> log_observations_;  // log y for gamma streams, per track
  std::vector<double> covariate_means_;
};

double forward_loglik(const ModelSpec& spec, const ThetaParams& theta, const Beta0& beta0,
                      const TrackData& data, double sharpness);

/// forward_loglik - lambda * ||beta0||_1
double penalized_loglik(const ModelSpec& spec, const ThetaParams& theta, const Beta0& beta0,
                        const TrackData& data, double lambda, double sharpness);

/// Gradient of penalized_loglik with respect to the full working vector.
Eigen::VectorXd objective_gradient(const ModelSpec& spec, const ThetaParams& theta, const Beta0& beta0,
                                   const TrackData& data, double lambda, double sharpness);

std::vector<std::vector<int>> viterbi(const ModelSpec& spec, const ThetaParams& theta, const Beta0& beta0,
                                      const TrackData& data, double sharpness);

/// Fraction of decoded steps spent in each state, pooled over tracks.
std::vector<double> state_occupancy(const std::vector<std::vector<int>>& paths, int n_states);

}  // namespace thmm

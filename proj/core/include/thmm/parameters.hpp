#pragma once

#include <Eigen/Core>

#include <vector>

#include "thmm/model.hpp"

namespace thmm {

enum class Regime { baseline = 0, disturbed = 1 };

/// Flat working-scale parameter vector for a ModelSpec.
///
/// Layout, in order:
///   emissions   per state, per stream: gamma (log mean, log shape),
///               von Mises (log concentration[, location])
///   baseline    per off-diagonal pair: intercept, regime-specific slopes
///   disturbed   same as baseline
///   shared      per off-diagonal pair: slopes of shared covariates
///   delta_B     N-1 logits, state 0 is the reference category
///   delta_D     N-1 logits
///   log beta0   p2 entries
class ParameterLayout {
 public:
  explicit ParameterLayout(const ModelSpec& spec);

  const ModelSpec& spec() const { return spec_; }
  int size() const { return size_; }

  int emission_width(int stream) const { return stream_width_[stream]; }
  int emission_offset(int state, int stream) const {
    return state * emission_stride_ + stream_offset_[stream];
  }
  int emission_size() const { return spec_.n_states * emission_stride_; }

  /// Working index of a logit coefficient. `column` is 0 for the intercept and
  /// 1 + m for covariate m; shared covariates map to the same index for both
  /// regimes.
  int coeff_index(Regime regime, int pair, int column) const;

  int delta_offset(Regime regime) const {
    return regime == Regime::baseline ? delta_offset_ : delta_offset_ + spec_.n_states - 1;
  }
  int beta_offset() const { return beta_offset_; }

  Eigen::VectorXd pack(const ThetaParams& theta, const Beta0& beta0) const;
  void unpack(const Eigen::VectorXd& working, ThetaParams* theta, Beta0* beta0) const;

  // Free-parameter masks.
  std::vector<bool> mask_all() const;
  /// Single-regime HMM: emissions, baseline coefficients, shared slopes, delta_B.
  std::vector<bool> mask_null() const;
  /// Hidden process only: both regimes' coefficients, both deltas, beta0.
  std::vector<bool> mask_hidden_process() const;
  /// Clears the beta0 entries listed in `fixed_slots`.
  void fix_beta_slots(std::vector<bool>& mask, const std::vector<int>& fixed_slots) const;

 private:
  ModelSpec spec_;
  std::vector<int> stream_width_;
  std::vector<int> stream_offset_;
  std::vector<int> own_column_;     // covariate m -> column within the regime block, -1 if shared
  std::vector<int> shared_column_;  // covariate m -> column within the shared block, -1 if not
  int emission_stride_ = 0;
  int regime_block_cols_ = 0;
  int shared_cols_ = 0;
  int coeff_offset_ = 0;
  int shared_offset_ = 0;
  int delta_offset_ = 0;
  int beta_offset_ = 0;
  int size_ = 0;
};

/// Softmax with the first category pinned at logit 0.
Eigen::VectorXd probabilities_from_logits(const Eigen::Ref<const Eigen::VectorXd>& logits);
Eigen::VectorXd logits_from_probabilities(const Eigen::Ref<const Eigen::VectorXd>& probs);

}  // namespace thmm

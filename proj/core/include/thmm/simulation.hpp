#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "thmm/estimation.hpp"
#include "thmm/likelihood.hpp"
#include "thmm/model.hpp"

namespace thmm {

/// u_t = 20 + 10 (sin(t/150) + cos(t/650)), t = 1..T.
std::vector<double> gen_covariate(int T);

/// Independent fair coin flips.
std::vector<bool> gen_binary_covariate(int T, std::uint64_t seed);

/// Slot 1 carries u where the flag is set, slot 2 where it is not.
std::pair<std::vector<double>, std::vector<double>> make_bivariate(const std::vector<double>& u,
                                                                   const std::vector<bool>& flag);

struct CanonicalParams {
  std::vector<double> means{10.0, 4.0, 1.0};
  std::vector<double> shapes{12.0, 10.0, 1.5};
  std::vector<double> baseline_persistence{0.9, 0.9, 0.9};
  std::vector<double> disturbed_persistence{0.9, 0.7, 0.7};

  /// Three-state spec: one gamma step stream, no TPM covariates.
  ModelSpec spec(int p2) const;
  ThetaParams theta() const;
};

/// Draws states and observations. The regime at step t is disturbed when
/// beta0' u_t > 1 exactly (no smoothing) and the step is not masked. The
/// covariates, mask and missing pattern of `layout_data` are reused.
TrackData simulate_thmm(const ModelSpec& spec, const ThetaParams& theta, const Beta0& beta0,
                        const TrackData& layout_data, std::uint64_t seed, std::vector<std::vector<int>>* states = nullptr);

/// Fraction of steps with beta0' u_t > 1.
double disturbance_frequency(const RowMatrix& u, const Beta0& beta0);

struct ScenarioConfig {
  std::string id = "1a";  // 1a, 1b, 2a, 2b, 2c
  int T = 1000;
  int n_replicates = 0;
  std::uint64_t seed = 1;

  /// Thresholds on the original covariate scale, per slot; nullopt = none.
  std::vector<std::optional<double>> thresholds_original() const;
  int p2() const;
  void validate() const;
};

struct ScenarioDataset {
  ModelSpec spec;
  ThetaParams theta;
  TrackData data;
  Beta0 beta_true;  // zero entries where the slot has no threshold
  double disturbed_fraction = 0.0;
};

/// Covariates, truths and simulated observations of one replicate.
ScenarioDataset make_scenario_dataset(const ScenarioConfig& config, int replicate);

struct ReplicateRecord {
  int replicate = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::vector<double> beta_true;
  std::vector<double> beta_hat;
  std::vector<bool> detected;
  double lambda_hat = 0.0;
  bool capped = false;
  bool converged = false;
  int qreml_iterations = 0;
  double loglik = 0.0;
  double fixed_point = 0.0;             // lambda_hat * ||beta0_hat||_1
  std::vector<double> mean_bias;        // per state, states matched by sorted mean
  std::vector<double> shape_bias;
  double runtime_seconds = 0.0;
};

struct SlotSummary {
  bool has_threshold = false;
  double detection_rate = 0.0;  // power when has_threshold, false-positive rate otherwise
  double beta_bias = 0.0;
  double beta_sd = 0.0;
};

struct ScenarioMetrics {
  ScenarioConfig config;
  std::vector<ReplicateRecord> records;
  int n_ok = 0;
  int n_failed = 0;
  std::vector<SlotSummary> slots;
  std::vector<double> mean_bias;
  std::vector<double> shape_bias;
};

/// Per-state biases of a fit, matching states by ascending mean of the first stream.
void theta_bias(const ThetaParams& fitted, const ThetaParams& truth, std::vector<double>* mean_bias,
                std::vector<double>* shape_bias);

ScenarioMetrics summarize(const ScenarioConfig& config, std::vector<ReplicateRecord> records);

/// Fits every replicate with qreml_loop on `threads` workers.
ScenarioMetrics run_scenario(const ScenarioConfig& config, const FitOptions& options, int threads = 1);

}  // namespace thmm

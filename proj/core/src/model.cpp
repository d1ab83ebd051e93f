#include "thmm/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace thmm {

std::string to_string(Family f) { return f == Family::gamma ? "gamma" : "vonmises"; }

Family family_from_string(const std::string& s) {
  if (s == "gamma") return Family::gamma;
  if (s == "vonmises" || s == "von_mises") return Family::vonmises;
  throw InvalidInput("unknown distribution family '" + s + "'");
}

void ModelSpec::validate() const {
  if (n_states < 1) throw InvalidInput("n_states must be at least 1");
  if (streams.empty()) throw InvalidInput("model needs at least one data stream");
  if (!(sharpness > 0.0) || !std::isfinite(sharpness)) throw InvalidInput("sharpness must be positive");
}

TransitionCoefficients TransitionCoefficients::zeros(int n_states, int n_covariates) {
  TransitionCoefficients c;
  c.n_states = n_states;
  c.alpha = Eigen::MatrixXd::Zero(n_states * (n_states - 1), 1 + n_covariates);
  return c;
}

Beta0 Beta0::from_values(std::span<const double> values) {
  Beta0 b;
  b.log_values.resize(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] < 0.0) throw InvalidInput("beta0 entries must be nonnegative");
    b.log_values[static_cast<Eigen::Index>(i)] =
        values[i] == 0.0 ? -std::numeric_limits<double>::infinity() : std::log(values[i]);
  }
  return b;
}

Beta0 Beta0::zeros(int p2) {
  Beta0 b;
  b.log_values = Eigen::VectorXd::Constant(p2, -std::numeric_limits<double>::infinity());
  return b;
}

void ThetaParams::validate(const ModelSpec& spec) const {
  const auto n = static_cast<std::size_t>(spec.n_states);
  if (emissions.size() != n) throw InvalidInput("theta: wrong number of states");
  for (const auto& state : emissions) {
    if (state.size() != spec.streams.size()) throw InvalidInput("theta: wrong number of streams");
    for (std::size_t s = 0; s < state.size(); ++s) {
      const bool ok = spec.streams[s].family == Family::gamma
                          ? std::holds_alternative<GammaParams>(state[s]) && as_gamma(state[s]).valid()
                          : std::holds_alternative<VonMisesParams>(state[s]) &&
                                as_vonmises(state[s]).valid();
      if (!ok) throw InvalidInput("theta: invalid parameters for stream " + spec.streams[s].name);
    }
  }
  auto check_delta = [&](const Eigen::VectorXd& d, const char* name) {
    if (d.size() != spec.n_states || (d.array() < 0.0).any() || std::abs(d.sum() - 1.0) > 1e-8)
      throw InvalidInput(std::string("theta: ") + name + " is not a probability vector");
  };
  check_delta(delta_baseline, "delta_baseline");
  check_delta(delta_disturbed, "delta_disturbed");
  for (const auto* c : {&coeffs.baseline, &coeffs.disturbed}) {
    if (c->n_states != spec.n_states || c->alpha.rows() != spec.n_pairs() ||
        c->alpha.cols() != 1 + spec.n_tpm_covariates() || !c->alpha.allFinite())
      throw InvalidInput("theta: malformed transition coefficients");
  }
}

StandardizedCovariate standardize(std::span<const double> u, const std::vector<bool>* forced_zero_mask) {
  if (u.size() < 2) throw InvalidInput("standardize: need at least two values");
  if (forced_zero_mask && forced_zero_mask->size() != u.size())
    throw InvalidInput("standardize: mask length mismatch");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < u.size(); ++t) {
    if (!std::isfinite(u[t])) throw InvalidInput("standardize: non-finite value");
    if (forced_zero_mask && (*forced_zero_mask)[t]) continue;
    lo = std::min(lo, u[t]);
    hi = std::max(hi, u[t]);
  }
  if (!(hi > lo)) throw DegenerateCovariate("standardize: covariate is constant");
  StandardizedCovariate out;
  out.orig_min = lo;
  out.orig_max = hi;
  out.values.resize(u.size());
  const double range = hi - lo;
  for (std::size_t t = 0; t < u.size(); ++t) out.values[t] = (u[t] - lo) / range;
  return out;
}

StandardizedCovariate standardize_slot(std::span<const double> u, const std::vector<bool>& active) {
  if (active.size() != u.size()) throw InvalidInput("standardize_slot: mask length mismatch");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -std::numeric_limits<double>::infinity();
  std::size_t n_active = 0;
  for (std::size_t t = 0; t < u.size(); ++t) {
    if (!active[t]) continue;
    if (!std::isfinite(u[t])) throw InvalidInput("standardize_slot: non-finite value");
    lo = std::min(lo, u[t]);
    hi = std::max(hi, u[t]);
    ++n_active;
  }
  StandardizedCovariate out;
  out.values.assign(u.size(), 0.0);
  if (n_active == 0) return out;
  if (!(hi > lo)) throw DegenerateCovariate("standardize_slot: covariate is constant over its active steps");
  out.orig_min = lo;
  out.orig_max = hi;
  for (std::size_t t = 0; t < u.size(); ++t)
    if (active[t]) out.values[t] = (u[t] - lo) / (hi - lo);
  return out;
}

Eigen::MatrixXd build_tpm(const TransitionCoefficients& coeffs, std::span<const double> omega) {
  const int n = coeffs.n_states;
  const int c = coeffs.n_covariates();
  if (static_cast<int>(omega.size()) != c) throw InvalidInput("build_tpm: covariate row has wrong length");
  for (double w : omega)
    if (!std::isfinite(w)) throw InvalidInput("build_tpm: non-finite covariate");
  Eigen::MatrixXd gamma(n, n);
  for (int i = 0; i < n; ++i) {
    double row_max = 0.0;  // diagonal predictor
    for (int j = 0; j < n; ++j) {
      if (j == i) {
        gamma(i, j) = 0.0;
        continue;
      }
      const int p = TransitionCoefficients::pair_index(n, i, j);
      double eta = coeffs.alpha(p, 0);
      for (int m = 0; m < c; ++m) eta += coeffs.alpha(p, 1 + m) * omega[static_cast<std::size_t>(m)];
      gamma(i, j) = eta;
      row_max = std::max(row_max, eta);
    }
    double total = 0.0;
    for (int j = 0; j < n; ++j) {
      gamma(i, j) = std::exp(gamma(i, j) - row_max);
      total += gamma(i, j);
    }
    gamma.row(i) /= total;
  }
  return gamma;
}

TransitionCoefficients persistence_to_coeffs(std::span<const double> diag, int n_covariates) {
  const int n = static_cast<int>(diag.size());
  if (n < 2) throw InvalidInput("persistence_to_coeffs: need at least two states");
  auto out = TransitionCoefficients::zeros(n, n_covariates);
  for (int i = 0; i < n; ++i) {
    const double d = diag[static_cast<std::size_t>(i)];
    if (!(d > 0.0 && d < 1.0)) throw InvalidInput("persistence_to_coeffs: diagonal must lie in (0, 1)");
    const double off = (1.0 - d) / (n - 1);
    for (int j = 0; j < n; ++j)
      if (j != i) out.intercept(i, j) = std::log(off / d);
  }
  return out;
}

double stable_sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double mixture_prob(std::span<const double> beta0_values, std::span<const double> u, double b) {
  if (beta0_values.size() != u.size()) throw InvalidInput("mixture_prob: dimension mismatch");
  double lin = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) lin += beta0_values[i] * u[i];
  return stable_sigmoid(b * (lin - 1.0));
}

double mixture_prob(const Beta0& beta0, std::span<const double> u, double b) {
  const Eigen::VectorXd v = beta0.values();
  return mixture_prob(std::span<const double>(v.data(), static_cast<std::size_t>(v.size())), u, b);
}

std::optional<double> threshold_original_scale(double beta0_hat, const StandardizedCovariate& cov) {
  if (!std::isfinite(beta0_hat) || beta0_hat <= kBetaZeroTolerance) return std::nullopt;
  return (cov.orig_max - cov.orig_min) / beta0_hat + cov.orig_min;
}

}  // namespace thmm

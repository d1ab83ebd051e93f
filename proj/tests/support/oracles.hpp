#pragma once

// Independent reference computations used only by tests. Nothing here calls
// into the likelihood engine under test.

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include "thmm/likelihood.hpp"
#include "thmm/model.hpp"

namespace thmm::oracle {

inline double simpson(const std::function<double(double)>& f, double a, double b, int n = 20000) {
  if (n % 2) ++n;
  const double h = (b - a) / n;
  double s = f(a) + f(b);
  for (int k = 1; k < n; ++k) s += f(a + k * h) * (k % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

/// I0 by its power series, fixed number of terms.
inline double bessel_i0_series(double x, int terms = 30) {
  double term = 1.0, sum = 1.0;
  for (int k = 1; k < terms; ++k) {
    term *= (x * x / 4.0) / (k * static_cast<double>(k));
    sum += term;
  }
  return sum;
}

inline double gamma_density(double x, double mean, double shape) {
  const double rate = shape / mean;
  return std::pow(rate, shape) * std::pow(x, shape - 1.0) * std::exp(-rate * x) / std::tgamma(shape);
}

inline double vonmises_density(double x, double loc, double kappa) {
  return std::exp(kappa * std::cos(x - loc)) / (2.0 * std::numbers::pi * bessel_i0_series(kappa, 80));
}

/// Softmax TPM written out directly from the logit definition.
inline Eigen::MatrixXd hand_tpm(const TransitionCoefficients& c, const std::vector<double>& omega) {
  const int n = c.n_states;
  Eigen::MatrixXd g(n, n);
  for (int i = 0; i < n; ++i) {
    double denom = 0.0;
    for (int j = 0; j < n; ++j) {
      double eta = 0.0;
      if (j != i) {
        const int p = TransitionCoefficients::pair_index(n, i, j);
        eta = c.alpha(p, 0);
        for (std::size_t m = 0; m < omega.size(); ++m) eta += c.alpha(p, 1 + static_cast<int>(m)) * omega[m];
      }
      g(i, j) = std::exp(eta);
      denom += g(i, j);
    }
    g.row(i) /= denom;
  }
  return g;
}

inline double emission_density(const ModelSpec& spec, const ThetaParams& theta, int state, const Track& tr, int t) {
  double p = 1.0;
  for (std::size_t s = 0; s < spec.streams.size(); ++s) {
    const double y = tr.observations(t, static_cast<Eigen::Index>(s));
    if (std::isnan(y)) continue;
    const auto& par = theta.emissions[static_cast<std::size_t>(state)][s];
    if (spec.streams[s].family == Family::gamma) {
      p *= gamma_density(y, std::get<GammaParams>(par).mean, std::get<GammaParams>(par).shape);
    } else {
      p *= vonmises_density(y, std::get<VonMisesParams>(par).location, std::get<VonMisesParams>(par).concentration);
    }
  }
  return p;
}

inline double hand_nu(const Beta0& beta0, const Track& tr, int t, double b) {
  if (tr.masked(t)) return 0.0;
  const Eigen::VectorXd v = beta0.values();
  double lin = 0.0;
  for (int k = 0; k < v.size(); ++k) lin += v[k] * tr.threshold_covariates(t, k);
  return 1.0 / (1.0 + std::exp(-b * (lin - 1.0)));
}

inline std::vector<double> row(const RowMatrix& m, int t) {
  std::vector<double> r(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index k = 0; k < m.cols(); ++k) r[static_cast<std::size_t>(k)] = m(t, k);
  return r;
}

struct PathEnumeration {
  double loglik = 0.0;               // log of the sum over all paths
  std::vector<int> best_path;        // argmax path, lowest index on ties
  double best_logprob = -std::numeric_limits<double>::infinity();
};

/// Exhaustive sum and argmax over all N^T state paths of one track.
inline PathEnumeration enumerate_paths(const ModelSpec& spec, const ThetaParams& theta, const Beta0& beta0,
                                       const Track& tr, double b) {
  const int N = spec.n_states;
  const int T = tr.length();
  std::vector<Eigen::MatrixXd> gammas(static_cast<std::size_t>(T));
  std::vector<double> nus(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    nus[static_cast<std::size_t>(t)] = hand_nu(beta0, tr, t, b);
    const auto omega = row(tr.tpm_covariates, t);
    gammas[static_cast<std::size_t>(t)] = (1.0 - nus[static_cast<std::size_t>(t)]) * hand_tpm(theta.coeffs.baseline, omega) +
                                          nus[static_cast<std::size_t>(t)] * hand_tpm(theta.coeffs.disturbed, omega);
  }
  PathEnumeration out;
  double total = 0.0;
  std::vector<int> path(static_cast<std::size_t>(T), 0);
  long n_paths = 1;
  for (int t = 0; t < T; ++t) n_paths *= N;
  for (long code = 0; code < n_paths; ++code) {
    long rest = code;
    for (int t = T - 1; t >= 0; --t) {
      path[static_cast<std::size_t>(t)] = static_cast<int>(rest % N);
      rest /= N;
    }
    const double n0 = nus[0];
    double prob = ((1.0 - n0) * theta.delta_baseline[path[0]] + n0 * theta.delta_disturbed[path[0]]) *
                  emission_density(spec, theta, path[0], tr, 0);
    for (int t = 1; t < T; ++t)
      prob *= gammas[static_cast<std::size_t>(t)](path[static_cast<std::size_t>(t - 1)], path[static_cast<std::size_t>(t)]) *
              emission_density(spec, theta, path[static_cast<std::size_t>(t)], tr, t);
    total += prob;
    const double lp = std::log(prob);
    // Enumeration order is lexicographic, so strict > keeps the lowest path.
    if (lp > out.best_logprob) {
      out.best_logprob = lp;
      out.best_path = path;
    }
  }
  out.loglik = std::log(total);
  return out;
}

/// Plain single-regime forward recursion, unscaled in log space via logsumexp.
inline double reference_hmm_loglik(const Eigen::VectorXd& delta, const std::vector<Eigen::MatrixXd>& gammas,
                                   const std::vector<std::vector<double>>& log_emission) {
  const int T = static_cast<int>(log_emission.size());
  const int N = static_cast<int>(delta.size());
  std::vector<double> la(static_cast<std::size_t>(N));
  for (int i = 0; i < N; ++i) la[static_cast<std::size_t>(i)] = std::log(delta[i]) + log_emission[0][static_cast<std::size_t>(i)];
  for (int t = 1; t < T; ++t) {
    std::vector<double> next(static_cast<std::size_t>(N));
    for (int j = 0; j < N; ++j) {
      double hi = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < N; ++i) hi = std::max(hi, la[static_cast<std::size_t>(i)] + std::log(gammas[static_cast<std::size_t>(t)](i, j)));
      double s = 0.0;
      for (int i = 0; i < N; ++i) s += std::exp(la[static_cast<std::size_t>(i)] + std::log(gammas[static_cast<std::size_t>(t)](i, j)) - hi);
      next[static_cast<std::size_t>(j)] = hi + std::log(s) + log_emission[static_cast<std::size_t>(t)][static_cast<std::size_t>(j)];
    }
    la = next;
  }
  double hi = *std::max_element(la.begin(), la.end());
  double s = 0.0;
  for (double v : la) s += std::exp(v - hi);
  return hi + std::log(s);
}

/// Central differences of f at x, step h per coordinate.
inline Eigen::VectorXd central_gradient(const std::function<double(const Eigen::VectorXd&)>& f,
                                        const Eigen::VectorXd& x, double h) {
  Eigen::VectorXd g(x.size());
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    Eigen::VectorXd xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    g[k] = (f(xp) - f(xm)) / (2.0 * h);
  }
  return g;
}

}  // namespace thmm::oracle

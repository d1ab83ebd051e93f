#pragma once

// State-dependent densities and samplers.
//
// Gamma uses the mean/shape parameterization (rate = shape / mean). Von Mises
// angles are reduced to (-pi, pi] before evaluation.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

namespace thmm {

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct GammaParams {
  double mean = 1.0;
  double shape = 1.0;

  double rate() const { return shape / mean; }
  bool valid() const {
    return std::isfinite(mean) && std::isfinite(shape) && mean > 0.0 && shape > 0.0;
  }
};

struct VonMisesParams {
  double location = 0.0;
  double concentration = 0.0;

  bool valid() const {
    return std::isfinite(location) && std::isfinite(concentration) && concentration >= 0.0;
  }
};

/// Reduces an angle into (-pi, pi].
double wrap_angle(double angle);

/// log I0(x) for x >= 0: power series below 15, asymptotic expansion above.
double log_bessel_i0(double x);

/// log I1(x) for x >= 0, same regime split as log_bessel_i0.
double log_bessel_i1(double x);

/// I1(x) / I0(x), the mean resultant length of a von Mises with concentration x.
double bessel_ratio_i1_i0(double x);

double gamma_logpdf(double x, const GammaParams& p);
double vonmises_logpdf(double angle, const VonMisesParams& p);

// Samplers take any uniform random bit generator; the determinism contract is
// that the same generator state produces the same draw.

template <class Rng>
double gamma_sample(const GammaParams& p, Rng& rng) {
  if (!p.valid()) throw DomainError("gamma_sample: invalid parameters");
  std::gamma_distribution<double> dist(p.shape, p.mean / p.shape);
  return dist(rng);
}

/// Best-Fisher rejection sampler.
template <class Rng>
double vonmises_sample(const VonMisesParams& p, Rng& rng) {
  if (!p.valid()) throw DomainError("vonmises_sample: invalid parameters");
  constexpr double pi = std::numbers::pi;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double kappa = p.concentration;
  if (kappa < 1e-8) {
    return wrap_angle(p.location + pi - 2.0 * pi * unif(rng));
  }
  const double tau = 1.0 + std::sqrt(1.0 + 4.0 * kappa * kappa);
  const double rho = (tau - std::sqrt(2.0 * tau)) / (2.0 * kappa);
  const double r = (1.0 + rho * rho) / (2.0 * rho);
  for (;;) {
    const double u1 = unif(rng);
    const double u2 = unif(rng);
    const double u3 = unif(rng);
    const double z = std::cos(pi * u1);
    const double f = (1.0 + r * z) / (r + z);
    const double c = kappa * (r - f);
    if (c * (2.0 - c) - u2 > 0.0 || std::log(c / u2) + 1.0 - c >= 0.0) {
      const double theta = (u3 > 0.5 ? 1.0 : -1.0) * std::acos(std::clamp(f, -1.0, 1.0));
      return wrap_angle(p.location + theta);
    }
  }
}

}  // namespace thmm

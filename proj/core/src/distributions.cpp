#include "thmm/distributions.hpp"

#include <limits>

namespace thmm {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kSeriesCutoff = 15.0;

// log of sum_k (x^2/4)^k / (k! (k+order)!) times (x/2)^order, order in {0, 1}.
double log_bessel_series(double x, int order) {
  const double q = 0.25 * x * x;
  double term = 1.0;
  double sum = term;
  for (int k = 1; k < 500; ++k) {
    term *= q / (static_cast<double>(k) * static_cast<double>(k + order));
    sum += term;
    if (term < 1e-17 * sum) break;
  }
  return std::log(sum) + (order == 1 ? std::log(0.5 * x) : 0.0);
}

// Hankel asymptotic expansion of I_nu for large x, in log space.
double log_bessel_asymptotic(double x, int order) {
  const double mu = 4.0 * order * order;
  double term = 1.0;
  double sum = 1.0;
  for (int k = 1; k < 200; ++k) {
    const double odd = 2.0 * k - 1.0;
    const double next = -term * (mu - odd * odd) / (k * 8.0 * x);
    if (std::abs(next) > std::abs(term)) break;
    term = next;
    sum += term;
    if (std::abs(term) < 1e-17 * std::abs(sum)) break;
  }
  return x - 0.5 * std::log(2.0 * kPi * x) + std::log(sum);
}

}  // namespace

double wrap_angle(double angle) {
  if (!std::isfinite(angle)) throw DomainError("wrap_angle: non-finite angle");
  if (angle > -kPi && angle <= kPi) return angle;
  double r = std::fmod(angle + kPi, 2.0 * kPi);
  if (r <= 0.0) r += 2.0 * kPi;
  return r - kPi;
}

double log_bessel_i0(double x) {
  if (!(x >= 0.0)) throw DomainError("log_bessel_i0: negative argument");
  if (x < kSeriesCutoff) return log_bessel_series(x, 0);
  return log_bessel_asymptotic(x, 0);
}

double log_bessel_i1(double x) {
  if (!(x >= 0.0)) throw DomainError("log_bessel_i1: negative argument");
  if (x == 0.0) return -std::numeric_limits<double>::infinity();
  if (x < kSeriesCutoff) return log_bessel_series(x, 1);
  return log_bessel_asymptotic(x, 1);
}

double bessel_ratio_i1_i0(double x) {
  if (x == 0.0) return 0.0;
  return std::exp(log_bessel_i1(x) - log_bessel_i0(x));
}

double gamma_logpdf(double x, const GammaParams& p) {
  if (!p.valid()) throw DomainError("gamma_logpdf: invalid parameters");
  if (!(x > 0.0) || !std::isfinite(x)) throw DomainError("gamma_logpdf: x must be positive");
  const double rate = p.rate();
  return p.shape * std::log(rate) - std::lgamma(p.shape) + (p.shape - 1.0) * std::log(x) - rate * x;
}

double vonmises_logpdf(double angle, const VonMisesParams& p) {
  if (!p.valid()) throw DomainError("vonmises_logpdf: invalid parameters");
  const double a = wrap_angle(angle);
  return p.concentration * std::cos(a - p.location) - std::log(2.0 * kPi) -
         log_bessel_i0(p.concentration);
}

}  // namespace thmm

#include "thmm/blrt.hpp"

#include <algorithm>
#include <limits>
#include <optional>

#include "thmm/parallel.hpp"
#include "thmm/simulation.hpp"

namespace thmm {

void BlrtConfig::validate(int p2) const {
  if (B < 1) throw InvalidInput("B must be at least 1");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput("alpha must lie in (0, 1)");
  if (p2 < 1) throw InvalidInput("blrt needs at least one threshold covariate");
  std::vector<int> seen;
  for (int k : null_slots) {
    if (k < 0 || k >= p2) throw InvalidInput("null slot " + std::to_string(k) + " out of range");
    if (std::find(seen.begin(), seen.end(), k) != seen.end()) throw InvalidInput("duplicate null slot");
    seen.push_back(k);
  }
}

std::vector<int> BlrtConfig::resolved_null_slots(int p2) const {
  if (!null_slots.empty()) return null_slots;
  std::vector<int> all(static_cast<std::size_t>(p2));
  for (int k = 0; k < p2; ++k) all[static_cast<std::size_t>(k)] = k;
  return all;
}

HypothesisFit fit_hypothesis(const TrackData& data, const ModelSpec& spec, const std::vector<int>& fixed_slots,
                             const FitOptions& options) {
  const auto nf = fit_null(data, spec, options);
  Likelihood lik(spec, data);
  HypothesisFit out;
  if (static_cast<int>(fixed_slots.size()) == spec.p2()) {
    out.working = nf.working;
    out.loglik = nf.loglik;
  } else {
    const auto init = progressive_sharpness_fit(data, spec, nf, options, fixed_slots);
    const auto mode = fit_penalized(lik, 0.0, init.working, options, fixed_slots);
    out.working = mode.working;
    out.loglik = mode.loglik;
  }
  lik.layout().unpack(out.working, &out.theta, &out.beta0);
  for (int k : fixed_slots) out.beta0.log_values[k] = -std::numeric_limits<double>::infinity();
  return out;
}

double likelihood_ratio(double alt_loglik, double null_loglik) {
  return 2.0 * (std::max(alt_loglik, null_loglik) - null_loglik);
}

double bootstrap_p_value(double observed, const std::vector<double>& bootstrap) {
  if (bootstrap.empty()) throw InvalidInput("no valid bootstrap replicates");
  const auto greater = std::count_if(bootstrap.begin(), bootstrap.end(), [&](double lr) { return lr > observed; });
  return static_cast<double>(greater) / static_cast<double>(bootstrap.size());
}

BlrtResult blrt(const TrackData& data, const ModelSpec& spec, const BlrtConfig& config, const FitOptions& options,
                int threads) {
  spec.validate();
  data.validate(spec);
  options.validate();
  config.validate(spec.p2());
  const auto null_slots = config.resolved_null_slots(spec.p2());

  auto test_once = [&](const TrackData& d, std::uint64_t seed, HypothesisFit* null_out) {
    FitOptions o = options;
    o.seed = derived_seed(seed, 1);
    auto h0 = fit_hypothesis(d, spec, null_slots, o);
    o.seed = derived_seed(seed, 2);
    const auto h1 = fit_hypothesis(d, spec, {}, o);
    const double lr = likelihood_ratio(h1.loglik, h0.loglik);
    if (null_out) *null_out = std::move(h0);
    return std::pair{lr, h1.loglik};
  };

  BlrtResult res;
  HypothesisFit h0;
  const auto [observed, alt] = test_once(data, config.seed, &h0);
  res.observed_lr = observed;
  res.null_loglik = h0.loglik;
  res.alt_loglik = std::max(alt, h0.loglik);

  std::vector<std::optional<double>> lrs(static_cast<std::size_t>(config.B));
  std::vector<std::string> errors(static_cast<std::size_t>(config.B));
  parallel_for(config.B, threads, [&](int b) {
    const std::uint64_t seed = derived_seed(config.seed, 1000 + static_cast<std::uint64_t>(b));
    try {
      const auto sim = simulate_thmm(spec, h0.theta, h0.beta0, data, derived_seed(seed, 0));
      lrs[static_cast<std::size_t>(b)] = test_once(sim, seed, nullptr).first;
    } catch (const std::exception& e) {
      errors[static_cast<std::size_t>(b)] = e.what();
    }
  });
  for (int b = 0; b < config.B; ++b) {
    const auto& lr = lrs[static_cast<std::size_t>(b)];
    if (lr) {
      res.bootstrap_lrs.push_back(*lr);
    } else {
      ++res.n_failed;
      res.failures.push_back("replicate " + std::to_string(b) + ": " + errors[static_cast<std::size_t>(b)]);
    }
  }
  res.p_value = bootstrap_p_value(res.observed_lr, res.bootstrap_lrs);
  res.reject = res.p_value < config.alpha;
  return res;
}

}  // namespace thmm

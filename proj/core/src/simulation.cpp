#include "thmm/simulation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "thmm/distributions.hpp"
#include "thmm/parallel.hpp"

namespace thmm {

namespace {

double unit_uniform(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

int draw_categorical(const Eigen::Ref<const Eigen::RowVectorXd>& probs, std::mt19937_64& rng) {
  const double r = unit_uniform(rng);
  double acc = 0.0;
  for (Eigen::Index k = 0; k < probs.size(); ++k) {
    acc += probs[k];
    if (r < acc) return static_cast<int>(k);
  }
  return static_cast<int>(probs.size()) - 1;
}

std::vector<int> order_by_mean(const ThetaParams& th) {
  std::vector<int> idx(th.emissions.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return as_gamma(th.emissions[static_cast<std::size_t>(a)][0]).mean <
           as_gamma(th.emissions[static_cast<std::size_t>(b)][0]).mean;
  });
  return idx;
}

}  // namespace

std::vector<double> gen_covariate(int T) {
  if (T < 1) throw InvalidInput("gen_covariate: T must be at least 1");
  std::vector<double> u(static_cast<std::size_t>(T));
  for (int t = 1; t <= T; ++t) u[static_cast<std::size_t>(t - 1)] = 20.0 + 10.0 * (std::sin(t / 150.0) + std::cos(t / 650.0));
  return u;
}

std::vector<bool> gen_binary_covariate(int T, std::uint64_t seed) {
  if (T < 0) throw InvalidInput("gen_binary_covariate: negative length");
  auto rng = derived_rng(seed, 0);
  std::vector<bool> flag(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) flag[static_cast<std::size_t>(t)] = (rng() >> 63) != 0;
  return flag;
}

std::pair<std::vector<double>, std::vector<double>> make_bivariate(const std::vector<double>& u,
                                                                   const std::vector<bool>& flag) {
  if (u.size() != flag.size()) throw InvalidInput("make_bivariate: length mismatch");
  std::vector<double> a(u.size(), 0.0), b(u.size(), 0.0);
  for (std::size_t t = 0; t < u.size(); ++t) (flag[t] ? a : b)[t] = u[t];
  return {a, b};
}

ModelSpec CanonicalParams::spec(int p2) const {
  ModelSpec s;
  s.n_states = static_cast<int>(means.size());
  s.streams.push_back({"step", Family::gamma, false});
  for (int k = 0; k < p2; ++k) s.threshold_covariates.push_back(p2 == 1 ? "u" : "u" + std::to_string(k + 1));
  return s;
}

ThetaParams CanonicalParams::theta() const {
  ThetaParams th;
  const int n = static_cast<int>(means.size());
  for (int i = 0; i < n; ++i)
    th.emissions.push_back({GammaParams{means[static_cast<std::size_t>(i)], shapes[static_cast<std::size_t>(i)]}});
  th.coeffs.baseline = persistence_to_coeffs(baseline_persistence);
  th.coeffs.disturbed = persistence_to_coeffs(disturbed_persistence);
  th.delta_baseline = Eigen::VectorXd::Constant(n, 1.0 / n);
  th.delta_disturbed = th.delta_baseline;
  return th;
}

TrackData simulate_thmm(const ModelSpec& spec, const ThetaParams& theta, const Beta0& beta0,
                        const TrackData& layout_data, std::uint64_t seed, std::vector<std::vector<int>>* states) {
  spec.validate();
  theta.validate(spec);
  layout_data.validate(spec);
  if (beta0.size() != spec.p2()) throw InvalidInput("simulate_thmm: beta0 size does not match the spec");
  const Eigen::VectorXd beta = beta0.values();
  TrackData out = layout_data;
  if (states) states->clear();
  for (std::size_t r = 0; r < out.tracks.size(); ++r) {
    auto& tr = out.tracks[r];
    auto rng = derived_rng(seed, r);
    std::vector<int> path(static_cast<std::size_t>(tr.length()));
    int s = 0;
    for (int t = 0; t < tr.length(); ++t) {
      double lin = 0.0;
      for (int k = 0; k < spec.p2(); ++k) lin += beta[k] * tr.threshold_covariates(t, k);
      const bool disturbed = !tr.masked(t) && lin > 1.0;
      if (t == 0) {
        s = draw_categorical((disturbed ? theta.delta_disturbed : theta.delta_baseline).transpose(), rng);
      } else {
        std::vector<double> omega(static_cast<std::size_t>(spec.n_tpm_covariates()));
        for (int m = 0; m < spec.n_tpm_covariates(); ++m) omega[static_cast<std::size_t>(m)] = tr.tpm_covariates(t, m);
        const auto g = build_tpm(disturbed ? theta.coeffs.disturbed : theta.coeffs.baseline, omega);
        s = draw_categorical(g.row(s), rng);
      }
      path[static_cast<std::size_t>(t)] = s;
      for (std::size_t j = 0; j < spec.streams.size(); ++j) {
        const auto& par = theta.emissions[static_cast<std::size_t>(s)][j];
        const double y = spec.streams[j].family == Family::gamma ? gamma_sample(as_gamma(par), rng)
                                                                 : vonmises_sample(as_vonmises(par), rng);
        auto& cell = tr.observations(t, static_cast<Eigen::Index>(j));
        cell = std::isnan(cell) ? cell : y;
      }
    }
    if (states) states->push_back(std::move(path));
  }
  return out;
}

double disturbance_frequency(const RowMatrix& u, const Beta0& beta0) {
  if (u.rows() == 0) return 0.0;
  if (u.cols() != beta0.size()) throw InvalidInput("disturbance_frequency: slot count mismatch");
  const Eigen::VectorXd beta = beta0.values();
  int count = 0;
  for (Eigen::Index t = 0; t < u.rows(); ++t) count += u.row(t).dot(beta) > 1.0;
  return static_cast<double>(count) / static_cast<double>(u.rows());
}

// ---------------------------------------------------------------------------

std::vector<std::optional<double>> ScenarioConfig::thresholds_original() const {
  if (id == "1a") return {21.0};
  if (id == "1b") return {std::nullopt};
  if (id == "2a") return {21.0, 30.0};
  if (id == "2b") return {21.0, std::nullopt};
  if (id == "2c") return {std::nullopt, std::nullopt};
  throw InvalidInput("unknown scenario id: " + id);
}

int ScenarioConfig::p2() const { return static_cast<int>(thresholds_original().size()); }

void ScenarioConfig::validate() const {
  thresholds_original();
  if (T < 100) throw InvalidInput("scenario T must be at least 100");
  if (n_replicates < 0) throw InvalidInput("n_replicates must be nonnegative");
}

ScenarioDataset make_scenario_dataset(const ScenarioConfig& config, int replicate) {
  config.validate();
  const std::uint64_t rep_seed = derived_seed(config.seed, static_cast<std::uint64_t>(replicate));
  const auto thresholds = config.thresholds_original();
  const int p2 = config.p2();
  const int T = config.T;
  const auto u = gen_covariate(T);

  std::vector<StandardizedCovariate> slots;
  if (p2 == 1) {
    slots.push_back(standardize(u));
  } else {
    const auto flag = gen_binary_covariate(T, derived_seed(rep_seed, 1));
    const auto [a, b] = make_bivariate(u, flag);
    std::vector<bool> not_flag(flag.size());
    for (std::size_t t = 0; t < flag.size(); ++t) not_flag[t] = !flag[t];
    slots.push_back(standardize_slot(a, flag));
    slots.push_back(standardize_slot(b, not_flag));
  }

  CanonicalParams canon;
  ScenarioDataset ds;
  ds.spec = canon.spec(p2);
  ds.theta = canon.theta();
  std::vector<double> beta(static_cast<std::size_t>(p2), 0.0);
  for (int k = 0; k < p2; ++k) {
    const auto& s = slots[static_cast<std::size_t>(k)];
    const auto& thr = thresholds[static_cast<std::size_t>(k)];
    if (thr) {
      if (!(*thr > s.orig_min && *thr < s.orig_max)) throw InvalidInput("scenario threshold outside covariate range");
      beta[static_cast<std::size_t>(k)] = (s.orig_max - s.orig_min) / (*thr - s.orig_min);
    }
  }
  ds.beta_true = Beta0::from_values(beta);

  Track tr;
  tr.id = "sim";
  tr.observations = RowMatrix::Ones(T, 1);
  tr.tpm_covariates = RowMatrix(T, 0);
  tr.threshold_covariates = RowMatrix(T, p2);
  for (int t = 0; t < T; ++t)
    for (int k = 0; k < p2; ++k) tr.threshold_covariates(t, k) = slots[static_cast<std::size_t>(k)].values[static_cast<std::size_t>(t)];
  TrackData layout;
  layout.tracks.push_back(std::move(tr));
  for (int k = 0; k < p2; ++k)
    layout.threshold_scaling.push_back({ds.spec.threshold_covariates[static_cast<std::size_t>(k)],
                                        slots[static_cast<std::size_t>(k)].orig_min,
                                        slots[static_cast<std::size_t>(k)].orig_max});
  ds.disturbed_fraction = disturbance_frequency(layout.tracks[0].threshold_covariates, ds.beta_true);
  ds.data = simulate_thmm(ds.spec, ds.theta, ds.beta_true, layout, derived_seed(rep_seed, 2));
  return ds;
}

void theta_bias(const ThetaParams& fitted, const ThetaParams& truth, std::vector<double>* mean_bias,
                std::vector<double>* shape_bias) {
  if (fitted.emissions.size() != truth.emissions.size()) throw InvalidInput("theta_bias: state count mismatch");
  const auto of = order_by_mean(fitted);
  const auto ot = order_by_mean(truth);
  const std::size_t n = truth.emissions.size();
  mean_bias->assign(n, 0.0);
  shape_bias->assign(n, 0.0);
  for (std::size_t r = 0; r < n; ++r) {
    const auto& f = as_gamma(fitted.emissions[static_cast<std::size_t>(of[r])][0]);
    const auto& t = as_gamma(truth.emissions[static_cast<std::size_t>(ot[r])][0]);
    (*mean_bias)[static_cast<std::size_t>(ot[r])] = f.mean - t.mean;
    (*shape_bias)[static_cast<std::size_t>(ot[r])] = f.shape - t.shape;
  }
}

ScenarioMetrics summarize(const ScenarioConfig& config, std::vector<ReplicateRecord> records) {
  ScenarioMetrics m;
  m.config = config;
  m.records = std::move(records);
  const auto thresholds = config.thresholds_original();
  const std::size_t p2 = thresholds.size();
  m.slots.assign(p2, {});
  std::vector<std::vector<double>> hats(p2);
  for (const auto& r : m.records) {
    if (!r.ok) {
      ++m.n_failed;
      continue;
    }
    ++m.n_ok;
    for (std::size_t k = 0; k < p2; ++k) {
      if (r.detected[k]) m.slots[k].detection_rate += 1.0;
      m.slots[k].beta_bias += r.beta_hat[k] - r.beta_true[k];
      hats[k].push_back(r.beta_hat[k]);
    }
    if (m.mean_bias.empty()) {
      m.mean_bias.assign(r.mean_bias.size(), 0.0);
      m.shape_bias.assign(r.shape_bias.size(), 0.0);
    }
    for (std::size_t i = 0; i < r.mean_bias.size(); ++i) {
      m.mean_bias[i] += r.mean_bias[i];
      m.shape_bias[i] += r.shape_bias[i];
    }
  }
  for (std::size_t k = 0; k < p2; ++k) {
    auto& s = m.slots[k];
    s.has_threshold = thresholds[k].has_value();
    if (m.n_ok == 0) continue;
    s.detection_rate /= m.n_ok;
    s.beta_bias /= m.n_ok;
    const double mean = std::accumulate(hats[k].begin(), hats[k].end(), 0.0) / m.n_ok;
    double ss = 0.0;
    for (double h : hats[k]) ss += (h - mean) * (h - mean);
    s.beta_sd = m.n_ok > 1 ? std::sqrt(ss / (m.n_ok - 1)) : 0.0;
  }
  for (auto& v : m.mean_bias) v /= std::max(1, m.n_ok);
  for (auto& v : m.shape_bias) v /= std::max(1, m.n_ok);
  return m;
}

ScenarioMetrics run_scenario(const ScenarioConfig& config, const FitOptions& options, int threads) {
  config.validate();
  options.validate();
  std::vector<ReplicateRecord> records(static_cast<std::size_t>(config.n_replicates));
  parallel_for(config.n_replicates, threads, [&](int i) {
    auto& rec = records[static_cast<std::size_t>(i)];
    rec.replicate = i;
    rec.seed = derived_seed(config.seed, static_cast<std::uint64_t>(i));
    const auto start = std::chrono::steady_clock::now();
    try {
      const auto ds = make_scenario_dataset(config, i);
      FitOptions opt = options;
      opt.seed = derived_seed(rec.seed, 3);
      const auto fit = qreml_loop(ds.data, ds.spec, opt);
      const Eigen::VectorXd bt = ds.beta_true.values();
      const Eigen::VectorXd bh = fit.beta0_hat.values();
      rec.beta_true.assign(bt.data(), bt.data() + bt.size());
      rec.beta_hat.assign(bh.data(), bh.data() + bh.size());
      rec.detected = fit.disturbance_detected;
      rec.lambda_hat = fit.lambda_hat;
      rec.capped = fit.capped;
      rec.converged = fit.converged;
      rec.qreml_iterations = fit.qreml_iterations;
      rec.loglik = fit.loglik;
      rec.fixed_point = fit.lambda_hat * fit.beta0_hat.l1_norm();
      theta_bias(fit.theta_hat, ds.theta, &rec.mean_bias, &rec.shape_bias);
      rec.ok = true;
    } catch (const std::exception& e) {
      rec.error = e.what();
    }
    rec.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  });
  return summarize(config, std::move(records));
}

}  // namespace thmm

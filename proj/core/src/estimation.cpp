#include "thmm/estimation.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "thmm/parallel.hpp"

namespace thmm {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Eigen::MatrixXd tpm_at_means(const ParameterLayout& layout, const Eigen::VectorXd& w,
                             const std::vector<double>& means, Regime regime) {
  const int n = layout.spec().n_states;
  const int C = layout.spec().n_tpm_covariates();
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    double hi = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const int p = TransitionCoefficients::pair_index(n, i, j);
      double eta = w[layout.coeff_index(regime, p, 0)];
      for (int m = 0; m < C; ++m) eta += w[layout.coeff_index(regime, p, 1 + m)] * means[static_cast<std::size_t>(m)];
      g(i, j) = eta;
      hi = std::max(hi, eta);
    }
    double denom = 0.0;
    for (int j = 0; j < n; ++j) {
      g(i, j) = std::exp(g(i, j) - hi);
      denom += g(i, j);
    }
    g.row(i) /= denom;
  }
  return g;
}

double quantile(std::vector<double> xs, double level) {
  std::sort(xs.begin(), xs.end());
  const double pos = level * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (pos - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

OptimizerOptions inner_options(const FitOptions& o) {
  OptimizerOptions opt;
  opt.max_iterations = o.inner_max_iter;
  opt.gradient_tolerance = o.inner_opt_tol;
  return opt;
}

std::vector<int> free_slots(int p2, const std::vector<int>& fixed) {
  std::vector<int> out;
  for (int k = 0; k < p2; ++k)
    if (std::find(fixed.begin(), fixed.end(), k) == fixed.end()) out.push_back(k);
  return out;
}

}  // namespace

void FitOptions::validate() const {
  if (n_starts < 1) throw InvalidInput("n_starts must be at least 1");
  if (sharpness_schedule.empty()) throw InvalidInput("sharpness schedule is empty");
  for (std::size_t k = 0; k < sharpness_schedule.size(); ++k) {
    if (!(sharpness_schedule[k] > 0.0)) throw InvalidInput("sharpness values must be positive");
    if (k > 0 && !(sharpness_schedule[k] > sharpness_schedule[k - 1]))
      throw InvalidInput("sharpness schedule must be strictly increasing");
  }
  if (!(target_b > 0.0)) throw InvalidInput("target_b must be positive");
  if (!(epsilon_sep > 0.0 && epsilon_sep < 1.0)) throw InvalidInput("epsilon_sep must lie in (0, 1)");
  if (!(separation_weight >= 0.0)) throw InvalidInput("separation_weight must be nonnegative");
  if (!(qreml_tol > 0.0)) throw InvalidInput("qreml_tol must be positive");
  if (qreml_max_iter < 1) throw InvalidInput("qreml_max_iter must be at least 1");
  if (!(lambda_max > 0.0)) throw InvalidInput("lambda_max must be positive");
  if (!(inner_opt_tol > 0.0)) throw InvalidInput("inner_opt_tol must be positive");
  if (inner_max_iter < 1) throw InvalidInput("inner_max_iter must be at least 1");
  if (!(fd_step > 0.0)) throw InvalidInput("fd_step must be positive");
  if (hessian_jitter.empty()) throw InvalidInput("hessian_jitter is empty");
  for (double j : hessian_jitter)
    if (!(j >= 0.0)) throw InvalidInput("hessian_jitter entries must be nonnegative");
  if (!(start_sigma >= 0.0)) throw InvalidInput("start_sigma must be nonnegative");
  if (!(detection_threshold > 0.0 && detection_threshold < 1.0))
    throw InvalidInput("detection_threshold must lie in (0, 1)");
}

// ---------------------------------------------------------------------------

double regime_separation(const ParameterLayout& layout, const Eigen::VectorXd& working,
                         const std::vector<double>& covariate_means) {
  const auto gb = tpm_at_means(layout, working, covariate_means, Regime::baseline);
  const auto gd = tpm_at_means(layout, working, covariate_means, Regime::disturbed);
  return (gb.diagonal() - gd.diagonal()).cwiseAbs().maxCoeff();
}

double separation_penalty(const ParameterLayout& layout, const Eigen::VectorXd& working,
                          const std::vector<double>& covariate_means, double epsilon, double weight,
                          Eigen::VectorXd* grad) {
  if (grad) grad->setZero(working.size());
  const int n = layout.spec().n_states;
  if (n < 2 || weight == 0.0) return 0.0;
  const auto gb = tpm_at_means(layout, working, covariate_means, Regime::baseline);
  const auto gd = tpm_at_means(layout, working, covariate_means, Regime::disturbed);
  int m = 0;
  double best = -1.0;
  for (int i = 0; i < n; ++i) {
    const double d = std::abs(gb(i, i) - gd(i, i));
    if (d > best) {
      best = d;
      m = i;
    }
  }
  const double gap = epsilon - best;
  if (gap <= 0.0) return 0.0;
  if (grad) {
    const double diff = gb(m, m) - gd(m, m);
    const double sign = diff >= 0.0 ? 1.0 : -1.0;
    const double outer = -2.0 * weight * gap * sign;  // dH / d(diff)
    const int C = layout.spec().n_tpm_covariates();
    for (int j = 0; j < n; ++j) {
      if (j == m) continue;
      const int p = TransitionCoefficients::pair_index(n, m, j);
      const double db = -gb(m, m) * gb(m, j);
      const double dd = gd(m, m) * gd(m, j);
      for (int c = 0; c <= C; ++c) {
        const double x = c == 0 ? 1.0 : covariate_means[static_cast<std::size_t>(c - 1)];
        (*grad)[layout.coeff_index(Regime::baseline, p, c)] += outer * db * x;
        (*grad)[layout.coeff_index(Regime::disturbed, p, c)] += outer * dd * x;
      }
    }
  }
  return weight * gap * gap;
}

PenalizedObjective::PenalizedObjective(const Likelihood& lik, double lambda, double sharpness, bool separation,
                                       const FitOptions& options)
    : lik_(lik),
      lambda_(lambda),
      sharpness_(sharpness),
      separation_(separation),
      epsilon_(options.epsilon_sep),
      weight_(options.separation_weight) {}

double PenalizedObjective::evaluate(const Eigen::VectorXd& working, Eigen::VectorXd* grad, double* loglik) const {
  const double ll = lik_.evaluate(working, sharpness_, grad);
  if (loglik) *loglik = ll;
  double value = ll;
  const auto& layout = lik_.layout();
  const int p2 = layout.spec().p2();
  if (lambda_ != 0.0) {
    for (int k = 0; k < p2; ++k) {
      const double beta = std::exp(working[layout.beta_offset() + k]);
      value -= lambda_ * beta;
      if (grad) (*grad)[layout.beta_offset() + k] -= lambda_ * beta;
    }
  }
  if (separation_) {
    Eigen::VectorXd hg;
    value -= separation_penalty(layout, working, lik_.covariate_means(), epsilon_, weight_, grad ? &hg : nullptr);
    if (grad) *grad -= hg;
  }
  return value;
}

ModeFit optimize_mode(const Likelihood& lik, const Eigen::VectorXd& init, const std::vector<bool>& free,
                      double lambda, double sharpness, bool separation, const FitOptions& options) {
  PenalizedObjective objective(lik, lambda, sharpness, separation, options);
  ObjectiveFn f = [&](const Eigen::VectorXd& x, double* value, Eigen::VectorXd* grad) {
    *value = objective.evaluate(x, grad);
    return std::isfinite(*value);
  };
  const auto res = maximize(f, init, free, inner_options(options));
  ModeFit out;
  out.working = res.x;
  out.objective = res.value;
  out.gradient_max_norm = res.gradient_max_norm;
  out.iterations = res.iterations;
  out.converged = res.converged;
  out.usable = res.usable;
  if (res.usable) objective.evaluate(res.x, nullptr, &out.loglik);
  return out;
}

ModeFit multi_start(const std::function<ModeFit(int)>& fit, int n_starts, std::vector<StartDiagnostic>* diagnostics) {
  if (n_starts < 1) throw InvalidInput("n_starts must be at least 1");
  ModeFit best;
  bool have = false;
  std::string last_error;
  for (int s = 0; s < n_starts; ++s) {
    StartDiagnostic d;
    d.start = s;
    try {
      ModeFit r = fit(s);
      d.ok = r.usable;
      d.value = r.objective;
      if (!r.usable) d.message = "non-finite objective";
      if (r.usable && (!have || r.objective > best.objective)) {
        best = std::move(r);
        have = true;
      }
    } catch (const std::exception& e) {
      d.message = e.what();
      last_error = e.what();
    }
    if (diagnostics) diagnostics->push_back(d);
  }
  if (!have) throw ConvergenceError("all " + std::to_string(n_starts) + " starts failed" +
                                    (last_error.empty() ? std::string() : ": " + last_error));
  return best;
}

Eigen::VectorXd perturb_start(const Eigen::VectorXd& base, const std::vector<bool>& free, double sigma,
                              std::uint64_t seed, int start) {
  auto rng = derived_rng(seed, static_cast<std::uint64_t>(start));
  std::normal_distribution<double> noise(0.0, sigma);
  Eigen::VectorXd x = base;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    const double e = noise(rng);  // drawn for every entry so the stream is layout-stable
    if (free[static_cast<std::size_t>(k)] && std::isfinite(x[k])) x[k] += e;
  }
  return x;
}

// ---------------------------------------------------------------------------

Eigen::VectorXd null_initial_working(const ModelSpec& spec, const TrackData& data) {
  const int N = spec.n_states;
  ThetaParams th;
  th.emissions.assign(static_cast<std::size_t>(N), {});
  for (std::size_t s = 0; s < spec.streams.size(); ++s) {
    std::vector<double> ys;
    for (const auto& tr : data.tracks)
      for (int t = 0; t < tr.length(); ++t) {
        const double y = tr.observations(t, static_cast<Eigen::Index>(s));
        if (!std::isnan(y)) ys.push_back(y);
      }
    if (spec.streams[s].family == Family::gamma) {
      if (ys.size() < static_cast<std::size_t>(2 * N)) throw InvalidInput("too few observations in stream " + spec.streams[s].name);
      std::sort(ys.begin(), ys.end());
      for (int i = 0; i < N; ++i) {
        const std::size_t lo = ys.size() * static_cast<std::size_t>(i) / static_cast<std::size_t>(N);
        const std::size_t hi = ys.size() * static_cast<std::size_t>(i + 1) / static_cast<std::size_t>(N);
        double mean = 0.0, sq = 0.0;
        for (std::size_t k = lo; k < hi; ++k) mean += ys[k];
        mean /= static_cast<double>(hi - lo);
        for (std::size_t k = lo; k < hi; ++k) sq += (ys[k] - mean) * (ys[k] - mean);
        const double var = sq / static_cast<double>(std::max<std::size_t>(1, hi - lo - 1));
        const double shape = var > 0.0 ? std::clamp(mean * mean / var, 0.5, 100.0) : 1.0;
        th.emissions[static_cast<std::size_t>(i)].emplace_back(GammaParams{std::max(mean, 1e-8), shape});
      }
    } else {
      double c = 0.0, sn = 0.0;
      for (double y : ys) {
        c += std::cos(y);
        sn += std::sin(y);
      }
      const double loc = spec.streams[s].estimate_location && (c != 0.0 || sn != 0.0) ? std::atan2(sn, c) : 0.0;
      for (int i = 0; i < N; ++i) th.emissions[static_cast<std::size_t>(i)].emplace_back(VonMisesParams{loc, 1.0});
    }
  }
  std::vector<double> diag(static_cast<std::size_t>(N), 0.8);
  if (N >= 2) {
    th.coeffs.baseline = persistence_to_coeffs(diag, spec.n_tpm_covariates());
  } else {
    th.coeffs.baseline = TransitionCoefficients::zeros(N, spec.n_tpm_covariates());
  }
  th.coeffs.disturbed = th.coeffs.baseline;
  th.delta_baseline = Eigen::VectorXd::Constant(N, 1.0 / N);
  th.delta_disturbed = th.delta_baseline;
  ParameterLayout layout(spec);
  return layout.pack(th, Beta0::zeros(spec.p2()));
}

namespace {

// Copies the baseline block onto the disturbed block so the null point is a
// clean member of the THMM parameter space.
void mirror_baseline(const ParameterLayout& layout, Eigen::VectorXd& w) {
  const int C = layout.spec().n_tpm_covariates();
  for (int p = 0; p < layout.spec().n_pairs(); ++p)
    for (int c = 0; c <= C; ++c)
      w[layout.coeff_index(Regime::disturbed, p, c)] = w[layout.coeff_index(Regime::baseline, p, c)];
  const int n1 = layout.spec().n_states - 1;
  w.segment(layout.delta_offset(Regime::disturbed), n1) = w.segment(layout.delta_offset(Regime::baseline), n1);
}

}  // namespace

NullFit fit_null(const TrackData& data, const ModelSpec& spec, const FitOptions& options) {
  options.validate();
  spec.validate();
  data.validate(spec);
  Likelihood lik(spec, data);
  const auto& layout = lik.layout();
  const auto mask = layout.mask_null();
  const Eigen::VectorXd init = null_initial_working(spec, data);

  NullFit out;
  out.spec = spec;
  std::vector<StartDiagnostic> diag;
  ModeFit best = multi_start(
      [&](int s) {
        const Eigen::VectorXd x0 = s == 0 ? init : perturb_start(init, mask, options.start_sigma, options.seed, s);
        return optimize_mode(lik, x0, mask, 0.0, options.target_b, false, options);
      },
      options.n_starts, &diag);
  for (std::size_t k = 0; k < diag.size(); ++k)
    if (diag[k].ok && diag[k].value == best.objective) {
      out.best_start = static_cast<int>(k);
      break;
    }
  out.starts = std::move(diag);
  out.working = best.working;
  mirror_baseline(layout, out.working);
  out.loglik = lik.evaluate(out.working, options.target_b);
  out.converged = best.converged;
  Beta0 b;
  layout.unpack(out.working, &out.theta, &b);
  return out;
}

Eigen::VectorXd separated_start(const ParameterLayout& layout, const Eigen::VectorXd& null_working,
                                const std::vector<double>& covariate_means, const FitOptions& options) {
  const int N = layout.spec().n_states;
  const int C = layout.spec().n_tpm_covariates();
  const auto& means = covariate_means;
  // Disturbed regime starts from the null TPM with the diagonal moved by more
  // than epsilon.
  Eigen::VectorXd base = null_working;
  const auto gb = tpm_at_means(layout, base, means, Regime::baseline);
  const double shift = options.epsilon_sep + 0.05;
  for (int i = 0; i < N && N >= 2; ++i) {
    double d = gb(i, i) - shift;
    if (d < 0.05) d = std::min(gb(i, i) + shift, 0.99);
    const double off = (1.0 - d) / (N - 1);
    for (int j = 0; j < N; ++j) {
      if (j == i) continue;
      const int p = TransitionCoefficients::pair_index(N, i, j);
      double intercept = std::log(off / d);
      for (int m = 0; m < C; ++m) {
        const int bi = layout.coeff_index(Regime::baseline, p, 1 + m);
        const int di = layout.coeff_index(Regime::disturbed, p, 1 + m);
        base[di] = base[bi];
        intercept -= base[bi] * means[static_cast<std::size_t>(m)];
      }
      base[layout.coeff_index(Regime::disturbed, p, 0)] = intercept;
    }
  }
  for (int k = 0; k < layout.spec().p2(); ++k) base[layout.beta_offset() + k] = kNegInf;
  return base;
}

ModeFit progressive_sharpness_fit(const TrackData& data, const ModelSpec& spec, const NullFit& null_fit,
                                  const FitOptions& options, const std::vector<int>& fixed_slots) {
  options.validate();
  Likelihood lik(spec, data);
  const auto& layout = lik.layout();
  const auto& means = lik.covariate_means();

  Eigen::VectorXd base = separated_start(layout, null_fit.working, means, options);

  auto mask = layout.mask_hidden_process();
  layout.fix_beta_slots(mask, fixed_slots);
  const auto slots = free_slots(spec.p2(), fixed_slots);
  for (int k : fixed_slots) base[layout.beta_offset() + k] = kNegInf;

  // Active standardized values per slot, for threshold starting points.
  std::vector<std::vector<double>> active(static_cast<std::size_t>(spec.p2()));
  for (const auto& tr : data.tracks)
    for (int t = 0; t < tr.length(); ++t) {
      if (tr.masked(t)) continue;
      for (int k = 0; k < spec.p2(); ++k) {
        const double u = tr.threshold_covariates(t, k);
        if (u > 0.0) active[static_cast<std::size_t>(k)].push_back(u);
      }
    }

  std::vector<double> schedule = options.sharpness_schedule;
  if (schedule.back() < options.target_b) schedule.push_back(options.target_b);

  auto non_beta = mask;
  for (int k = 0; k < spec.p2(); ++k) non_beta[static_cast<std::size_t>(layout.beta_offset() + k)] = false;

  return multi_start(
      [&](int s) {
        Eigen::VectorXd x = s == 0 ? base : perturb_start(base, non_beta, options.start_sigma, options.seed, s);
        for (int k : slots) {
          const auto& a = active[static_cast<std::size_t>(k)];
          double beta = 0.5;  // slot never active: start below the bound
          if (!a.empty()) {
            const double frac = std::fmod(0.5 + s * 0.6180339887 + k * 0.3819660113, 1.0);
            const double q = quantile(a, 0.1 + 0.8 * frac);
            if (q > 0.0) beta = 1.0 / q;
          }
          x[layout.beta_offset() + k] = std::log(beta);
        }
        ModeFit stage;
        for (double b : schedule) {
          stage = optimize_mode(lik, x, mask, 0.0, b, true, options);
          if (stage.usable) x = stage.working;
        }
        return stage;
      },
      options.n_starts, nullptr);
}

namespace {

/// Damped Newton steps on the free coordinates after L-BFGS.
void newton_polish(const Likelihood& lik, const std::vector<bool>& free, double lambda, double sharpness,
                   bool separation, const FitOptions& options, ModeFit& mode) {
  if (!mode.usable) return;
  PenalizedObjective objective(lik, lambda, sharpness, separation, options);
  std::vector<int> idx;
  for (int k = 0; k < static_cast<int>(free.size()); ++k)
    if (free[static_cast<std::size_t>(k)] && std::isfinite(mode.working[k])) idx.push_back(k);
  const auto n = static_cast<Eigen::Index>(idx.size());
  if (n == 0) return;

  auto reduced = [&](const Eigen::VectorXd& g) {
    Eigen::VectorXd r(n);
    for (Eigen::Index a = 0; a < n; ++a) r[a] = g[idx[static_cast<std::size_t>(a)]];
    return r;
  };

  Eigen::VectorXd x = mode.working;
  Eigen::VectorXd full;
  double value = objective.evaluate(x, &full);
  Eigen::VectorXd g = reduced(full);
  for (int iter = 0; iter < 20 && g.cwiseAbs().maxCoeff() > options.inner_opt_tol; ++iter) {
    Eigen::MatrixXd h(n, n);
    for (Eigen::Index a = 0; a < n; ++a) {
      const int k = idx[static_cast<std::size_t>(a)];
      const double step = 1e-5 * std::max(1.0, std::abs(x[k]));
      Eigen::VectorXd xp = x, xm = x, gp, gm;
      xp[k] += step;
      xm[k] -= step;
      objective.evaluate(xp, &gp);
      objective.evaluate(xm, &gm);
      h.col(a) = -(reduced(gp) - reduced(gm)) / (2.0 * step);
    }
    h = 0.5 * (h + h.transpose());
    bool moved = false;
    for (double damping : {0.0, 1e-6, 1e-4, 1e-2, 1.0, 1e2}) {
      Eigen::MatrixXd m = h;
      m.diagonal().array() += damping * std::max(1.0, h.diagonal().cwiseAbs().maxCoeff());
      Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
      if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) continue;
      const Eigen::VectorXd d = ldlt.solve(g);
      if (!d.allFinite()) continue;
      Eigen::VectorXd trial = x;
      for (Eigen::Index a = 0; a < n; ++a) trial[idx[static_cast<std::size_t>(a)]] += d[a];
      Eigen::VectorXd tg;
      const double tv = objective.evaluate(trial, &tg);
      if (std::isfinite(tv) && tv >= value) {
        x = trial;
        value = tv;
        g = reduced(tg);
        moved = true;
        break;
      }
    }
    if (!moved) break;
  }
  mode.working = x;
  mode.objective = value;
  mode.gradient_max_norm = g.cwiseAbs().maxCoeff();
  objective.evaluate(x, nullptr, &mode.loglik);
}

}  // namespace

ModeFit fit_penalized(const Likelihood& lik, double lambda, const Eigen::VectorXd& init, const FitOptions& options,
                      const std::vector<int>& fixed_slots) {
  if (!(lambda >= 0.0)) throw InvalidInput("lambda must be nonnegative");
  auto mask = lik.layout().mask_all();
  lik.layout().fix_beta_slots(mask, fixed_slots);
  ModeFit mode = optimize_mode(lik, init, mask, lambda, options.target_b, true, options);
  newton_polish(lik, mask, lambda, options.target_b, true, options, mode);
  return mode;
}

// ---------------------------------------------------------------------------

HessianResult regularize_hessian(const Eigen::MatrixXd& h, const std::vector<double>& jitter) {
  HessianResult out;
  out.matrix = 0.5 * (h + h.transpose());
  const Eigen::Index n = out.matrix.rows();
  for (double j : jitter) {
    Eigen::MatrixXd m = out.matrix;
    m.diagonal().array() += j;
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success) continue;
    const Eigen::MatrixXd l = llt.matrixL();
    bool ok = true;
    double logdet = 0.0;
    for (Eigen::Index k = 0; k < n; ++k) {
      if (!(l(k, k) > 0.0) || !std::isfinite(l(k, k))) {
        ok = false;
        break;
      }
      logdet += 2.0 * std::log(l(k, k));
    }
    if (!ok) continue;
    out.matrix = m;
    out.logdet = logdet;
    out.jitter = j;
    return out;
  }
  throw NumericalError("negative Hessian is not positive definite after maximum jitter");
}

HessianResult negative_hessian(const Likelihood& lik, const Eigen::VectorXd& working, double lambda,
                               const FitOptions& options) {
  const auto& layout = lik.layout();
  const int P = layout.size();
  const int bo = layout.beta_offset();
  const int p2 = layout.spec().p2();
  const double b = options.target_b;

  Eigen::VectorXd x = working;
  for (int k = 0; k < p2; ++k) x[bo + k] = std::exp(working[bo + k]);

  auto gradient = [&](const Eigen::VectorXd& mixed) {
    Eigen::VectorXd w = mixed;
    for (int k = 0; k < p2; ++k) w[bo + k] = mixed[bo + k] > 0.0 ? std::log(mixed[bo + k]) : kNegInf;
    Eigen::VectorXd g;
    lik.evaluate(w, b, &g);
    for (int k = 0; k < p2; ++k) {
      const double beta = mixed[bo + k];
      g[bo + k] = (beta > 0.0 ? g[bo + k] / beta : 0.0) - lambda;
    }
    return g;
  };

  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(P, P);
  for (int j = 0; j < P; ++j) {
    double step = options.fd_step;
    if (j >= bo && j < bo + p2) {
      if (!(x[j] > kBetaZeroTolerance)) continue;  // zero slot: flat direction
      step = options.fd_step * x[j];
    }
    Eigen::VectorXd xp = x, xm = x;
    xp[j] += step;
    xm[j] -= step;
    h.col(j) = -(gradient(xp) - gradient(xm)) / (2.0 * step);
  }
  return regularize_hessian(h, options.hessian_jitter);
}

double marginal_loglik(double loglik_at_mode, const Beta0& beta0_hat, double lambda, double hessian_logdet, int p2) {
  return loglik_at_mode + p2 * std::log(lambda) - lambda * beta0_hat.l1_norm() - 0.5 * hessian_logdet;
}

double qreml_update(const Beta0& beta0_hat, double lambda_max, bool* capped) {
  const double sum = beta0_hat.l1_norm();
  const int p2 = beta0_hat.size();
  bool cap = !(sum >= 1e-12) || p2 / sum >= lambda_max;
  if (capped) *capped = cap;
  return cap ? lambda_max : p2 / sum;
}

std::vector<bool> detect_disturbance(const TrackData& data, const std::vector<std::vector<double>>& nu, int p2,
                                     double threshold) {
  std::vector<bool> out(static_cast<std::size_t>(p2), false);
  for (std::size_t r = 0; r < data.tracks.size(); ++r) {
    const auto& tr = data.tracks[r];
    for (int t = 0; t < tr.length(); ++t) {
      if (tr.masked(t) || !(nu[r][static_cast<std::size_t>(t)] > threshold)) continue;
      for (int k = 0; k < p2; ++k)
        if (tr.threshold_covariates(t, k) != 0.0) out[static_cast<std::size_t>(k)] = true;
    }
  }
  return out;
}

FitResult qreml_loop(const TrackData& data, const ModelSpec& spec, const FitOptions& options) {
  options.validate();
  spec.validate();
  data.validate(spec);
  if (spec.p2() < 1) throw InvalidInput("qreml_loop needs at least one threshold covariate");
  Likelihood lik(spec, data);
  const auto& layout = lik.layout();
  const int p2 = spec.p2();

  const NullFit null_fit = fit_null(data, spec, options);
  const ModeFit init = progressive_sharpness_fit(data, spec, null_fit, options);

  Eigen::VectorXd w = init.working;
  Beta0 beta;
  beta.log_values = w.segment(layout.beta_offset(), p2);
  double lambda = qreml_update(beta, options.lambda_max);

  const Eigen::VectorXd boundary = separated_start(layout, null_fit.working, lik.covariate_means(), options);
  const double boundary_objective =
      PenalizedObjective(lik, 0.0, options.target_b, true, options).evaluate(boundary, nullptr);

  struct Iterate {
    Eigen::VectorXd working;
    double lambda, loglik, marginal, logdet, jitter, grad_norm;
  };
  std::vector<Iterate> iterates;
  FitResult out;
  out.spec = spec;
  out.null_loglik = null_fit.loglik;

  bool converged = false;
  for (int it = 0; it < options.qreml_max_iter; ++it) {
    ModeFit mode = fit_penalized(lik, lambda, w, options);
    if (!mode.usable) throw ConvergenceError("penalized fit produced a non-finite objective");
    // beta0 = 0 is part of the parameter space; keep it when the local mode is worse.
    const bool to_boundary = mode.objective < boundary_objective;
    if (to_boundary) {
      mode.working = boundary;
      mode.loglik = boundary_objective;
      mode.objective = boundary_objective;
      mode.gradient_max_norm = 0.0;
      lambda = options.lambda_max;
    }
    w = mode.working;
    beta.log_values = w.segment(layout.beta_offset(), p2);

    Iterate rec{w, lambda, mode.loglik, 0.0, 0.0, 0.0, mode.gradient_max_norm};
    try {
      const auto hess = negative_hessian(lik, w, lambda, options);
      rec.logdet = hess.logdet;
      rec.jitter = hess.jitter;
    } catch (const NumericalError&) {
      rec.logdet = std::numeric_limits<double>::quiet_NaN();
    }
    rec.marginal = marginal_loglik(mode.loglik, beta, lambda, rec.logdet, p2);

    const double next = to_boundary ? options.lambda_max : qreml_update(beta, options.lambda_max);
    iterates.push_back(rec);
    out.trace.push_back({lambda, beta.l1_norm(), mode.loglik, rec.marginal});

    if (std::abs(next - lambda) / lambda < options.qreml_tol) {
      converged = true;
      break;
    }
    lambda = next;
  }

  const Iterate* chosen = &iterates.back();
  if (!converged) {
    for (const auto& r : iterates)
      if (std::isfinite(r.marginal) && (!std::isfinite(chosen->marginal) || r.marginal > chosen->marginal)) chosen = &r;
  }

  out.working = chosen->working;
  layout.unpack(out.working, &out.theta_hat, &out.beta0_hat);
  out.lambda_hat = chosen->lambda;
  out.loglik = chosen->loglik;
  out.marginal_loglik = chosen->marginal;
  out.hessian_logdet = chosen->logdet;
  out.hessian_jitter = chosen->jitter;
  out.inner_gradient_norm = chosen->grad_norm;
  out.capped = chosen->lambda >= options.lambda_max;
  out.converged = converged;
  out.qreml_iterations = static_cast<int>(iterates.size());
  out.nu_series = lik.nu_series(out.working, options.target_b);
  out.threshold_scaling = data.threshold_scaling;
  const Eigen::VectorXd bv = out.beta0_hat.values();
  for (int k = 0; k < p2; ++k) {
    StandardizedCovariate cov;
    if (static_cast<std::size_t>(k) < data.threshold_scaling.size()) {
      cov.orig_min = data.threshold_scaling[static_cast<std::size_t>(k)].orig_min;
      cov.orig_max = data.threshold_scaling[static_cast<std::size_t>(k)].orig_max;
    }
    out.thresholds_original.push_back(threshold_original_scale(bv[k], cov));
  }
  out.disturbance_detected = detect_disturbance(data, out.nu_series, p2, options.detection_threshold);
  return out;
}

}  // namespace thmm

#include "thmm/likelihood.hpp"

#include <boost/math/special_functions/digamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace thmm {
namespace {

struct EmissionCache {
  Family family = Family::gamma;
  // gamma
  double mean = 1.0, shape = 1.0, rate = 1.0, log_const = 0.0, shape_const = 0.0;
  // von Mises
  double kappa = 0.0, location = 0.0, resultant = 0.0;
};

struct Decoded {
  int n = 0, streams = 0, covs = 0, p2 = 0;
  std::vector<EmissionCache> emission;  // state * streams + stream
  RowMatrix alpha_b, alpha_d;           // pairs x (1 + C)
  std::vector<double> delta_b, delta_d;
  std::vector<double> beta;
};

Decoded decode(const ParameterLayout& layout, const Eigen::VectorXd& w) {
  const ModelSpec& spec = layout.spec();
  Decoded d;
  d.n = spec.n_states;
  d.streams = static_cast<int>(spec.streams.size());
  d.covs = spec.n_tpm_covariates();
  d.p2 = spec.p2();
  d.emission.resize(static_cast<std::size_t>(d.n * d.streams));
  for (int i = 0; i < d.n; ++i) {
    for (int s = 0; s < d.streams; ++s) {
      auto& e = d.emission[static_cast<std::size_t>(i * d.streams + s)];
      const int o = layout.emission_offset(i, s);
      e.family = spec.streams[static_cast<std::size_t>(s)].family;
      if (e.family == Family::gamma) {
        e.mean = std::exp(w[o]);
        e.shape = std::exp(w[o + 1]);
        e.rate = e.shape / e.mean;
        const double log_rate = w[o + 1] - w[o];
        e.log_const = e.shape * log_rate - std::lgamma(e.shape);
        e.shape_const = log_rate + 1.0 - boost::math::digamma(e.shape);
      } else {
        e.kappa = std::exp(w[o]);
        e.location = spec.streams[static_cast<std::size_t>(s)].estimate_location ? w[o + 1] : 0.0;
        e.log_const = -std::log(2.0 * std::numbers::pi) - log_bessel_i0(e.kappa);
        e.resultant = bessel_ratio_i1_i0(e.kappa);
      }
    }
  }
  const int cols = 1 + d.covs;
  d.alpha_b.resize(spec.n_pairs(), cols);
  d.alpha_d.resize(spec.n_pairs(), cols);
  for (int p = 0; p < spec.n_pairs(); ++p) {
    for (int c = 0; c < cols; ++c) {
      d.alpha_b(p, c) = w[layout.coeff_index(Regime::baseline, p, c)];
      d.alpha_d(p, c) = w[layout.coeff_index(Regime::disturbed, p, c)];
    }
  }
  const int n1 = d.n - 1;
  auto to_std = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  d.delta_b = to_std(probabilities_from_logits(w.segment(layout.delta_offset(Regime::baseline), n1)));
  d.delta_d = to_std(probabilities_from_logits(w.segment(layout.delta_offset(Regime::disturbed), n1)));
  d.beta.resize(static_cast<std::size_t>(d.p2));
  for (int k = 0; k < d.p2; ++k) d.beta[static_cast<std::size_t>(k)] = std::exp(w[layout.beta_offset() + k]);
  return d;
}

// Row-major N x N multinomial-logit TPM at covariate row `omega`.
void fill_tpm(const RowMatrix& alpha, int n, const double* omega, int covs, double* out) {
  for (int i = 0; i < n; ++i) {
    double* row = out + i * n;
    double hi = 0.0;
    for (int j = 0; j < n; ++j) {
      if (j == i) {
        row[j] = 0.0;
        continue;
      }
      const int p = TransitionCoefficients::pair_index(n, i, j);
      double eta = alpha(p, 0);
      for (int m = 0; m < covs; ++m) eta += alpha(p, 1 + m) * omega[m];
      row[j] = eta;
      hi = std::max(hi, eta);
    }
    double total = 0.0;
    for (int j = 0; j < n; ++j) {
      row[j] = std::exp(row[j] - hi);
      total += row[j];
    }
    for (int j = 0; j < n; ++j) row[j] /= total;
  }
}

// Accumulates d loglik / d alpha for one regime from d loglik / d Gamma.
void chain_softmax(const double* gamma, const double* dgamma, int n, const double* omega, int covs,
                   const ParameterLayout& layout, Regime regime, Eigen::VectorXd& grad) {
  for (int i = 0; i < n; ++i) {
    const double* g = gamma + i * n;
    const double* dg = dgamma + i * n;
    double inner = 0.0;
    for (int l = 0; l < n; ++l) inner += dg[l] * g[l];
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      const double dc = g[j] * (dg[j] - inner);
      const int p = TransitionCoefficients::pair_index(n, i, j);
      grad[layout.coeff_index(regime, p, 0)] += dc;
      for (int m = 0; m < covs; ++m) grad[layout.coeff_index(regime, p, 1 + m)] += dc * omega[m];
    }
  }
}

void chain_delta(const std::vector<double>& delta, const std::vector<double>& ddelta, int offset,
                 Eigen::VectorXd& grad) {
  double inner = 0.0;
  for (std::size_t j = 0; j < delta.size(); ++j) inner += ddelta[j] * delta[j];
  for (std::size_t k = 1; k < delta.size(); ++k)
    grad[offset + static_cast<int>(k) - 1] += delta[k] * (ddelta[k] - inner);
}

double stream_logpdf(const EmissionCache& e, double y, double log_y) {
  if (e.family == Family::gamma) return e.log_const + (e.shape - 1.0) * log_y - e.rate * y;
  return e.kappa * std::cos(y - e.location) + e.log_const;
}

// Per-track mixture probabilities and their logistic slopes b * nu * (1 - nu).
void compute_nu(const Track& track, const std::vector<double>& beta, double b, std::vector<double>& nu,
                std::vector<double>& slope) {
  const int T = track.length();
  const int p2 = static_cast<int>(beta.size());
  nu.assign(static_cast<std::size_t>(T), 0.0);
  slope.assign(static_cast<std::size_t>(T), 0.0);
  for (int t = 0; t < T; ++t) {
    if (track.masked(t)) continue;
    double lin = 0.0;
    for (int k = 0; k < p2; ++k) lin += beta[static_cast<std::size_t>(k)] * track.threshold_covariates(t, k);
    const double v = stable_sigmoid(b * (lin - 1.0));
    nu[static_cast<std::size_t>(t)] = v;
    slope[static_cast<std::size_t>(t)] = b * v * (1.0 - v);
  }
}

}  // namespace

int TrackData::total_length() const {
  int total = 0;
  for (const auto& t : tracks) total += t.length();
  return total;
}

void TrackData::validate(const ModelSpec& spec) const {
  if (tracks.empty()) throw InvalidInput("track data is empty");
  for (const auto& tr : tracks) {
    const auto T = tr.observations.rows();
    if (T < 1) throw InvalidInput("track '" + tr.id + "' is empty");
    if (tr.observations.cols() != static_cast<Eigen::Index>(spec.streams.size()))
      throw InvalidInput("track '" + tr.id + "': observation columns do not match the streams");
    if (tr.tpm_covariates.rows() != T || tr.tpm_covariates.cols() != spec.n_tpm_covariates())
      throw InvalidInput("track '" + tr.id + "': TPM covariates misaligned");
    if (tr.threshold_covariates.rows() != T || tr.threshold_covariates.cols() != spec.p2())
      throw InvalidInput("track '" + tr.id + "': threshold covariates misaligned");
    if (!tr.baseline_mask.empty() && static_cast<Eigen::Index>(tr.baseline_mask.size()) != T)
      throw InvalidInput("track '" + tr.id + "': baseline mask misaligned");
    if (!tr.tpm_covariates.allFinite() || !tr.threshold_covariates.allFinite())
      throw InvalidInput("track '" + tr.id + "': non-finite covariate");
    for (Eigen::Index t = 0; t < T; ++t) {
      for (std::size_t s = 0; s < spec.streams.size(); ++s) {
        const double y = tr.observations(t, static_cast<Eigen::Index>(s));
        if (std::isnan(y)) continue;
        if (!std::isfinite(y) || (spec.streams[s].family == Family::gamma && y <= 0.0))
          throw InvalidInput("track '" + tr.id + "': invalid observation in stream " + spec.streams[s].name);
      }
    }
  }
}

Likelihood::Likelihood(const ModelSpec& spec, const TrackData& data) : layout_(spec), data_(&data) {
  data.validate(spec);
  const int C = spec.n_tpm_covariates();
  covariate_means_.assign(static_cast<std::size_t>(C), 0.0);
  double steps = 0.0;
  for (const auto& tr : data.tracks) {
    RowMatrix logs = tr.observations;
    for (Eigen::Index t = 0; t < logs.rows(); ++t)
      for (Eigen::Index s = 0; s < logs.cols(); ++s)
        if (spec.streams[static_cast<std::size_t>(s)].family == Family::gamma && !std::isnan(logs(t, s)))
          logs(t, s) = std::log(logs(t, s));
    log_observations_.push_back(std::move(logs));
    for (int t = 0; t < tr.length(); ++t)
      for (int m = 0; m < C; ++m) covariate_means_[static_cast<std::size_t>(m)] += tr.tpm_covariates(t, m);
    steps += tr.length();
  }
  for (auto& m : covariate_means_) m /= steps;
}

double Likelihood::evaluate(const Eigen::VectorXd& working, double b, Eigen::VectorXd* grad) const {
  if (working.size() != layout_.size()) throw InvalidInput("evaluate: working vector has wrong length");
  const Decoded d = decode(layout_, working);
  const int N = d.n, S = d.streams, C = d.covs, NN = N * N;
  if (grad) grad->setZero(layout_.size());

  std::vector<double> const_b(static_cast<std::size_t>(NN)), const_d(static_cast<std::size_t>(NN));
  if (C == 0) {
    fill_tpm(d.alpha_b, N, nullptr, 0, const_b.data());
    fill_tpm(d.alpha_d, N, nullptr, 0, const_d.data());
  }
  // Accumulated d loglik / d Gamma for the covariate-free case.
  std::vector<double> acc_b(static_cast<std::size_t>(NN), 0.0), acc_d(static_cast<std::size_t>(NN), 0.0);
  std::vector<double> ddelta_b(static_cast<std::size_t>(N), 0.0), ddelta_d(static_cast<std::size_t>(N), 0.0);
  std::vector<double> demission(static_cast<std::size_t>(N * S * 2), 0.0);

  std::vector<double> P, M, nu, slope, tpm_b, tpm_d, fwd, scale, eff(static_cast<std::size_t>(NN));
  std::vector<double> bwd(static_cast<std::size_t>(N)), bnext(static_cast<std::size_t>(N)),
      v(static_cast<std::size_t>(N)), G(static_cast<std::size_t>(NN)), dgb(static_cast<std::size_t>(NN)),
      dgd(static_cast<std::size_t>(NN));
  double total = 0.0;

  for (std::size_t k = 0; k < data_->tracks.size(); ++k) {
    const Track& tr = data_->tracks[k];
    const RowMatrix& logy = log_observations_[k];
    const int T = tr.length();

    // Emissions, shifted by the per-step maximum.
    P.assign(static_cast<std::size_t>(T * N), 0.0);
    M.assign(static_cast<std::size_t>(T), 0.0);
    for (int t = 0; t < T; ++t) {
      double* row = &P[static_cast<std::size_t>(t * N)];
      double hi = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < N; ++i) {
        double lp = 0.0;
        for (int s = 0; s < S; ++s) {
          const double y = tr.observations(t, s);
          if (std::isnan(y)) continue;
          lp += stream_logpdf(d.emission[static_cast<std::size_t>(i * S + s)], y, logy(t, s));
        }
        row[i] = lp;
        hi = std::max(hi, lp);
      }
      M[static_cast<std::size_t>(t)] = hi;
      for (int i = 0; i < N; ++i) row[i] = std::exp(row[i] - hi);
    }

    compute_nu(tr, d.beta, b, nu, slope);

    if (C > 0) {
      tpm_b.resize(static_cast<std::size_t>(T * NN));
      tpm_d.resize(static_cast<std::size_t>(T * NN));
      for (int t = 0; t < T; ++t) {
        const double* omega = &tr.tpm_covariates(t, 0);
        fill_tpm(d.alpha_b, N, omega, C, &tpm_b[static_cast<std::size_t>(t * NN)]);
        fill_tpm(d.alpha_d, N, omega, C, &tpm_d[static_cast<std::size_t>(t * NN)]);
      }
    }
    auto gb_at = [&](int t) { return C > 0 ? &tpm_b[static_cast<std::size_t>(t * NN)] : const_b.data(); };
    auto gd_at = [&](int t) { return C > 0 ? &tpm_d[static_cast<std::size_t>(t * NN)] : const_d.data(); };

    // Scaled forward pass.
    fwd.assign(static_cast<std::size_t>(T * N), 0.0);
    scale.assign(static_cast<std::size_t>(T), 0.0);
    {
      const double n0 = nu[0];
      double c = 0.0;
      for (int i = 0; i < N; ++i) {
        const double pi = (1.0 - n0) * d.delta_b[static_cast<std::size_t>(i)] + n0 * d.delta_d[static_cast<std::size_t>(i)];
        fwd[static_cast<std::size_t>(i)] = pi * P[static_cast<std::size_t>(i)];
        c += fwd[static_cast<std::size_t>(i)];
      }
      if (!(c > 0.0)) return -std::numeric_limits<double>::infinity();
      for (int i = 0; i < N; ++i) fwd[static_cast<std::size_t>(i)] /= c;
      scale[0] = c;
    }
    for (int t = 1; t < T; ++t) {
      const double nt = nu[static_cast<std::size_t>(t)];
      const double* gb = gb_at(t);
      const double* gd = gd_at(t);
      for (int q = 0; q < NN; ++q) eff[static_cast<std::size_t>(q)] = (1.0 - nt) * gb[q] + nt * gd[q];
      const double* prev = &fwd[static_cast<std::size_t>((t - 1) * N)];
      double* cur = &fwd[static_cast<std::size_t>(t * N)];
      const double* pt = &P[static_cast<std::size_t>(t * N)];
      double c = 0.0;
      for (int j = 0; j < N; ++j) {
        double acc = 0.0;
        for (int i = 0; i < N; ++i) acc += prev[i] * eff[static_cast<std::size_t>(i * N + j)];
        cur[j] = acc * pt[j];
        c += cur[j];
      }
      if (!(c > 0.0)) return -std::numeric_limits<double>::infinity();
      for (int j = 0; j < N; ++j) cur[j] /= c;
      scale[static_cast<std::size_t>(t)] = c;
    }
    for (int t = 0; t < T; ++t) total += std::log(scale[static_cast<std::size_t>(t)]) + M[static_cast<std::size_t>(t)];

    if (!grad) continue;
    Eigen::VectorXd& g = *grad;

    auto add_emission = [&](int t, const double* post) {
      for (int i = 0; i < N; ++i) {
        const double w = post[i];
        if (w == 0.0) continue;
        for (int s = 0; s < S; ++s) {
          const double y = tr.observations(t, s);
          if (std::isnan(y)) continue;
          const auto& e = d.emission[static_cast<std::size_t>(i * S + s)];
          double* de = &demission[static_cast<std::size_t>((i * S + s) * 2)];
          if (e.family == Family::gamma) {
            de[0] += w * (e.rate * y - e.shape);
            de[1] += w * e.shape * (e.shape_const + logy(t, s) - y / e.mean);
          } else {
            const double diff = y - e.location;
            de[0] += w * e.kappa * (std::cos(diff) - e.resultant);
            de[1] += w * e.kappa * std::sin(diff);
          }
        }
      }
    };

    std::fill(bwd.begin(), bwd.end(), 1.0);
    std::vector<double> post(static_cast<std::size_t>(N));
    for (int t = T - 1; t >= 1; --t) {
      const double* cur = &fwd[static_cast<std::size_t>(t * N)];
      for (int i = 0; i < N; ++i) post[static_cast<std::size_t>(i)] = cur[i] * bwd[static_cast<std::size_t>(i)];
      add_emission(t, post.data());

      const double ct = scale[static_cast<std::size_t>(t)];
      const double* pt = &P[static_cast<std::size_t>(t * N)];
      for (int j = 0; j < N; ++j) v[static_cast<std::size_t>(j)] = pt[j] * bwd[static_cast<std::size_t>(j)] / ct;
      const double* prev = &fwd[static_cast<std::size_t>((t - 1) * N)];
      const double nt = nu[static_cast<std::size_t>(t)];
      const double* gb = gb_at(t);
      const double* gd = gd_at(t);
      double dnu = 0.0;
      for (int i = 0; i < N; ++i) {
        double acc = 0.0;
        for (int j = 0; j < N; ++j) {
          const std::size_t q = static_cast<std::size_t>(i * N + j);
          const double gij = prev[i] * v[static_cast<std::size_t>(j)];
          G[q] = gij;
          dnu += gij * (gd[q] - gb[q]);
          acc += ((1.0 - nt) * gb[q] + nt * gd[q]) * v[static_cast<std::size_t>(j)];
        }
        bnext[static_cast<std::size_t>(i)] = acc;
      }
      if (C == 0) {
        for (int q = 0; q < NN; ++q) {
          acc_b[static_cast<std::size_t>(q)] += (1.0 - nt) * G[static_cast<std::size_t>(q)];
          acc_d[static_cast<std::size_t>(q)] += nt * G[static_cast<std::size_t>(q)];
        }
      } else {
        for (int q = 0; q < NN; ++q) {
          dgb[static_cast<std::size_t>(q)] = (1.0 - nt) * G[static_cast<std::size_t>(q)];
          dgd[static_cast<std::size_t>(q)] = nt * G[static_cast<std::size_t>(q)];
        }
        const double* omega = &tr.tpm_covariates(t, 0);
        chain_softmax(gb, dgb.data(), N, omega, C, layout_, Regime::baseline, g);
        chain_softmax(gd, dgd.data(), N, omega, C, layout_, Regime::disturbed, g);
      }
      const double sl = slope[static_cast<std::size_t>(t)];
      if (sl != 0.0) {
        for (int s = 0; s < d.p2; ++s)
          g[layout_.beta_offset() + s] += dnu * sl * tr.threshold_covariates(t, s) * d.beta[static_cast<std::size_t>(s)];
      }
      std::swap(bwd, bnext);
    }
    // First step: emissions and the mixed initial distribution.
    for (int i = 0; i < N; ++i) post[static_cast<std::size_t>(i)] = fwd[static_cast<std::size_t>(i)] * bwd[static_cast<std::size_t>(i)];
    add_emission(0, post.data());
    const double n0 = nu[0];
    double dnu0 = 0.0;
    for (int i = 0; i < N; ++i) {
      const double dpi = P[static_cast<std::size_t>(i)] * bwd[static_cast<std::size_t>(i)] / scale[0];
      ddelta_b[static_cast<std::size_t>(i)] += (1.0 - n0) * dpi;
      ddelta_d[static_cast<std::size_t>(i)] += n0 * dpi;
      dnu0 += dpi * (d.delta_d[static_cast<std::size_t>(i)] - d.delta_b[static_cast<std::size_t>(i)]);
    }
    if (slope[0] != 0.0) {
      for (int s = 0; s < d.p2; ++s)
        g[layout_.beta_offset() + s] += dnu0 * slope[0] * tr.threshold_covariates(0, s) * d.beta[static_cast<std::size_t>(s)];
    }
  }

  if (grad) {
    Eigen::VectorXd& g = *grad;
    if (C == 0) {
      chain_softmax(const_b.data(), acc_b.data(), N, nullptr, 0, layout_, Regime::baseline, g);
      chain_softmax(const_d.data(), acc_d.data(), N, nullptr, 0, layout_, Regime::disturbed, g);
    }
    chain_delta(d.delta_b, ddelta_b, layout_.delta_offset(Regime::baseline), g);
    chain_delta(d.delta_d, ddelta_d, layout_.delta_offset(Regime::disturbed), g);
    for (int i = 0; i < N; ++i) {
      for (int s = 0; s < S; ++s) {
        const int o = layout_.emission_offset(i, s);
        const double* de = &demission[static_cast<std::size_t>((i * S + s) * 2)];
        g[o] += de[0];
        if (layout_.emission_width(s) == 2) g[o + 1] += de[1];
      }
    }
  }
  return total;
}

std::vector<std::vector<double>> Likelihood::nu_series(const Eigen::VectorXd& working, double b) const {
  const Decoded d = decode(layout_, working);
  std::vector<std::vector<double>> out;
  std::vector<double> nu, slope;
  for (const auto& tr : data_->tracks) {
    compute_nu(tr, d.beta, b, nu, slope);
    out.push_back(nu);
  }
  return out;
}

std::vector<std::vector<int>> Likelihood::viterbi(const Eigen::VectorXd& working, double b) const {
  const Decoded d = decode(layout_, working);
  const int N = d.n, S = d.streams, C = d.covs, NN = N * N;
  std::vector<std::vector<int>> paths;
  std::vector<double> gb(static_cast<std::size_t>(NN)), gd(static_cast<std::size_t>(NN)), nu, slope;
  for (std::size_t k = 0; k < data_->tracks.size(); ++k) {
    const Track& tr = data_->tracks[k];
    const RowMatrix& logy = log_observations_[k];
    const int T = tr.length();
    compute_nu(tr, d.beta, b, nu, slope);
    auto log_emission = [&](int t, int i) {
      double lp = 0.0;
      for (int s = 0; s < S; ++s) {
        const double y = tr.observations(t, s);
        if (!std::isnan(y)) lp += stream_logpdf(d.emission[static_cast<std::size_t>(i * S + s)], y, logy(t, s));
      }
      return lp;
    };
    std::vector<double> score(static_cast<std::size_t>(T * N));
    std::vector<int> back(static_cast<std::size_t>(T * N), 0);
    for (int i = 0; i < N; ++i) {
      const double pi = (1.0 - nu[0]) * d.delta_b[static_cast<std::size_t>(i)] + nu[0] * d.delta_d[static_cast<std::size_t>(i)];
      score[static_cast<std::size_t>(i)] = std::log(pi) + log_emission(0, i);
    }
    for (int t = 1; t < T; ++t) {
      const double* omega = C > 0 ? &tr.tpm_covariates(t, 0) : nullptr;
      fill_tpm(d.alpha_b, N, omega, C, gb.data());
      fill_tpm(d.alpha_d, N, omega, C, gd.data());
      const double nt = nu[static_cast<std::size_t>(t)];
      for (int j = 0; j < N; ++j) {
        double best = -std::numeric_limits<double>::infinity();
        int arg = 0;
        for (int i = 0; i < N; ++i) {
          const std::size_t q = static_cast<std::size_t>(i * N + j);
          const double cand = score[static_cast<std::size_t>((t - 1) * N + i)] + std::log((1.0 - nt) * gb[q] + nt * gd[q]);
          if (cand > best) {
            best = cand;
            arg = i;
          }
        }
        score[static_cast<std::size_t>(t * N + j)] = best + log_emission(t, j);
        back[static_cast<std::size_t>(t * N + j)] = arg;
      }
    }
    std::vector<int> path(static_cast<std::size_t>(T));
    int arg = 0;
    for (int i = 1; i < N; ++i)
      if (score[static_cast<std::size_t>((T - 1) * N + i)] > score[static_cast<std::size_t>((T - 1) * N + arg)]) arg = i;
    path[static_cast<std::size_t>(T - 1)] = arg;
    for (int t = T - 1; t >= 1; --t) {
      arg = back[static_cast<std::size_t>(t * N + arg)];
      path[static_cast<std::size_t>(t - 1)] = arg;
    }
    paths.push_back(std::move(path));
  }
  return paths;
}

double forward_loglik(const ModelSpec& spec, const ThetaParams& theta, const Beta0& beta0, const TrackData& data,
                      double sharpness) {
  Likelihood lik(spec, data);
  return lik.evaluate(lik.layout().pack(theta, beta0), sharpness);
}

double penalized_loglik(const ModelSpec& spec, const ThetaParams& theta, const Beta0& beta0, const TrackData& data,
                        double lambda, double sharpness) {
  if (!(lambda >= 0.0)) throw InvalidInput("penalized_loglik: lambda must be nonnegative");
  return forward_loglik(spec, theta, beta0, data, sharpness) - lambda * beta0.l1_norm();
}

Eigen::VectorXd objective_gradient(const ModelSpec& spec, const ThetaParams& theta, const Beta0& beta0,
                                   const TrackData& data, double lambda, double sharpness) {
  Likelihood lik(spec, data);
  Eigen::VectorXd grad;
  lik.evaluate(lik.layout().pack(theta, beta0), sharpness, &grad);
  const Eigen::VectorXd beta = beta0.values();
  for (int s = 0; s < spec.p2(); ++s) grad[lik.layout().beta_offset() + s] -= lambda * beta[s];
  return grad;
}

std::vector<std::vector<int>> viterbi(const ModelSpec& spec, const ThetaParams& theta, const Beta0& beta0,
                                      const TrackData& data, double sharpness) {
  Likelihood lik(spec, data);
  return lik.viterbi(lik.layout().pack(theta, beta0), sharpness);
}

std::vector<double> state_occupancy(const std::vector<std::vector<int>>& paths, int n_states) {
  std::vector<double> counts(static_cast<std::size_t>(n_states), 0.0);
  double total = 0.0;
  for (const auto& p : paths) {
    for (int s : p) {
      if (s < 0 || s >= n_states) throw InvalidInput("state_occupancy: state index out of range");
      counts[static_cast<std::size_t>(s)] += 1.0;
      total += 1.0;
    }
  }
  if (total == 0.0) throw InvalidInput("state_occupancy: no decoded steps");
  for (auto& c : counts) c /= total;
  return counts;
}

}  // namespace thmm

#include "thmm/parameters.hpp"

#include <cmath>

namespace thmm {

ParameterLayout::ParameterLayout(const ModelSpec& spec) : spec_(spec) {
  spec_.validate();
  int offset = 0;
  for (const auto& s : spec_.streams) {
    const int w = s.family == Family::gamma ? 2 : (s.estimate_location ? 2 : 1);
    stream_width_.push_back(w);
    stream_offset_.push_back(offset);
    offset += w;
  }
  emission_stride_ = offset;

  regime_block_cols_ = 1;
  for (const auto& c : spec_.tpm_covariates) {
    if (c.shared) {
      own_column_.push_back(-1);
      shared_column_.push_back(shared_cols_++);
    } else {
      own_column_.push_back(regime_block_cols_++);
      shared_column_.push_back(-1);
    }
  }
  coeff_offset_ = emission_size();
  shared_offset_ = coeff_offset_ + 2 * spec_.n_pairs() * regime_block_cols_;
  delta_offset_ = shared_offset_ + spec_.n_pairs() * shared_cols_;
  beta_offset_ = delta_offset_ + 2 * (spec_.n_states - 1);
  size_ = beta_offset_ + spec_.p2();
}

int ParameterLayout::coeff_index(Regime regime, int pair, int column) const {
  if (column == 0) {
    return coeff_offset_ + (static_cast<int>(regime) * spec_.n_pairs() + pair) * regime_block_cols_;
  }
  const int m = column - 1;
  if (shared_column_[m] >= 0) return shared_offset_ + pair * shared_cols_ + shared_column_[m];
  return coeff_offset_ + (static_cast<int>(regime) * spec_.n_pairs() + pair) * regime_block_cols_ +
         own_column_[m];
}

Eigen::VectorXd ParameterLayout::pack(const ThetaParams& theta, const Beta0& beta0) const {
  theta.validate(spec_);
  if (beta0.size() != spec_.p2()) throw InvalidInput("pack: beta0 has wrong length");
  Eigen::VectorXd w = Eigen::VectorXd::Zero(size_);
  for (int i = 0; i < spec_.n_states; ++i) {
    for (std::size_t s = 0; s < spec_.streams.size(); ++s) {
      const int o = emission_offset(i, static_cast<int>(s));
      const auto& p = theta.emissions[static_cast<std::size_t>(i)][s];
      if (spec_.streams[s].family == Family::gamma) {
        w[o] = std::log(as_gamma(p).mean);
        w[o + 1] = std::log(as_gamma(p).shape);
      } else {
        w[o] = std::log(as_vonmises(p).concentration);
        if (spec_.streams[s].estimate_location) w[o + 1] = as_vonmises(p).location;
      }
    }
  }
  const int cols = 1 + spec_.n_tpm_covariates();
  for (int pair = 0; pair < spec_.n_pairs(); ++pair) {
    for (int col = 0; col < cols; ++col) {
      w[coeff_index(Regime::baseline, pair, col)] = theta.coeffs.baseline.alpha(pair, col);
      const bool shared = col > 0 && shared_column_[col - 1] >= 0;
      if (!shared) w[coeff_index(Regime::disturbed, pair, col)] = theta.coeffs.disturbed.alpha(pair, col);
    }
  }
  const int n1 = spec_.n_states - 1;
  w.segment(delta_offset(Regime::baseline), n1) = logits_from_probabilities(theta.delta_baseline);
  w.segment(delta_offset(Regime::disturbed), n1) = logits_from_probabilities(theta.delta_disturbed);
  w.segment(beta_offset_, spec_.p2()) = beta0.log_values;
  return w;
}

void ParameterLayout::unpack(const Eigen::VectorXd& w, ThetaParams* theta, Beta0* beta0) const {
  if (w.size() != size_) throw InvalidInput("unpack: working vector has wrong length");
  if (theta) {
    theta->emissions.assign(static_cast<std::size_t>(spec_.n_states), {});
    for (int i = 0; i < spec_.n_states; ++i) {
      auto& row = theta->emissions[static_cast<std::size_t>(i)];
      for (std::size_t s = 0; s < spec_.streams.size(); ++s) {
        const int o = emission_offset(i, static_cast<int>(s));
        if (spec_.streams[s].family == Family::gamma) {
          row.emplace_back(GammaParams{std::exp(w[o]), std::exp(w[o + 1])});
        } else {
          const double loc = spec_.streams[s].estimate_location ? wrap_angle(w[o + 1]) : 0.0;
          row.emplace_back(VonMisesParams{loc, std::exp(w[o])});
        }
      }
    }
    const int cols = 1 + spec_.n_tpm_covariates();
    theta->coeffs.baseline = TransitionCoefficients::zeros(spec_.n_states, spec_.n_tpm_covariates());
    theta->coeffs.disturbed = TransitionCoefficients::zeros(spec_.n_states, spec_.n_tpm_covariates());
    for (int pair = 0; pair < spec_.n_pairs(); ++pair) {
      for (int col = 0; col < cols; ++col) {
        theta->coeffs.baseline.alpha(pair, col) = w[coeff_index(Regime::baseline, pair, col)];
        theta->coeffs.disturbed.alpha(pair, col) = w[coeff_index(Regime::disturbed, pair, col)];
      }
    }
    const int n1 = spec_.n_states - 1;
    theta->delta_baseline = probabilities_from_logits(w.segment(delta_offset(Regime::baseline), n1));
    theta->delta_disturbed = probabilities_from_logits(w.segment(delta_offset(Regime::disturbed), n1));
  }
  if (beta0) beta0->log_values = w.segment(beta_offset_, spec_.p2());
}

std::vector<bool> ParameterLayout::mask_all() const { return std::vector<bool>(static_cast<std::size_t>(size_), true); }

std::vector<bool> ParameterLayout::mask_null() const {
  std::vector<bool> m(static_cast<std::size_t>(size_), false);
  for (int k = 0; k < emission_size(); ++k) m[static_cast<std::size_t>(k)] = true;
  const int cols = 1 + spec_.n_tpm_covariates();
  for (int pair = 0; pair < spec_.n_pairs(); ++pair)
    for (int col = 0; col < cols; ++col) m[static_cast<std::size_t>(coeff_index(Regime::baseline, pair, col))] = true;
  for (int k = 0; k < spec_.n_states - 1; ++k)
    m[static_cast<std::size_t>(delta_offset(Regime::baseline) + k)] = true;
  return m;
}

std::vector<bool> ParameterLayout::mask_hidden_process() const {
  std::vector<bool> m(static_cast<std::size_t>(size_), true);
  for (int k = 0; k < emission_size(); ++k) m[static_cast<std::size_t>(k)] = false;
  return m;
}

void ParameterLayout::fix_beta_slots(std::vector<bool>& mask, const std::vector<int>& fixed_slots) const {
  for (int s : fixed_slots) {
    if (s < 0 || s >= spec_.p2()) throw InvalidInput("fix_beta_slots: slot out of range");
    mask[static_cast<std::size_t>(beta_offset_ + s)] = false;
  }
}

Eigen::VectorXd probabilities_from_logits(const Eigen::Ref<const Eigen::VectorXd>& logits) {
  const auto n = logits.size() + 1;
  Eigen::VectorXd p(n);
  double hi = 0.0;
  for (Eigen::Index k = 0; k < logits.size(); ++k) hi = std::max(hi, logits[k]);
  p[0] = std::exp(-hi);
  for (Eigen::Index k = 0; k < logits.size(); ++k) p[k + 1] = std::exp(logits[k] - hi);
  return p / p.sum();
}

Eigen::VectorXd logits_from_probabilities(const Eigen::Ref<const Eigen::VectorXd>& probs) {
  if ((probs.array() <= 0.0).any()) throw InvalidInput("logits_from_probabilities: zero probability");
  Eigen::VectorXd z(probs.size() - 1);
  for (Eigen::Index k = 1; k < probs.size(); ++k) z[k - 1] = std::log(probs[k] / probs[0]);
  return z;
}

}  // namespace thmm

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "support/oracles.hpp"
#include "support/random_models.hpp"
#include "thmm/likelihood.hpp"

using namespace thmm;
using thmm::testkit::InstanceShape;
using thmm::testkit::random_instance;

namespace {

double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

// Single-regime reference with the regime forced by nu = 0 or nu = 1.
double single_regime_reference(const testkit::Instance& inst, bool disturbed) {
  double total = 0.0;
  for (const auto& tr : inst.data.tracks) {
    const int T = tr.length();
    std::vector<Eigen::MatrixXd> gammas(static_cast<std::size_t>(T));
    std::vector<std::vector<double>> le(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
      const auto omega = oracle::row(tr.tpm_covariates, t);
      gammas[static_cast<std::size_t>(t)] =
          oracle::hand_tpm(disturbed ? inst.theta.coeffs.disturbed : inst.theta.coeffs.baseline, omega);
      for (int i = 0; i < inst.spec.n_states; ++i)
        le[static_cast<std::size_t>(t)].push_back(std::log(oracle::emission_density(inst.spec, inst.theta, i, tr, t)));
    }
    total += oracle::reference_hmm_loglik(disturbed ? inst.theta.delta_disturbed : inst.theta.delta_baseline, gammas, le);
  }
  return total;
}

}  // namespace

TEST(ForwardLoglik, SingleObservationReducesToInitialMixture) {
  std::mt19937_64 rng(1);
  InstanceShape shape;
  shape.length = 1;
  shape.p2 = 1;
  auto inst = random_instance(shape, rng);
  inst.beta0 = Beta0::zeros(1);
  const auto& tr = inst.data.tracks[0];
  double ref = 0.0;
  for (int i = 0; i < 2; ++i) ref += inst.theta.delta_baseline[i] * oracle::emission_density(inst.spec, inst.theta, i, tr, 0);
  EXPECT_NEAR(forward_loglik(inst.spec, inst.theta, inst.beta0, inst.data, 500.0), std::log(ref), 1e-12);
}

TEST(ForwardLoglik, RegimeLimitsMatchOrdinaryHmm) {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 10; ++rep) {
    InstanceShape shape;
    shape.n_states = 2 + rep % 2;
    shape.length = 40;
    shape.n_tracks = 2;
    shape.p2 = 1;
    auto inst = random_instance(shape, rng);
    inst.beta0 = Beta0::zeros(1);
    EXPECT_LT(rel_err(forward_loglik(inst.spec, inst.theta, inst.beta0, inst.data, 500.0),
                      single_regime_reference(inst, false)),
              1e-10);
    // beta = 1e3 with u in (0,1] pushes nu to 1 except where u is tiny; force u >= 0.5.
    for (auto& tr : inst.data.tracks) tr.threshold_covariates = (tr.threshold_covariates.array() * 0.5 + 0.5).matrix();
    inst.beta0 = Beta0::from_values(std::vector<double>{1e3});
    EXPECT_LT(rel_err(forward_loglik(inst.spec, inst.theta, inst.beta0, inst.data, 500.0),
                      single_regime_reference(inst, true)),
              1e-10);
  }
}

TEST(ForwardLoglik, MatchesExhaustiveEnumeration) {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 30; ++rep) {
    InstanceShape shape;
    shape.n_states = rep % 2 ? 3 : 2;
    shape.length = shape.n_states == 2 ? 2 + rep % 5 : 2 + rep % 3;
    shape.with_mask = rep % 3 == 0;
    shape.with_missing = rep % 4 == 1;
    shape.p2 = 1 + rep % 2;
    const double b = rep % 5 == 0 ? 5.0 : 500.0;
    auto inst = random_instance(shape, rng);
    const auto ref = oracle::enumerate_paths(inst.spec, inst.theta, inst.beta0, inst.data.tracks[0], b);
    EXPECT_LT(rel_err(forward_loglik(inst.spec, inst.theta, inst.beta0, inst.data, b), ref.loglik), 1e-10) << rep;
    const auto path = viterbi(inst.spec, inst.theta, inst.beta0, inst.data, b);
    EXPECT_EQ(path[0], ref.best_path) << rep;
  }
}

TEST(ForwardLoglik, TracksAreIndependent) {
  std::mt19937_64 rng(4);
  InstanceShape shape;
  shape.length = 30;
  shape.n_tracks = 3;
  auto inst = random_instance(shape, rng);
  double sum = 0.0;
  for (const auto& tr : inst.data.tracks) {
    TrackData one;
    one.tracks.push_back(tr);
    one.threshold_scaling = inst.data.threshold_scaling;
    sum += forward_loglik(inst.spec, inst.theta, inst.beta0, one, 500.0);
  }
  EXPECT_NEAR(forward_loglik(inst.spec, inst.theta, inst.beta0, inst.data, 500.0), sum, 1e-9);
}

TEST(ForwardLoglik, FullyMissingStepContributesFactorOne) {
  std::mt19937_64 rng(5);
  InstanceShape shape;
  shape.length = 6;
  auto inst = random_instance(shape, rng);
  auto& tr = inst.data.tracks[0];
  tr.observations.row(5).setConstant(std::nan(""));
  TrackData shorter = inst.data;
  auto& s = shorter.tracks[0];
  s.observations.conservativeResize(5, Eigen::NoChange);
  s.tpm_covariates.conservativeResize(5, Eigen::NoChange);
  s.threshold_covariates.conservativeResize(5, Eigen::NoChange);
  EXPECT_NEAR(forward_loglik(inst.spec, inst.theta, inst.beta0, inst.data, 500.0),
              forward_loglik(inst.spec, inst.theta, inst.beta0, shorter, 500.0), 1e-12);
}

TEST(ForwardLoglik, InvariantUnderStatePermutation) {
  std::mt19937_64 rng(6);
  InstanceShape shape;
  shape.n_states = 3;
  shape.length = 50;
  auto inst = random_instance(shape, rng);
  const std::vector<int> perm{2, 0, 1};  // new state k is old state perm[k]
  ThetaParams p = inst.theta;
  for (int k = 0; k < 3; ++k) {
    p.emissions[static_cast<std::size_t>(k)] = inst.theta.emissions[static_cast<std::size_t>(perm[static_cast<std::size_t>(k)])];
    p.delta_baseline[k] = inst.theta.delta_baseline[perm[static_cast<std::size_t>(k)]];
    p.delta_disturbed[k] = inst.theta.delta_disturbed[perm[static_cast<std::size_t>(k)]];
  }
  for (auto [src, dst] : {std::pair{&inst.theta.coeffs.baseline, &p.coeffs.baseline},
                          std::pair{&inst.theta.coeffs.disturbed, &p.coeffs.disturbed}}) {
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        if (i == j) continue;
        const int pi = perm[static_cast<std::size_t>(i)], pj = perm[static_cast<std::size_t>(j)];
        // Logits are relative to the diagonal, which is pinned at 0 in both labelings.
        dst->alpha.row(TransitionCoefficients::pair_index(3, i, j)) =
            src->alpha.row(TransitionCoefficients::pair_index(3, pi, pj));
      }
  }
  EXPECT_NEAR(forward_loglik(inst.spec, p, inst.beta0, inst.data, 500.0),
              forward_loglik(inst.spec, inst.theta, inst.beta0, inst.data, 500.0), 1e-9);
}

TEST(ForwardLoglik, LongSeriesStaysFinite) {
  std::mt19937_64 rng(7);
  InstanceShape shape;
  shape.length = 100000;
  shape.with_covariates = false;
  auto inst = random_instance(shape, rng);
  const double ll = forward_loglik(inst.spec, inst.theta, inst.beta0, inst.data, 500.0);
  EXPECT_TRUE(std::isfinite(ll));
  EXPECT_LT(ll, 0.0);
}

TEST(PenalizedLoglik, SubtractsL1Penalty) {
  std::mt19937_64 rng(8);
  InstanceShape shape;
  shape.length = 20;
  auto inst = random_instance(shape, rng);
  inst.beta0 = Beta0::from_values(std::vector<double>{0.5, 1.5});
  const double ll = forward_loglik(inst.spec, inst.theta, inst.beta0, inst.data, 500.0);
  EXPECT_DOUBLE_EQ(penalized_loglik(inst.spec, inst.theta, inst.beta0, inst.data, 0.0, 500.0), ll);
  EXPECT_NEAR(penalized_loglik(inst.spec, inst.theta, inst.beta0, inst.data, 2.0, 500.0), ll - 4.0, 1e-10);
  double prev = ll;
  for (double lambda : {0.1, 1.0, 10.0, 100.0}) {
    const double v = penalized_loglik(inst.spec, inst.theta, inst.beta0, inst.data, lambda, 500.0);
    EXPECT_LE(v, prev);
    prev = v;
  }
}

TEST(Gradient, MatchesCentralDifferences) {
  std::mt19937_64 rng(9);
  for (int rep = 0; rep < 6; ++rep) {
    InstanceShape shape;
    shape.n_states = 2 + rep % 2;
    shape.length = 150;
    shape.n_tracks = 2;
    shape.with_mask = rep % 2 == 0;
    shape.with_missing = rep % 3 == 0;
    shape.with_covariates = rep != 4;
    auto inst = random_instance(shape, rng);
    const double b = rep < 3 ? 20.0 : 500.0;
    Likelihood lik(inst.spec, inst.data);
    const Eigen::VectorXd w = lik.layout().pack(inst.theta, inst.beta0);
    Eigen::VectorXd g;
    lik.evaluate(w, b, &g);
    const auto fd = oracle::central_gradient([&](const Eigen::VectorXd& x) { return lik.evaluate(x, b); }, w, 1e-5);
    for (Eigen::Index k = 0; k < w.size(); ++k)
      EXPECT_NEAR(g[k], fd[k], std::max(1e-4, 1e-3 * std::abs(fd[k]))) << "rep " << rep << " index " << k;
  }
}

TEST(Gradient, PenaltyTermIsMinusLambdaBetaOnLogScale) {
  std::mt19937_64 rng(10);
  InstanceShape shape;
  shape.length = 30;
  auto inst = random_instance(shape, rng);
  ParameterLayout layout(inst.spec);
  const auto g0 = objective_gradient(inst.spec, inst.theta, inst.beta0, inst.data, 0.0, 500.0);
  const auto g3 = objective_gradient(inst.spec, inst.theta, inst.beta0, inst.data, 3.0, 500.0);
  const Eigen::VectorXd beta = inst.beta0.values();
  for (int k = 0; k < layout.size(); ++k) {
    const int slot = k - layout.beta_offset();
    const double expected = slot >= 0 ? -3.0 * beta[slot] : 0.0;
    EXPECT_NEAR(g3[k] - g0[k], expected, 1e-10);
  }
}

TEST(Viterbi, TiesGoToLowerState) {
  InstanceShape shape;
  shape.length = 4;
  shape.with_angle = false;
  shape.with_covariates = false;
  shape.p2 = 1;
  std::mt19937_64 rng(11);
  auto inst = random_instance(shape, rng);
  inst.theta.emissions[0][0] = GammaParams{2.0, 3.0};
  inst.theta.emissions[1][0] = GammaParams{2.0, 3.0};
  inst.theta.coeffs.baseline = TransitionCoefficients::zeros(2, 0);
  inst.theta.coeffs.disturbed = TransitionCoefficients::zeros(2, 0);
  inst.theta.delta_baseline = Eigen::Vector2d(0.5, 0.5);
  inst.theta.delta_disturbed = Eigen::Vector2d(0.5, 0.5);
  const auto path = viterbi(inst.spec, inst.theta, inst.beta0, inst.data, 500.0);
  EXPECT_EQ(path[0], std::vector<int>(4, 0));
}

TEST(Viterbi, RecoversWellSeparatedStates) {
  InstanceShape shape;
  shape.length = 2000;
  shape.with_angle = false;
  shape.with_covariates = false;
  shape.p2 = 1;
  std::mt19937_64 rng(12);
  auto inst = random_instance(shape, rng);
  inst.theta.emissions[0][0] = GammaParams{1.0, 200.0};
  inst.theta.emissions[1][0] = GammaParams{10.0, 200.0};
  const std::vector<double> diag{0.9, 0.9};
  inst.theta.coeffs.baseline = persistence_to_coeffs(diag);
  inst.theta.coeffs.disturbed = persistence_to_coeffs(diag);
  auto& tr = inst.data.tracks[0];
  std::vector<int> truth(2000);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  int s = 0;
  for (int t = 0; t < 2000; ++t) {
    if (t > 0 && unif(rng) > 0.9) s = 1 - s;
    truth[static_cast<std::size_t>(t)] = s;
    tr.observations(t, 0) = gamma_sample(as_gamma(inst.theta.emissions[static_cast<std::size_t>(s)][0]), rng);
  }
  const auto path = viterbi(inst.spec, inst.theta, inst.beta0, inst.data, 500.0);
  int agree = 0;
  for (int t = 0; t < 2000; ++t) agree += path[0][static_cast<std::size_t>(t)] == truth[static_cast<std::size_t>(t)];
  EXPECT_GE(agree, 1980);
}

TEST(StateOccupancy, FractionsPooledOverTracks) {
  const auto one = state_occupancy({{0, 0, 0, 0}}, 3);
  EXPECT_EQ(one, (std::vector<double>{1.0, 0.0, 0.0}));
  const std::vector<std::vector<int>> split{{0, 1, 2}, {2, 2, 1, 1, 0}};
  const std::vector<std::vector<int>> joined{{0, 1, 2, 2, 2, 1, 1, 0}};
  EXPECT_EQ(state_occupancy(split, 3), state_occupancy(joined, 3));
  const auto occ = state_occupancy(split, 3);
  EXPECT_NEAR(occ[0] + occ[1] + occ[2], 1.0, 1e-15);
}

TEST(TrackData, ValidationRejectsMisalignedInput) {
  std::mt19937_64 rng(13);
  InstanceShape shape;
  auto inst = random_instance(shape, rng);
  inst.data.tracks[0].tpm_covariates.conservativeResize(3, Eigen::NoChange);
  EXPECT_THROW(inst.data.validate(inst.spec), InvalidInput);
  EXPECT_THROW(Likelihood(inst.spec, inst.data), InvalidInput);
}

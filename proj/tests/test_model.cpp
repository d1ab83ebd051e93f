#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "support/oracles.hpp"
#include "support/random_models.hpp"
#include "thmm/model.hpp"
#include "thmm/parameters.hpp"

using namespace thmm;

TEST(Standardize, AffineMap) {
  const std::vector<double> u{0.0, 20.0, 40.0};
  const auto s = standardize(u);
  EXPECT_DOUBLE_EQ(s.values[0], 0.0);
  EXPECT_DOUBLE_EQ(s.values[1], 0.5);
  EXPECT_DOUBLE_EQ(s.values[2], 1.0);
  EXPECT_DOUBLE_EQ(s.orig_min, 0.0);
  EXPECT_DOUBLE_EQ(s.orig_max, 40.0);
}

TEST(Standardize, ConstantSeriesIsDegenerate) {
  const std::vector<double> u{5.0, 5.0, 5.0};
  EXPECT_THROW(standardize(u), DegenerateCovariate);
  EXPECT_THROW(standardize(std::vector<double>{1.0}), InvalidInput);
}

TEST(Standardize, MaskedEntriesExcludedFromRange) {
  const std::vector<double> u{0.01, 1.0, 2.0, 3.0};
  const std::vector<bool> mask{true, false, false, false};
  const auto s = standardize(u, &mask);
  EXPECT_DOUBLE_EQ(s.orig_min, 1.0);
  EXPECT_DOUBLE_EQ(s.orig_max, 3.0);
  EXPECT_NEAR(s.values[0], (0.01 - 1.0) / 2.0, 1e-15);
}

TEST(Standardize, ExactlyInvertible) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> unif(-50.0, 50.0);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> u(37);
    for (auto& x : u) x = unif(rng);
    const auto s = standardize(u);
    for (std::size_t t = 0; t < u.size(); ++t) {
      EXPECT_NEAR(s.to_original(s.values[t]), u[t], 1e-12);
      EXPECT_GE(s.values[t], 0.0);
      EXPECT_LE(s.values[t], 1.0);
    }
  }
}

TEST(StandardizeSlot, InactiveStepsStayZero) {
  const std::vector<double> u{5.0, 10.0, 20.0, 30.0};
  const std::vector<bool> active{true, false, true, true};
  const auto s = standardize_slot(u, active);
  EXPECT_DOUBLE_EQ(s.orig_min, 5.0);
  EXPECT_DOUBLE_EQ(s.orig_max, 30.0);
  EXPECT_DOUBLE_EQ(s.values[0], 0.0);
  EXPECT_DOUBLE_EQ(s.values[1], 0.0);
  EXPECT_DOUBLE_EQ(s.values[2], 0.6);
  EXPECT_DOUBLE_EQ(s.values[3], 1.0);
  const auto empty = standardize_slot(u, std::vector<bool>(4, false));
  for (double v : empty.values) EXPECT_EQ(v, 0.0);
}

TEST(BuildTpm, SymmetricSoftmax) {
  const auto g3 = build_tpm(TransitionCoefficients::zeros(3, 0), {});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(g3(i, j), 1.0 / 3.0, 1e-15);
  const auto g2 = build_tpm(TransitionCoefficients::zeros(2, 0), {});
  EXPECT_DOUBLE_EQ(g2(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(g2(1, 0), 0.5);
}

TEST(BuildTpm, LogNineIntercepts) {
  auto c = TransitionCoefficients::zeros(2, 0);
  c.intercept(0, 1) = std::log(9.0);
  c.intercept(1, 0) = std::log(9.0);
  const auto g = build_tpm(c, {});
  EXPECT_NEAR(g(0, 0), 0.1, 1e-15);
  EXPECT_NEAR(g(0, 1), 0.9, 1e-15);
  EXPECT_NEAR(g(1, 0), 0.9, 1e-15);
  EXPECT_NEAR(g(1, 1), 0.1, 1e-15);
}

TEST(BuildTpm, MatchesHandSoftmaxAndRowsSumToOne) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> unif(-20.0, 20.0);
  for (int rep = 0; rep < 200; ++rep) {
    const int n = 2 + rep % 3;
    auto c = TransitionCoefficients::zeros(n, 2);
    for (Eigen::Index k = 0; k < c.alpha.size(); ++k) c.alpha.data()[k] = unif(rng);
    const std::vector<double> omega{unif(rng) / 20.0, unif(rng) / 20.0};
    const auto g = build_tpm(c, omega);
    const auto ref = oracle::hand_tpm(c, omega);
    for (int i = 0; i < n; ++i) {
      EXPECT_NEAR(g.row(i).sum(), 1.0, 1e-12);
      for (int j = 0; j < n; ++j) EXPECT_NEAR(g(i, j), ref(i, j), 1e-12);
    }
  }
}

TEST(BuildTpm, RejectsBadCovariates) {
  const auto c = TransitionCoefficients::zeros(2, 1);
  EXPECT_THROW(build_tpm(c, std::vector<double>{std::nan("")}), InvalidInput);
  EXPECT_THROW(build_tpm(c, std::vector<double>{}), InvalidInput);
}

TEST(PersistenceToCoeffs, ClosedForm) {
  const std::vector<double> d09{0.9, 0.9, 0.9};
  const auto c = persistence_to_coeffs(d09);
  EXPECT_NEAR(c.intercept(0, 1), std::log(0.05 / 0.9), 1e-15);
  const auto g = build_tpm(c, {});
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(g(i, j), i == j ? 0.9 : 0.05, 1e-14);
  const std::vector<double> d07{0.7, 0.7, 0.7};
  const auto g7 = build_tpm(persistence_to_coeffs(d07), {});
  EXPECT_NEAR(g7(2, 0), 0.15, 1e-14);
  EXPECT_NEAR(g7(2, 1), 0.15, 1e-14);
}

TEST(PersistenceToCoeffs, RoundTripsRandomDiagonals) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> unif(0.01, 0.99);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> d(static_cast<std::size_t>(2 + rep % 4));
    for (auto& x : d) x = unif(rng);
    const auto g = build_tpm(persistence_to_coeffs(d), {});
    for (int i = 0; i < g.rows(); ++i) {
      EXPECT_NEAR(g(i, i), d[static_cast<std::size_t>(i)], 1e-10);
      for (int j = 0; j < g.rows(); ++j)
        if (j != i) EXPECT_NEAR(g(i, j), (1.0 - d[static_cast<std::size_t>(i)]) / (g.rows() - 1), 1e-10);
    }
  }
}

TEST(PersistenceToCoeffs, RejectsBoundaryValues) {
  EXPECT_THROW(persistence_to_coeffs(std::vector<double>{0.0, 0.5}), InvalidInput);
  EXPECT_THROW(persistence_to_coeffs(std::vector<double>{1.0, 0.5}), InvalidInput);
}

TEST(MixtureProb, MidpointAndLimits) {
  const std::vector<double> u1{0.5};
  EXPECT_DOUBLE_EQ(mixture_prob(std::vector<double>{2.0}, u1, 500.0), 0.5);
  const auto zero = Beta0::zeros(1);
  const double tiny = mixture_prob(zero, std::vector<double>{0.7}, 500.0);
  EXPECT_NEAR(tiny / std::exp(-500.0), 1.0, 1e-12);  // sigmoid(-500) ~ 7.1e-218
  EXPECT_LT(tiny, 1e-3);
  const double near_one = mixture_prob(std::vector<double>{2.0}, std::vector<double>{1.0}, 500.0);
  EXPECT_EQ(near_one, 1.0);  // 1 - 7.1e-218 rounds to 1
  EXPECT_EQ(mixture_prob(std::vector<double>{1.0}, std::vector<double>{1.0 + 1e3}, 1e3), 1.0);
  EXPECT_EQ(mixture_prob(std::vector<double>{1.0}, std::vector<double>{-1e3}, 1e3), 0.0);
}

TEST(MixtureProb, MonotoneInBetaAndCovariate) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int rep = 0; rep < 500; ++rep) {
    std::vector<double> b1{3.0 * unif(rng), 3.0 * unif(rng)}, u1{unif(rng), unif(rng)};
    auto b2 = b1;
    auto u2 = u1;
    b2[rep % 2] += unif(rng);
    u2[(rep + 1) % 2] = std::min(1.0, u2[(rep + 1) % 2] + unif(rng));
    const double b = 5.0 + 495.0 * unif(rng);
    EXPECT_LE(mixture_prob(b1, u1, b), mixture_prob(b2, u1, b));
    EXPECT_LE(mixture_prob(b1, u1, b), mixture_prob(b1, u2, b));
  }
}

TEST(Threshold, BackTransform) {
  StandardizedCovariate unit;
  unit.orig_min = 0.0;
  unit.orig_max = 1.0;
  EXPECT_DOUBLE_EQ(*threshold_original_scale(1.0, unit), 1.0);
  StandardizedCovariate sim;
  sim.orig_min = 0.6;
  sim.orig_max = 40.0;
  EXPECT_NEAR(*threshold_original_scale(2.0, sim), 20.3, 1e-12);
  EXPECT_FALSE(threshold_original_scale(0.0, sim).has_value());
  EXPECT_FALSE(threshold_original_scale(1e-14, sim).has_value());
}

TEST(Threshold, CaseStudyDistancesShareOneExposureScaling) {
  // Land and no-land slots share one exposure scaling; log beta0 of -9.651577
  // and 2.690258 come back as 0.0001396458 km and 3.605525 km.
  StandardizedCovariate exposure;
  exposure.orig_min = 0.2460882;
  exposure.orig_max = 0.2460882 + 0.4606837;
  const double land = 1.0 / *threshold_original_scale(std::exp(-9.651577), exposure);
  const double open = 1.0 / *threshold_original_scale(std::exp(2.690258), exposure);
  EXPECT_NEAR(land / 0.0001396458, 1.0, 5e-4);
  EXPECT_NEAR(open / 3.605525, 1.0, 5e-4);
}

TEST(ParameterLayout, PackUnpackRoundTrip) {
  std::mt19937_64 rng(31);
  for (int rep = 0; rep < 20; ++rep) {
    testkit::InstanceShape shape;
    shape.n_states = 2 + rep % 2;
    auto inst = testkit::random_instance(shape, rng);
    ParameterLayout layout(inst.spec);
    const auto w = layout.pack(inst.theta, inst.beta0);
    ThetaParams th;
    Beta0 b;
    layout.unpack(w, &th, &b);
    EXPECT_TRUE(th.coeffs.baseline.alpha.isApprox(inst.theta.coeffs.baseline.alpha, 1e-14));
    EXPECT_TRUE(th.coeffs.disturbed.alpha.isApprox(inst.theta.coeffs.disturbed.alpha, 1e-14));
    EXPECT_TRUE(th.delta_baseline.isApprox(inst.theta.delta_baseline, 1e-14));
    EXPECT_TRUE(b.log_values.isApprox(inst.beta0.log_values, 1e-14));
    EXPECT_NEAR(as_gamma(th.emissions[1][0]).shape, as_gamma(inst.theta.emissions[1][0]).shape, 1e-12);
    EXPECT_TRUE(layout.pack(th, b).isApprox(w, 1e-14));
  }
}

TEST(ParameterLayout, SharedSlopesUseOneIndex) {
  testkit::InstanceShape shape;
  shape.n_states = 3;
  const auto spec = testkit::make_spec(shape);
  ParameterLayout layout(spec);
  for (int p = 0; p < spec.n_pairs(); ++p) {
    EXPECT_EQ(layout.coeff_index(Regime::baseline, p, 2), layout.coeff_index(Regime::disturbed, p, 2));
    EXPECT_NE(layout.coeff_index(Regime::baseline, p, 1), layout.coeff_index(Regime::disturbed, p, 1));
  }
  // 3 states x (gamma 2 + von Mises 2) + 2 regimes x 6 pairs x 2 + 6 shared + 2 x 2 deltas + 2 betas
  EXPECT_EQ(layout.size(), 12 + 24 + 6 + 4 + 2);
  const auto null_mask = layout.mask_null();
  EXPECT_TRUE(null_mask[static_cast<std::size_t>(layout.coeff_index(Regime::baseline, 0, 2))]);
  EXPECT_FALSE(null_mask[static_cast<std::size_t>(layout.coeff_index(Regime::disturbed, 0, 1))]);
  EXPECT_FALSE(null_mask[static_cast<std::size_t>(layout.beta_offset())]);
}

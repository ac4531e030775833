// ============================================================================
//  Tests for the model core: parameters, drift/diffusion evaluators,
//  coordinate maps, and closed-form constants.
// ============================================================================

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "slowfast/params.hpp"
#include "slowfast/systems.hpp"

using namespace slowfast;

namespace {

ModelParams make(double lambda, double f, double gamma, double epsilon, double sigma) {
  return {lambda, f, gamma, epsilon, sigma, {}};
}

}  // namespace

// ---------------------------------------------------------------------------
//  Parameters
// ---------------------------------------------------------------------------

TEST(Params, ValidationRejectsBadValues) {
  EXPECT_NO_THROW(make(1, 0, 1, 1, 0).validate());
  EXPECT_THROW(make(0, 0, 1, 1, 1).validate(), std::invalid_argument);
  EXPECT_THROW(make(1, 0, -1, 1, 1).validate(), std::invalid_argument);
  EXPECT_THROW(make(1, 0, 1, 0, 1).validate(), std::invalid_argument);
  EXPECT_THROW(make(1, 0, 1, 1, -0.5).validate(), std::invalid_argument);
  ModelParams bad_tau = make(1, 0, 1, 1, 1);
  bad_tau.tau = -2.0;
  EXPECT_THROW(bad_tau.validate(), std::invalid_argument);
  bad_tau.tau = 0.5;
  EXPECT_NO_THROW(bad_tau.validate());
}

TEST(Params, CaseRegistry) {
  const ModelParams c1 = case_params(CaseId::I);
  EXPECT_DOUBLE_EQ(c1.lambda, 1e-3);
  EXPECT_DOUBLE_EQ(c1.f, 1e2);
  EXPECT_DOUBLE_EQ(c1.gamma, 5.6e-2);
  EXPECT_DOUBLE_EQ(c1.epsilon, 1e-2);
  EXPECT_DOUBLE_EQ(c1.sigma, 0.55);

  const ModelParams c3 = case_params(CaseId::III, 1e-4);
  EXPECT_DOUBLE_EQ(c3.lambda, 10.0);
  EXPECT_DOUBLE_EQ(c3.gamma, 50.0);
  EXPECT_DOUBLE_EQ(c3.epsilon, 1e-4);
  EXPECT_DOUBLE_EQ(c3.sigma, 0.1);

  EXPECT_EQ(parse_case_id("IV"), CaseId::IV);
  EXPECT_THROW(parse_case_id("V"), std::invalid_argument);
}

// ---------------------------------------------------------------------------
//  Drift
// ---------------------------------------------------------------------------

TEST(Drift, CartesianExample) {
  SystemSpec spec{SystemId::original_cartesian, make(1, 2, 3, 0.5, 0.1)};
  const double x[3] = {1.0, 0.0, 0.0};
  double out[3];
  drift(spec, x, out);
  EXPECT_DOUBLE_EQ(out[0], 1.0);
  EXPECT_DOUBLE_EQ(out[1], 2.0);
  EXPECT_DOUBLE_EQ(out[2], 2.0);
}

TEST(Drift, CartesianOriginIsFixedPointOfDrift) {
  SystemSpec spec{SystemId::original_cartesian, make(1, 2, 3, 0.5, 0.1)};
  const double x[3] = {0.0, 0.0, 0.0};
  double out[3];
  drift(spec, x, out);
  EXPECT_DOUBLE_EQ(out[0], 0.0);
  EXPECT_DOUBLE_EQ(out[1], 0.0);
  EXPECT_DOUBLE_EQ(out[2], 0.0);
}

TEST(Drift, PolarFormula) {
  const ModelParams p = make(2.0, 3.0, 0.7, 0.2, 0.4);
  SystemSpec spec{SystemId::original_polar, p};
  const double x[3] = {1.3, 0.4, 0.9};
  double out[3];
  drift(spec, x, out);
  EXPECT_NEAR(out[0],
              p.lambda * 1.3 - p.gamma * 1.3 * 0.9 + p.sigma * p.sigma / (2 * 1.3),
              1e-15);
  EXPECT_DOUBLE_EQ(out[1], p.f);  // angular drift stays the raw frequency
  EXPECT_NEAR(out[2], -(0.9 - 1.3 * 1.3) / p.epsilon, 1e-12);
}

TEST(Drift, ReducedPolarBalancesAtDeterministicRadius) {
  const ModelParams p = make(10.0, 1.0, 50.0, 1e-2, 0.0);
  SystemSpec spec{SystemId::reduced_polar, p};
  const double x[2] = {r_det(p), 0.0};
  double out[2];
  drift(spec, x, out);
  EXPECT_NEAR(out[0], 0.0, 1e-12);
}

TEST(Drift, PolarRejectsRadiusBelowFloor) {
  SystemSpec spec{SystemId::original_polar, make(1, 1, 1, 1, 0.1)};
  const double x[3] = {1e-9, 0.0, 0.0};
  double out[3];
  EXPECT_THROW(drift(spec, x, out), std::domain_error);
  const double x0[3] = {0.0, 0.0, 0.0};
  EXPECT_THROW(drift(spec, x0, out), std::domain_error);
}

TEST(Drift, TransformedMinusOriginalIsFeedbackTerm) {
  const ModelParams p = make(1.5, 2.0, 0.8, 0.05, 0.3);
  SystemSpec orig{SystemId::original_polar, p};
  SystemSpec trans{SystemId::transformed_polar, p};
  std::mt19937_64 gen(11);
  auto u = [&](double a, double b) {
    return a + (b - a) * (static_cast<double>(gen() >> 11) * 0x1.0p-53);
  };
  for (int i = 0; i < 100; ++i) {
    const double x[3] = {u(0.1, 3.0), u(0.0, 6.28), u(-1.0, 4.0)};
    const Coupling cpl{u(0.1, 3.0), 0.0};
    double bo[3], bt[3];
    drift(orig, x, bo);
    drift(trans, x, bt, &cpl);
    const double expected = feedback_drift(trans, x[0], cpl);
    EXPECT_NEAR(bt[0] - bo[0], expected, 1e-12 * std::max(1.0, std::fabs(expected)));
    EXPECT_DOUBLE_EQ(bt[1], bo[1]);
    EXPECT_DOUBLE_EQ(bt[2], bo[2]);
  }
}

TEST(Drift, TransformedRequiresCoupling) {
  SystemSpec spec{SystemId::transformed_polar, make(1, 1, 1, 1, 0.1)};
  const double x[3] = {1.0, 0.0, 0.0};
  double out[3];
  EXPECT_THROW(drift(spec, x, out), std::invalid_argument);
}

TEST(Drift, AugmentedReducedFormula) {
  ModelParams p = make(1.0, 10.0, 1.0, 10.0, 0.3);
  p.tau = 5.0;
  SystemSpec spec{SystemId::augmented_reduced, p};
  const double x[3] = {1.2, 0.0, -0.4};  // (r, theta, M)
  double out[3];
  drift(spec, x, out);
  const double c = c_tau(5.0, 10.0);
  EXPECT_NEAR(out[0],
              p.lambda * 1.2 - p.gamma * c * 1.2 * 1.2 * 1.2 +
                  p.sigma * p.sigma / (2 * 1.2) - p.gamma * 1.2 * (-0.4),
              1e-14);
  EXPECT_DOUBLE_EQ(out[1], p.f);
  EXPECT_NEAR(out[2], -std::pow(-0.4, 3) / p.epsilon, 1e-15);  // cubic memory

  SystemSpec ou = spec;
  ou.m_kind = MKind::ou;
  drift(ou, x, out);
  EXPECT_NEAR(out[2], 0.4 / p.epsilon, 1e-15);  // linear memory

  SystemSpec no_tau{SystemId::augmented_reduced, make(1, 10, 1, 10, 0.3)};
  EXPECT_THROW(drift(no_tau, x, out), std::invalid_argument);
}

// ---------------------------------------------------------------------------
//  Diffusion
// ---------------------------------------------------------------------------

TEST(Diffusion, PolarExample) {
  SystemSpec spec{SystemId::original_polar, make(1, 1, 1, 0.01, 0.2)};
  const double x[3] = {2.0, 0.0, 0.0};
  double out[3];
  diffusion_diag(spec, x, out);
  EXPECT_NEAR(out[0], 0.2, 1e-15);
  EXPECT_NEAR(out[1], 0.1, 1e-15);
  EXPECT_NEAR(out[2], 2.0, 1e-12);
}

TEST(Diffusion, AugmentedExample) {
  SystemSpec spec{SystemId::augmented_original, make(1, 1, 1, 10.0, 0.3)};
  const double x[4] = {1.0, 0.0, 0.0, 0.0};
  double out[4];
  diffusion_diag(spec, x, out);
  EXPECT_NEAR(out[0], 0.3, 1e-15);
  EXPECT_NEAR(out[1], 0.3, 1e-15);
  EXPECT_NEAR(out[2], 0.3 / std::sqrt(10.0), 1e-15);
  EXPECT_NEAR(out[3], 0.3 / std::sqrt(10.0), 1e-15);
}

TEST(Diffusion, ZeroNoiseGivesZeroMatrix) {
  SystemSpec spec{SystemId::original_polar, make(1, 1, 1, 0.01, 0.0)};
  const double x[3] = {0.5, 0.0, 0.0};
  double out[3];
  diffusion_diag(spec, x, out);
  EXPECT_DOUBLE_EQ(out[0], 0.0);
  EXPECT_DOUBLE_EQ(out[1], 0.0);
  EXPECT_DOUBLE_EQ(out[2], 0.0);
}

// ---------------------------------------------------------------------------
//  Coordinate maps
// ---------------------------------------------------------------------------

TEST(Coordinates, ToPolarExamples) {
  const Vec3 a = to_polar(1, 0, 5);
  EXPECT_DOUBLE_EQ(a.a, 1.0);
  EXPECT_DOUBLE_EQ(a.b, 0.0);
  EXPECT_DOUBLE_EQ(a.c, 5.0);

  const Vec3 b = to_polar(0, 2, -1);
  EXPECT_DOUBLE_EQ(b.a, 2.0);
  EXPECT_NEAR(b.b, M_PI / 2, 1e-15);
  EXPECT_DOUBLE_EQ(b.c, -1.0);

  const Vec3 c = to_polar(-3, -4, 0);
  EXPECT_DOUBLE_EQ(c.a, 5.0);
  EXPECT_NEAR(c.b, std::atan2(-4.0, -3.0) + 2 * M_PI, 1e-15);
  EXPECT_DOUBLE_EQ(c.c, 0.0);

  EXPECT_THROW(to_polar(0, 0, 1), std::domain_error);
}

TEST(Coordinates, RoundTrip) {
  std::mt19937_64 gen(5);
  auto u = [&](double a, double b) {
    return a + (b - a) * (static_cast<double>(gen() >> 11) * 0x1.0p-53);
  };
  for (int i = 0; i < 200; ++i) {
    const double x = u(-3, 3), y = u(-3, 3), z = u(-2, 2);
    if (std::hypot(x, y) < 1e-6) continue;
    const Vec3 p = to_polar(x, y, z);
    EXPECT_GE(p.b, 0.0);
    EXPECT_LT(p.b, 2 * M_PI);
    const Vec3 c = to_cartesian(p.a, p.b, p.c);
    EXPECT_NEAR(c.a, x, 1e-12);
    EXPECT_NEAR(c.b, y, 1e-12);
    EXPECT_DOUBLE_EQ(c.c, z);
  }
  EXPECT_THROW(to_cartesian(-1.0, 0.0, 0.0), std::domain_error);
}

// ---------------------------------------------------------------------------
//  Closed-form constants
// ---------------------------------------------------------------------------

TEST(Constants, MostProbableRadius) {
  EXPECT_NEAR(r_star(case_params(CaseId::III, 1e-2)), 0.44777, 5e-5);
  EXPECT_NEAR(r_star(case_params(CaseId::I)), 1.2854, 2e-4);

  // sigma = 0 collapses to the deterministic radius.
  const ModelParams det = make(3.0, 1.0, 0.7, 1.0, 0.0);
  EXPECT_DOUBLE_EQ(r_star(det), r_det(det));

  // The defining cubic balance holds to near machine precision.
  std::mt19937_64 gen(99);
  auto u = [&](double a, double b) {
    return a + (b - a) * (static_cast<double>(gen() >> 11) * 0x1.0p-53);
  };
  for (int i = 0; i < 100; ++i) {
    const ModelParams p = make(u(1e-3, 20.0), 0.0, u(1e-2, 60.0), 1.0, u(0.0, 1.0));
    const double r = r_star(p);
    const double residual = p.lambda * r - p.gamma * r * r * r +
                            (p.sigma > 0 ? p.sigma * p.sigma / (2 * r) : 0.0);
    EXPECT_LE(std::fabs(residual), 1e-10 * std::max(1.0, p.lambda));
  }
}

TEST(Constants, FeedbackRate) {
  EXPECT_NEAR(q_const(make(10, 1, 50, 1e-4, 0.1), GainVariant::slow_manifold),
              20200.0, 20200.0 * 1e-12);
  EXPECT_DOUBLE_EQ(q_const(make(1, 1, 1, 1, 1), GainVariant::slow_manifold), 2.0);
  EXPECT_NEAR(q_const(make(1, 10, 1, 10, 0.3), GainVariant::stochastic_pm),
              2.8778, 1e-3);
  EXPECT_THROW(q_const(make(1, 1, 1, 1, 0.0), GainVariant::slow_manifold),
               std::domain_error);
}

TEST(Constants, ManifoldCoefficient) {
  EXPECT_NEAR(c_tau(30.0 * 0.2, 0.2), 1.0, 1e-12);
  EXPECT_NEAR(c_tau(0.2 * std::log(2.0), 0.2), 0.5, 1e-12);
  double prev = 0.0;
  for (double tau = 0.01; tau < 2.0; tau += 0.05) {
    const double c = c_tau(tau, 0.2);
    EXPECT_GT(c, prev);
    prev = c;
  }
}

TEST(Constants, StochasticFeedbackDriftFormula) {
  ModelParams p = make(1.0, 10.0, 1.0, 10.0, 0.3);
  SystemSpec spec{SystemId::transformed_polar_aug, p};
  const double q = q_const(p, GainVariant::stochastic_pm);
  const Coupling cpl{1.4, -0.2};
  const double expected = (q + p.lambda) * (1.4 - 1.1) - p.gamma * (-0.2) * 1.4;
  EXPECT_NEAR(feedback_drift(spec, 1.1, cpl), expected, 1e-12);
  EXPECT_NEAR(girsanov_g(spec, 1.1, cpl), expected / p.sigma, 1e-12);

  SystemSpec pinned = spec;
  pinned.g_override = 0.75;
  EXPECT_DOUBLE_EQ(girsanov_g(pinned, 1.1, cpl), 0.75);
  EXPECT_DOUBLE_EQ(feedback_drift(pinned, 1.1, cpl), 0.75 * p.sigma);
}

// ---------------------------------------------------------------------------
//  Cartesian <-> polar consistency of the stochastic calculus
// ---------------------------------------------------------------------------

namespace {

/// Independent change-of-variables oracle: maps the Cartesian drift of
/// (x, y) with isotropic noise sigma to the polar drift, including the
/// second-order corrections of the radius and angle.
void polar_drift_oracle(double x, double y, double bx, double by, double sigma,
                        double& br, double& btheta) {
  const double r = std::hypot(x, y);
  br = (x * bx + y * by) / r + sigma * sigma / (2.0 * r);
  btheta = (x * by - y * bx) / (r * r);
}

}  // namespace

TEST(Consistency, CartesianAndPolarDriftAgreeViaChangeOfVariables) {
  const ModelParams p = make(1.2, 3.0, 0.6, 0.25, 0.35);
  SystemSpec cart{SystemId::original_cartesian, p};
  SystemSpec pol{SystemId::original_polar, p};
  SystemSpec cart_red{SystemId::reduced_cartesian, p};
  SystemSpec pol_red{SystemId::reduced_polar, p};
  std::mt19937_64 gen(2024);
  auto u = [&](double a, double b) {
    return a + (b - a) * (static_cast<double>(gen() >> 11) * 0x1.0p-53);
  };
  for (int i = 0; i < 100; ++i) {
    const double r = u(0.2, 2.5), th = u(0.0, 2 * M_PI), z = u(-1.0, 3.0);
    const Vec3 X = to_cartesian(r, th, z);

    double bc[3], bp[3];
    const double xc[3] = {X.a, X.b, z};
    const double xp[3] = {r, th, z};
    drift(cart, xc, bc);
    drift(pol, xp, bp);
    double br, btheta;
    polar_drift_oracle(X.a, X.b, bc[0], bc[1], p.sigma, br, btheta);
    EXPECT_NEAR(br, bp[0], 1e-8);
    EXPECT_NEAR(btheta, bp[1], 1e-8);
    EXPECT_NEAR(bc[2], bp[2], 1e-8);

    double bc2[2], bp2[2];
    const double xc2[2] = {X.a, X.b};
    const double xp2[2] = {r, th};
    drift(cart_red, xc2, bc2);
    drift(pol_red, xp2, bp2);
    polar_drift_oracle(X.a, X.b, bc2[0], bc2[1], p.sigma, br, btheta);
    EXPECT_NEAR(br, bp2[0], 1e-8);
    EXPECT_NEAR(btheta, bp2[1], 1e-8);
  }
}

// ---------------------------------------------------------------------------
//  Layout
// ---------------------------------------------------------------------------

TEST(Layout, DimensionsAndNoiseColumns) {
  EXPECT_EQ(state_dim(SystemId::original_cartesian), 3);
  EXPECT_EQ(state_dim(SystemId::reduced_cartesian), 2);
  EXPECT_EQ(state_dim(SystemId::augmented_original), 4);
  EXPECT_EQ(noise_width(SystemId::reduced_polar), 2);
  EXPECT_EQ(noise_width(SystemId::augmented_reduced), 4);
  EXPECT_EQ(noise_width(SystemId::transformed_polar_aug), 4);

  // The reduced memory couples to the same column as the original memory.
  EXPECT_EQ(noise_column(SystemId::augmented_reduced, 2), 3);
  EXPECT_EQ(noise_column(SystemId::augmented_original, 3), 3);
  EXPECT_EQ(noise_column(SystemId::original_polar, 2), 2);

  EXPECT_TRUE(needs_coupling(SystemId::transformed_polar));
  EXPECT_TRUE(needs_coupling(SystemId::transformed_polar_aug));
  EXPECT_FALSE(needs_coupling(SystemId::augmented_reduced));

  EXPECT_EQ(parse_system_id("reduced_polar"), SystemId::reduced_polar);
  EXPECT_THROW(parse_system_id("nope"), std::invalid_argument);
}

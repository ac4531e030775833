// ============================================================================
//  Tests for the memory-process machinery: the quartic stationary density
//  (quadrature vs closed form), memory-process samplers, the stationarity
//  simulation check, and the memory-horizon optimizer.
// ============================================================================

#include <gtest/gtest.h>

#include <cmath>

#include "slowfast/defect.hpp"
#include "slowfast/mprocess.hpp"
#include "slowfast/tau_opt.hpp"

using namespace slowfast;

// ---------------------------------------------------------------------------
//  Stationary density of the cubic memory process
// ---------------------------------------------------------------------------

TEST(MemoryDensity, NormalizerMatchesClosedForm) {
  for (const double sigma : {0.1, 0.3, 1.0}) {
    const double quad = rho_normalizer(sigma);
    const double exact = rho_normalizer_closed_form(sigma);
    EXPECT_NEAR(quad, exact, 1e-8 * exact) << "sigma = " << sigma;
  }
}

TEST(MemoryDensity, NormalizerScalesAsSigmaSqrt) {
  // Z(sigma) = (2 sigma^2)^{1/4} * Z(1/sqrt(2)) by substitution.
  const double base = rho_normalizer_closed_form(1.0 / std::sqrt(2.0));
  for (const double sigma : {0.05, 0.2, 0.7}) {
    const double expected = std::pow(2.0 * sigma * sigma, 0.25) * base;
    EXPECT_NEAR(rho_normalizer_closed_form(sigma), expected, 1e-8 * expected);
  }
}

TEST(MemoryDensity, DensityIntegratesToOne) {
  for (const double sigma : {0.1, 0.5}) {
    const double l = rho_domain_halfwidth(sigma);
    const double mass = integrate_adaptive(
        [&](double m) { return rho_density(m, sigma); }, -l, l, 1e-12);
    EXPECT_NEAR(mass, 1.0, 1e-8);
  }
}

TEST(MemoryDensity, MomentsMatchClosedForms) {
  for (const double sigma : {0.1, 0.3, 0.8}) {
    EXPECT_NEAR(rho_moment(sigma, 2), rho_moment_closed_form(sigma, 2),
                1e-8 * rho_moment_closed_form(sigma, 2));
    EXPECT_NEAR(rho_moment(sigma, 4), rho_moment_closed_form(sigma, 4),
                1e-8 * rho_moment_closed_form(sigma, 4));
    // Symmetric density: odd moments vanish.
    const double l = rho_domain_halfwidth(sigma);
    const double m1 = integrate_adaptive(
        [&](double m) { return m * rho_density(m, sigma); }, -l, l, 1e-13);
    EXPECT_NEAR(m1, 0.0, 1e-10);
  }
}

TEST(MemoryDensity, SecondMomentHasTheExactGammaRatio) {
  const double sigma = 0.3;
  const double expected = std::sqrt(2.0 * sigma * sigma) *
                          std::tgamma(0.75) / std::tgamma(0.25);
  EXPECT_NEAR(rho_moment_closed_form(sigma, 2), expected, 1e-14);
  EXPECT_NEAR(rho_moment_closed_form(sigma, 4), sigma * sigma / 2.0, 1e-14);
}

// ---------------------------------------------------------------------------
//  Samplers
// ---------------------------------------------------------------------------

TEST(MemorySampler, QuarticSamplerMatchesQuadratureMoments) {
  const double sigma = 0.3;
  const std::size_t n = 200000;
  const std::vector<double> xs = rho_sample(sigma, n, 7);
  const double m2 = moment(xs, 2);
  const double m4 = moment(xs, 4);
  const double t2 = rho_moment_closed_form(sigma, 2);
  const double t4 = rho_moment_closed_form(sigma, 4);
  // 3-sigma on the sample mean of m^2 (var(m^2) = m4 - m2^2).
  const double se2 = std::sqrt((t4 - t2 * t2) / static_cast<double>(n));
  EXPECT_NEAR(m2, t2, 3.0 * se2);
  EXPECT_NEAR(m4, t4, 0.05 * t4);
  EXPECT_EQ(rho_sample(sigma, 100, 7), rho_sample(sigma, 100, 7));
  EXPECT_NE(rho_sample(sigma, 100, 7), rho_sample(sigma, 100, 8));
}

TEST(MemorySampler, LinearSamplerHasTheHalfVariance) {
  const double sigma = 0.4;
  const std::size_t n = 200000;
  const std::vector<double> xs = ou_stationary_sample(sigma, n, 11);
  const double target = sigma * sigma / 2.0;
  const double se = std::sqrt(2.0 * target * target / static_cast<double>(n));
  EXPECT_NEAR(moment(xs, 2), target, 4.0 * se);
  EXPECT_NEAR(mean(xs), 0.0, 4.0 * std::sqrt(target / static_cast<double>(n)));
}

TEST(MemorySampler, DefaultMSamplesCarryMomentSummaries) {
  const MSamples m = MSamples::cubic(0.3, 5000, 3);
  EXPECT_EQ(m.values.size(), 5000u);
  EXPECT_NEAR(m.m2, moment(m.values, 2), 1e-15);
  EXPECT_NEAR(m.m4, moment(m.values, 4), 1e-15);
  const MSamples g = MSamples::gaussian(0.3, 5000, 3);
  EXPECT_NEAR(g.m2, 0.3 * 0.3 / 2.0, 5.0 * std::sqrt(2.0) * 0.045 / std::sqrt(5000.0));
}

// ---------------------------------------------------------------------------
//  Stationarity check by direct simulation
// ---------------------------------------------------------------------------

TEST(MemoryStationarity, QuarticProcessReachesItsDensityMoments) {
  const MStationaryReport rep =
      m_stationary_check(MKind::cubic, /*epsilon=*/0.05, /*sigma=*/0.3,
                         /*horizon=*/40.0, /*dt=*/5e-4, /*n_traj=*/32, /*seed=*/5);
  EXPECT_NEAR(rep.target_m2, rho_moment_closed_form(0.3, 2), 1e-12);
  EXPECT_TRUE(rep.within_3_stderr)
      << "m2 = " << rep.sim_m2 << " +- " << rep.sim_m2_stderr
      << " vs " << rep.target_m2 << "; m4 = " << rep.sim_m4 << " +- "
      << rep.sim_m4_stderr << " vs " << rep.target_m4;
}

TEST(MemoryStationarity, LinearProcessReachesItsGaussianMoments) {
  const MStationaryReport rep =
      m_stationary_check(MKind::ou, 0.05, 0.3, 40.0, 5e-4, 32, 6);
  EXPECT_NEAR(rep.target_m2, 0.045, 1e-12);
  EXPECT_NEAR(rep.target_m4, 3.0 * 0.045 * 0.045, 1e-12);
  EXPECT_TRUE(rep.within_3_stderr)
      << "m2 = " << rep.sim_m2 << " +- " << rep.sim_m2_stderr;
}

TEST(MemoryStationarity, NoiselessProcessDecaysToZero) {
  const MStationaryReport rep =
      m_stationary_check(MKind::cubic, 0.05, 0.0, 20.0, 5e-4, 4, 7);
  EXPECT_TRUE(rep.within_3_stderr);
  EXPECT_LT(rep.sim_m2, 0.05);
}

// ---------------------------------------------------------------------------
//  Memory-horizon optimizer
// ---------------------------------------------------------------------------

namespace {

/// Synthetic cloud with z = c0 * r^2 + m-like noise, so the optimal memory
/// coefficient is exactly c0 and the defect at the optimum is the leftover
/// noise variance.
PairedRZ synthetic_cloud(double c0, double noise_sd, std::size_t n, uint64_t seed) {
  PairedRZ rz;
  NormalRng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = 0.5 + 1.0 * rng.uniform01();
    rz.r.push_back(r);
    rz.z.push_back(c0 * r * r + noise_sd * rng.normal());
  }
  rz.block_offsets = {0, n};
  return rz;
}

}  // namespace

TEST(TauOptimizer, RecoversASyntheticCoefficient) {
  const double c0 = 0.5;
  const PairedRZ rz = synthetic_cloud(c0, 0.05, 50000, 17);
  TauOptControls tc;
  tc.m_count = 4000;
  const TauOptResult res = optimize_tau(rz, /*epsilon=*/1.0, /*sigma=*/0.1, tc);

  // The closed-form least-squares coefficient and the optimizer's c(tau)
  // should both land on c0.
  EXPECT_NEAR(res.c_star, c0, 5e-3);
  EXPECT_NEAR(res.c_opt, res.c_star, 1e-3);
  EXPECT_NEAR(res.c_opt, c_tau(res.tau_opt, 1.0), 1e-15);
  EXPECT_FALSE(res.non_unimodal);
}

TEST(TauOptimizer, RefinementNeverLosesToTheGrid) {
  const PairedRZ rz = synthetic_cloud(0.8, 0.2, 20000, 18);
  TauOptControls tc;
  tc.m_count = 2000;
  const TauOptResult res = optimize_tau(rz, 0.5, 0.2, tc);
  double grid_min = std::numeric_limits<double>::infinity();
  for (const TauCurvePoint& p : res.curve) grid_min = std::min(grid_min, p.q);
  EXPECT_LE(res.q_opt, grid_min + 1e-6);
  EXPECT_EQ(res.curve.size(), 200u);
  // Curve is q(tau) evaluated on an increasing grid.
  for (std::size_t i = 1; i < res.curve.size(); ++i)
    EXPECT_GT(res.curve[i].tau, res.curve[i - 1].tau);
}

TEST(TauOptimizer, HonorsTheMemoryKindSwitch) {
  const PairedRZ rz = synthetic_cloud(0.6, 0.1, 20000, 19);
  TauOptControls tc;
  tc.m_count = 2000;
  tc.ou_memory = true;
  const TauOptResult res = optimize_tau(rz, 0.5, 0.2, tc);
  EXPECT_NEAR(res.c_star, 0.6, 1e-2);
  EXPECT_FALSE(res.non_unimodal);
}

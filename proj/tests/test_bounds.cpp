// ============================================================================
//  Tests for bound-constant assembly and the end-to-end bound reports.
// ============================================================================

#include <gtest/gtest.h>

#include <cfloat>
#include <cmath>

#include "slowfast/bounds.hpp"

using namespace slowfast;

namespace {

std::vector<double> constant_sample(double a, std::size_t n = 64) {
  return std::vector<double>(n, a);
}

}  // namespace

// ---------------------------------------------------------------------------
//  Constant assembly
// ---------------------------------------------------------------------------

TEST(BoundConstants, PointMassBelowTheCriticalRadiusLeavesOnlyTwoRstar) {
  // mu = nu = delta_a with a < r_*: both tail integrals vanish, C = 2 r_*.
  const ModelParams p{1.0, 2.0, 1.0, 0.5, 0.3};
  const double rs = r_star(p);
  const auto xs = constant_sample(0.5 * rs);
  const BoundConstants k = bound_constants(BoundId::slow_rstar, p, xs, xs);
  EXPECT_DOUBLE_EQ(k.additive_C, 2.0 * rs);
  EXPECT_NEAR(k.mu_r4, std::pow(0.5 * rs, 4.0), 1e-13 * k.mu_r4);
  EXPECT_DOUBLE_EQ(k.multiplicative_c,
                   (p.gamma / q_const(p, GainVariant::slow_manifold)) *
                       std::pow(k.mu_r4, 0.25));
  EXPECT_FALSE(k.overflow);

  // Point mass above r_*: both tails contribute the full mean.
  const auto ys = constant_sample(2.0 * rs);
  const BoundConstants k2 = bound_constants(BoundId::slow_rstar, p, ys, ys);
  EXPECT_NEAR(k2.additive_C, 2.0 * rs + 2.0 * (2.0 * rs), 1e-13 * k2.additive_C);
}

TEST(BoundConstants, DeterministicRadiusShapeMatchesAHandComputation) {
  // lambda = gamma = 1, sigma tiny, nu = delta_1: C -> sqrt(2) + 1.
  const ModelParams p{1.0, 0.0, 1.0, 1.0, 1e-8};
  const auto ones = constant_sample(1.0);
  const BoundConstants k = bound_constants(BoundId::slow_rdet, p, ones, ones);
  EXPECT_NEAR(k.additive_C, std::sqrt(2.0) + 1.0, 1e-10);
  // c = (q + 2 lambda)/(q r_det^2) * 1 with r_det = 1.
  const double q = q_const(p, GainVariant::slow_manifold);
  EXPECT_DOUBLE_EQ(k.c_prefactor, (q + 2.0) / q);
  EXPECT_DOUBLE_EQ(k.multiplicative_c, k.c_prefactor);
}

TEST(BoundConstants, PrefactorsForTheStiffCaseAreExactRationals) {
  // lambda=10, gamma=50, sigma=0.1: q = 101/(50 eps), r_det^2 = 0.2, so the
  // deterministic-radius prefactor (q+2*lambda)/(q*r_det^2) is a rational
  // number for each eps.
  for (const auto& [eps, expected] :
       {std::pair{1e-4, 20220.0 / 4040.0}, std::pair{1e-2, 222.0 / 40.4},
        std::pair{1e-1, 40.2 / 4.04}}) {
    const ModelParams p = case_params(CaseId::III, eps);
    const auto xs = constant_sample(0.4);
    const BoundConstants k = bound_constants(BoundId::slow_rdet, p, xs, xs);
    EXPECT_NEAR(k.c_prefactor, expected, 1e-12) << "eps = " << eps;
  }
  // Pinned decimal literals for the three table rows.
  const auto pref = [](double eps) {
    const ModelParams p = case_params(CaseId::III, eps);
    const auto xs = constant_sample(0.4);
    return bound_constants(BoundId::slow_rdet, p, xs, xs).c_prefactor;
  };
  EXPECT_NEAR(pref(1e-4), 5.004950495, 1e-9);
  EXPECT_NEAR(pref(1e-2), 5.495049505, 1e-9);
  EXPECT_NEAR(pref(1e-1), 9.950495050, 1e-9);
}

TEST(BoundConstants, MemoryVariantsUseTheStochasticGain) {
  const ModelParams p{1.0, 0.0, 1.0, 10.0, 0.3, 1.0};
  const auto xs = constant_sample(0.4);
  const BoundConstants slow = bound_constants(BoundId::slow_rstar, p, xs, xs);
  const BoundConstants pm = bound_constants(BoundId::pm_rstar, p, xs, xs);
  // Same additive constant (same tails, same r_*), different gain in c.
  EXPECT_DOUBLE_EQ(slow.additive_C, pm.additive_C);
  const double q_slow = q_const(p, GainVariant::slow_manifold);
  const double q_pm = q_const(p, GainVariant::stochastic_pm);
  EXPECT_DOUBLE_EQ(pm.c_prefactor / slow.c_prefactor, q_slow / q_pm);
}

TEST(BoundConstants, MemorySaturationRecoversTheMemorylessConstant) {
  // For tau >= 30 eps the saturation factor is 1 up to ~1e-13, so the
  // pm_rdet additive constant matches the slow_rdet one on the same samples.
  const ModelParams p{2.0, 1.0, 4.0, 0.05, 0.25, /*tau=*/1.5};
  const auto mu = constant_sample(0.9);
  const auto nu = constant_sample(0.8);
  const BoundConstants a = bound_constants(BoundId::pm_rdet, p, mu, nu, 30.0 * p.epsilon);
  const BoundConstants b = bound_constants(BoundId::slow_rdet, p, mu, nu);
  EXPECT_NEAR(a.additive_C, b.additive_C, 1e-10 * b.additive_C);
}

TEST(BoundConstants, VanishingSaturationRaisesTheOverflowFlagNotInf) {
  // tau/eps below the subnormal range drives c_tau to exactly zero; the
  // constant must come back clamped and flagged, never non-finite.
  const ModelParams p{1.0, 0.0, 1.0, 1e8, 0.3, 1e-300};
  const auto xs = constant_sample(0.5);
  const BoundConstants k =
      bound_constants(BoundId::pm_rdet, p, xs, xs, 1e-300);
  EXPECT_TRUE(k.overflow);
  EXPECT_TRUE(std::isfinite(k.additive_C));
  EXPECT_DOUBLE_EQ(k.additive_C, DBL_MAX);
}

TEST(BoundConstants, RejectsBadArguments) {
  const ModelParams p{1.0, 0.0, 1.0, 1.0, 0.3};
  const auto xs = constant_sample(0.5);
  EXPECT_THROW(bound_constants(BoundId::slow_rstar, p, {}, xs), std::invalid_argument);
  EXPECT_THROW(bound_constants(BoundId::pm_rdet, p, xs, xs), std::invalid_argument);
  ModelParams noiseless = p;
  noiseless.sigma = 0.0;
  EXPECT_THROW(bound_constants(BoundId::slow_rstar, noiseless, xs, xs),
               std::domain_error);
}

TEST(BoundConstants, NamesParseAndRoundTrip) {
  for (const BoundId id : {BoundId::slow_rstar, BoundId::slow_rdet,
                           BoundId::pm_rstar, BoundId::pm_rdet})
    EXPECT_EQ(parse_bound_id(bound_name(id)), id);
  EXPECT_THROW(parse_bound_id("nope"), std::invalid_argument);
  EXPECT_TRUE(bound_is_pm(BoundId::pm_rstar));
  EXPECT_FALSE(bound_is_pm(BoundId::slow_rdet));
  EXPECT_TRUE(bound_uses_rstar(BoundId::pm_rstar));
  EXPECT_FALSE(bound_uses_rstar(BoundId::pm_rdet));
}

// ---------------------------------------------------------------------------
//  Report assembly
// ---------------------------------------------------------------------------

namespace {

PairedRZ synthetic_rz(std::size_t n, double r0, double z_sd, uint64_t seed) {
  PairedRZ rz;
  NormalRng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = r0 + 0.05 * rng.normal();
    rz.r.push_back(std::fabs(r));
    rz.z.push_back(rz.r.back() * rz.r.back() + z_sd * rng.normal());
  }
  rz.block_offsets = {0, n / 4, n / 2, 3 * n / 4, n};
  return rz;
}

}  // namespace

TEST(BoundReport, AssemblyIdentityIsExact) {
  const ModelParams p{1.0, 0.0, 1.0, 0.5, 0.3};
  const PairedRZ rz = synthetic_rz(4000, 1.0, 0.2, 21);
  const std::vector<double> nu(rz.r.begin(), rz.r.begin() + 2000);
  const std::vector<std::size_t> nu_blocks = {0, 1000, 2000};
  const BoundReport rep =
      assemble_bound(BoundId::slow_rstar, p, "synthetic", rz, nu, nu_blocks);
  EXPECT_EQ(rep.rhs, rep.additive_C + rep.multiplicative_c * rep.defect_l4);
  EXPECT_EQ(rep.satisfied, rep.lhs_w1 <= rep.rhs);
  EXPECT_EQ(rep.corollary_condition_holds, rep.additive_C <= rep.defect_l4);
  EXPECT_DOUBLE_EQ(rep.corollary_c, 1.0 + rep.multiplicative_c);
  EXPECT_GT(rep.lhs_stderr, 0.0);
  EXPECT_GT(rep.defect_stderr, 0.0);
  EXPECT_EQ(rep.n_mu, 4000u);
  EXPECT_EQ(rep.n_nu, 2000u);
  EXPECT_FALSE(rep.inputs.empty());
  // Every headline number has a provenance line.
  bool has_lhs = false, has_C = false, has_c = false, has_defect = false;
  for (const auto& [key, desc] : rep.inputs) {
    has_lhs |= key == "lhs_w1";
    has_C |= key == "additive_C";
    has_c |= key == "multiplicative_c";
    has_defect |= key == "defect_l4";
    EXPECT_FALSE(desc.empty());
  }
  EXPECT_TRUE(has_lhs && has_C && has_c && has_defect);
}

TEST(BoundReport, WorstCaseVerdictIsStricter) {
  const ModelParams p{1.0, 0.0, 1.0, 0.5, 0.3};
  const PairedRZ rz = synthetic_rz(4000, 1.0, 0.2, 22);
  const std::vector<double> nu(rz.r.begin(), rz.r.begin() + 2000);
  const BoundReport rep = assemble_bound(BoundId::slow_rdet, p, "synthetic", rz,
                                         nu, {0, 1000, 2000});
  // Worst case implies the plain verdict (both error bars are nonnegative).
  if (rep.satisfied_worst_case) {
    EXPECT_TRUE(rep.satisfied);
  }
  // With these calm samples the bound holds outright.
  EXPECT_TRUE(rep.satisfied);
  EXPECT_TRUE(rep.satisfied_worst_case);
}

TEST(BoundReport, MemoryBoundRequiresTauAndSample) {
  const ModelParams p{1.0, 0.0, 1.0, 10.0, 0.3};
  const PairedRZ rz = synthetic_rz(500, 1.0, 0.2, 23);
  const std::vector<double> nu(rz.r.begin(), rz.r.begin() + 200);
  EXPECT_THROW(
      assemble_bound(BoundId::pm_rstar, p, "synthetic", rz, nu, {0, 200}),
      std::invalid_argument);
  const MSamples m = MSamples::cubic(p.sigma, 500, 3);
  const BoundReport rep = assemble_bound(BoundId::pm_rstar, p, "synthetic", rz,
                                         nu, {0, 200}, 5.0, &m);
  EXPECT_EQ(rep.rhs, rep.additive_C + rep.multiplicative_c * rep.defect_l4);
  ASSERT_TRUE(rep.tau.has_value());
  EXPECT_DOUBLE_EQ(*rep.tau, 5.0);
}

// ---------------------------------------------------------------------------
//  End-to-end evaluation
// ---------------------------------------------------------------------------

TEST(BoundPipeline, StiffCaseAdditiveConstantLandsNearItsKnownValue) {
  // Moderate-budget run of the stiff case at eps = 1e-2: the additive
  // constant of the deterministic-radius bound is ~1.08 and dominates the
  // right-hand side, so the bound holds with a wide margin.
  const ModelParams p = case_params(CaseId::III, 1e-2);
  BoundRunControls rc;
  rc.original.horizon = 40.0;
  rc.original.dt = 1e-4;
  rc.original.burn_in = 5.0;
  rc.original.n_traj = 4;
  rc.original.seed = 31;
  rc.reduced.horizon = 40.0;
  rc.reduced.dt = 1e-4;
  rc.reduced.burn_in = 5.0;
  rc.reduced.n_traj = 4;
  rc.reduced.seed = 32;
  const BoundReport rep = evaluate_bound(BoundId::slow_rdet, p, "III", rc);
  EXPECT_NEAR(rep.additive_C, 1.08, 0.05);
  EXPECT_TRUE(rep.satisfied);
  EXPECT_TRUE(rep.satisfied_worst_case);
  EXPECT_GT(rep.rhs, 10.0 * rep.lhs_w1);  // C dominates
  EXPECT_NEAR(rep.c_prefactor, 5.495049505, 1e-9);
  EXPECT_FALSE(rep.corollary_condition_holds);  // C ~ 1.08 >> defect ~ 0.1
}

TEST(BoundPipeline, IdenticalLawsGiveATinyDistanceAndATrivialBound) {
  // Reduced system compared against itself on independent seeds: the W1
  // distance is pure sampling noise and the bound holds trivially.
  const ModelParams p = case_params(CaseId::III, 1e-2);
  RunControls rc;
  rc.horizon = 40.0;
  rc.dt = 1e-4;
  rc.burn_in = 5.0;
  rc.n_traj = 4;
  SystemSpec reduced{SystemId::reduced_polar, p};
  rc.seed = 41;
  const InvariantRun a = estimate_invariant(reduced, default_x0(reduced), rc);
  rc.seed = 42;
  const InvariantRun b = estimate_invariant(reduced, default_x0(reduced), rc);
  PairedRZ fake;  // radial cloud with z exactly on the manifold
  fake.r = radial_marginal(a);
  for (const double r : fake.r) fake.z.push_back(r * r);
  fake.block_offsets = a.block_offsets;
  const BoundReport rep = assemble_bound(BoundId::slow_rdet, p, "III", fake,
                                         radial_marginal(b), b.block_offsets);
  EXPECT_LT(rep.lhs_w1, 0.05 * mean(fake.r));
  EXPECT_LE(rep.lhs_w1, std::max(3.0 * rep.lhs_stderr, 0.01 * mean(fake.r)));
  EXPECT_TRUE(rep.satisfied);
  EXPECT_TRUE(rep.satisfied_worst_case);
}

#pragma once
// ============================================================================
//  slowfast/tau_opt.hpp
//
//  Horizon optimization for the parameterizing manifold: minimizes the
//  normalized quadratic defect Q(tau) over tau in [eps*1e-3, eps*1e3]
//  (log scale).  A 200-point log grid is always evaluated — it doubles as
//  the published (tau, Q) curve and as the fallback when the curve is not
//  unimodal — followed by golden-section refinement inside the bracketing
//  interval of the grid minimum.  All evaluations share one fixed memory
//  sample (common random numbers), so Q(tau) is a deterministic function
//  of tau for a given cloud.
// ============================================================================

#include <cmath>
#include <cstdint>
#include <vector>

#include "slowfast/defect.hpp"

namespace slowfast {

struct TauCurvePoint {
  double tau = 0.0;
  double q = 0.0;
};

struct TauOptResult {
  double tau_opt = 0.0;
  double q_opt = 0.0;
  double c_opt = 0.0;        ///< c_tau(tau_opt, epsilon)
  double c_star = 0.0;       ///< closed-form least-squares coefficient
  bool non_unimodal = false; ///< grid curve had more than one local minimum
  std::vector<TauCurvePoint> curve;  ///< the 200-point grid scan
};

struct TauOptControls {
  std::size_t grid_points = 200;
  std::size_t m_count = 0;          ///< 0 -> MSamples::default_count(n)
  std::uint64_t m_seed = k_default_m_seed;
  bool ou_memory = false;
  double golden_tol = 1e-10;        ///< relative bracket width in log tau
};

/// @brief Minimizes Q(tau) for the parameterizing manifold against one
///        (r, z) cloud.  The returned q_opt never exceeds the grid minimum:
///        if refinement cannot improve on the grid, the grid point wins.
inline TauOptResult optimize_tau(const PairedRZ& rz, double epsilon, double sigma,
                                 const TauOptControls& tc = {}) {
  if (!(epsilon > 0.0) || !(sigma > 0.0))
    throw std::invalid_argument("optimize_tau: epsilon and sigma must be > 0");
  const std::size_t n_m =
      tc.m_count > 0 ? tc.m_count : MSamples::default_count(rz.r.size());
  const MSamples m = tc.ou_memory ? MSamples::gaussian(sigma, n_m, tc.m_seed)
                                  : MSamples::cubic(sigma, n_m, tc.m_seed);

  // Q(tau) without error bars: the optimizer only needs the point value.
  auto q_of_tau = [&](double tau) {
    const ManifoldSpec manifold = ManifoldSpec::pm(tau, epsilon, tc.ou_memory);
    const auto t = detail::defect_terms(rz, manifold, &m);
    return mean(t.num2) / mean(t.z2);
  };

  const double lo = std::log(epsilon * 1e-3), hi = std::log(epsilon * 1e3);
  const std::size_t g = tc.grid_points;
  TauOptResult out;
  out.curve.resize(g);
  std::size_t best = 0;
  for (std::size_t k = 0; k < g; ++k) {
    const double tau =
        std::exp(lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(g - 1));
    out.curve[k] = {tau, q_of_tau(tau)};
    if (out.curve[k].q < out.curve[best].q) best = k;
  }

  // Count strict local minima on the grid; more than one flags the curve.
  std::size_t n_minima = 0;
  for (std::size_t k = 0; k < g; ++k) {
    const bool left_ok = k == 0 || out.curve[k].q < out.curve[k - 1].q;
    const bool right_ok = k + 1 == g || out.curve[k].q < out.curve[k + 1].q;
    if (left_ok && right_ok) ++n_minima;
  }
  out.non_unimodal = n_minima > 1;

  // Golden-section refinement inside the bracket around the grid minimum.
  double a = best == 0 ? lo : std::log(out.curve[best - 1].tau);
  double b = best + 1 == g ? hi : std::log(out.curve[best + 1].tau);
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - gr * (b - a), x2 = a + gr * (b - a);
  double f1 = q_of_tau(std::exp(x1)), f2 = q_of_tau(std::exp(x2));
  while (b - a > tc.golden_tol * std::max(1.0, std::fabs(a) + std::fabs(b))) {
    if (f1 < f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - gr * (b - a);
      f1 = q_of_tau(std::exp(x1));
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + gr * (b - a);
      f2 = q_of_tau(std::exp(x2));
    }
  }
  double tau_ref = std::exp(0.5 * (a + b));
  double q_ref = q_of_tau(tau_ref);

  // The grid minimum is a hard floor for the reported optimum.
  if (q_ref <= out.curve[best].q) {
    out.tau_opt = tau_ref;
    out.q_opt = q_ref;
  } else {
    out.tau_opt = out.curve[best].tau;
    out.q_opt = out.curve[best].q;
  }
  out.c_opt = c_tau(out.tau_opt, epsilon);
  out.c_star = closed_form_c_star(rz, m.m1);
  return out;
}

}  // namespace slowfast

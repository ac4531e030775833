#pragma once
// ============================================================================
//  slowfast/mprocess.hpp
//
//  Stationary law of the memory process M.
//
//  Cubic relaxation  dM = -M^3/eps dt + sigma/sqrt(eps) dW  has stationary
//  density rho(m) = exp(-m^4/(2 sigma^2)) / Z with
//      Z = 2 (2 sigma^2)^{1/4} Gamma(5/4),
//      E m^2 = sqrt(2 sigma^2) Gamma(3/4)/Gamma(1/4),   E m^4 = sigma^2/2.
//  Linear relaxation (Ornstein-Uhlenbeck) has stationary law N(0, sigma^2/2).
//
//  Provides adaptive quadrature, the normalizer (both quadrature and closed
//  form), moments, a deterministic inverse-CDF sampler, and a simulation
//  check of the stationary moments.
// ============================================================================

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "slowfast/integrate.hpp"

namespace slowfast {

// ============================================================================
//  Adaptive quadrature
// ============================================================================

namespace detail {

inline double simpson(double a, double b, double fa, double fm, double fb) {
  return (b - a) / 6.0 * (fa + 4.0 * fm + fb);
}

template <class F>
double adaptive_simpson_rec(F&& f, double a, double b, double fa, double fm,
                            double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = simpson(a, m, fa, flm, fm);
  const double right = simpson(m, b, fm, frm, fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::fabs(delta) <= 15.0 * tol)
    return left + right + delta / 15.0;
  return adaptive_simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

}  // namespace detail

/// Adaptive Simpson quadrature of f over [a, b] to absolute tolerance tol.
template <class F>
double integrate_adaptive(F&& f, double a, double b, double tol = 1e-12) {
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = detail::simpson(a, b, fa, fm, fb);
  return detail::adaptive_simpson_rec(f, a, b, fa, fm, fb, whole, tol, 40);
}

// ============================================================================
//  Stationary density of the cubic memory process
// ============================================================================

/// Integration half-width capturing the quartic tail to double precision.
inline double rho_domain_halfwidth(double sigma) {
  return std::pow(80.0 * sigma * sigma, 0.25);
}

/// Normalizer Z(sigma) by adaptive quadrature of exp(-m^4/(2 sigma^2)).
inline double rho_normalizer(double sigma) {
  if (!(sigma > 0.0)) throw std::domain_error("rho_normalizer: sigma must be > 0");
  const double s2 = sigma * sigma;
  const double L = rho_domain_halfwidth(sigma);
  return integrate_adaptive(
      [s2](double m) { return std::exp(-m * m * m * m / (2.0 * s2)); }, -L, L,
      1e-14 * L);
}

/// Closed form Z(sigma) = 2 (2 sigma^2)^{1/4} Gamma(5/4).
inline double rho_normalizer_closed_form(double sigma) {
  if (!(sigma > 0.0))
    throw std::domain_error("rho_normalizer_closed_form: sigma must be > 0");
  return 2.0 * std::pow(2.0 * sigma * sigma, 0.25) * std::tgamma(1.25);
}

/// Stationary density of the cubic memory process.
inline double rho_density(double m, double sigma) {
  const double s2 = sigma * sigma;
  return std::exp(-m * m * m * m / (2.0 * s2)) / rho_normalizer_closed_form(sigma);
}

/// p-th moment of rho by quadrature (p even; odd moments vanish).
inline double rho_moment(double sigma, int p) {
  const double s2 = sigma * sigma;
  const double L = rho_domain_halfwidth(sigma);
  const double raw = integrate_adaptive(
      [s2, p](double m) {
        return std::pow(std::fabs(m), p) * std::exp(-m * m * m * m / (2.0 * s2));
      },
      -L, L, 1e-15 * L);
  return raw / rho_normalizer_closed_form(sigma);
}

/// Closed-form moments: E m^2 = sqrt(2 sigma^2) Gamma(3/4)/Gamma(1/4),
/// E m^4 = sigma^2/2.
inline double rho_moment_closed_form(double sigma, int p) {
  if (p == 2)
    return std::sqrt(2.0 * sigma * sigma) * std::tgamma(0.75) / std::tgamma(0.25);
  if (p == 4) return sigma * sigma / 2.0;
  throw std::invalid_argument("rho_moment_closed_form: p must be 2 or 4");
}

// ============================================================================
//  Sampling
// ============================================================================

/// @brief Deterministic sample from the cubic stationary law via an
///        inverse-CDF table (4096 panels, Simpson per panel, linear inverse
///        interpolation).
inline std::vector<double> rho_sample(double sigma, std::size_t count,
                                      std::uint64_t seed) {
  if (!(sigma > 0.0)) throw std::domain_error("rho_sample: sigma must be > 0");
  const double L = rho_domain_halfwidth(sigma);
  const std::size_t panels = 4096;
  const double h = 2.0 * L / static_cast<double>(panels);
  const double s2 = sigma * sigma;
  auto density = [s2](double m) { return std::exp(-m * m * m * m / (2.0 * s2)); };
  std::vector<double> nodes(panels + 1), cdf(panels + 1, 0.0);
  for (std::size_t k = 0; k <= panels; ++k) nodes[k] = -L + h * static_cast<double>(k);
  for (std::size_t k = 0; k < panels; ++k) {
    const double a = nodes[k], b = nodes[k + 1];
    cdf[k + 1] = cdf[k] + (b - a) / 6.0 *
                              (density(a) + 4.0 * density(0.5 * (a + b)) + density(b));
  }
  const double total = cdf[panels];
  for (auto& c : cdf) c /= total;

  NormalRng rng(stream_seed(seed, 0xC0FFEE));
  std::vector<double> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    const double u = rng.uniform01();
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const std::size_t k =
        std::min<std::size_t>(panels - 1,
                              static_cast<std::size_t>(it - cdf.begin()) == 0
                                  ? 0
                                  : static_cast<std::size_t>(it - cdf.begin()) - 1);
    const double span = cdf[k + 1] - cdf[k];
    const double t = span > 0.0 ? (u - cdf[k]) / span : 0.5;
    out[i] = nodes[k] + t * h;
  }
  return out;
}

/// Deterministic Gaussian sample N(0, sigma^2/2): the stationary law of the
/// linear memory process.
inline std::vector<double> ou_stationary_sample(double sigma, std::size_t count,
                                                std::uint64_t seed) {
  NormalRng rng(stream_seed(seed, 0xBEEF));
  const double sd = sigma / std::sqrt(2.0);
  std::vector<double> out(count);
  for (auto& x : out) x = sd * rng.normal();
  return out;
}

// ============================================================================
//  Stationarity check by simulation
// ============================================================================

struct MStationaryReport {
  double sim_m2 = 0.0;      ///< simulated second moment
  double sim_m2_stderr = 0.0;
  double target_m2 = 0.0;   ///< quadrature / closed-form target
  double sim_m4 = 0.0;
  double sim_m4_stderr = 0.0;
  double target_m4 = 0.0;
  bool within_3_stderr = false;
};

/// @brief Simulates the standalone memory SDE to stationarity and compares
///        second/fourth moments against their targets (quadrature for the
///        cubic variant, sigma^2/2 for the linear one).  sigma = 0 reduces
///        to the decay ODE: the report then records the terminal amplitude
///        in sim_m2 with zero targets.
inline MStationaryReport m_stationary_check(MKind kind, double epsilon, double sigma,
                                            double horizon, double dt,
                                            std::size_t n_traj, std::uint64_t seed) {
  if (!(epsilon > 0.0) || !(dt > 0.0))
    throw std::invalid_argument("m_stationary_check: epsilon and dt must be > 0");
  const auto n_steps = static_cast<std::size_t>(std::llround(horizon / dt));
  const double m0 = 1.0;
  auto finals = map_trajectories(n_traj, 1, [&](std::uint64_t i) {
    NormalRng rng(stream_seed(seed, i));
    const double sq = std::sqrt(dt) * sigma / std::sqrt(epsilon);
    double m = m0;
    for (std::size_t k = 0; k < n_steps; ++k) {
      const double drift = kind == MKind::cubic ? -m * m * m / epsilon : -m / epsilon;
      m += drift * dt + sq * rng.normal();
      if (!std::isfinite(m))
        throw BlowupError("memory process", k + 1, (k + 1) * dt);
    }
    return m;
  });

  MStationaryReport rep;
  if (!(sigma > 0.0)) {
    rep.sim_m2 = std::fabs(finals.front());
    rep.within_3_stderr = rep.sim_m2 < 0.05;
    return rep;
  }
  const double n = static_cast<double>(finals.size());
  double s2 = 0.0, s4 = 0.0, s8 = 0.0;
  for (double m : finals) {
    const double m2 = m * m;
    s2 += m2;
    s4 += m2 * m2;
    s8 += m2 * m2 * m2 * m2;
  }
  rep.sim_m2 = s2 / n;
  rep.sim_m4 = s4 / n;
  rep.sim_m2_stderr = std::sqrt(std::max(0.0, s4 / n - rep.sim_m2 * rep.sim_m2) / n);
  rep.sim_m4_stderr = std::sqrt(std::max(0.0, s8 / n - rep.sim_m4 * rep.sim_m4) / n);
  if (kind == MKind::cubic) {
    rep.target_m2 = rho_moment(sigma, 2);
    rep.target_m4 = rho_moment(sigma, 4);
  } else {
    rep.target_m2 = sigma * sigma / 2.0;
    rep.target_m4 = 3.0 * rep.target_m2 * rep.target_m2;
  }
  rep.within_3_stderr =
      std::fabs(rep.sim_m2 - rep.target_m2) <= 3.0 * rep.sim_m2_stderr &&
      std::fabs(rep.sim_m4 - rep.target_m4) <= 3.0 * rep.sim_m4_stderr;
  return rep;
}

}  // namespace slowfast

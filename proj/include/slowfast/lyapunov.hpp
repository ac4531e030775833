#pragma once
// ============================================================================
//  slowfast/lyapunov.hpp
//
//  Numeric grid checks of the drift-condition inequality LV <= a V for the
//  three Lyapunov candidates used with the full systems:
//
//    V_cartesian  x^2 + y^2 + sqrt(eps gamma) z^2 + 1        (Cartesian model)
//    V_polar      a1 r^2 + theta + (z - p)^2 + 1             (polar model)
//    V_polar_aug  a1 r^2 + theta + (z - p)^2 + M^2 + 1       (memory-augmented)
//
//  with a1 = 1/(gamma eps) and p = (1 + 2 lambda)/(2 gamma).  The generator
//  is applied termwise from the coded drift and diagonal diffusion,
//
//    LV = b . grad V + (1/2) sum_i s_i^2 d2V/dx_i^2,
//
//  and the grid check returns the sup of LV / V over a box together with the
//  closed-form rate bound
//
//    a = max{ max(1, 1/eps),  f + 2 sigma^2/(gamma eps) + (sigma^2 + p^2)/eps }
//
//  that the polar candidate satisfies everywhere on its domain.
// ============================================================================

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "slowfast/params.hpp"
#include "slowfast/systems.hpp"

namespace slowfast {

// ============================================================================
//  Identifiers
// ============================================================================

enum class LyapunovId { V_cartesian, V_polar, V_polar_aug };

inline const char* lyapunov_name(LyapunovId id) {
  switch (id) {
    case LyapunovId::V_cartesian: return "V_cartesian";
    case LyapunovId::V_polar: return "V_polar";
    case LyapunovId::V_polar_aug: return "V_polar_aug";
  }
  return "?";
}

inline LyapunovId parse_lyapunov_id(std::string_view s) {
  if (s == "V_cartesian") return LyapunovId::V_cartesian;
  if (s == "V_polar") return LyapunovId::V_polar;
  if (s == "V_polar_aug") return LyapunovId::V_polar_aug;
  throw std::invalid_argument("unknown Lyapunov function id: " + std::string(s));
}

/// The full system each candidate is paired with.
constexpr SystemId lyapunov_system(LyapunovId id) {
  switch (id) {
    case LyapunovId::V_cartesian: return SystemId::original_cartesian;
    case LyapunovId::V_polar: return SystemId::original_polar;
    case LyapunovId::V_polar_aug: return SystemId::augmented_original;
  }
  return SystemId::original_polar;
}

constexpr int lyapunov_dim(LyapunovId id) { return state_dim(lyapunov_system(id)); }

/// Coefficients shared by the polar candidates.
struct LyapunovCoefficients {
  double alpha1;  ///< 1 / (gamma eps), radial weight
  double p;       ///< (1 + 2 lambda) / (2 gamma), fast-variable centering
};

inline LyapunovCoefficients lyapunov_coefficients(const ModelParams& p) {
  return {1.0 / (p.gamma * p.epsilon), (1.0 + 2.0 * p.lambda) / (2.0 * p.gamma)};
}

// ============================================================================
//  V, its derivatives, and the generator
// ============================================================================

namespace detail {

/// Value, gradient, and diagonal second derivatives of a candidate at x.
inline double v_derivatives(LyapunovId id, const ModelParams& prm,
                            std::span<const double> x, std::span<double> dv,
                            std::span<double> d2v) {
  switch (id) {
    case LyapunovId::V_cartesian: {
      const double w = std::sqrt(prm.epsilon * prm.gamma);
      dv[0] = 2.0 * x[0];
      dv[1] = 2.0 * x[1];
      dv[2] = 2.0 * w * x[2];
      d2v[0] = 2.0;
      d2v[1] = 2.0;
      d2v[2] = 2.0 * w;
      return x[0] * x[0] + x[1] * x[1] + w * x[2] * x[2] + 1.0;
    }
    case LyapunovId::V_polar:
    case LyapunovId::V_polar_aug: {
      const auto [a1, p] = lyapunov_coefficients(prm);
      dv[0] = 2.0 * a1 * x[0];
      dv[1] = 1.0;
      dv[2] = 2.0 * (x[2] - p);
      d2v[0] = 2.0 * a1;
      d2v[1] = 0.0;
      d2v[2] = 2.0;
      double v = a1 * x[0] * x[0] + x[1] + (x[2] - p) * (x[2] - p) + 1.0;
      if (id == LyapunovId::V_polar_aug) {
        dv[3] = 2.0 * x[3];
        d2v[3] = 2.0;
        v += x[3] * x[3];
      }
      return v;
    }
  }
  throw std::invalid_argument("v_derivatives: bad id");
}

}  // namespace detail

/// V at a state.
inline double lyapunov_value(LyapunovId id, const ModelParams& p,
                             std::span<const double> x) {
  double dv[4], d2v[4];
  return detail::v_derivatives(id, p, x, dv, d2v);
}

/// @brief LV at a state, assembled termwise from the paired system's drift
///        and diagonal diffusion.  Polar candidates require a radius at or
///        above the domain floor.
inline double lyapunov_generator(LyapunovId id, const ModelParams& p,
                                 std::span<const double> x) {
  SystemSpec spec;
  spec.id = lyapunov_system(id);
  spec.params = p;
  spec.m_kind = MKind::cubic;
  const auto d = static_cast<std::size_t>(lyapunov_dim(id));
  if (x.size() != d)
    throw std::invalid_argument("lyapunov_generator: state dimension mismatch");
  double b[4] = {}, s[4] = {}, dv[4] = {}, d2v[4] = {};
  drift(spec, x, std::span<double>(b, d));
  diffusion_diag(spec, x, std::span<double>(s, d));
  detail::v_derivatives(id, p, x, std::span<double>(dv, 4), std::span<double>(d2v, 4));
  double acc = 0.0;
  for (std::size_t i = 0; i < d; ++i)
    acc += b[i] * dv[i] + 0.5 * s[i] * s[i] * d2v[i];
  return acc;
}

/// @brief Closed-form rate constant of the polar candidate:
///        a = max{ max(1, 1/eps), f + 2 sigma^2/(gamma eps) + (sigma^2+p^2)/eps }.
inline double lyapunov_rate_bound(const ModelParams& prm) {
  const double a_tilde = std::max(1.0, 1.0 / prm.epsilon);
  const double p = (1.0 + 2.0 * prm.lambda) / (2.0 * prm.gamma);
  const double c = prm.f + 2.0 * prm.sigma * prm.sigma / (prm.gamma * prm.epsilon) +
                   (prm.sigma * prm.sigma + p * p) / prm.epsilon;
  return std::max(a_tilde, c);
}

// ============================================================================
//  Grid check
// ============================================================================

/// Axis-aligned evaluation box: n[i] equally spaced points on [lo[i], hi[i]].
struct GridBox {
  std::vector<double> lo, hi;
  std::vector<std::size_t> n;
};

/// A reasonable default box per candidate (radius / angle / fast variable /
/// memory, or x / y / z for the Cartesian one).
inline GridBox default_box(LyapunovId id) {
  switch (id) {
    case LyapunovId::V_cartesian:
      return {{-3.0, -3.0, -2.0}, {3.0, 3.0, 4.0}, {25, 25, 25}};
    case LyapunovId::V_polar:
      return {{0.01, 0.0, -2.0}, {3.0, 6.2, 4.0}, {30, 8, 30}};
    case LyapunovId::V_polar_aug:
      return {{0.01, 0.0, -2.0, -2.0}, {3.0, 6.2, 4.0, 2.0}, {20, 6, 20, 9}};
  }
  throw std::invalid_argument("default_box: bad id");
}

/// @brief Result of a grid sweep of LV / V.  closed_form_a is the polar rate
///        constant; for the other candidates it is NaN (no closed-form
///        comparison constant is provided for them).
struct LyapunovGridReport {
  LyapunovId id = LyapunovId::V_polar;
  double max_ratio = -std::numeric_limits<double>::infinity();
  double closed_form_a = std::numeric_limits<double>::quiet_NaN();
  std::size_t n_evaluated = 0;
  std::size_t n_skipped = 0;  ///< polar grid points below the radial floor
  std::array<double, 4> argmax{};
};

/// @brief Sweeps the box and returns sup LV / V, skipping (and counting)
///        polar grid points whose radius violates the domain.  Every
///        evaluated ratio must be finite.
inline LyapunovGridReport lyapunov_grid_check(LyapunovId id, const ModelParams& p,
                                              const GridBox& box) {
  p.validate();
  const auto d = static_cast<std::size_t>(lyapunov_dim(id));
  if (box.lo.size() != d || box.hi.size() != d || box.n.size() != d)
    throw std::invalid_argument("lyapunov_grid_check: box dimension mismatch");
  std::size_t total = 1;
  for (std::size_t i = 0; i < d; ++i) {
    if (box.n[i] == 0)
      throw std::invalid_argument("lyapunov_grid_check: need >= 1 point per axis");
    if (!(box.hi[i] >= box.lo[i]))
      throw std::invalid_argument("lyapunov_grid_check: hi < lo");
    total *= box.n[i];
  }
  const bool polar = id != LyapunovId::V_cartesian;

  LyapunovGridReport rep;
  rep.id = id;
  if (id == LyapunovId::V_polar) rep.closed_form_a = lyapunov_rate_bound(p);
  double x[4];
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t rem = flat;
    for (std::size_t i = 0; i < d; ++i) {
      const std::size_t k = rem % box.n[i];
      rem /= box.n[i];
      x[i] = box.n[i] == 1 ? box.lo[i]
                           : box.lo[i] + (box.hi[i] - box.lo[i]) *
                                             static_cast<double>(k) /
                                             static_cast<double>(box.n[i] - 1);
    }
    if (polar && x[0] < k_radial_floor) {
      ++rep.n_skipped;
      continue;
    }
    const std::span<const double> xs(x, d);
    const double v = lyapunov_value(id, p, xs);
    const double lv = lyapunov_generator(id, p, xs);
    const double ratio = lv / v;
    if (!std::isfinite(ratio))
      throw std::runtime_error("lyapunov_grid_check: non-finite LV/V at a grid point");
    ++rep.n_evaluated;
    if (ratio > rep.max_ratio) {
      rep.max_ratio = ratio;
      for (std::size_t i = 0; i < d; ++i) rep.argmax[i] = x[i];
    }
  }
  return rep;
}

}  // namespace slowfast

#pragma once
// ============================================================================
//  slowfast/systems.hpp
//
//  Drift / diffusion evaluators for the slow-fast Hopf model family:
//
//    original_cartesian    (x, y, z)        full model, planar coordinates
//    reduced_cartesian     (x, y)           slow-manifold reduction, planar
//    original_polar        (r, theta, z)    full model, polar coordinates
//    reduced_polar         (r, theta)       slow-manifold reduction, polar
//    transformed_polar     (r, theta, z)    full model + feedback drift that
//                                           contracts it onto a coupled
//                                           reduced path (slow-manifold gain)
//    augmented_original    (r, theta, z, M) full model + memory process M
//    augmented_reduced     (r, theta, M)    parameterizing-manifold reduction
//    transformed_polar_aug (r, theta, z)    full model + feedback drift for
//                                           the parameterizing-manifold gain
//
//  All diffusion matrices are diagonal; evaluators return the diagonal.
//  Noise columns are globally ordered (W^r, W^theta, W^3, W^4); Cartesian
//  systems use columns 0/1 for their planar pair.
// ============================================================================

#include <array>
#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>

#include "slowfast/params.hpp"

namespace slowfast {

// ============================================================================
//  System identifiers and layout
// ============================================================================

enum class SystemId {
  original_cartesian,
  reduced_cartesian,
  original_polar,
  reduced_polar,
  transformed_polar,
  augmented_original,
  augmented_reduced,
  transformed_polar_aug,
};

/// Memory-process variant: cubic relaxation dM = -M^3/eps dt + sigma/sqrt(eps) dW^4
/// or linear (Ornstein-Uhlenbeck) relaxation dM = -M/eps dt + sigma/sqrt(eps) dW^4.
enum class MKind { cubic, ou };

/// Number of state components.
constexpr int state_dim(SystemId id) {
  switch (id) {
    case SystemId::original_cartesian: return 3;
    case SystemId::reduced_cartesian: return 2;
    case SystemId::original_polar: return 3;
    case SystemId::reduced_polar: return 2;
    case SystemId::transformed_polar: return 3;
    case SystemId::augmented_original: return 4;
    case SystemId::augmented_reduced: return 3;
    case SystemId::transformed_polar_aug: return 3;
  }
  return 0;
}

/// Width of the per-step noise draw.  Augmented-family systems always draw
/// four columns so that coupled runs consume identical increment streams.
constexpr int noise_width(SystemId id) {
  switch (id) {
    case SystemId::original_cartesian: return 3;
    case SystemId::reduced_cartesian: return 2;
    case SystemId::original_polar: return 3;
    case SystemId::reduced_polar: return 2;
    case SystemId::transformed_polar: return 3;
    case SystemId::augmented_original: return 4;
    case SystemId::augmented_reduced: return 4;
    case SystemId::transformed_polar_aug: return 4;
  }
  return 0;
}

/// Noise-plan column that drives state component i.
constexpr int noise_column(SystemId id, int i) {
  // augmented_reduced skips column 2 (the fast-variable noise it removed):
  // its M component couples to W^4 like the augmented original's M.
  if (id == SystemId::augmented_reduced && i == 2) return 3;
  return i;
}

/// True for systems whose drift reads a companion reduced path.
constexpr bool needs_coupling(SystemId id) {
  return id == SystemId::transformed_polar ||
         id == SystemId::transformed_polar_aug;
}

constexpr bool is_polar(SystemId id) {
  return id != SystemId::original_cartesian && id != SystemId::reduced_cartesian;
}

inline const char* system_name(SystemId id) {
  switch (id) {
    case SystemId::original_cartesian: return "original_cartesian";
    case SystemId::reduced_cartesian: return "reduced_cartesian";
    case SystemId::original_polar: return "original_polar";
    case SystemId::reduced_polar: return "reduced_polar";
    case SystemId::transformed_polar: return "transformed_polar";
    case SystemId::augmented_original: return "augmented_original";
    case SystemId::augmented_reduced: return "augmented_reduced";
    case SystemId::transformed_polar_aug: return "transformed_polar_aug";
  }
  return "?";
}

inline SystemId parse_system_id(const std::string& s) {
  for (auto id : {SystemId::original_cartesian, SystemId::reduced_cartesian,
                  SystemId::original_polar, SystemId::reduced_polar,
                  SystemId::transformed_polar, SystemId::augmented_original,
                  SystemId::augmented_reduced, SystemId::transformed_polar_aug})
    if (s == system_name(id)) return id;
  throw std::invalid_argument("unknown system id: " + s);
}

// ============================================================================
//  Closed-form constants
// ============================================================================

/// Deterministic limit-cycle radius sqrt(lambda/gamma).
inline double r_det(const ModelParams& p) { return std::sqrt(p.lambda / p.gamma); }

/// @brief Most-probable radius of the reduced radial dynamics:
///        the positive root of lambda*r - gamma*r^3 + sigma^2/(2r) = 0,
///        r_*^2 = (lambda + sqrt(lambda^2 + 2*gamma*sigma^2)) / (2*gamma).
inline double r_star(const ModelParams& p) {
  const double disc = std::sqrt(p.lambda * p.lambda + 2.0 * p.gamma * p.sigma * p.sigma);
  return std::sqrt((p.lambda + disc) / (2.0 * p.gamma));
}

/// Which feedback gain a transformed system carries.
enum class GainVariant { slow_manifold, stochastic_pm };

/// @brief Contraction rate of the feedback drift:
///        slow-manifold gain   q = (1/(eps*gamma)) * (1 + 1/sigma^2),
///        parameterizing gain  q = (1/(eps*gamma)) * (1 + 5/(2 sigma^2)).
/// Requires sigma > 0.
inline double q_const(const ModelParams& p, GainVariant v) {
  if (!(p.sigma > 0.0))
    throw std::domain_error("q_const: requires sigma > 0");
  const double s2 = p.sigma * p.sigma;
  const double base = 1.0 / (p.epsilon * p.gamma);
  return v == GainVariant::slow_manifold ? base * (1.0 + 1.0 / s2)
                                         : base * (1.0 + 2.5 / s2);
}

/// Manifold coefficient c_tau = 1 - exp(-tau/epsilon).
inline double c_tau(double tau, double epsilon) {
  return 1.0 - std::exp(-tau / epsilon);
}

// ============================================================================
//  Coordinate maps
// ============================================================================

struct Vec3 {
  double a = 0.0, b = 0.0, c = 0.0;
};

/// @brief (x, y, z) -> (r, theta, z) with r = hypot(x, y) and
///        theta = atan2(y, x) wrapped into [0, 2*pi).  Throws
///        std::domain_error on the polar axis (r = 0).
inline Vec3 to_polar(double x, double y, double z) {
  const double r = std::hypot(x, y);
  if (!(r > 0.0)) throw std::domain_error("to_polar: point on the polar axis");
  double theta = std::atan2(y, x);
  if (theta < 0.0) theta += 2.0 * M_PI;
  return {r, theta, z};
}

/// (r, theta, z) -> (x, y, z).  Requires r >= 0.
inline Vec3 to_cartesian(double r, double theta, double z) {
  if (!(r >= 0.0)) throw std::domain_error("to_cartesian: negative radius");
  return {r * std::cos(theta), r * std::sin(theta), z};
}

// ============================================================================
//  SystemSpec
// ============================================================================

/// External radii/memory read by transformed systems from the coupled
/// reduced path at the same time node.
struct Coupling {
  double r_hat = 0.0;  ///< radius of the coupled reduced system
  double m = 0.0;      ///< memory value of the coupled reduced system
};

/// @brief A concrete system: identifier + parameters (+ memory-process kind
///        for the augmented family).
///
/// g_override is testing instrumentation: when set, the feedback drift of a
/// transformed system becomes sigma * g_override (a constant), bypassing the
/// state-dependent gain.  g_override = 0 makes the transformed system
/// coincide with original_polar path-for-path.
struct SystemSpec {
  SystemId id = SystemId::original_polar;
  ModelParams params{};
  MKind m_kind = MKind::cubic;
  std::optional<double> g_override{};
};

namespace detail {

inline void require_radius(double r, const char* who) {
  if (!(r >= k_radial_floor))
    throw std::domain_error(std::string(who) + ": radius below domain floor");
}

/// Drift of the memory process M.
inline double m_drift(const ModelParams& p, MKind kind, double m) {
  return kind == MKind::cubic ? -m * m * m / p.epsilon : -m / p.epsilon;
}

}  // namespace detail

// ============================================================================
//  Feedback drift of the transformed systems
// ============================================================================

/// @brief Feedback drift term sigma * g added to the radial drift of a
///        transformed system (finite even at sigma = 0):
///          slow-manifold gain:    (q + lambda) * (r_hat - r)
///          parameterizing gain:   (q + lambda) * (r_hat - r) - gamma * m * r_hat
inline double feedback_drift(const SystemSpec& spec, double r, const Coupling& cpl) {
  const ModelParams& p = spec.params;
  if (spec.g_override) return p.sigma * (*spec.g_override);
  if (spec.id == SystemId::transformed_polar) {
    const double q = q_const(p, GainVariant::slow_manifold);
    return (q + p.lambda) * (cpl.r_hat - r);
  }
  const double q = q_const(p, GainVariant::stochastic_pm);
  return (q + p.lambda) * (cpl.r_hat - r) - p.gamma * cpl.m * cpl.r_hat;
}

/// @brief Girsanov integrand g of a transformed system (feedback drift over
///        sigma).  Requires sigma > 0 unless g_override is set.
inline double girsanov_g(const SystemSpec& spec, double r, const Coupling& cpl) {
  if (spec.g_override) return *spec.g_override;
  const double s = spec.params.sigma;
  if (!(s > 0.0)) throw std::domain_error("girsanov_g: requires sigma > 0");
  return feedback_drift(spec, r, cpl) / s;
}

// ============================================================================
//  Drift
// ============================================================================

/// @brief Evaluates the drift vector at state x into out (state_dim entries).
///
/// Polar systems require r >= k_radial_floor (std::domain_error below it).
/// Transformed systems require the coupling pointer.  The angular drift is
/// the raw frequency f; the integrator owns angle wrapping.
inline void drift(const SystemSpec& spec, std::span<const double> x,
                  std::span<double> out, const Coupling* cpl = nullptr) {
  const ModelParams& p = spec.params;
  const double s2 = p.sigma * p.sigma;
  switch (spec.id) {
    case SystemId::original_cartesian: {
      const double rad2 = x[0] * x[0] + x[1] * x[1];
      out[0] = (p.lambda - p.gamma * x[2]) * x[0] - p.f * x[1];
      out[1] = p.f * x[0] + (p.lambda - p.gamma * x[2]) * x[1];
      out[2] = -(x[2] - rad2) / p.epsilon;
      return;
    }
    case SystemId::reduced_cartesian: {
      const double rad2 = x[0] * x[0] + x[1] * x[1];
      out[0] = (p.lambda - p.gamma * rad2) * x[0] - p.f * x[1];
      out[1] = p.f * x[0] + (p.lambda - p.gamma * rad2) * x[1];
      return;
    }
    case SystemId::original_polar: {
      detail::require_radius(x[0], "drift(original_polar)");
      out[0] = p.lambda * x[0] - p.gamma * x[0] * x[2] + s2 / (2.0 * x[0]);
      out[1] = p.f;
      out[2] = -(x[2] - x[0] * x[0]) / p.epsilon;
      return;
    }
    case SystemId::reduced_polar: {
      detail::require_radius(x[0], "drift(reduced_polar)");
      out[0] = p.lambda * x[0] - p.gamma * x[0] * x[0] * x[0] + s2 / (2.0 * x[0]);
      out[1] = p.f;
      return;
    }
    case SystemId::transformed_polar: {
      detail::require_radius(x[0], "drift(transformed_polar)");
      if (cpl == nullptr)
        throw std::invalid_argument("drift(transformed_polar): coupling required");
      out[0] = p.lambda * x[0] - p.gamma * x[0] * x[2] + s2 / (2.0 * x[0]) +
               feedback_drift(spec, x[0], *cpl);
      out[1] = p.f;
      out[2] = -(x[2] - x[0] * x[0]) / p.epsilon;
      return;
    }
    case SystemId::augmented_original: {
      detail::require_radius(x[0], "drift(augmented_original)");
      out[0] = p.lambda * x[0] - p.gamma * x[0] * x[2] + s2 / (2.0 * x[0]);
      out[1] = p.f;
      out[2] = -(x[2] - x[0] * x[0]) / p.epsilon;
      out[3] = detail::m_drift(p, spec.m_kind, x[3]);
      return;
    }
    case SystemId::augmented_reduced: {
      detail::require_radius(x[0], "drift(augmented_reduced)");
      if (!p.tau)
        throw std::invalid_argument("drift(augmented_reduced): tau required");
      const double c = c_tau(*p.tau, p.epsilon);
      out[0] = p.lambda * x[0] - p.gamma * c * x[0] * x[0] * x[0] +
               s2 / (2.0 * x[0]) - p.gamma * x[0] * x[2];
      out[1] = p.f;
      out[2] = detail::m_drift(p, spec.m_kind, x[2]);
      return;
    }
    case SystemId::transformed_polar_aug: {
      detail::require_radius(x[0], "drift(transformed_polar_aug)");
      if (cpl == nullptr)
        throw std::invalid_argument("drift(transformed_polar_aug): coupling required");
      out[0] = p.lambda * x[0] - p.gamma * x[0] * x[2] + s2 / (2.0 * x[0]) +
               feedback_drift(spec, x[0], *cpl);
      out[1] = p.f;
      out[2] = -(x[2] - x[0] * x[0]) / p.epsilon;
      return;
    }
  }
}

// ============================================================================
//  Diffusion (diagonal)
// ============================================================================

/// @brief Evaluates the diagonal of the diffusion matrix at state x into out
///        (state_dim entries).  sigma = 0 gives the zero matrix.
inline void diffusion_diag(const SystemSpec& spec, std::span<const double> x,
                           std::span<double> out) {
  const ModelParams& p = spec.params;
  const double se = p.sigma / std::sqrt(p.epsilon);
  switch (spec.id) {
    case SystemId::original_cartesian:
      out[0] = p.sigma; out[1] = p.sigma; out[2] = se;
      return;
    case SystemId::reduced_cartesian:
      out[0] = p.sigma; out[1] = p.sigma;
      return;
    case SystemId::original_polar:
    case SystemId::transformed_polar:
    case SystemId::transformed_polar_aug:
      detail::require_radius(x[0], "diffusion_diag");
      out[0] = p.sigma; out[1] = p.sigma / x[0]; out[2] = se;
      return;
    case SystemId::reduced_polar:
      detail::require_radius(x[0], "diffusion_diag");
      out[0] = p.sigma; out[1] = p.sigma / x[0];
      return;
    case SystemId::augmented_original:
      detail::require_radius(x[0], "diffusion_diag");
      out[0] = p.sigma; out[1] = p.sigma / x[0]; out[2] = se; out[3] = se;
      return;
    case SystemId::augmented_reduced:
      detail::require_radius(x[0], "diffusion_diag");
      out[0] = p.sigma; out[1] = p.sigma / x[0]; out[2] = se;
      return;
  }
}

}  // namespace slowfast

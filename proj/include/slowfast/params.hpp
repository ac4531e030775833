#pragma once
// ============================================================================
//  slowfast/params.hpp
//
//  Model parameters for the stochastic slow-fast Hopf normal form and the
//  registry of built-in parameter cases.
// ============================================================================

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

namespace slowfast {

/// Radial domain floor: drift/diffusion evaluators reject polar states with
/// r below this threshold, and the integrator reflects across it.
inline constexpr double k_radial_floor = 1e-8;

// ============================================================================
//  ModelParams
// ============================================================================

/// @brief Parameters of the slow-fast Hopf system
///
///   dr = (lambda*r - gamma*r*z + sigma^2/(2r)) dt + sigma dW^r
///   dtheta = f dt + (sigma/r) dW^theta
///   dz = -(z - r^2)/epsilon dt + (sigma/sqrt(epsilon)) dW^3
///
/// together with the reduction horizon tau used by the stochastic
/// parameterizing manifold h_tau.
struct ModelParams {
  double lambda = 1.0;    ///< linear instability rate (> 0)
  double f = 1.0;         ///< angular frequency (real)
  double gamma = 1.0;     ///< cubic coupling strength (> 0)
  double epsilon = 1.0;   ///< fast time-scale separation (> 0)
  double sigma = 0.1;     ///< noise amplitude (>= 0)
  std::optional<double> tau{};  ///< manifold horizon (> 0 when present)

  /// @brief Throws std::invalid_argument unless the parameter set is
  ///        admissible: lambda > 0, gamma > 0, epsilon > 0, sigma >= 0,
  ///        and tau > 0 whenever it is present.
  void validate() const {
    auto fail = [](const std::string& what) {
      throw std::invalid_argument("ModelParams: " + what);
    };
    if (!(lambda > 0.0) || !std::isfinite(lambda)) fail("lambda must be > 0");
    if (!std::isfinite(f)) fail("f must be finite");
    if (!(gamma > 0.0) || !std::isfinite(gamma)) fail("gamma must be > 0");
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) fail("epsilon must be > 0");
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) fail("sigma must be >= 0");
    if (tau && (!(*tau > 0.0) || !std::isfinite(*tau))) fail("tau must be > 0");
  }
};

// ============================================================================
//  Built-in cases
// ============================================================================

/// Identifier of a built-in parameter case.
enum class CaseId { I, II, III, IV };

/// @brief Parameters of the built-in cases.
///
/// Case III leaves epsilon free (pass it explicitly); the canonical sweep is
/// epsilon in {1e-4, 1e-2, 1e-1}.
inline ModelParams case_params(CaseId id, double case3_epsilon = 1e-2) {
  ModelParams p;
  switch (id) {
    case CaseId::I:
      p = {1e-3, 1e2, 5.6e-2, 1e-2, 0.55, {}};
      break;
    case CaseId::II:
      p = {1e-3, 10.0, 1.0, 1e-2, 0.2, {}};
      break;
    case CaseId::III:
      p = {10.0, 1.0, 50.0, case3_epsilon, 0.1, {}};
      break;
    case CaseId::IV:
      p = {1e-3, 10.0, 1.0, 10.0, 0.3, {}};
      break;
  }
  p.validate();
  return p;
}

/// @brief Parse "I" / "II" / "III" / "IV" (case-insensitive also accepts
///        "1".."4"). Throws std::invalid_argument otherwise.
inline CaseId parse_case_id(const std::string& s) {
  if (s == "I" || s == "i" || s == "1") return CaseId::I;
  if (s == "II" || s == "ii" || s == "2") return CaseId::II;
  if (s == "III" || s == "iii" || s == "3") return CaseId::III;
  if (s == "IV" || s == "iv" || s == "4") return CaseId::IV;
  throw std::invalid_argument("unknown case id: " + s);
}

inline std::string case_name(CaseId id) {
  switch (id) {
    case CaseId::I: return "I";
    case CaseId::II: return "II";
    case CaseId::III: return "III";
    case CaseId::IV: return "IV";
  }
  return "?";
}

}  // namespace slowfast

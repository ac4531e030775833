#pragma once
// ============================================================================
//  slowfast/measure.hpp
//
//  Invariant-measure estimation by time sampling of long trajectories:
//  burn-in, thinning (auto-calibrated from the radial autocorrelation),
//  marginals, moments, tail integrals, histograms, and block-based error
//  bars (batch means / effective sample size).
// ============================================================================

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "slowfast/integrate.hpp"

namespace slowfast {

// ============================================================================
//  Run controls
// ============================================================================

/// @brief Controls for estimate_invariant.  Negative burn_in selects the
///        default max(10/lambda, 10*epsilon, 50); thin = 0 selects the
///        automatic choice from a pilot autocorrelation of the radius,
///        capped at 1000 steps.
struct RunControls {
  double horizon = 100.0;        ///< sampled time span per trajectory (post burn-in)
  double dt = 0.0;               ///< step size; 0 -> default_dt(params)
  double burn_in = -1.0;         ///< discarded initial span (time units)
  std::size_t thin = 0;          ///< steps between retained samples
  std::uint64_t seed = 1;        ///< master seed
  std::size_t n_traj = 1;        ///< independent trajectories
  int threads = 1;               ///< worker threads
  bool report_grade = false;     ///< enforce >= 1e4 retained samples
};

/// Retained samples of one ensemble, row-major (n_samples x dim), with
/// trajectory boundaries preserved for honest error bars.
struct InvariantRun {
  SystemId system = SystemId::original_polar;
  int dim = 0;
  double dt = 0.0;
  double burn_in = 0.0;
  std::size_t thin = 1;
  std::vector<double> samples;
  std::vector<std::size_t> block_offsets;  ///< sample-row start per trajectory (+ end)
  std::size_t reflection_count = 0;
  std::size_t total_steps = 0;

  std::size_t n_samples() const {
    return dim == 0 ? 0 : samples.size() / static_cast<std::size_t>(dim);
  }
  double at(std::size_t row, int component) const {
    return samples[row * static_cast<std::size_t>(dim) +
                   static_cast<std::size_t>(component)];
  }
  double reflection_rate() const {
    return total_steps == 0
               ? 0.0
               : static_cast<double>(reflection_count) / static_cast<double>(total_steps);
  }
  /// Reflections are expected to be vanishingly rare in healthy runs.
  bool reflections_flagged() const { return reflection_rate() > 1e-4; }
};

// ============================================================================
//  Pilot thinning
// ============================================================================

namespace detail {

/// Integrated autocorrelation time (in steps) of a scalar series, truncated
/// at the first lag whose autocorrelation drops below 0.05.
inline double integrated_autocorr_steps(const std::vector<double>& series) {
  const std::size_t n = series.size();
  if (n < 16) return 1.0;
  const double mean = std::accumulate(series.begin(), series.end(), 0.0) /
                      static_cast<double>(n);
  double var = 0.0;
  for (double x : series) var += (x - mean) * (x - mean);
  var /= static_cast<double>(n);
  if (!(var > 0.0)) return 1.0;
  double tau = 0.5;  // lag-0 term contributes 1/2 to the one-sided sum
  const std::size_t max_lag = n / 4;
  for (std::size_t l = 1; l <= max_lag; ++l) {
    double c = 0.0;
    for (std::size_t k = 0; k + l < n; ++k)
      c += (series[k] - mean) * (series[k + l] - mean);
    c /= static_cast<double>(n - l) * var;
    if (c < 0.05) break;
    tau += c;
  }
  return 2.0 * tau;  // two-sided integrated autocorrelation time
}

}  // namespace detail

// ============================================================================
//  Invariant-measure estimation
// ============================================================================

/// @brief Samples the invariant measure of `spec`: each trajectory is
///        integrated through the burn-in, then states are retained every
///        `thin` steps across the horizon.  Trajectory seeds derive from
///        (seed, trajectory_index); a reserved pilot stream (index n_traj)
///        calibrates the automatic thinning.
inline InvariantRun estimate_invariant(const SystemSpec& spec,
                                       std::span<const double> x0,
                                       const RunControls& rc) {
  spec.params.validate();
  const ModelParams& p = spec.params;
  const double dt = rc.dt > 0.0 ? rc.dt : default_dt(p);
  const double burn_in =
      rc.burn_in >= 0.0 ? rc.burn_in
                        : std::max({10.0 / p.lambda, 10.0 * p.epsilon, 50.0});
  const auto burn_steps = static_cast<std::size_t>(std::llround(burn_in / dt));
  const auto span_steps = static_cast<std::size_t>(std::llround(rc.horizon / dt));
  if (span_steps == 0) throw std::invalid_argument("estimate_invariant: empty horizon");
  if (rc.n_traj == 0) throw std::invalid_argument("estimate_invariant: n_traj = 0");

  std::size_t thin = rc.thin;
  if (thin == 0) {
    // Pilot trajectory on the reserved stream: measure the radial
    // autocorrelation right after burn-in.
    const std::size_t pilot_len = std::min<std::size_t>(20000, span_steps);
    std::vector<double> r_series;
    r_series.reserve(pilot_len);
    const NoisePlan plan = make_plan(spec, rc.seed, rc.n_traj, dt);
    integrate_observe(spec, x0, burn_steps + pilot_len, plan,
                      [&](std::size_t k, std::span<const double> x) {
                        if (k > burn_steps) r_series.push_back(x[0]);
                      });
    const double tau_steps = detail::integrated_autocorr_steps(r_series);
    thin = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::ceil(tau_steps)), 1, 1000);
  }

  const std::size_t per_traj = span_steps / thin;
  if (per_traj == 0)
    throw std::invalid_argument("estimate_invariant: horizon shorter than thinning");
  if (rc.report_grade && per_traj * rc.n_traj < 10000)
    throw std::invalid_argument(
        "estimate_invariant: report-grade runs need at least 1e4 retained samples");

  const int dim = state_dim(spec.id);
  struct TrajResult {
    std::vector<double> rows;
    std::size_t reflections = 0;
  };
  auto results = map_trajectories(rc.n_traj, rc.threads, [&](std::uint64_t i) {
    TrajResult out;
    out.rows.reserve(per_traj * static_cast<std::size_t>(dim));
    const NoisePlan plan = make_plan(spec, rc.seed, i, dt);
    out.reflections = integrate_observe(
        spec, x0, burn_steps + per_traj * thin, plan,
        [&](std::size_t k, std::span<const double> x) {
          if (k > burn_steps && (k - burn_steps) % thin == 0)
            out.rows.insert(out.rows.end(), x.begin(), x.end());
        });
    return out;
  });

  InvariantRun run;
  run.system = spec.id;
  run.dim = dim;
  run.dt = dt;
  run.burn_in = burn_in;
  run.thin = thin;
  run.samples.reserve(rc.n_traj * per_traj * static_cast<std::size_t>(dim));
  run.block_offsets.reserve(rc.n_traj + 1);
  for (const auto& tr : results) {
    run.block_offsets.push_back(run.samples.size() / static_cast<std::size_t>(dim));
    run.samples.insert(run.samples.end(), tr.rows.begin(), tr.rows.end());
    run.reflection_count += tr.reflections;
    run.total_steps += burn_steps + per_traj * thin;
  }
  run.block_offsets.push_back(run.samples.size() / static_cast<std::size_t>(dim));
  return run;
}

// ============================================================================
//  Marginals
// ============================================================================

/// Index of the fast variable z in a system's state, or -1 if absent.
constexpr int z_component(SystemId id) {
  switch (id) {
    case SystemId::original_cartesian:
    case SystemId::original_polar:
    case SystemId::transformed_polar:
    case SystemId::augmented_original:
    case SystemId::transformed_polar_aug:
      return 2;
    default:
      return -1;
  }
}

/// Index of the memory variable M, or -1 if absent.
constexpr int m_component(SystemId id) {
  switch (id) {
    case SystemId::augmented_original: return 3;
    case SystemId::augmented_reduced: return 2;
    default: return -1;
  }
}

/// Canonical initial state: on the noise-corrected cycle radius, angle zero,
/// fast variable slaved to the squared radius, memory variable at zero.
inline std::vector<double> default_x0(const SystemSpec& spec) {
  const double rs = r_star(spec.params);
  std::vector<double> x(state_dim(spec.id), 0.0);
  x[0] = rs;
  const int zc = z_component(spec.id);
  if (zc >= 0 && static_cast<std::size_t>(zc) < x.size())
    x[static_cast<std::size_t>(zc)] = rs * rs;
  return x;
}

/// Radial marginal (computed from x, y for Cartesian systems).
inline std::vector<double> radial_marginal(const InvariantRun& run) {
  std::vector<double> out(run.n_samples());
  const bool cart = !is_polar(run.system);
  for (std::size_t k = 0; k < out.size(); ++k)
    out[k] = cart ? std::hypot(run.at(k, 0), run.at(k, 1)) : run.at(k, 0);
  return out;
}

/// Marginal of one raw state component.
inline std::vector<double> component_marginal(const InvariantRun& run, int component) {
  if (component < 0 || component >= run.dim)
    throw std::invalid_argument("component_marginal: no such component");
  std::vector<double> out(run.n_samples());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = run.at(k, component);
  return out;
}

/// Paired (r, z) samples for defect evaluation.
struct PairedRZ {
  std::vector<double> r, z;
  std::vector<std::size_t> block_offsets;
};

inline PairedRZ rz_marginal(const InvariantRun& run) {
  const int zc = z_component(run.system);
  if (zc < 0) throw std::invalid_argument("rz_marginal: system has no fast variable");
  PairedRZ out;
  out.r = radial_marginal(run);
  out.z = component_marginal(run, zc);
  out.block_offsets = run.block_offsets;
  return out;
}

// ============================================================================
//  Functionals
// ============================================================================

/// p-th absolute moment (1/N) sum |x_k|^p.
inline double moment(std::span<const double> xs, double p) {
  double s = 0.0;
  for (double x : xs) s += std::pow(std::fabs(x), p);
  return s / static_cast<double>(xs.size());
}

/// Tail integral (1/N) sum x_k 1{x_k > a}.
inline double tail_integral(std::span<const double> xs, double a) {
  double s = 0.0;
  for (double x : xs) s += x > a ? x : 0.0;
  return s / static_cast<double>(xs.size());
}

inline double mean(std::span<const double> xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

inline double variance(std::span<const double> xs) {
  const double m = mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return s / static_cast<double>(xs.size() - 1);
}

// ============================================================================
//  Block statistics
// ============================================================================

namespace detail {

/// Splits [0, n) into blocks honouring the given boundaries; boundaries are
/// subdivided evenly until at least min_blocks blocks exist.
inline std::vector<std::size_t> refine_blocks(const std::vector<std::size_t>& offsets,
                                              std::size_t n, std::size_t min_blocks) {
  std::vector<std::size_t> base = offsets;
  if (base.size() < 2) base = {0, n};
  std::size_t n_blocks = base.size() - 1;
  std::size_t split = 1;
  while (n_blocks * split < min_blocks) ++split;
  std::vector<std::size_t> out;
  out.reserve(n_blocks * split + 1);
  for (std::size_t b = 0; b + 1 < base.size(); ++b) {
    const std::size_t lo = base[b], hi = base[b + 1];
    for (std::size_t s = 0; s < split; ++s)
      out.push_back(lo + (hi - lo) * s / split);
  }
  out.push_back(n);
  return out;
}

}  // namespace detail

/// Mean, batch-means stderr, and effective sample size of a series whose
/// correlation structure is confined within the given blocks.
struct BlockStats {
  double mean = 0.0;
  double stderr_mean = 0.0;
  double ess = 0.0;
  std::size_t n_blocks = 0;
};

inline BlockStats block_stats(std::span<const double> xs,
                              const std::vector<std::size_t>& block_offsets,
                              std::size_t min_blocks = 30) {
  const std::size_t n = xs.size();
  const auto blocks = detail::refine_blocks(block_offsets, n, min_blocks);
  const std::size_t nb = blocks.size() - 1;
  std::vector<double> bm;
  bm.reserve(nb);
  double total = 0.0;
  for (std::size_t b = 0; b < nb; ++b) {
    const std::size_t lo = blocks[b], hi = blocks[b + 1];
    if (hi == lo) continue;
    double s = 0.0;
    for (std::size_t k = lo; k < hi; ++k) s += xs[k];
    total += s;
    bm.push_back(s / static_cast<double>(hi - lo));
  }
  BlockStats out;
  out.n_blocks = bm.size();
  out.mean = total / static_cast<double>(n);
  if (bm.size() < 2) return out;
  double var_bm = 0.0;
  for (double m : bm) var_bm += (m - out.mean) * (m - out.mean);
  var_bm /= static_cast<double>(bm.size() - 1);
  out.stderr_mean = std::sqrt(var_bm / static_cast<double>(bm.size()));
  const double var_pool = variance(xs);
  if (var_bm > 0.0 && var_pool > 0.0) {
    const double avg_len = static_cast<double>(n) / static_cast<double>(bm.size());
    const double tau = std::max(1.0, avg_len * var_bm / var_pool);
    out.ess = static_cast<double>(n) / tau;
  } else {
    out.ess = static_cast<double>(n);
  }
  return out;
}

// ============================================================================
//  Histograms
// ============================================================================

struct HistogramRow {
  double left = 0.0, right = 0.0, density = 0.0;
};

/// Equal-width density histogram; bounds default to the sample range.
inline std::vector<HistogramRow> histogram(std::span<const double> xs, int n_bins,
                                           double lo = 0.0, double hi = 0.0) {
  if (n_bins <= 0) throw std::invalid_argument("histogram: n_bins must be positive");
  if (xs.empty()) throw std::invalid_argument("histogram: empty sample");
  if (!(hi > lo)) {
    lo = *std::min_element(xs.begin(), xs.end());
    hi = *std::max_element(xs.begin(), xs.end());
    if (!(hi > lo)) hi = lo + 1.0;
  }
  const double w = (hi - lo) / n_bins;
  std::vector<double> counts(static_cast<std::size_t>(n_bins), 0.0);
  for (double x : xs) {
    auto b = static_cast<long>((x - lo) / w);
    b = std::clamp<long>(b, 0, n_bins - 1);
    counts[static_cast<std::size_t>(b)] += 1.0;
  }
  std::vector<HistogramRow> rows(static_cast<std::size_t>(n_bins));
  const double norm = 1.0 / (static_cast<double>(xs.size()) * w);
  for (int b = 0; b < n_bins; ++b) {
    rows[static_cast<std::size_t>(b)] = {lo + b * w, lo + (b + 1) * w,
                                         counts[static_cast<std::size_t>(b)] * norm};
  }
  return rows;
}

}  // namespace slowfast

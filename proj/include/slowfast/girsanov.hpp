#pragma once
// ============================================================================
//  slowfast/girsanov.hpp
//
//  Empirical verification machinery for the measure change that links a
//  transformed system to the original one:
//
//    D_T = exp( -Integral g dW^r  -  (1/2) Integral g^2 ds ),   E[D_T] = 1,
//
//  discretized non-anticipatively (left endpoint):
//
//    log D_T = -Sum_k g_k dW_k - (1/2) Sum_k g_k^2 dt,
//
//  which makes the discrete D an exact martingale at any step size.  On top
//  of the per-path weights this header provides
//
//    * girsanov_weights              ensemble of D_T values + diagnostics
//    * stochastic_exponential        running log D_t along one recorded pair
//    * transition_preservation_check E[phi(r_T)] vs E[D_T phi(r~_T)] battery
//    * gronwall_envelope_check       reweighted E|r^_t - r~_t|^2 against the
//                                    exponential-decay comparison envelope
//
//  Expectations under the tilted measure are always computed by importance
//  reweighting with the running density under the simulating measure; the
//  tilted dynamics are never simulated directly.
// ============================================================================

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "slowfast/integrate.hpp"
#include "slowfast/measure.hpp"
#include "slowfast/params.hpp"
#include "slowfast/rng.hpp"
#include "slowfast/systems.hpp"
#include "slowfast/wasserstein.hpp"

namespace slowfast {

// ============================================================================
//  Errors
// ============================================================================

/// Thrown when the importance weights are too degenerate to trust: the
/// effective sample size (sum w)^2 / (sum w^2) fell below the gate.
class UnreliableWeights : public std::runtime_error {
 public:
  UnreliableWeights(double ess, double gate)
      : std::runtime_error("importance weights degenerate: effective sample size " +
                           std::to_string(ess) + " below gate " + std::to_string(gate)),
        ess_(ess),
        gate_(gate) {}
  double ess() const { return ess_; }
  double gate() const { return gate_; }

 private:
  double ess_, gate_;
};

// ============================================================================
//  Running stochastic exponential
// ============================================================================

/// @brief Accumulates log D_t = -Sum g_k dW_k - (1/2) Sum g_k^2 dt step by
///        step.  Each step uses only the already-seen (g, dW) pairs, so the
///        value at any time is unaffected by later increments.  A positive
///        excursion of log D beyond the overflow threshold latches the
///        overflow flag (the path should then be excluded from averages);
///        d() is clamped at exp(threshold) so it stays finite either way.
class DAccumulator {
 public:
  explicit DAccumulator(double dt, double overflow_log_threshold = 700.0)
      : dt_(dt), limit_(overflow_log_threshold) {
    if (!(dt > 0.0)) throw std::invalid_argument("DAccumulator: dt must be > 0");
    if (!(limit_ > 0.0))
      throw std::invalid_argument("DAccumulator: overflow threshold must be > 0");
  }

  void step(double g, double dw) {
    log_d_ -= g * dw + 0.5 * g * g * dt_;
    ++n_;
    peak_ = std::max(peak_, std::fabs(log_d_));
    if (log_d_ > limit_) overflow_ = true;
  }

  double log_d() const { return log_d_; }
  double d() const { return std::exp(std::min(log_d_, limit_)); }
  bool overflow() const { return overflow_; }
  double peak_abs_log() const { return peak_; }
  std::size_t n_steps() const { return n_; }

 private:
  double dt_;
  double limit_;
  double log_d_ = 0.0;
  double peak_ = 0.0;
  std::size_t n_ = 0;
  bool overflow_ = false;
};

/// @brief Running log D_t along one recorded coupled pair (every node must be
///        recorded, i.e. record_stride == 1).  Entry k is log D at node k;
///        entry 0 is 0.
struct DSeries {
  std::vector<double> log_d;
  bool overflow = false;
};

inline DSeries stochastic_exponential(const SystemSpec& transformed,
                                      const CoupledPaths& paths,
                                      double overflow_log_threshold = 700.0) {
  const Path& red = paths.reduced;
  const Path& tr = paths.transformed;
  if (red.record_stride != 1 || tr.record_stride != 1)
    throw std::invalid_argument("stochastic_exponential: needs every node recorded");
  if (red.n_nodes() != tr.n_nodes() || red.n_nodes() != paths.radial_increments.size() + 1)
    throw std::invalid_argument("stochastic_exponential: node/increment count mismatch");
  if (tr.system != transformed.id)
    throw std::invalid_argument("stochastic_exponential: spec does not match recorded path");
  const int m_idx = m_component(red.system);
  DAccumulator acc(tr.dt, overflow_log_threshold);
  DSeries out;
  out.log_d.reserve(red.n_nodes());
  out.log_d.push_back(0.0);
  for (std::size_t k = 0; k + 1 < red.n_nodes(); ++k) {
    const auto rk = red.node(k);
    const auto tk = tr.node(k);
    const Coupling cpl{rk[0], m_idx >= 0 ? rk[static_cast<std::size_t>(m_idx)] : 0.0};
    acc.step(girsanov_g(transformed, tk[0], cpl), paths.radial_increments[k]);
    out.log_d.push_back(acc.log_d());
  }
  out.overflow = acc.overflow();
  return out;
}

// ============================================================================
//  Controls
// ============================================================================

/// @brief Controls for the measure-change checks.  The horizon is capped at
///        2 time units: past that the weight variance of the stiff cases
///        makes every estimate meaningless, and the identity being tested
///        holds per finite horizon anyway.
struct GirsanovControls {
  GainVariant variant = GainVariant::slow_manifold;
  double horizon = 1.0;  ///< T in (0, 2]
  double dt = 1e-3;
  std::size_t n_paths = 1000;
  std::uint64_t seed = 1;
  int threads = 1;
  std::optional<double> tau{};           ///< required for the memory variant
  MKind m_kind = MKind::cubic;           ///< memory-process kind (memory variant)
  std::optional<double> g_override{};    ///< test hook: constant integrand g
  double overflow_log_threshold = 700.0;
  double ess_gate = 100.0;

  void validate() const {
    if (!(horizon > 0.0) || !std::isfinite(horizon))
      throw std::invalid_argument("GirsanovControls: horizon must be > 0");
    if (horizon > 2.0 + 1e-12)
      throw std::invalid_argument("GirsanovControls: horizon capped at 2 time units");
    if (!(dt > 0.0)) throw std::invalid_argument("GirsanovControls: dt must be > 0");
    if (n_paths < 2) throw std::invalid_argument("GirsanovControls: need >= 2 paths");
    if (variant == GainVariant::stochastic_pm && (!tau || !(*tau > 0.0)))
      throw std::invalid_argument("GirsanovControls: memory variant needs tau > 0");
    if (!(ess_gate >= 1.0))
      throw std::invalid_argument("GirsanovControls: ess gate must be >= 1");
  }
};

/// The (reduced, transformed) system pair a control set describes.
inline std::pair<SystemSpec, SystemSpec> coupled_pair(const ModelParams& p,
                                                      const GirsanovControls& gc) {
  SystemSpec red, tr;
  red.params = p;
  tr.params = p;
  if (gc.variant == GainVariant::slow_manifold) {
    red.id = SystemId::reduced_polar;
    tr.id = SystemId::transformed_polar;
  } else {
    red.id = SystemId::augmented_reduced;
    tr.id = SystemId::transformed_polar_aug;
    red.params.tau = gc.tau;
    tr.params.tau = gc.tau;
    red.m_kind = gc.m_kind;
    tr.m_kind = gc.m_kind;
  }
  tr.g_override = gc.g_override;
  return {red, tr};
}

namespace detail {

/// Mean and stderr-of-mean of a sample.
inline std::pair<double, double> mean_stderr(std::span<const double> xs) {
  if (xs.empty()) return {std::numeric_limits<double>::quiet_NaN(),
                          std::numeric_limits<double>::quiet_NaN()};
  double m = 0.0;
  for (double x : xs) m += x;
  m /= static_cast<double>(xs.size());
  if (xs.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  const double var = ss / static_cast<double>(xs.size() - 1);
  return {m, std::sqrt(var / static_cast<double>(xs.size()))};
}

/// Effective sample size of weights given as logs, computed shift-stably:
/// (sum w)^2 / (sum w^2) with w = exp(log - max log).
inline double ess_from_logs(std::span<const double> log_w) {
  if (log_w.empty()) return 0.0;
  const double m = *std::max_element(log_w.begin(), log_w.end());
  double s1 = 0.0, s2 = 0.0;
  for (double lw : log_w) {
    const double w = std::exp(lw - m);
    s1 += w;
    s2 += w * w;
  }
  return s2 > 0.0 ? s1 * s1 / s2 : 0.0;
}

/// Exponential-moment scale delta = (sigma / (q + lambda))^2 / (2 gamma eps),
/// so that delta * g^2 = (r^ - r~)^2 / (2 gamma eps) for the state-dependent
/// gain.  Zero when sigma is zero (no noise, nothing to tilt).
inline double exp_moment_delta(const ModelParams& p, GainVariant v) {
  if (!(p.sigma > 0.0)) return 0.0;
  const double q = q_const(p, v);
  const double ratio = p.sigma / (q + p.lambda);
  return ratio * ratio / (2.0 * p.gamma * p.epsilon);
}

}  // namespace detail

// ============================================================================
//  Ensemble weights
// ============================================================================

/// @brief Per-path terminal weights of a coupled ensemble plus diagnostics.
///        Paths whose log-weight overflowed are excluded from every summary
///        and counted in overflow_count; the per-path vectors hold the
///        included paths in trajectory order.
struct WeightStats {
  GainVariant variant = GainVariant::slow_manifold;
  double horizon = 0.0;
  double dt = 0.0;
  std::size_t n_paths = 0;        ///< included paths
  std::size_t overflow_count = 0;
  double mean_d = 0.0;            ///< plain mean of D_T (targets 1)
  double mean_d_stderr = 0.0;
  double ess = 0.0;               ///< (sum D)^2 / (sum D^2), shift-stable
  double max_log_d = 0.0;
  double min_log_d = 0.0;
  double max_abs_log_d = 0.0;     ///< max over paths of the running |log D_t|
  double exp_moment = 0.0;        ///< mean over paths of exp(delta * max_t g_t^2)
  std::vector<double> log_d;         ///< terminal log D per included path
  std::vector<double> r_transformed; ///< terminal transformed radius
  std::vector<double> r_reduced;     ///< terminal reduced radius
};

inline WeightStats girsanov_weights(const ModelParams& p, const GirsanovControls& gc) {
  gc.validate();
  p.validate();
  const auto [red, tr] = coupled_pair(p, gc);
  const std::vector<double> x0r = default_x0(red);
  const std::vector<double> x0t = default_x0(tr);
  const auto n_steps = static_cast<std::size_t>(std::llround(gc.horizon / gc.dt));
  const bool has_m = m_component(red.id) >= 0;
  const int m_idx = m_component(red.id);
  const double delta = detail::exp_moment_delta(p, gc.variant);

  struct PathOut {
    double log_d, peak, max_g2, r_tr, r_red;
    bool overflow;
  };
  const SystemSpec& red_spec = red;
  const SystemSpec& tr_spec = tr;
  auto run_one = [&](std::uint64_t idx) -> PathOut {
    DAccumulator acc(gc.dt, gc.overflow_log_threshold);
    double max_g2 = 0.0;
    double r_tr_final = x0t[0], r_red_final = x0r[0];
    if (n_steps > 0) {
      const NoisePlan plan = make_plan(tr_spec, gc.seed, idx, gc.dt);
      integrate_coupled_observe(
          red_spec, tr_spec, x0r, x0t, n_steps, plan,
          [&](std::size_t, std::span<const double> pre_r, std::span<const double> pre_t,
              std::span<const double> dw, std::span<const double> post_r,
              std::span<const double> post_t) {
            const Coupling cpl{pre_r[0],
                               has_m ? pre_r[static_cast<std::size_t>(m_idx)] : 0.0};
            const double g = girsanov_g(tr_spec, pre_t[0], cpl);
            acc.step(g, dw[0]);
            max_g2 = std::max(max_g2, g * g);
            r_tr_final = post_t[0];
            r_red_final = post_r[0];
          });
    }
    return {acc.log_d(), acc.peak_abs_log(), max_g2, r_tr_final, r_red_final,
            acc.overflow()};
  };
  const auto outs = map_trajectories(gc.n_paths, gc.threads, run_one);

  WeightStats ws;
  ws.variant = gc.variant;
  ws.horizon = gc.horizon;
  ws.dt = gc.dt;
  ws.log_d.reserve(outs.size());
  ws.r_transformed.reserve(outs.size());
  ws.r_reduced.reserve(outs.size());
  double exp_moment_sum = 0.0;
  for (const PathOut& o : outs) {
    if (o.overflow) {
      ++ws.overflow_count;
      continue;
    }
    ws.log_d.push_back(o.log_d);
    ws.r_transformed.push_back(o.r_tr);
    ws.r_reduced.push_back(o.r_red);
    ws.max_abs_log_d = std::max(ws.max_abs_log_d, o.peak);
    exp_moment_sum += std::exp(delta * o.max_g2);
  }
  ws.n_paths = ws.log_d.size();
  if (ws.n_paths == 0)
    throw UnreliableWeights(0.0, gc.ess_gate);
  std::vector<double> d(ws.n_paths);
  for (std::size_t i = 0; i < ws.n_paths; ++i) d[i] = std::exp(ws.log_d[i]);
  const auto [md, sd] = detail::mean_stderr(d);
  ws.mean_d = md;
  ws.mean_d_stderr = sd;
  ws.ess = detail::ess_from_logs(ws.log_d);
  const auto [mn, mx] =
      std::minmax_element(ws.log_d.begin(), ws.log_d.end());
  ws.min_log_d = *mn;
  ws.max_log_d = *mx;
  ws.exp_moment = exp_moment_sum / static_cast<double>(ws.n_paths);
  return ws;
}

/// Mean and stderr of the reweighted observable d[i] * phi[i].
inline std::pair<double, double> reweighted_mean(std::span<const double> d,
                                                 std::span<const double> phi) {
  if (d.size() != phi.size())
    throw std::invalid_argument("reweighted_mean: size mismatch");
  std::vector<double> prod(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) prod[i] = d[i] * phi[i];
  return detail::mean_stderr(prod);
}

// ============================================================================
//  Transition-probability preservation
// ============================================================================

/// One observable's two-sided comparison: a plain simulation of the original
/// system against the reweighted transformed simulation.
struct BatteryRow {
  std::string observable;
  double plain_mean = 0.0;
  double plain_stderr = 0.0;
  double weighted_mean = 0.0;
  double weighted_stderr = 0.0;
  double discrepancy = 0.0;  ///< |plain - weighted|
  double ratio = 0.0;        ///< discrepancy / combined stderr
};

/// @brief Result of the measure-change checks: the weight summary plus the
///        observable battery and the distance between the reweighted
///        transformed radial marginal and the plain original one.
struct GirsanovReport {
  GainVariant coupling_variant = GainVariant::slow_manifold;
  double horizon_t = 0.0;
  double mean_d = 0.0;
  double mean_d_stderr = 0.0;
  double weighted_marginal_w1 = 0.0;
  double ess = 0.0;
  std::size_t n_paths = 0;
  std::size_t overflow_count = 0;
  double max_ratio = 0.0;  ///< worst battery discrepancy / stderr
  std::vector<BatteryRow> battery;
};

/// @brief Compares E[phi(r_T)] under the original system against
///        E[D_T phi(r~_T)] under the transformed one for a fixed battery of
///        radial observables (identity, clipped-linear at the stationary
///        radius, square, tail indicator).  The original ensemble uses
///        trajectory indices n_paths.. so it is driven by fresh noise.
///        Throws UnreliableWeights when the weight ESS falls below the gate.
inline GirsanovReport transition_preservation_check(const ModelParams& p,
                                                    const GirsanovControls& gc) {
  const WeightStats ws = girsanov_weights(p, gc);
  if (ws.ess < gc.ess_gate) throw UnreliableWeights(ws.ess, gc.ess_gate);

  // Plain original ensemble, same initial state, fresh trajectory indices.
  SystemSpec orig;
  orig.id = SystemId::original_polar;
  orig.params = p;
  const std::vector<double> x0 = default_x0(orig);
  const auto n_steps = static_cast<std::size_t>(std::llround(gc.horizon / gc.dt));
  auto run_plain = [&](std::uint64_t idx) -> double {
    double r_final = x0[0];
    if (n_steps > 0) {
      const NoisePlan plan = make_plan(orig, gc.seed, gc.n_paths + idx, gc.dt);
      integrate_observe(orig, x0, n_steps, plan,
                        [&](std::size_t, std::span<const double> x) { r_final = x[0]; });
    }
    return r_final;
  };
  const std::vector<double> plain_r = map_trajectories(gc.n_paths, gc.threads, run_plain);

  std::vector<double> d(ws.n_paths);
  for (std::size_t i = 0; i < ws.n_paths; ++i) d[i] = std::exp(ws.log_d[i]);

  const double rs = r_star(p);
  struct Obs {
    const char* name;
    double (*phi)(double, double);
  };
  static constexpr Obs k_battery[] = {
      {"identity", [](double r, double) { return r; }},
      {"clipped_linear", [](double r, double a) { return std::min(r, a); }},
      {"square", [](double r, double) { return r * r; }},
      {"tail_indicator", [](double r, double a) { return r > a ? 1.0 : 0.0; }},
  };

  GirsanovReport rep;
  rep.coupling_variant = gc.variant;
  rep.horizon_t = gc.horizon;
  rep.mean_d = ws.mean_d;
  rep.mean_d_stderr = ws.mean_d_stderr;
  rep.ess = ws.ess;
  rep.n_paths = ws.n_paths;
  rep.overflow_count = ws.overflow_count;

  std::vector<double> vals(plain_r.size());
  std::vector<double> tvals(ws.n_paths);
  for (const Obs& ob : k_battery) {
    for (std::size_t i = 0; i < plain_r.size(); ++i) vals[i] = ob.phi(plain_r[i], rs);
    const auto [pm, pse] = detail::mean_stderr(vals);
    for (std::size_t i = 0; i < ws.n_paths; ++i)
      tvals[i] = ob.phi(ws.r_transformed[i], rs);
    const auto [wm, wse] = reweighted_mean(d, tvals);
    BatteryRow row;
    row.observable = ob.name;
    row.plain_mean = pm;
    row.plain_stderr = pse;
    row.weighted_mean = wm;
    row.weighted_stderr = wse;
    row.discrepancy = std::fabs(pm - wm);
    const double se = std::sqrt(pse * pse + wse * wse);
    row.ratio = se > 0.0 ? row.discrepancy / se
                         : (row.discrepancy == 0.0
                                ? 0.0
                                : std::numeric_limits<double>::infinity());
    rep.max_ratio = std::max(rep.max_ratio, row.ratio);
    rep.battery.push_back(std::move(row));
  }

  const std::vector<double> ones(plain_r.size(), 1.0);
  rep.weighted_marginal_w1 = w1_distance_weighted(ws.r_transformed, d, plain_r, ones);
  return rep;
}

// ============================================================================
//  Exponential-decay comparison envelope
// ============================================================================

/// @brief Options of the envelope check.  envelope_m is the fixed parameter
///        of the memory-variant envelope (the inequality holds for every
///        real m); it is ignored by the memoryless variant.  q_override is
///        testing instrumentation for parameter sets where the gain constant
///        is undefined (sigma = 0 with a g_override).
struct EnvelopeOptions {
  std::size_t n_batches = 32;
  std::size_t record_every = 0;  ///< node stride; 0 = auto (about 2000 nodes)
  double envelope_m = 0.0;
  std::vector<double> x0_reduced{};      ///< empty = default initial state
  std::vector<double> x0_transformed{};  ///< empty = default initial state
  std::optional<double> q_override{};
};

/// @brief Per-time-grid comparison of the reweighted squared radial gap
///        against its exponential-decay envelope.
struct EnvelopeReport {
  GainVariant variant = GainVariant::slow_manifold;
  double horizon = 0.0;
  double dt = 0.0;
  double q = 0.0;
  double envelope_m = 0.0;
  std::size_t n_paths = 0;
  std::size_t n_batches = 0;
  std::size_t overflow_count = 0;
  double ess = 0.0;  ///< terminal-weight ESS over all paths
  std::size_t violations = 0;  ///< nodes with lhs - 3 se beyond rhs + 3 se
  double max_violation_excess = -std::numeric_limits<double>::infinity();
  std::vector<double> t, lhs, rhs, stderr_lhs, stderr_rhs;
};

/// @brief Runs the coupled ensemble and compares, at every recorded node,
///
///   lhs(t) = E_w[ (r^_t - r~_t)^2 ]     (w = running weight D_t)
///
/// against the envelope
///
///   rhs(t) = e^{-q t} (r^_0 - r_0)^2
///          + (gamma^2/q) Integral_0^t e^{-q(t-s)} E_w[ r~^2 (z~ - h)^2 ] ds
///          + 2 m gamma   Integral_0^t e^{-q(t-s)} E_w[ r~ (r^ - r~) ] ds,
///
/// where h = r~^2 for the memoryless gain and h = m + c_tau r~^2 for the
/// memory gain (the m-term is present only there).  All expectations are
/// unnormalized importance averages; the integrals are trapezoidal with the
/// exponential kernel folded into a per-path recursion.  Errors bars come
/// from batch means; a node counts as a violation when lhs - 3 se(lhs)
/// exceeds rhs + 3 se(rhs).  Throws UnreliableWeights when the terminal ESS
/// falls below the gate.
inline EnvelopeReport gronwall_envelope_check(const ModelParams& p,
                                              const GirsanovControls& gc,
                                              const EnvelopeOptions& opts = {}) {
  gc.validate();
  p.validate();
  if (opts.n_batches < 2)
    throw std::invalid_argument("gronwall_envelope_check: need >= 2 batches");
  const auto [red, tr] = coupled_pair(p, gc);
  const std::vector<double> x0r =
      opts.x0_reduced.empty() ? default_x0(red) : opts.x0_reduced;
  const std::vector<double> x0t =
      opts.x0_transformed.empty() ? default_x0(tr) : opts.x0_transformed;
  if (x0r.size() != static_cast<std::size_t>(state_dim(red.id)) ||
      x0t.size() != static_cast<std::size_t>(state_dim(tr.id)))
    throw std::invalid_argument("gronwall_envelope_check: initial state dimension");
  const auto n_steps = static_cast<std::size_t>(std::llround(gc.horizon / gc.dt));
  if (n_steps == 0)
    throw std::invalid_argument("gronwall_envelope_check: horizon/dt give zero steps");
  const std::size_t per_batch = std::max<std::size_t>(1, gc.n_paths / opts.n_batches);
  const std::size_t stride =
      opts.record_every > 0 ? opts.record_every
                            : std::max<std::size_t>(1, n_steps / 2000);
  const double q = opts.q_override ? *opts.q_override : q_const(p, gc.variant);
  const bool pm = gc.variant == GainVariant::stochastic_pm;
  const double ct = pm ? c_tau(*gc.tau, p.epsilon) : 1.0;
  const double m_fix = pm ? opts.envelope_m : 0.0;
  const double decay = std::exp(-q * gc.dt);
  const double gam2_q = p.gamma * p.gamma / q;
  const int m_idx = m_component(red.id);

  // Recorded nodes: 0, stride, 2*stride, ..., and always the final node.
  std::vector<std::size_t> nodes;
  for (std::size_t j = 0; j <= n_steps; j += stride) nodes.push_back(j);
  if (nodes.back() != n_steps) nodes.push_back(n_steps);
  const std::size_t n_rec = nodes.size();

  // h(r~, z~) residual entering the integrand.
  auto h_val = [&](double r) { return pm ? m_fix + ct * r * r : r * r; };

  struct BatchOut {
    std::vector<double> lhs, conv;  // sums over the batch's paths
    std::vector<double> log_d;      // terminal logs (for the global ESS)
    std::size_t overflow = 0;
  };
  auto run_batch = [&](std::uint64_t b) -> BatchOut {
    BatchOut out;
    out.lhs.assign(n_rec, 0.0);
    out.conv.assign(n_rec, 0.0);
    out.log_d.reserve(per_batch);
    for (std::size_t i = 0; i < per_batch; ++i) {
      const std::uint64_t idx = b * per_batch + i;
      const NoisePlan plan = make_plan(tr, gc.seed, idx, gc.dt);
      DAccumulator acc(gc.dt, gc.overflow_log_threshold);
      double s_conv = 0.0, u_conv = 0.0;
      double prev_wf = 0.0, prev_wu = 0.0;
      std::size_t rec = 0;  // next recorded-node slot
      bool primed = false;  // node-0 values folded in?
      auto fold_node = [&](std::size_t node, double w, double delta, double rt,
                           double zt, double rr) {
        const double f = w * rt * rt * (zt - h_val(rt)) * (zt - h_val(rt));
        const double u = w * rt * (rr - rt);
        if (node > 0) {
          s_conv = decay * (s_conv + 0.5 * gc.dt * prev_wf) + 0.5 * gc.dt * f;
          u_conv = decay * (u_conv + 0.5 * gc.dt * prev_wu) + 0.5 * gc.dt * u;
        }
        prev_wf = f;
        prev_wu = u;
        if (rec < n_rec && nodes[rec] == node) {
          out.lhs[rec] += w * delta * delta;
          out.conv[rec] += gam2_q * s_conv + 2.0 * m_fix * p.gamma * u_conv;
          ++rec;
        }
      };
      integrate_coupled_observe(
          red, tr, x0r, x0t, n_steps, plan,
          [&](std::size_t k, std::span<const double> pre_r,
              std::span<const double> pre_t, std::span<const double> dw,
              std::span<const double> post_r, std::span<const double> post_t) {
            if (!primed) {
              fold_node(0, 1.0, pre_r[0] - pre_t[0], pre_t[0], pre_t[2], pre_r[0]);
              primed = true;
            }
            const Coupling cpl{pre_r[0],
                               m_idx >= 0 ? pre_r[static_cast<std::size_t>(m_idx)] : 0.0};
            acc.step(girsanov_g(tr, pre_t[0], cpl), dw[0]);
            fold_node(k + 1, acc.d(), post_r[0] - post_t[0], post_t[0], post_t[2],
                      post_r[0]);
          });
      out.log_d.push_back(acc.log_d());
      if (acc.overflow()) ++out.overflow;
    }
    return out;
  };
  const auto batches =
      map_trajectories(opts.n_batches, gc.threads, run_batch);

  const double delta0 = x0r[0] - x0t[0];
  EnvelopeReport rep;
  rep.variant = gc.variant;
  rep.horizon = gc.horizon;
  rep.dt = gc.dt;
  rep.q = q;
  rep.envelope_m = m_fix;
  rep.n_paths = per_batch * opts.n_batches;
  rep.n_batches = opts.n_batches;
  rep.t.resize(n_rec);
  rep.lhs.resize(n_rec);
  rep.rhs.resize(n_rec);
  rep.stderr_lhs.resize(n_rec);
  rep.stderr_rhs.resize(n_rec);
  std::vector<double> all_logs;
  all_logs.reserve(rep.n_paths);
  for (const BatchOut& b : batches) {
    rep.overflow_count += b.overflow;
    all_logs.insert(all_logs.end(), b.log_d.begin(), b.log_d.end());
  }
  rep.ess = detail::ess_from_logs(all_logs);

  const double np = static_cast<double>(per_batch);
  std::vector<double> bl(opts.n_batches), br(opts.n_batches);
  for (std::size_t j = 0; j < n_rec; ++j) {
    const double tj = static_cast<double>(nodes[j]) * gc.dt;
    const double base = std::exp(-q * tj) * delta0 * delta0;
    for (std::size_t b = 0; b < opts.n_batches; ++b) {
      bl[b] = batches[b].lhs[j] / np;
      br[b] = base + batches[b].conv[j] / np;
    }
    const auto [lm, lse] = detail::mean_stderr(bl);
    const auto [rm, rse] = detail::mean_stderr(br);
    rep.t[j] = tj;
    rep.lhs[j] = lm;
    rep.rhs[j] = rm;
    rep.stderr_lhs[j] = lse;
    rep.stderr_rhs[j] = rse;
    const double excess = (lm - 3.0 * lse) - (rm + 3.0 * rse);
    rep.max_violation_excess = std::max(rep.max_violation_excess, excess);
    if (excess > 0.0) ++rep.violations;
  }
  if (rep.ess < gc.ess_gate) throw UnreliableWeights(rep.ess, gc.ess_gate);
  return rep;
}

}  // namespace slowfast

#pragma once
// ============================================================================
//  slowfast/integrate.hpp
//
//  Euler-Maruyama integration.  One template core drives everything:
//
//    integrate_observe          single system, per-node callback
//    integrate_coupled_observe  reduced + transformed pair sharing one
//                               increment stream, per-step callback
//    integrate / integrate_coupled   Path-recording wrappers
//    map_trajectories           deterministic index-ordered ensembles
//
//  Post-step state repair for polar systems: the angle is wrapped into
//  [0, 2*pi) and the radius is reflected across the domain floor
//  (r -> floor + (floor - r)), counting every reflection.  A non-finite
//  state aborts with BlowupError naming the offending step.
// ============================================================================

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "slowfast/params.hpp"
#include "slowfast/rng.hpp"
#include "slowfast/systems.hpp"

namespace slowfast {

// ============================================================================
//  Errors and options
// ============================================================================

/// Thrown when a state stops being finite; carries the 1-based step index.
struct BlowupError : std::runtime_error {
  BlowupError(const std::string& system, std::size_t at_step, double t)
      : std::runtime_error("numerical blowup in " + system + " at step " +
                           std::to_string(at_step) + " (t = " + std::to_string(t) + ")"),
        step(at_step) {}
  std::size_t step;
};

/// Default step size: min(epsilon, 1) / 100.
inline double default_dt(const ModelParams& p) {
  return std::min(p.epsilon, 1.0) / 100.0;
}

/// Builds the canonical NoisePlan for integrating `spec`.
inline NoisePlan make_plan(const SystemSpec& spec, std::uint64_t master_seed,
                           std::uint64_t trajectory_index, double dt) {
  return NoisePlan{master_seed, trajectory_index, noise_width(spec.id), dt};
}

namespace detail {

inline constexpr double k_two_pi = 2.0 * M_PI;

/// Reflecting radial boundary for a polar Euler step.  The floor must scale
/// with the noise increment: the radial drift carries a sigma^2/(2 r) term,
/// and reflecting at a fixed tiny radius lets a post-reflection state land at
/// r << sigma*sqrt(dt), where that term then throws the next step O(1) outward
/// (a heavy-tailed kick of size sigma^2 dt / (2 r)).  Reflecting at
/// sigma*sqrt(dt) caps the kick at half a noise increment, while the exact
/// radial law ~ r near 0 puts negligible mass below the floor.
inline double radial_floor(const ModelParams& p, double dt) {
  return std::max(k_radial_floor, p.sigma * std::sqrt(dt));
}

/// Post-step repair; returns false if the state is non-finite.
inline bool repair_state(SystemId id, double r_floor, std::span<double> x,
                         std::size_t& reflections) {
  if (is_polar(id)) {
    if (x[0] < r_floor) {
      x[0] = r_floor + (r_floor - x[0]);
      ++reflections;
    }
    x[1] = std::fmod(x[1], k_two_pi);
    if (x[1] < 0.0) x[1] += k_two_pi;
  }
  for (std::size_t i = 0; i < x.size(); ++i)
    if (!std::isfinite(x[i])) return false;
  return true;
}

/// One Euler-Maruyama update of x in place.
inline void em_step(const SystemSpec& spec, std::span<double> x,
                    std::span<const double> dw, double dt, const Coupling* cpl,
                    std::span<double> b, std::span<double> s) {
  drift(spec, x, b, cpl);
  diffusion_diag(spec, x, s);
  const int d = state_dim(spec.id);
  for (int i = 0; i < d; ++i)
    x[i] += b[i] * dt + s[i] * dw[noise_column(spec.id, i)];
}

}  // namespace detail

// ============================================================================
//  Single-system integration
// ============================================================================

/// @brief Integrates `spec` from x0 for n_steps of plan.dt, invoking
///        obs(node_index, state) at node 0 and after every step.
///        Returns the reflection count.
template <class Obs>
std::size_t integrate_observe(const SystemSpec& spec, std::span<const double> x0,
                              std::size_t n_steps, const NoisePlan& plan, Obs&& obs) {
  const int d = state_dim(spec.id);
  if (static_cast<int>(x0.size()) != d)
    throw std::invalid_argument("integrate: state dimension mismatch");
  if (plan.noise_dimension != noise_width(spec.id))
    throw std::invalid_argument("integrate: noise plan width mismatch");
  if (!(plan.dt > 0.0)) throw std::invalid_argument("integrate: dt must be > 0");
  spec.params.validate();
  if (needs_coupling(spec.id))
    throw std::invalid_argument("integrate: system requires integrate_coupled");

  double x[4], b[4], s[4], dw[4];
  std::copy(x0.begin(), x0.end(), x);
  std::span<double> xs(x, static_cast<std::size_t>(d));
  std::size_t reflections = 0;
  const double r_floor = detail::radial_floor(spec.params, plan.dt);
  if (!detail::repair_state(spec.id, r_floor, xs, reflections))
    throw BlowupError(system_name(spec.id), 0, 0.0);

  IncrementStream stream(plan);
  obs(std::size_t{0}, std::span<const double>(xs));
  for (std::size_t k = 0; k < n_steps; ++k) {
    stream.next(std::span<double>(dw, static_cast<std::size_t>(plan.noise_dimension)));
    detail::em_step(spec, xs, std::span<const double>(dw, 4), plan.dt, nullptr,
                    std::span<double>(b, 4), std::span<double>(s, 4));
    if (!detail::repair_state(spec.id, r_floor, xs, reflections))
      throw BlowupError(system_name(spec.id), k + 1, (k + 1) * plan.dt);
    obs(k + 1, std::span<const double>(xs));
  }
  return reflections;
}

// ============================================================================
//  Coupled integration
// ============================================================================

/// @brief Integrates a (reduced, transformed) pair under one increment
///        stream.  The transformed system reads the reduced radius (and
///        memory, for the parameterizing-manifold pair) at the left node of
///        every step — both systems see identical increments column by
///        column.  Per step invokes
///
///          obs(k, pre_reduced, pre_transformed, dw_row, post_reduced, post_transformed)
///
///        with pre-states at node k and post-states at node k+1.
///        Returns {reflections_reduced, reflections_transformed}.
template <class Obs>
std::pair<std::size_t, std::size_t> integrate_coupled_observe(
    const SystemSpec& reduced, const SystemSpec& transformed,
    std::span<const double> x0_reduced, std::span<const double> x0_transformed,
    std::size_t n_steps, const NoisePlan& plan, Obs&& obs) {
  if (!needs_coupling(transformed.id) || needs_coupling(reduced.id))
    throw std::invalid_argument("integrate_coupled: pass (reduced, transformed)");
  const int dr = state_dim(reduced.id);
  const int dtf = state_dim(transformed.id);
  const int width = std::max(noise_width(reduced.id), noise_width(transformed.id));
  if (plan.noise_dimension != width)
    throw std::invalid_argument("integrate_coupled: noise plan width mismatch");
  reduced.params.validate();
  transformed.params.validate();

  double xr[4], xt[4], pr[4], pt[4], b[4], s[4], dw[4];
  std::copy(x0_reduced.begin(), x0_reduced.end(), xr);
  std::copy(x0_transformed.begin(), x0_transformed.end(), xt);
  std::span<double> xrs(xr, static_cast<std::size_t>(dr));
  std::span<double> xts(xt, static_cast<std::size_t>(dtf));
  std::size_t refl_r = 0, refl_t = 0;
  const double floor_r = detail::radial_floor(reduced.params, plan.dt);
  const double floor_t = detail::radial_floor(transformed.params, plan.dt);
  if (!detail::repair_state(reduced.id, floor_r, xrs, refl_r) ||
      !detail::repair_state(transformed.id, floor_t, xts, refl_t))
    throw BlowupError("coupled pair", 0, 0.0);

  const bool has_memory = reduced.id == SystemId::augmented_reduced;
  IncrementStream stream(plan);
  for (std::size_t k = 0; k < n_steps; ++k) {
    stream.next(std::span<double>(dw, static_cast<std::size_t>(width)));
    std::copy(xr, xr + dr, pr);
    std::copy(xt, xt + dtf, pt);
    const Coupling cpl{pr[0], has_memory ? pr[2] : 0.0};
    detail::em_step(reduced, xrs, std::span<const double>(dw, 4), plan.dt, nullptr,
                    std::span<double>(b, 4), std::span<double>(s, 4));
    detail::em_step(transformed, xts, std::span<const double>(dw, 4), plan.dt, &cpl,
                    std::span<double>(b, 4), std::span<double>(s, 4));
    if (!detail::repair_state(reduced.id, floor_r, xrs, refl_r))
      throw BlowupError(system_name(reduced.id), k + 1, (k + 1) * plan.dt);
    if (!detail::repair_state(transformed.id, floor_t, xts, refl_t))
      throw BlowupError(system_name(transformed.id), k + 1, (k + 1) * plan.dt);
    obs(k, std::span<const double>(pr, static_cast<std::size_t>(dr)),
        std::span<const double>(pt, static_cast<std::size_t>(dtf)),
        std::span<const double>(dw, static_cast<std::size_t>(width)),
        std::span<const double>(xrs), std::span<const double>(xts));
  }
  return {refl_r, refl_t};
}

// ============================================================================
//  Recorded paths
// ============================================================================

/// A recorded trajectory: row-major (n_nodes x dim) states, node 0 = initial.
struct Path {
  SystemId system = SystemId::original_polar;
  double dt = 0.0;                 ///< spacing between recorded nodes / stride
  int dim = 0;
  std::size_t record_stride = 1;   ///< steps between recorded nodes
  std::vector<double> states;
  std::size_t reflection_count = 0;

  std::size_t n_nodes() const {
    return dim == 0 ? 0 : states.size() / static_cast<std::size_t>(dim);
  }
  std::span<const double> node(std::size_t k) const {
    return {states.data() + k * static_cast<std::size_t>(dim),
            static_cast<std::size_t>(dim)};
  }
  std::span<const double> back() const { return node(n_nodes() - 1); }
};

struct IntegrateOptions {
  std::size_t record_stride = 1;   ///< keep every record_stride-th node
  bool record_final_only = false;  ///< keep only nodes 0 and n_steps
};

/// @brief Integrates and records a Path.  The final node is always recorded
///        even when the stride does not divide n_steps.
inline Path integrate(const SystemSpec& spec, std::span<const double> x0, double T,
                      double dt, const NoisePlan& plan, IntegrateOptions opt = {}) {
  const auto n_steps = static_cast<std::size_t>(std::llround(T / dt));
  if (n_steps == 0) throw std::invalid_argument("integrate: T/dt rounds to zero steps");
  if (plan.dt != dt) throw std::invalid_argument("integrate: plan.dt differs from dt");
  Path path;
  path.system = spec.id;
  path.dt = dt;
  path.dim = state_dim(spec.id);
  path.record_stride = opt.record_final_only ? n_steps : std::max<std::size_t>(1, opt.record_stride);
  const std::size_t stride = path.record_stride;
  path.states.reserve((n_steps / stride + 2) * static_cast<std::size_t>(path.dim));
  path.reflection_count = integrate_observe(
      spec, x0, n_steps, plan, [&](std::size_t k, std::span<const double> x) {
        if (k % stride == 0 || k == n_steps)
          path.states.insert(path.states.end(), x.begin(), x.end());
      });
  return path;
}

/// Recorded coupled pair plus the shared radial increments (one per step).
struct CoupledPaths {
  Path reduced;
  Path transformed;
  std::vector<double> radial_increments;  ///< dW^r at every step
};

/// @brief Integrates a coupled pair, recording both paths at every node and
///        the radial increment stream.
inline CoupledPaths integrate_coupled(const SystemSpec& reduced,
                                      const SystemSpec& transformed,
                                      std::span<const double> x0_reduced,
                                      std::span<const double> x0_transformed,
                                      double T, double dt, const NoisePlan& plan) {
  const auto n_steps = static_cast<std::size_t>(std::llround(T / dt));
  if (n_steps == 0) throw std::invalid_argument("integrate_coupled: zero steps");
  CoupledPaths out;
  for (Path* p : {&out.reduced, &out.transformed}) {
    p->dt = dt;
    p->record_stride = 1;
  }
  out.reduced.system = reduced.id;
  out.reduced.dim = state_dim(reduced.id);
  out.transformed.system = transformed.id;
  out.transformed.dim = state_dim(transformed.id);
  out.reduced.states.assign(x0_reduced.begin(), x0_reduced.end());
  out.transformed.states.assign(x0_transformed.begin(), x0_transformed.end());
  out.radial_increments.reserve(n_steps);
  auto [rr, rt] = integrate_coupled_observe(
      reduced, transformed, x0_reduced, x0_transformed, n_steps, plan,
      [&](std::size_t, std::span<const double>, std::span<const double>,
          std::span<const double> dw, std::span<const double> xr,
          std::span<const double> xt) {
        out.reduced.states.insert(out.reduced.states.end(), xr.begin(), xr.end());
        out.transformed.states.insert(out.transformed.states.end(), xt.begin(), xt.end());
        out.radial_increments.push_back(dw[0]);
      });
  out.reduced.reflection_count = rr;
  out.transformed.reflection_count = rt;
  return out;
}

// ============================================================================
//  Ensembles
// ============================================================================

/// @brief Runs fn(trajectory_index) for indices 0..n-1 on `threads` workers
///        and returns results ordered by index.  Output is identical for any
///        thread count; the first exception (if any) is rethrown.
template <class Fn>
auto map_trajectories(std::size_t n, int threads, Fn&& fn)
    -> std::vector<decltype(fn(std::uint64_t{0}))> {
  using R = decltype(fn(std::uint64_t{0}));
  std::vector<R> results(n);
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) results[i] = fn(static_cast<std::uint64_t>(i));
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n || failed.load()) return;
      try {
        results[i] = fn(static_cast<std::uint64_t>(i));
      } catch (...) {
        std::scoped_lock lock(error_mutex);
        if (!error) error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<std::size_t>(workers));
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
  return results;
}

// ============================================================================
//  Binary path dump
// ============================================================================

/// @brief Writes a Path in the native binary layout: an ASCII magic,
///        integer metadata, model parameters, then little-endian float64
///        state rows.  This host is little-endian; the format is fixed to
///        little-endian.
inline void write_path_binary(const std::string& filename, const Path& path,
                              const SystemSpec& spec, const NoisePlan& plan) {
  std::ofstream out(filename, std::ios::binary);
  if (!out) throw std::runtime_error("write_path_binary: cannot open " + filename);
  auto put = [&out](const void* p, std::size_t n) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  };
  const char magic[8] = {'S', 'F', 'P', 'M', '0', '0', '0', '1'};
  put(magic, 8);
  const std::uint32_t sys = static_cast<std::uint32_t>(spec.id);
  const std::uint32_t mkind = static_cast<std::uint32_t>(spec.m_kind);
  put(&sys, 4);
  put(&mkind, 4);
  const ModelParams& p = spec.params;
  const double params[6] = {p.lambda, p.f, p.gamma, p.epsilon, p.sigma,
                            p.tau ? *p.tau : std::nan("")};
  put(params, sizeof(params));
  put(&plan.master_seed, 8);
  put(&plan.trajectory_index, 8);
  put(&path.dt, 8);
  const std::uint64_t stride = path.record_stride;
  put(&stride, 8);
  const std::uint32_t dim = static_cast<std::uint32_t>(path.dim);
  put(&dim, 4);
  const std::uint64_t n_nodes = path.n_nodes();
  put(&n_nodes, 8);
  const std::uint64_t refl = path.reflection_count;
  put(&refl, 8);
  put(path.states.data(), path.states.size() * sizeof(double));
  if (!out) throw std::runtime_error("write_path_binary: write failed");
}

/// Reads a Path written by write_path_binary; fills spec/plan metadata.
inline Path read_path_binary(const std::string& filename, SystemSpec* spec = nullptr,
                             NoisePlan* plan = nullptr) {
  std::ifstream in(filename, std::ios::binary);
  if (!in) throw std::runtime_error("read_path_binary: cannot open " + filename);
  auto get = [&in, &filename](void* p, std::size_t n) {
    in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!in) throw std::runtime_error("read_path_binary: truncated file " + filename);
  };
  char magic[8];
  get(magic, 8);
  if (std::memcmp(magic, "SFPM0001", 8) != 0)
    throw std::runtime_error("read_path_binary: bad magic in " + filename);
  std::uint32_t sys, mkind, dim;
  double params[6];
  std::uint64_t seed, traj, stride, n_nodes, refl;
  double dt;
  get(&sys, 4);
  get(&mkind, 4);
  get(params, sizeof(params));
  get(&seed, 8);
  get(&traj, 8);
  get(&dt, 8);
  get(&stride, 8);
  get(&dim, 4);
  get(&n_nodes, 8);
  get(&refl, 8);
  Path path;
  path.system = static_cast<SystemId>(sys);
  path.dt = dt;
  path.record_stride = stride;
  path.dim = static_cast<int>(dim);
  path.reflection_count = refl;
  path.states.resize(n_nodes * dim);
  get(path.states.data(), path.states.size() * sizeof(double));
  if (spec) {
    spec->id = path.system;
    spec->m_kind = static_cast<MKind>(mkind);
    spec->params = {params[0], params[1], params[2], params[3], params[4],
                    std::isnan(params[5]) ? std::optional<double>{}
                                          : std::optional<double>{params[5]}};
  }
  if (plan) *plan = NoisePlan{seed, traj, noise_width(path.system), dt};
  return path;
}

}  // namespace slowfast

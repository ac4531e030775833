#pragma once
// ============================================================================
//  slowfast/wasserstein.hpp
//
//  Exact 1-Wasserstein distance between one-dimensional empirical measures,
//  computed as the area between the two empirical CDFs (piecewise-constant,
//  no interpolation), plus a feature-battery lower bound that doubles as a
//  cross-check: sup over a dictionary of 1-Lipschitz functions of the
//  difference of means.
// ============================================================================

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "slowfast/rng.hpp"

namespace slowfast {

/// @brief Exact W1 distance between the empirical measures of two samples
///        (any sizes): integral of |F_a - F_b| over the merged support.
inline double w1_distance(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("w1_distance: empty sample");
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const double na = static_cast<double>(sa.size());
  const double nb = static_cast<double>(sb.size());
  std::size_t i = 0, j = 0;
  double acc = 0.0;
  double prev = std::numeric_limits<double>::quiet_NaN();
  while (i < sa.size() || j < sb.size()) {
    const double xa = i < sa.size() ? sa[i] : std::numeric_limits<double>::infinity();
    const double xb = j < sb.size() ? sb[j] : std::numeric_limits<double>::infinity();
    const double x = std::min(xa, xb);
    if (!std::isnan(prev))
      acc += std::fabs(static_cast<double>(i) / na - static_cast<double>(j) / nb) *
             (x - prev);
    while (i < sa.size() && sa[i] == x) ++i;
    while (j < sb.size() && sb[j] == x) ++j;
    prev = x;
  }
  return acc;
}

/// @brief Exact W1 distance between two weighted empirical measures: each
///        sample carries nonnegative weights (not necessarily normalized);
///        the distance is the area between the weight-normalized CDFs.
///        With uniform weights this coincides with w1_distance.
inline double w1_distance_weighted(std::span<const double> a,
                                   std::span<const double> wa,
                                   std::span<const double> b,
                                   std::span<const double> wb) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("w1_distance_weighted: empty sample");
  if (a.size() != wa.size() || b.size() != wb.size())
    throw std::invalid_argument("w1_distance_weighted: weight size mismatch");
  auto prepare = [](std::span<const double> xs, std::span<const double> ws) {
    std::vector<std::pair<double, double>> out(xs.size());
    double total = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      if (!(ws[k] >= 0.0) || !std::isfinite(ws[k]))
        throw std::invalid_argument("w1_distance_weighted: weights must be finite and >= 0");
      out[k] = {xs[k], ws[k]};
      total += ws[k];
    }
    if (!(total > 0.0))
      throw std::invalid_argument("w1_distance_weighted: total weight must be > 0");
    std::sort(out.begin(), out.end());
    return std::pair{out, total};
  };
  const auto [sa, ta] = prepare(a, wa);
  const auto [sb, tb] = prepare(b, wb);
  std::size_t i = 0, j = 0;
  double fa = 0.0, fb = 0.0;  // accumulated (unnormalized) CDF mass
  double acc = 0.0;
  double prev = std::numeric_limits<double>::quiet_NaN();
  while (i < sa.size() || j < sb.size()) {
    const double xa = i < sa.size() ? sa[i].first : std::numeric_limits<double>::infinity();
    const double xb = j < sb.size() ? sb[j].first : std::numeric_limits<double>::infinity();
    const double x = std::min(xa, xb);
    if (!std::isnan(prev)) acc += std::fabs(fa / ta - fb / tb) * (x - prev);
    while (i < sa.size() && sa[i].first == x) fa += sa[i++].second;
    while (j < sb.size() && sb[j].first == x) fb += sb[j++].second;
    prev = x;
  }
  return acc;
}

/// @brief Block bootstrap stderr of w1_distance: resamples whole blocks of
///        each sample (with replacement) and returns the standard deviation
///        of the replicated distances.  Blocks default to 32 contiguous
///        chunks when no boundaries are supplied.
inline double w1_block_bootstrap_stderr(
    std::span<const double> a, std::span<const double> b,
    const std::vector<std::size_t>& blocks_a, const std::vector<std::size_t>& blocks_b,
    int replicates = 200, std::uint64_t seed = 0x77AA55) {
  auto make_blocks = [](std::size_t n, const std::vector<std::size_t>& given) {
    if (given.size() >= 3) return given;  // at least 2 blocks
    std::vector<std::size_t> out;
    const std::size_t nb = std::min<std::size_t>(32, std::max<std::size_t>(2, n / 2));
    for (std::size_t k = 0; k <= nb; ++k) out.push_back(n * k / nb);
    return out;
  };
  const auto ba = make_blocks(a.size(), blocks_a);
  const auto bb = make_blocks(b.size(), blocks_b);
  std::uint64_t state = seed;
  auto next_index = [&state](std::size_t n) {
    return static_cast<std::size_t>(splitmix64(state) % n);
  };
  std::vector<double> reps;
  reps.reserve(static_cast<std::size_t>(replicates));
  std::vector<double> ra, rb;
  for (int rep = 0; rep < replicates; ++rep) {
    ra.clear();
    rb.clear();
    for (std::size_t k = 0; k + 1 < ba.size(); ++k) {
      const std::size_t pick = next_index(ba.size() - 1);
      ra.insert(ra.end(), a.begin() + static_cast<std::ptrdiff_t>(ba[pick]),
                a.begin() + static_cast<std::ptrdiff_t>(ba[pick + 1]));
    }
    for (std::size_t k = 0; k + 1 < bb.size(); ++k) {
      const std::size_t pick = next_index(bb.size() - 1);
      rb.insert(rb.end(), b.begin() + static_cast<std::ptrdiff_t>(bb[pick]),
                b.begin() + static_cast<std::ptrdiff_t>(bb[pick + 1]));
    }
    if (ra.empty() || rb.empty()) continue;
    reps.push_back(w1_distance(ra, rb));
  }
  double m = 0.0;
  for (double r : reps) m += r;
  m /= static_cast<double>(reps.size());
  double v = 0.0;
  for (double r : reps) v += (r - m) * (r - m);
  return std::sqrt(v / static_cast<double>(reps.size() - 1));
}

/// @brief Feature-battery surrogate: sup_phi |E_a phi - E_b phi| over a
///        dictionary of 1-Lipschitz functions with phi(0) = 0 (identity and
///        two-sided clamps at data-driven anchors).  Always a lower bound on
///        the W1 distance; reported as such.
inline double dual_feature_distance(std::span<const double> a,
                                    std::span<const double> b,
                                    int n_anchors = 16) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("dual_feature_distance: empty sample");
  const auto [lo_a, hi_a] = std::minmax_element(a.begin(), a.end());
  const auto [lo_b, hi_b] = std::minmax_element(b.begin(), b.end());
  const double lo = std::min(*lo_a, *lo_b), hi = std::max(*hi_a, *hi_b);
  auto mean_of = [](std::span<const double> xs, auto&& phi) {
    double s = 0.0;
    for (double x : xs) s += phi(x);
    return s / static_cast<double>(xs.size());
  };
  double best = std::fabs(mean_of(a, [](double x) { return x; }) -
                          mean_of(b, [](double x) { return x; }));
  for (int k = 0; k < n_anchors; ++k) {
    const double anchor = lo + (hi - lo) * (k + 0.5) / n_anchors;
    auto clamp_at = [anchor](double x) { return std::min(x, anchor); };
    auto hinge_at = [anchor](double x) { return std::max(x - anchor, 0.0); };
    best = std::max(best, std::fabs(mean_of(a, clamp_at) - mean_of(b, clamp_at)));
    best = std::max(best, std::fabs(mean_of(a, hinge_at) - mean_of(b, hinge_at)));
  }
  return best;
}

}  // namespace slowfast

#pragma once
// ============================================================================
//  slowfast/rng.hpp
//
//  Deterministic noise generation.  Every trajectory owns an independent
//  stream derived from (master_seed, trajectory_index) via SplitMix64
//  mixing, so ensembles are reproducible regardless of scheduling, thread
//  count, or execution order.
//
//  Normal variates use our own Marsaglia polar transform on top of raw
//  mt19937_64 words: std::normal_distribution / uniform_real_distribution
//  are implementation-defined, which would break byte-identical output
//  across standard libraries.
// ============================================================================

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace slowfast {

// ============================================================================
//  Stream splitting
// ============================================================================

/// SplitMix64 mixing step (Vigna's finalizer); bijective on 64-bit words.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// @brief Seed of the stream for one trajectory: the master seed XOR-combined
///        with the stream id, then scrambled so neighbouring ids decorrelate.
inline std::uint64_t stream_seed(std::uint64_t master_seed, std::uint64_t stream_id) {
  std::uint64_t s = master_seed ^ (stream_id * 0x9e3779b97f4a7c15ULL);
  (void)splitmix64(s);
  return splitmix64(s);
}

// ============================================================================
//  Normal sampler
// ============================================================================

/// @brief Deterministic N(0,1) sampler: mt19937_64 words mapped to uniforms
///        by (word >> 11) * 2^-53, fed through the Marsaglia polar method.
class NormalRng {
 public:
  explicit NormalRng(std::uint64_t seed) : gen_(seed) {}

  /// Uniform draw in [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  /// Standard normal draw.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform01() - 1.0;
      v = 2.0 * uniform01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double scale = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * scale;
    has_spare_ = true;
    return u * scale;
  }

 private:
  std::mt19937_64 gen_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ============================================================================
//  Noise plans
// ============================================================================

/// @brief Description of one trajectory's Brownian increment stream:
///        noise_dimension independent columns of N(0, dt) increments.
struct NoisePlan {
  std::uint64_t master_seed = 0;      ///< experiment-level seed
  std::uint64_t trajectory_index = 0; ///< stream id within the ensemble
  int noise_dimension = 1;            ///< columns drawn per step
  double dt = 1e-2;                   ///< step size (> 0)
};

/// @brief Sequential generator of the increments described by a NoisePlan.
///        next() fills one row of noise_dimension entries ~ N(0, dt).
class IncrementStream {
 public:
  explicit IncrementStream(const NoisePlan& plan)
      : rng_(stream_seed(plan.master_seed, plan.trajectory_index)),
        dim_(plan.noise_dimension),
        sqrt_dt_(std::sqrt(plan.dt)) {}

  void next(std::span<double> out) {
    for (int j = 0; j < dim_; ++j) out[j] = sqrt_dt_ * rng_.normal();
  }

  int dimension() const { return dim_; }

 private:
  NormalRng rng_;
  int dim_;
  double sqrt_dt_;
};

/// @brief Materializes `count` rows of increments (row-major,
///        count x noise_dimension) for tests and dumps.
inline std::vector<double> brownian_increments(const NoisePlan& plan, std::size_t count) {
  IncrementStream s(plan);
  std::vector<double> rows(count * static_cast<std::size_t>(plan.noise_dimension));
  for (std::size_t k = 0; k < count; ++k)
    s.next(std::span<double>(rows.data() + k * plan.noise_dimension,
                             static_cast<std::size_t>(plan.noise_dimension)));
  return rows;
}

}  // namespace slowfast

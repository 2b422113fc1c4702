#pragma once

// Fixed-step stochastic integration substrate: time grids, counter-based
// random streams and Brownian increments.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace qmon {

struct TimeGrid {
  double t0 = 0.0;
  double dt = 1.0;
  std::size_t n_steps = 1;

  TimeGrid() = default;
  // Throws ConfigError unless dt > 0 and n_steps >= 1.
  TimeGrid(double t0, double dt, std::size_t n_steps);

  // t_k = t0 + k*dt, computed from k so that no rounding accumulates.
  double time(std::size_t k) const noexcept { return t0 + static_cast<double>(k) * dt; }
  double horizon() const noexcept { return time(n_steps); }
  void validate() const;
};

// Philox4x32-10 block function (Salmon et al., Random123).
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key) noexcept;

// A reproducible random stream addressed by (seed, stream_id, lane).
//
// Every block of output is a pure function of its address, so ensemble
// members can be generated in any order or in parallel. Lanes split one
// stream into independent sub-streams used for different purposes inside a
// single trajectory (e.g. sampling an initial condition vs. driving noise).
class RngStream {
 public:
  RngStream() = default;
  RngStream(std::uint64_t seed, std::uint64_t stream_id, std::uint32_t lane = 0) noexcept
      : seed_(seed), stream_id_(stream_id), lane_(lane) {}

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t stream_id() const noexcept { return stream_id_; }
  std::uint32_t lane() const noexcept { return lane_; }

  // Fresh stream at the same address but a different lane.
  RngStream substream(std::uint32_t lane) const noexcept { return {seed_, stream_id_, lane}; }

  std::uint64_t next_u64() noexcept;
  // Uniform on (0, 1].
  double uniform() noexcept;
  double normal() noexcept;

 private:
  void refill() noexcept;

  std::uint64_t seed_ = 0;
  std::uint64_t stream_id_ = 0;
  std::uint32_t lane_ = 0;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buffer_{};
  int buffered_words_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

struct NoisePath {
  TimeGrid grid;
  std::vector<double> increments;  // dW_k ~ N(0, dt), one per step
};

// Deterministic in the stream's address; the argument is copied so repeated
// calls with the same stream return identical paths.
NoisePath sample_noise(const TimeGrid& grid, RngStream rng);

// B_{t_k} = sum_{j<k} dW_j, with B_{t_0} = 0. Returns increments.size()+1 values.
std::vector<double> brownian_partial_sums(std::span<const double> increments);
std::vector<double> brownian_partial_sums(const NoisePath& path);

// Sum groups of `factor` adjacent increments; the coarse path lives on a grid
// with factor*dt.
NoisePath coarsen(const NoisePath& fine, std::size_t factor = 2);

}  // namespace qmon

#include "qmon/core_sde.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "qmon/error.hpp"

namespace qmon {

TimeGrid::TimeGrid(double t0_, double dt_, std::size_t n_steps_) : t0(t0_), dt(dt_), n_steps(n_steps_) {
  validate();
}

void TimeGrid::validate() const {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("time step must be positive, got " + std::to_string(dt), "dt");
  if (n_steps == 0) throw ConfigError("number of steps must be at least 1", "n_steps");
  if (!std::isfinite(t0)) throw ConfigError("initial time must be finite", "t0");
}

namespace {

constexpr std::uint32_t kPhiloxM0 = 0xD2511F53u;
constexpr std::uint32_t kPhiloxM1 = 0xCD9E8D57u;
constexpr std::uint32_t kPhiloxW0 = 0x9E3779B9u;
constexpr std::uint32_t kPhiloxW1 = 0xBB67AE85u;

inline void mulhilo(std::uint32_t a, std::uint32_t b, std::uint32_t& hi, std::uint32_t& lo) noexcept {
  const std::uint64_t p = static_cast<std::uint64_t>(a) * b;
  hi = static_cast<std::uint32_t>(p >> 32);
  lo = static_cast<std::uint32_t>(p);
}

}  // namespace

std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                           std::array<std::uint32_t, 2> key) noexcept {
  for (int round = 0; round < 10; ++round) {
    if (round > 0) {
      key[0] += kPhiloxW0;
      key[1] += kPhiloxW1;
    }
    std::uint32_t hi0, lo0, hi1, lo1;
    mulhilo(kPhiloxM0, ctr[0], hi0, lo0);
    mulhilo(kPhiloxM1, ctr[2], hi1, lo1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
  }
  return ctr;
}

void RngStream::refill() noexcept {
  // 128-bit counter: low half is (lane, block), high half is the stream id.
  const std::uint64_t lo = (static_cast<std::uint64_t>(lane_) << 40) | block_;
  ++block_;
  buffer_ = philox4x32_10({static_cast<std::uint32_t>(lo), static_cast<std::uint32_t>(lo >> 32),
                           static_cast<std::uint32_t>(stream_id_), static_cast<std::uint32_t>(stream_id_ >> 32)},
                          {static_cast<std::uint32_t>(seed_), static_cast<std::uint32_t>(seed_ >> 32)});
  buffered_words_ = 4;
}

std::uint64_t RngStream::next_u64() noexcept {
  if (buffered_words_ < 2) refill();
  const std::uint64_t hi = buffer_[4 - buffered_words_];
  const std::uint64_t lo = buffer_[5 - buffered_words_];
  buffered_words_ -= 2;
  return (hi << 32) | lo;
}

double RngStream::uniform() noexcept {
  return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

double RngStream::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_normal_;
  }
  // Box-Muller on two uniforms in (0, 1].
  const double u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_normal_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

NoisePath sample_noise(const TimeGrid& grid, RngStream rng) {
  grid.validate();
  NoisePath path{grid, std::vector<double>(grid.n_steps)};
  const double scale = std::sqrt(grid.dt);
  for (auto& dw : path.increments) dw = scale * rng.normal();
  return path;
}

std::vector<double> brownian_partial_sums(std::span<const double> increments) {
  std::vector<double> sums(increments.size() + 1, 0.0);
  for (std::size_t k = 0; k < increments.size(); ++k) sums[k + 1] = sums[k] + increments[k];
  return sums;
}

std::vector<double> brownian_partial_sums(const NoisePath& path) { return brownian_partial_sums(path.increments); }

NoisePath coarsen(const NoisePath& fine, std::size_t factor) {
  if (factor == 0) throw ConfigError("coarsening factor must be positive", "factor");
  if (fine.increments.size() % factor != 0)
    throw ConfigError("step count is not a multiple of the coarsening factor", "n_steps");
  NoisePath coarse{TimeGrid(fine.grid.t0, static_cast<double>(factor) * fine.grid.dt, fine.increments.size() / factor), {}};
  coarse.increments.assign(coarse.grid.n_steps, 0.0);
  for (std::size_t k = 0; k < coarse.increments.size(); ++k)
    for (std::size_t j = 0; j < factor; ++j) coarse.increments[k] += fine.increments[factor * k + j];
  return coarse;
}

}  // namespace qmon

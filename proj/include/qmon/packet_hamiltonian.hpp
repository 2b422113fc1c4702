#pragma once

// Hamiltonian motion under position monitoring, in the single Gaussian packet
// ansatz phi(x) ~ exp(-a (x - xbar)^2 + i kbar x): the width/mean SDE, its
// stationary width a_inf, and the Langevin equations of the double-scaling
// limit (omega -> inf, ell -> 0 at fixed eps = omega^3 ell^2).

#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "qmon/core_sde.hpp"
#include "qmon/ensemble_stats.hpp"

namespace qmon {

struct PhysicalScales {
  double m = 1.0;
  double hbar = 1.0;
  double gamma = 1.0;

  double ell() const noexcept;    // ell^4 = hbar / (m gamma^2)
  double omega() const noexcept;  // omega^2 = hbar gamma^2 / m
  double eps() const noexcept;    // eps = (hbar gamma / m)^2 = omega^3 ell^2
  void validate() const;

  // m given; hbar and gamma chosen so that omega and eps take the requested values.
  static PhysicalScales double_scaling(double omega, double eps, double m = 1.0);
};

class Potential {
 public:
  enum class Kind { free, harmonic, smooth };

  static Potential free();
  // V(x) = m Omega^2 x^2 / 2.
  static Potential harmonic(double Omega, double m);
  static Potential smooth(std::string label, std::function<double(double)> V, std::function<double(double)> dV,
                          std::function<double(double)> ddV, std::function<double(double)> dddV);

  Kind kind() const noexcept { return kind_; }
  const std::string& label() const noexcept { return label_; }
  double Omega() const noexcept { return omega_; }  // harmonic only

  double V(double x) const { return v_(x); }
  double dV(double x) const { return dv_(x); }
  double ddV(double x) const { return ddv_(x); }
  double dddV(double x) const { return dddv_(x); }

 private:
  Kind kind_ = Kind::free;
  std::string label_;
  double omega_ = 0.0;
  std::function<double(double)> v_, dv_, ddv_, dddv_;
};

struct GaussianPacket {
  std::complex<double> a;  // width parameter, Re(a) > 0
  double xbar = 0.0;
  double vbar = 0.0;

  // Mean wave vector, kbar = m vbar / hbar.
  double kbar(const PhysicalScales& s) const noexcept { return s.m * vbar / s.hbar; }
};

// sqrt((1/(2 i ell^4)) (1 + i c)), principal branch.
std::complex<double> a_infinity_from_ratio(double ell, double c);
// Stationary point of the width equation for a harmonic potential of
// frequency Omega: c = Omega^2 / (2 omega^2).
std::complex<double> a_infinity(const PhysicalScales& s, double Omega);
// Same for a general potential at curvature ddV: c = ddV / (2 hbar gamma^2).
std::complex<double> a_infinity_at_curvature(const PhysicalScales& s, double ddV);

struct PacketCoefficients {
  std::complex<double> a_drift;
  double x_drift, x_noise;
  double v_drift, v_noise;
};

// gamma^2 - 2i (hbar/m) a^2 + (i/(2 hbar)) V''(xbar), and the mean-motion coefficients.
PacketCoefficients packet_coefficients(const GaussianPacket& p, const Potential& pot, const PhysicalScales& s);
// The same system written with omega and ell, harmonic potential of frequency Omega.
PacketCoefficients packet_coefficients_omega_ell(const GaussianPacket& p, double Omega, const PhysicalScales& s);

struct ValidityFlags {
  bool smooth = true;  // |V''(xbar)| < 0.1 hbar gamma^2
  bool cubic = true;   // ell |V'''(xbar)| < 0.1 |V''(xbar)|, or V''' = 0
};

ValidityFlags validity_flags(const GaussianPacket& p, const Potential& pot, const PhysicalScales& s);

struct PacketStep {
  GaussianPacket packet;
  ValidityFlags flags;  // evaluated at the pre-step mean
};

// One Euler-Maruyama step. Throws NumericalError when Re(a) <= 0 afterwards.
PacketStep packet_step(const GaussianPacket& p, const Potential& pot, const PhysicalScales& s, double dt, double dW);

struct Dispersions {
  double sigma_x, sigma_v;          // normalized to (2^-1/4 ell, 2^-3/4 omega ell) at a_inf
  double raw_sigma_x, raw_sigma_v;  // standard deviations of |phi|^2 and of the velocity distribution
};

Dispersions packet_dispersions(const GaussianPacket& p, const PhysicalScales& s);

struct PhaseSpacePoint {
  double x, v;
};

// Explicit Euler; the position update uses the pre-step velocity.
PhaseSpacePoint langevin_step(double x, double v, const Potential& pot, double m, double eps, double dt, double dW);

struct PacketRun {
  std::vector<GaussianPacket> states;  // one per time point
  std::vector<ValidityFlags> flags;    // flags[k] evaluated on states[k]
  std::size_t smooth_violations = 0, cubic_violations = 0;
};

PacketRun simulate_packet(const GaussianPacket& p0, const Potential& pot, const PhysicalScales& s,
                          const NoisePath& noise);

struct LangevinRun {
  std::vector<double> x, v;
};

LangevinRun simulate_langevin(double x0, double v0, const Potential& pot, double m, double eps,
                              const NoisePath& noise);

// x0 cos(Omega t) + sqrt(eps)/Omega * int_0^t sin(Omega (t - s)) dW_s with
// v0 = 0, the integral taken with the left-point rule on the path's increments.
std::vector<double> langevin_harmonic_exact(double x0, double Omega, double eps, const NoisePath& path);

// (eps/Omega^2) (2 Omega t - sin 2 Omega t) / (4 Omega).
double variance_closed_form(double t, double Omega, double eps);
double variance_long_time(double t, double Omega, double eps);  // eps t / (2 Omega^2)
double variance_short_time(double t, double eps);                // eps t^3 / 3

struct DoubleScalingRow {
  double omega, ell, dt;
  std::size_t n_paths;
  KsResult ks_independent;  // packet vs Langevin on independent streams
  KsResult ks_matched;      // packet vs Langevin driven by the same noise
  double mean_sup_diff, max_sup_diff;  // matched noise, sup over time of |xbar - x|
  double sigma_x, sigma_x_expected;    // at the initial a_inf; expected 2^-1/4 ell
  double x_noise_coefficient;          // gamma / (2 Re a_inf) = sqrt(eps)/omega asymptotically
  double x_noise_fixed_ell;            // sqrt(2 omega ell0^2) if ell were held at its first value
  std::size_t smooth_violations, cubic_violations;
  std::size_t failures;
};

struct DoubleScalingOptions {
  double Omega = 1.0;
  double eps = 1.0;
  std::vector<double> omegas;
  double horizon = 1.0;
  std::size_t n_paths = 2000;
  double x0 = 2.0, v0 = 0.0;
  double dt_times_omega = 1e-2;  // dt = dt_times_omega / omega; must be <= 1e-2
  std::uint64_t seed = 0;
  unsigned threads = 0;
};

// Path i of the packet ensemble and of the matched Langevin ensemble share
// stream (seed, i); the independent Langevin ensemble uses (seed, n_paths + i).
std::vector<DoubleScalingRow> double_scaling_study(const DoubleScalingOptions& options);

void write_double_scaling_csv(std::ostream& out, std::span<const DoubleScalingRow> rows);

// Columns t,xbar,vbar,re_a,im_a,sigma_x,flag_smooth,flag_cubic.
void write_packet_csv(std::ostream& out, const TimeGrid& grid, const PacketRun& run, const PhysicalScales& s);
// Columns t,x,v.
void write_langevin_csv(std::ostream& out, const TimeGrid& grid, const LangevinRun& run);

}  // namespace qmon

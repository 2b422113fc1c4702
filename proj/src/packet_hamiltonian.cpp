#include "qmon/packet_hamiltonian.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

#include "qmon/csv.hpp"
#include "qmon/error.hpp"
#include "qmon/summation.hpp"

namespace qmon {

namespace {
constexpr std::complex<double> kI{0.0, 1.0};

void require_positive(double v, const char* key) {
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(key) + " must be finite and positive", key);
}
}  // namespace

double PhysicalScales::ell() const noexcept { return std::pow(hbar / (m * gamma * gamma), 0.25); }
double PhysicalScales::omega() const noexcept { return std::sqrt(hbar * gamma * gamma / m); }
double PhysicalScales::eps() const noexcept {
  const double r = hbar * gamma / m;
  return r * r;
}

void PhysicalScales::validate() const {
  require_positive(m, "m");
  require_positive(hbar, "hbar");
  require_positive(gamma, "gamma");
}

PhysicalScales PhysicalScales::double_scaling(double omega, double eps, double m) {
  require_positive(omega, "omega");
  require_positive(eps, "eps");
  require_positive(m, "m");
  // omega^2 = hbar gamma^2 / m and eps = hbar^2 gamma^2 / m^2 give hbar = m eps / omega^2.
  const double hbar = m * eps / (omega * omega);
  const double gamma = omega * std::sqrt(m / hbar);
  return {m, hbar, gamma};
}

Potential Potential::free() {
  Potential p;
  p.kind_ = Kind::free;
  p.label_ = "free";
  auto zero = [](double) { return 0.0; };
  p.v_ = p.dv_ = p.ddv_ = p.dddv_ = zero;
  return p;
}

Potential Potential::harmonic(double Omega, double m) {
  if (!(Omega >= 0.0) || !std::isfinite(Omega)) throw ConfigError("Omega must be finite and non-negative", "Omega");
  require_positive(m, "m");
  Potential p;
  p.kind_ = Kind::harmonic;
  p.label_ = "harmonic";
  p.omega_ = Omega;
  const double k = m * Omega * Omega;
  p.v_ = [k](double x) { return 0.5 * k * x * x; };
  p.dv_ = [k](double x) { return k * x; };
  p.ddv_ = [k](double) { return k; };
  p.dddv_ = [](double) { return 0.0; };
  return p;
}

Potential Potential::smooth(std::string label, std::function<double(double)> V, std::function<double(double)> dV,
                            std::function<double(double)> ddV, std::function<double(double)> dddV) {
  if (!V || !dV || !ddV || !dddV) throw ConfigError("smooth potential needs V and three derivatives", "potential");
  Potential p;
  p.kind_ = Kind::smooth;
  p.label_ = std::move(label);
  p.v_ = std::move(V);
  p.dv_ = std::move(dV);
  p.ddv_ = std::move(ddV);
  p.dddv_ = std::move(dddV);
  return p;
}

std::complex<double> a_infinity_from_ratio(double ell, double c) {
  require_positive(ell, "ell");
  const double ell4 = ell * ell * ell * ell;
  return std::sqrt((1.0 + kI * c) / (2.0 * kI * ell4));
}

std::complex<double> a_infinity(const PhysicalScales& s, double Omega) {
  s.validate();
  const double w = s.omega();
  return a_infinity_from_ratio(s.ell(), Omega * Omega / (2.0 * w * w));
}

std::complex<double> a_infinity_at_curvature(const PhysicalScales& s, double ddV) {
  s.validate();
  return a_infinity_from_ratio(s.ell(), ddV / (2.0 * s.hbar * s.gamma * s.gamma));
}

PacketCoefficients packet_coefficients(const GaussianPacket& p, const Potential& pot, const PhysicalScales& s) {
  const double ar = p.a.real(), ai = p.a.imag();
  PacketCoefficients c;
  c.a_drift = s.gamma * s.gamma - 2.0 * kI * (s.hbar / s.m) * p.a * p.a + kI / (2.0 * s.hbar) * pot.ddV(p.xbar);
  c.x_drift = p.vbar;
  c.x_noise = s.gamma / (2.0 * ar);
  c.v_drift = -pot.dV(p.xbar) / s.m;
  c.v_noise = -s.gamma * s.hbar * ai / (s.m * ar);
  return c;
}

PacketCoefficients packet_coefficients_omega_ell(const GaussianPacket& p, double Omega, const PhysicalScales& s) {
  const double w = s.omega(), l = s.ell();
  const double ar = p.a.real(), ai = p.a.imag();
  PacketCoefficients c;
  c.a_drift = (1.0 - 2.0 * kI * l * l * l * l * p.a * p.a + kI * Omega * Omega / (2.0 * w * w)) * w / (l * l);
  c.x_drift = p.vbar;
  c.x_noise = std::sqrt(w) / (2.0 * l * ar);
  c.v_drift = -Omega * Omega * p.xbar;
  c.v_noise = -l * std::pow(w, 1.5) * ai / ar;
  return c;
}

ValidityFlags validity_flags(const GaussianPacket& p, const Potential& pot, const PhysicalScales& s) {
  const double v2 = pot.ddV(p.xbar), v3 = pot.dddV(p.xbar);
  ValidityFlags f;
  f.smooth = std::abs(v2) < 0.1 * s.hbar * s.gamma * s.gamma;
  f.cubic = v3 == 0.0 || s.ell() * std::abs(v3) < 0.1 * std::abs(v2);
  return f;
}

PacketStep packet_step(const GaussianPacket& p, const Potential& pot, const PhysicalScales& s, double dt, double dW) {
  if (!(p.a.real() > 0.0)) throw ConfigError("packet width needs Re(a) > 0", "a");
  const PacketCoefficients c = packet_coefficients(p, pot, s);
  PacketStep out{{p.a + c.a_drift * dt, p.xbar + c.x_drift * dt + c.x_noise * dW,
                  p.vbar + c.v_drift * dt + c.v_noise * dW},
                 validity_flags(p, pot, s)};
  if (!(out.packet.a.real() > 0.0) || !std::isfinite(out.packet.a.real()) || !std::isfinite(out.packet.a.imag()))
    throw NumericalError("packet width lost normalizability (Re(a) <= 0); reduce dt");
  if (!std::isfinite(out.packet.xbar) || !std::isfinite(out.packet.vbar))
    throw NumericalError("packet mean diverged; reduce dt");
  return out;
}

Dispersions packet_dispersions(const GaussianPacket& p, const PhysicalScales& s) {
  if (!(p.a.real() > 0.0)) throw ConfigError("packet width needs Re(a) > 0", "a");
  const double inv_re = (1.0 / p.a).real();
  Dispersions d;
  d.raw_sigma_x = 1.0 / std::sqrt(4.0 * p.a.real());
  d.raw_sigma_v = (s.hbar / s.m) / std::sqrt(inv_re);
  // Rescaled so that a = a_inf (Omega << omega) gives 2^-1/4 ell and 2^-3/4 omega ell.
  d.sigma_x = std::pow(2.0, 0.25) * d.raw_sigma_x;
  d.sigma_v = std::pow(2.0, -0.75) * d.raw_sigma_v;
  return d;
}

PhaseSpacePoint langevin_step(double x, double v, const Potential& pot, double m, double eps, double dt, double dW) {
  if (!(eps >= 0.0)) throw ConfigError("eps must be non-negative", "eps");
  return {x + v * dt, v - pot.dV(x) / m * dt + std::sqrt(eps) * dW};
}

PacketRun simulate_packet(const GaussianPacket& p0, const Potential& pot, const PhysicalScales& s,
                          const NoisePath& noise) {
  s.validate();
  PacketRun run;
  const std::size_t n = noise.increments.size();
  run.states.reserve(n + 1);
  run.flags.reserve(n + 1);
  run.states.push_back(p0);
  for (std::size_t k = 0; k < n; ++k) {
    const PacketStep st = packet_step(run.states.back(), pot, s, noise.grid.dt, noise.increments[k]);
    run.flags.push_back(st.flags);
    run.states.push_back(st.packet);
  }
  run.flags.push_back(validity_flags(run.states.back(), pot, s));
  for (const auto& f : run.flags) {
    run.smooth_violations += !f.smooth;
    run.cubic_violations += !f.cubic;
  }
  return run;
}

LangevinRun simulate_langevin(double x0, double v0, const Potential& pot, double m, double eps,
                              const NoisePath& noise) {
  require_positive(m, "m");
  const std::size_t n = noise.increments.size();
  LangevinRun run{std::vector<double>(n + 1), std::vector<double>(n + 1)};
  run.x[0] = x0;
  run.v[0] = v0;
  for (std::size_t k = 0; k < n; ++k) {
    const auto next = langevin_step(run.x[k], run.v[k], pot, m, eps, noise.grid.dt, noise.increments[k]);
    run.x[k + 1] = next.x;
    run.v[k + 1] = next.v;
  }
  return run;
}

std::vector<double> langevin_harmonic_exact(double x0, double Omega, double eps, const NoisePath& path) {
  require_positive(Omega, "Omega");
  if (!(eps >= 0.0)) throw ConfigError("eps must be non-negative", "eps");
  // int_0^t sin(Omega(t - s)) dW_s = sin(Omega t) C(t) - cos(Omega t) S(t)
  // with C, S the running sums of cos(Omega s) dW_s and sin(Omega s) dW_s.
  const std::size_t n = path.increments.size();
  const double dt = path.grid.dt;
  const double scale = std::sqrt(eps) / Omega;
  std::vector<double> x(n + 1);
  CompensatedSum C, S;
  for (std::size_t k = 0; k <= n; ++k) {
    const double t = dt * static_cast<double>(k);
    x[k] = x0 * std::cos(Omega * t) + scale * (std::sin(Omega * t) * C.value() - std::cos(Omega * t) * S.value());
    if (k == n) break;
    C.add(std::cos(Omega * t) * path.increments[k]);
    S.add(std::sin(Omega * t) * path.increments[k]);
  }
  return x;
}

double variance_closed_form(double t, double Omega, double eps) {
  require_positive(Omega, "Omega");
  if (!(t >= 0.0)) throw ConfigError("time must be non-negative", "t");
  const double u = 2.0 * Omega * t;
  // u - sin u, by its series where the difference cancels.
  double diff;
  if (u < 1e-2) {
    const double u3 = u * u * u;
    diff = u3 / 6.0 - u3 * u * u / 120.0 + u3 * u3 * u / 5040.0;
  } else {
    diff = u - std::sin(u);
  }
  return eps / (Omega * Omega) * diff / (4.0 * Omega);
}

double variance_long_time(double t, double Omega, double eps) { return eps * t / (2.0 * Omega * Omega); }
double variance_short_time(double t, double eps) { return eps * t * t * t / 3.0; }

std::vector<DoubleScalingRow> double_scaling_study(const DoubleScalingOptions& o) {
  require_positive(o.Omega, "Omega");
  require_positive(o.eps, "eps");
  require_positive(o.horizon, "horizon");
  if (o.omegas.empty()) throw ConfigError("double scaling study needs at least one omega", "omegas");
  if (!(o.dt_times_omega > 0.0) || o.dt_times_omega > 1e-2)
    throw ConfigError("time step must satisfy dt <= 1e-2 / omega to resolve the collapse", "dt");
  if (o.n_paths < 100) throw ConfigError("double scaling study needs at least 100 paths", "n_paths");

  std::vector<DoubleScalingRow> rows;
  const double ell0 = PhysicalScales::double_scaling(o.omegas.front(), o.eps).ell();
  for (double omega : o.omegas) {
    const PhysicalScales s = PhysicalScales::double_scaling(omega, o.eps);
    const Potential pot = Potential::harmonic(o.Omega, s.m);
    const double dt = o.dt_times_omega / omega;
    const double steps = std::round(o.horizon / dt);
    const TimeGrid grid(0.0, o.horizon / steps, static_cast<std::size_t>(steps));
    const GaussianPacket p0{a_infinity(s, o.Omega), o.x0, o.v0};

    struct PathOut {
      double packet_end, matched_end, independent_end, sup_diff;
      std::size_t smooth_violations, cubic_violations;
    };
    auto mapped = parallel_map<PathOut>(
        o.n_paths,
        [&](std::size_t i) {
          const NoisePath noise = sample_noise(grid, RngStream(o.seed, i));
          const PacketRun packet = simulate_packet(p0, pot, s, noise);
          const LangevinRun matched = simulate_langevin(o.x0, o.v0, pot, s.m, o.eps, noise);
          const LangevinRun independent =
              simulate_langevin(o.x0, o.v0, pot, s.m, o.eps, sample_noise(grid, RngStream(o.seed, o.n_paths + i)));
          double sup = 0.0;
          for (std::size_t k = 0; k < matched.x.size(); ++k)
            sup = std::max(sup, std::abs(packet.states[k].xbar - matched.x[k]));
          return PathOut{packet.states.back().xbar, matched.x.back(), independent.x.back(), sup,
                         packet.smooth_violations, packet.cubic_violations};
        },
        o.threads);

    std::vector<double> packet_end, matched_end, independent_end, sup;
    DoubleScalingRow row{};
    for (const auto& v : mapped.values) {
      if (!v) continue;
      packet_end.push_back(v->packet_end);
      matched_end.push_back(v->matched_end);
      independent_end.push_back(v->independent_end);
      sup.push_back(v->sup_diff);
      row.smooth_violations += v->smooth_violations;
      row.cubic_violations += v->cubic_violations;
    }
    row.omega = omega;
    row.ell = s.ell();
    row.dt = grid.dt;
    row.n_paths = packet_end.size();
    row.failures = mapped.failures.size();
    row.ks_independent = ks_two_sample(packet_end, independent_end);
    row.ks_matched = ks_two_sample(packet_end, matched_end);
    row.mean_sup_diff = sample_stats(sup).mean;
    row.max_sup_diff = *std::max_element(sup.begin(), sup.end());
    row.sigma_x = packet_dispersions(p0, s).sigma_x;
    row.sigma_x_expected = std::pow(2.0, -0.25) * s.ell();
    row.x_noise_coefficient = s.gamma / (2.0 * p0.a.real());
    row.x_noise_fixed_ell = std::sqrt(2.0 * omega * ell0 * ell0);
    rows.push_back(row);
  }
  return rows;
}

void write_double_scaling_csv(std::ostream& out, std::span<const DoubleScalingRow> rows) {
  CsvWriter csv(out, {"omega", "ell", "dt", "n_paths", "ks_independent", "ks_matched", "ks_critical",
                      "mean_sup_diff", "max_sup_diff", "sigma_x", "sigma_x_expected", "x_noise", "x_noise_fixed_ell",
                      "smooth_violations", "cubic_violations", "failures"});
  csv.comment("ks_*: two-sample KS distance between packet and Langevin endpoint laws; ks_critical: 1% level");
  csv.comment("x_noise_fixed_ell: position noise sqrt(2 omega ell^2) if ell were frozen at the first omega");
  for (const auto& r : rows)
    csv.row({r.omega, r.ell, r.dt, static_cast<double>(r.n_paths), r.ks_independent.statistic,
             r.ks_matched.statistic, r.ks_independent.critical_value, r.mean_sup_diff, r.max_sup_diff, r.sigma_x,
             r.sigma_x_expected, r.x_noise_coefficient, r.x_noise_fixed_ell, static_cast<double>(r.smooth_violations),
             static_cast<double>(r.cubic_violations), static_cast<double>(r.failures)});
}

void write_packet_csv(std::ostream& out, const TimeGrid& grid, const PacketRun& run, const PhysicalScales& s) {
  CsvWriter csv(out, {"t", "xbar", "vbar", "re_a", "im_a", "sigma_x", "flag_smooth", "flag_cubic"});
  csv.comment("xbar, vbar: packet mean position and velocity; a: complex width (1/length^2)");
  csv.comment("sigma_x: normalized position dispersion; flags are 1 when the validity condition holds");
  for (std::size_t k = 0; k < run.states.size(); ++k) {
    const auto& p = run.states[k];
    csv.row({grid.time(k), p.xbar, p.vbar, p.a.real(), p.a.imag(), packet_dispersions(p, s).sigma_x,
             run.flags[k].smooth ? 1.0 : 0.0, run.flags[k].cubic ? 1.0 : 0.0});
  }
}

void write_langevin_csv(std::ostream& out, const TimeGrid& grid, const LangevinRun& run) {
  CsvWriter csv(out, {"t", "x", "v"});
  csv.comment("Langevin trajectory: dx = v dt, dv = -V'(x)/m dt + sqrt(eps) dW");
  for (std::size_t k = 0; k < run.x.size(); ++k) csv.row({grid.time(k), run.x[k], run.v[k]});
}

}  // namespace qmon

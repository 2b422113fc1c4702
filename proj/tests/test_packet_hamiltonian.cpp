#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "qmon/error.hpp"
#include "qmon/packet_hamiltonian.hpp"

using namespace qmon;
using cd = std::complex<double>;

namespace {
const double kPi = std::numbers::pi;

std::vector<double> langevin_ensemble_at(const Potential& pot, double eps, double x0, double dt, std::size_t steps,
                                         std::size_t n, std::uint64_t seed) {
  std::vector<double> xs;
  for (std::uint64_t i = 0; i < n; ++i) {
    RngStream rng(seed, i);
    double x = x0, v = 0.0;
    const double sdt = std::sqrt(dt);
    for (std::size_t k = 0; k < steps; ++k) {
      const auto p = langevin_step(x, v, pot, 1.0, eps, dt, sdt * rng.normal());
      x = p.x;
      v = p.v;
    }
    xs.push_back(x);
  }
  return xs;
}
}  // namespace

TEST_CASE("physical scales") {
  for (const PhysicalScales s : {PhysicalScales{1.0, 1.0, 1.0}, PhysicalScales{2.0, 0.3, 5.0}, PhysicalScales{0.1, 7.0, 0.2}}) {
    const double l = s.ell(), w = s.omega();
    CHECK(std::pow(l, 4) * s.m * s.gamma * s.gamma == doctest::Approx(s.hbar).epsilon(1e-12));
    CHECK(w * w * s.m == doctest::Approx(s.hbar * s.gamma * s.gamma).epsilon(1e-12));
    CHECK(s.eps() == doctest::Approx(std::pow(s.hbar * s.gamma / s.m, 2)).epsilon(1e-12));
    CHECK(s.eps() == doctest::Approx(w * w * w * l * l).epsilon(1e-12));
    CHECK(w / (l * l) == doctest::Approx(s.gamma * s.gamma).epsilon(1e-12));
  }
  const auto d = PhysicalScales::double_scaling(30.0, 2.0, 1.5);
  CHECK(d.omega() == doctest::Approx(30.0).epsilon(1e-12));
  CHECK(d.eps() == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(d.m == 1.5);
  CHECK_THROWS_AS((PhysicalScales{0.0, 1.0, 1.0}.validate()), ConfigError);
}

TEST_CASE("stationary width") {
  const PhysicalScales unit{1.0, 1.0, 1.0};
  const cd a0 = a_infinity(unit, 0.0);
  CHECK(a0.real() == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(a0.imag() == doctest::Approx(-0.5).epsilon(1e-14));

  const cd a1 = a_infinity_from_ratio(1.0, 1.0);
  CHECK(a1.real() == doctest::Approx(0.7769).epsilon(1e-4));
  CHECK(a1.imag() == doctest::Approx(-0.3218).epsilon(1e-3));
  CHECK(std::abs(a1 - std::pow(2.0, -0.25) * std::polar(1.0, -kPi / 8.0)) <= 1e-14);

  SUBCASE("fixed point of the implemented drift") {
    for (const PhysicalScales s : {unit, PhysicalScales{2.0, 0.3, 5.0}})
      for (double Omega : {0.0, 0.3, 1.0, 4.0}) {
        const Potential pot = Potential::harmonic(Omega, s.m);
        const GaussianPacket p{a_infinity(s, Omega), 0.7, -0.2};
        CHECK(p.a.real() > 0.0);
        const auto c = packet_coefficients(p, pot, s);
        CHECK(std::abs(c.a_drift) <= 1e-12 * std::max(1.0, s.gamma * s.gamma));
        CHECK(std::abs(a_infinity_at_curvature(s, pot.ddV(0.7)) - p.a) <= 1e-14);
      }
  }
  SUBCASE("both coefficient forms agree") {
    for (const PhysicalScales s : {unit, PhysicalScales{2.0, 0.3, 5.0}, PhysicalScales{0.5, 2.0, 0.7}})
      for (double Omega : {0.0, 0.5, 2.0}) {
        const GaussianPacket p{cd(0.4, -0.9), 1.3, 0.4};
        const auto a = packet_coefficients(p, Potential::harmonic(Omega, s.m), s);
        const auto b = packet_coefficients_omega_ell(p, Omega, s);
        const double scale = std::max({1.0, std::abs(a.a_drift), std::abs(a.x_noise), std::abs(a.v_noise)});
        CHECK(std::abs(a.a_drift - b.a_drift) <= 1e-12 * scale);
        CHECK(std::abs(a.x_drift - b.x_drift) <= 1e-12 * scale);
        CHECK(std::abs(a.x_noise - b.x_noise) <= 1e-12 * scale);
        CHECK(std::abs(a.v_drift - b.v_drift) <= 1e-12 * scale);
        CHECK(std::abs(a.v_noise - b.v_noise) <= 1e-12 * scale);
      }
  }
}

TEST_CASE("packet step") {
  const PhysicalScales s{1.0, 1.0, 1.0};
  SUBCASE("free packet at a_inf drifts without changing width") {
    GaussianPacket p{a_infinity(s, 0.0), 0.0, 0.3};
    for (int k = 0; k < 100; ++k) {
      const auto r = packet_step(p, Potential::free(), s, 1e-3, 0.0);
      CHECK(std::abs(r.packet.a - p.a) <= 1e-12);
      CHECK(r.packet.xbar == doctest::Approx(p.xbar + 0.3e-3).epsilon(1e-14));
      CHECK(r.packet.vbar == p.vbar);
      p = r.packet;
    }
  }
  SUBCASE("collapse transient within 5 / omega") {
    for (const PhysicalScales sc : {s, PhysicalScales{1.0, 0.5, 4.0}}) {
      const double w = sc.omega();
      for (double Omega : {0.0, 0.5 * w}) {
        const Potential pot = Potential::harmonic(Omega, sc.m);
        const cd target = a_infinity(sc, Omega);
        GaussianPacket p{0.1 * target, 0.0, 0.0};
        const double dt = 1e-3 / w;
        for (int k = 0; k < 5000; ++k) p = packet_step(p, pot, sc, dt, 0.0).packet;
        CHECK(std::abs(p.a - target) < 0.05 * std::abs(target));
      }
    }
  }
  SUBCASE("width flow contracts to a_inf from several starts") {
    const Potential pot = Potential::harmonic(0.7, 1.0);
    const cd target = a_infinity(s, 0.7);
    for (cd start : {cd(0.05, 0.0), cd(3.0, 2.0), cd(0.2, -1.0), cd(1.0, 0.5)}) {
      GaussianPacket p{start, 0.0, 0.0};
      for (int k = 0; k < 40000; ++k) p = packet_step(p, pot, s, 1e-3, 0.0).packet;
      CHECK(std::abs(p.a - target) <= 1e-10);
    }
  }
  SUBCASE("loss of normalizability is a numerical failure") {
    const GaussianPacket p{cd(0.1, -10.0), 0.0, 0.0};
    CHECK_THROWS_AS(packet_step(p, Potential::free(), s, 1.0, 0.0), NumericalError);
  }
  SUBCASE("validity flags") {
    const auto quartic = Potential::smooth("quartic", [](double x) { return x * x * x * x; },
                                           [](double x) { return 4 * x * x * x; }, [](double x) { return 12 * x * x; },
                                           [](double x) { return 24 * x; });
    const GaussianPacket near{a_infinity(s, 0.0), 0.05, 0.0};
    auto f = validity_flags(near, quartic, s);
    CHECK(f.smooth);
    CHECK_FALSE(f.cubic);  // ell V''' = 1.2 > 0.1 V'' = 0.003
    const GaussianPacket far{a_infinity(s, 0.0), 3.0, 0.0};
    CHECK_FALSE(validity_flags(far, quartic, s).smooth);
    const auto h = validity_flags(near, Potential::harmonic(0.1, 1.0), s);
    CHECK(h.smooth);
    CHECK(h.cubic);
    CHECK_FALSE(validity_flags(near, Potential::harmonic(1.0, 1.0), s).smooth);

    const auto run = simulate_packet(far, quartic, s, NoisePath{TimeGrid(0.0, 1e-4, 10), std::vector<double>(10, 0.0)});
    CHECK(run.states.size() == 11);
    CHECK(run.smooth_violations == 11);
  }
  SUBCASE("harmonic potential derivatives") {
    const auto h = Potential::harmonic(1.5, 2.0);
    CHECK(h.V(0.4) == doctest::Approx(0.5 * 2.0 * 2.25 * 0.16));
    CHECK(h.dV(0.4) == doctest::Approx(2.0 * 2.25 * 0.4));
    CHECK(h.ddV(0.4) == doctest::Approx(2.0 * 2.25));
    CHECK(h.dddV(0.4) == 0.0);
  }
}

TEST_CASE("dispersions") {
  const PhysicalScales unit{1.0, 1.0, 1.0};
  const auto d = packet_dispersions({a_infinity(unit, 0.0), 0.0, 0.0}, unit);
  CHECK(d.sigma_x == doctest::Approx(0.8409).epsilon(1e-4));
  CHECK(d.sigma_v == doctest::Approx(0.5946).epsilon(1e-4));
  CHECK(d.sigma_x == doctest::Approx(std::pow(2.0, -0.25)).epsilon(1e-14));
  CHECK(d.sigma_v == doctest::Approx(std::pow(2.0, -0.75)).epsilon(1e-14));
  CHECK(d.raw_sigma_x == doctest::Approx(std::sqrt(0.5)).epsilon(1e-14));

  for (const PhysicalScales s : {PhysicalScales{2.0, 0.3, 5.0}, PhysicalScales{0.5, 2.0, 0.7}}) {
    const auto e = packet_dispersions({a_infinity(s, 0.0), 0.0, 0.0}, s);
    CHECK(e.sigma_x == doctest::Approx(std::pow(2.0, -0.25) * s.ell()).epsilon(1e-12));
    CHECK(e.sigma_v / e.sigma_x == doctest::Approx(s.omega() / std::sqrt(2.0)).epsilon(1e-12));
  }
  const cd a(0.3, -0.2);
  const auto narrow = packet_dispersions({cd(0.6, -0.2), 0.0, 0.0}, unit);
  CHECK(packet_dispersions({a, 0.0, 0.0}, unit).sigma_x / narrow.sigma_x == doctest::Approx(std::sqrt(2.0)).epsilon(1e-14));
}

TEST_CASE("Langevin limit") {
  SUBCASE("eps = 0 conserves energy over a period") {
    const auto pot = Potential::harmonic(1.0, 1.0);
    double x = 2.0, v = 0.0;
    const double e0 = 0.5 * v * v + 0.5 * x * x;
    const auto n = static_cast<std::size_t>(std::llround(2.0 * kPi / 1e-4));
    for (std::size_t k = 0; k < n; ++k) {
      const auto p = langevin_step(x, v, pot, 1.0, 0.0, 1e-4, 0.0);
      x = p.x;
      v = p.v;
    }
    CHECK(std::abs(0.5 * v * v + 0.5 * x * x - e0) <= 0.01 * e0);
  }
  SUBCASE("free particle: Var(x_1) = eps / 3") {
    const auto xs = langevin_ensemble_at(Potential::free(), 1.0, 0.0, 1e-3, 1000, 10000, 30);
    const auto st = sample_stats(xs);
    CHECK(within_se(st.variance, 1.0 / 3.0, (1.0 / 3.0) * std::sqrt(2.0 / 9999.0)));
  }
  SUBCASE("trapped particle: mean path follows 2 cos t") {
    const TimeGrid grid(0.0, 1e-3, 3142);
    const std::vector<std::size_t> idx{0, 500, 1000, 1571, 2500, 3142};
    std::vector<double> times;
    for (auto k : idx) times.push_back(grid.time(k));
    const auto pot = Potential::harmonic(1.0, 1.0);
    const auto ens = run_ensemble("x", times, 2000, 31, [&](const RngStream& rng) {
      const auto run = simulate_langevin(2.0, 0.0, pot, 1.0, 1.0, sample_noise(grid, rng));
      std::vector<double> out;
      for (auto k : idx) out.push_back(run.x[k]);
      return out;
    }, 1);
    for (const auto& ts : ens.report.per_time)
      CHECK(within_se(ts.stats.mean, 2.0 * std::cos(ts.time), std::max(ts.stats.std_error, 1e-12)));
  }
}

TEST_CASE("exact harmonic solution") {
  const TimeGrid grid(0.0, 1e-4, static_cast<std::size_t>(std::llround(2.0 * kPi / 1e-4)));
  SUBCASE("eps = 0 is the cosine") {
    const auto x = langevin_harmonic_exact(2.0, 1.3, 0.0, sample_noise(grid, RngStream(40, 0)));
    for (std::size_t k = 0; k < x.size(); k += 997) CHECK(std::abs(x[k] - 2.0 * std::cos(1.3 * grid.time(k))) <= 1e-12);
  }
  SUBCASE("Euler on the same path stays within 1e-2") {
    const auto noise = sample_noise(grid, RngStream(41, 0));
    const auto exact = langevin_harmonic_exact(2.0, 1.0, 1.0, noise);
    const auto euler = simulate_langevin(2.0, 0.0, Potential::harmonic(1.0, 1.0), 1.0, 1.0, noise);
    double sup = 0.0;
    for (std::size_t k = 0; k < exact.size(); ++k) sup = std::max(sup, std::abs(exact[k] - euler.x[k]));
    CHECK(sup <= 1e-2);
  }
  SUBCASE("Var(x_pi) = pi / 2") {
    const TimeGrid g(0.0, kPi / 2000.0, 2000);
    std::vector<double> xs;
    for (std::uint64_t i = 0; i < 10000; ++i)
      xs.push_back(langevin_harmonic_exact(0.5, 1.0, 1.0, sample_noise(g, RngStream(42, i))).back());
    const auto st = sample_stats(xs);
    CHECK(within_se(st.variance, kPi / 2.0, (kPi / 2.0) * std::sqrt(2.0 / 9999.0)));
    CHECK(within_se(st.mean, -0.5, st.std_error));
  }
  SUBCASE("strong order of the Euler scheme") {
    const TimeGrid fine(0.0, 1e-4, 20000);
    std::vector<double> dts{1e-2, 1e-3, 1e-4}, errs(3, 0.0);
    const int n = 20;
    for (std::uint64_t i = 0; i < n; ++i) {
      const auto f = sample_noise(fine, RngStream(43, i));
      const auto mid = coarsen(f, 10);
      const std::vector<NoisePath> paths{coarsen(mid, 10), mid, f};
      for (std::size_t j = 0; j < 3; ++j) {
        const auto exact = langevin_harmonic_exact(2.0, 1.0, 1.0, paths[j]);
        const auto euler = simulate_langevin(2.0, 0.0, Potential::harmonic(1.0, 1.0), 1.0, 1.0, paths[j]);
        double sup = 0.0;
        for (std::size_t k = 0; k < exact.size(); ++k) sup = std::max(sup, std::abs(exact[k] - euler.x[k]));
        errs[j] += sup / n;
      }
    }
    const auto fit = convergence_order_fit(dts, errs);
    MESSAGE("strong order " << fit.slope);
    CHECK(fit.slope >= 0.5);
  }
}

TEST_CASE("variance law") {
  CHECK(variance_closed_form(0.0, 1.0, 1.0) == 0.0);
  CHECK(variance_closed_form(100.0, 1.0, 1.0) / variance_long_time(100.0, 1.0, 1.0) == doctest::Approx(1.0).epsilon(1e-2));
  CHECK(variance_closed_form(0.01, 1.0, 1.0) / variance_short_time(0.01, 1.0) == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(variance_closed_form(kPi, 1.0, 1.0) == doctest::Approx(kPi / 2.0).epsilon(1e-14));
  // the small-argument branch joins the direct formula continuously
  for (double t : {1e-6, 4.99e-3, 5.01e-3, 1e-2})
    CHECK(variance_closed_form(t, 1.0, 2.0) == doctest::Approx(2.0 * t * t * t / 3.0 * (1.0 - t * t / 5.0)).epsilon(1e-9));

  const auto pot = Potential::harmonic(1.0, 1.0);
  const std::vector<double> ts{0.1, 1.0, kPi, 10.0};
  const double dt = 1e-3;
  const TimeGrid grid(0.0, dt, 10000);
  std::vector<std::size_t> idx;
  for (double t : ts) idx.push_back(static_cast<std::size_t>(std::llround(t / dt)));
  std::vector<std::vector<double>> at(ts.size());
  for (std::uint64_t i = 0; i < 2000; ++i) {
    const auto run = simulate_langevin(2.0, 0.0, pot, 1.0, 1.0, sample_noise(grid, RngStream(44, i)));
    for (std::size_t j = 0; j < ts.size(); ++j) at[j].push_back(run.x[idx[j]]);
  }
  for (std::size_t j = 0; j < ts.size(); ++j) {
    const auto st = sample_stats(at[j]);
    const double v = variance_closed_form(grid.time(idx[j]), 1.0, 1.0);
    INFO("t = " << ts[j]);
    CHECK(within_se(st.variance, v, v * std::sqrt(2.0 / 1999.0)));
  }
}

TEST_CASE("double-scaling study") {
  DoubleScalingOptions opt;
  opt.omegas = {10.0, 30.0};
  opt.horizon = 0.2;
  opt.n_paths = 200;
  opt.seed = 45;
  opt.threads = 1;
  const auto rows = double_scaling_study(opt);
  REQUIRE(rows.size() == 2);
  for (const auto& r : rows) {
    // the start is a_inf at Omega = 1, which differs from the Omega = 0 width at order (Omega / omega)^2
    CHECK(r.sigma_x == doctest::Approx(r.sigma_x_expected).epsilon(1.0 / (r.omega * r.omega)));
    CHECK(r.sigma_x_expected == doctest::Approx(std::pow(2.0, -0.25) * std::sqrt(1.0 / std::pow(r.omega, 3))).epsilon(1e-12));
    CHECK(r.ell == doctest::Approx(std::sqrt(1.0 / std::pow(r.omega, 3))).epsilon(1e-12));
    CHECK(r.dt == doctest::Approx(1e-2 / r.omega));
    CHECK(r.failures == 0);
    CHECK(r.ks_matched.n == 200);
  }
  CHECK(rows[1].x_noise_coefficient == doctest::Approx(1.0 / 30.0).epsilon(0.05));
  CHECK(rows[1].x_noise_fixed_ell > rows[0].x_noise_fixed_ell);
  CHECK(rows[1].mean_sup_diff < rows[0].mean_sup_diff);

  std::ostringstream out;
  write_double_scaling_csv(out, rows);
  CHECK(out.str().find("omega") != std::string::npos);

  opt.dt_times_omega = 2e-2;
  try {
    double_scaling_study(opt);
    FAIL("coarse step accepted");
  } catch (const ConfigError& e) {
    CHECK(e.key() == "dt");
  }
}

TEST_CASE("trajectory CSV") {
  const PhysicalScales s{1.0, 1.0, 1.0};
  const TimeGrid grid(0.0, 1e-2, 5);
  const auto noise = sample_noise(grid, RngStream(46, 0));
  std::ostringstream p, l;
  write_packet_csv(p, grid, simulate_packet({a_infinity(s, 1.0), 2.0, 0.0}, Potential::harmonic(1.0, 1.0), s, noise), s);
  write_langevin_csv(l, grid, simulate_langevin(2.0, 0.0, Potential::harmonic(1.0, 1.0), 1.0, 1.0, noise));
  CHECK(p.str().find("t,xbar,vbar,re_a,im_a,sigma_x,flag_smooth,flag_cubic\n") != std::string::npos);
  CHECK(l.str().find("t,x,v\n") != std::string::npos);
  std::size_t lines = 0;
  for (char c : l.str()) lines += c == '\n';
  CHECK(lines >= 7);
}

#include <doctest.h>

#include <cmath>
#include <map>
#include <sstream>

#include "qmon/ensemble_stats.hpp"
#include "qmon/error.hpp"
#include "qmon/qnd_monitor.hpp"

using namespace qmon;

namespace {
// Two atoms at x = -1, +1; with gamma = 1/2 these are A = -1, +1.
GridMeasure two_atoms() { return GridMeasure::two_point(-1.0, 1.0); }

double sup_mass_difference(const GridMeasure& a, const GridMeasure& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a.node_mass(i) - b.node_mass(i)));
  return d;
}
}  // namespace

TEST_CASE("alpha conversion is the single source of the 2 gamma factor") {
  CHECK(alpha_from_x(1.5, 0.5) == 1.5);
  CHECK(alpha_from_x(1.0, 2.0) == 4.0);
  CHECK(x_from_alpha(alpha_from_x(0.3, 1.7), 1.7) == doctest::Approx(0.3).epsilon(1e-15));
}

TEST_CASE("point masses are fixed points of the monitoring step") {
  const Grid1D g(-2.0, 0.5, 9);
  const auto mu = GridMeasure::point_mass(g, 6);
  for (auto scheme : {MonitorScheme::exponential, MonitorScheme::euler}) {
    const auto r = qnd_step(mu, 0.37, 1e-3, 1.3, scheme);
    CHECK(sup_mass_difference(r.measure, mu) <= 1e-14);
    CHECK(r.dS == doctest::Approx(2.0 * 1.3 * g.x(6) * 1e-3 + 0.37).epsilon(1e-12));
  }
}

TEST_CASE("positive noise moves mass to the positive atom") {
  const auto r = qnd_step(two_atoms(), 0.01, 1e-4, 0.5);
  CHECK(r.measure.node_mass(1) > 0.5);
  CHECK(r.measure.node_mass(0) < 0.5);
  const auto e = qnd_step(two_atoms(), 0.01, 1e-4, 0.5, MonitorScheme::euler);
  CHECK(e.measure.node_mass(1) > 0.5);
}

TEST_CASE("observer integration agrees with the closed-form posterior") {
  const TimeGrid grid(0.0, 1e-4, 10000);
  const auto run = simulate_observer(two_atoms(), grid, 0.5, RngStream(11, 3));
  double worst = 0.0;
  for (std::size_t k = 0; k <= grid.n_steps; k += 50)
    worst = std::max(worst, sup_mass_difference(run.measures[k],
                                                 posterior_closed_form(two_atoms(), run.path.S[k], grid.time(k), 0.5)));
  CHECK(worst <= 5e-3);
  CHECK(worst <= 1e-9);  // the exponential step is exact along any path

  const auto euler = simulate_observer(two_atoms(), grid, 0.5, RngStream(11, 3), MonitorScheme::euler);
  double euler_worst = 0.0;
  for (std::size_t k = 0; k <= grid.n_steps; k += 50)
    euler_worst = std::max(euler_worst, sup_mass_difference(euler.measures[k], posterior_closed_form(
                                                                                   two_atoms(), euler.path.S[k], grid.time(k), 0.5)));
  CHECK(euler_worst <= 5e-3);
  CHECK(euler_worst > 0.0);
}

TEST_CASE("closed-form posterior") {
  SUBCASE("identity at t = 0") {
    const auto mu0 = GridMeasure::gaussian(Grid1D::spanning(-3, 3, 0.1), 0.2, 0.8);
    CHECK(sup_mass_difference(posterior_closed_form(mu0, 0.0, 0.0, 1.0), mu0) <= 1e-15);
  }
  SUBCASE("two atoms give tanh(S)") {
    for (double S : {-3.0, -0.4, 0.0, 0.25, 2.0})
      for (double t : {0.0, 0.5, 3.0}) {
        const auto post = posterior_closed_form(two_atoms(), S, t, 0.5);
        CHECK(mean(post) == doctest::Approx(std::tanh(S)).epsilon(1e-13));
      }
    CHECK(std::abs(mean(posterior_closed_form(two_atoms(), 0.0, 5.0, 0.5))) <= 1e-15);
  }
  SUBCASE("gaussian prior: precisions add") {
    const auto mu0 = GridMeasure::gaussian(Grid1D::spanning(-8, 8, 0.01), 0.0, 1.0);
    const auto post = posterior_closed_form(mu0, 0.0, 1.0, 0.5);
    CHECK(std::abs(mean(post)) <= 1e-12);
    CHECK(variance(post) == doctest::Approx(0.5).epsilon(1e-6));
    // nonzero signal: mean S/(1 + t) in alpha units
    const auto shifted = posterior_closed_form(mu0, 1.2, 2.0, 0.5);
    CHECK(mean(shifted) == doctest::Approx(0.4).epsilon(1e-6));
  }
}

TEST_CASE("cheater construction") {
  const TimeGrid grid(0.0, 1e-2, 100);
  SUBCASE("gamma = 0 gives a plain Brownian path") {
    const auto path = simulate_cheater(two_atoms(), grid, 0.0, RngStream(5, 1));
    CHECK(path.S == brownian_partial_sums(path.noise));
    CHECK(path.mode == SignalMode::cheater);
    REQUIRE(path.xbar);
  }
  SUBCASE("point-mass prior: S - 2 gamma x0 t is Brownian") {
    const Grid1D g(0.0, 0.5, 5);
    const auto mu0 = GridMeasure::point_mass(g, 3);
    std::vector<double> end;
    for (std::uint64_t i = 0; i < 10000; ++i) {
      const auto path = simulate_cheater(mu0, grid, 0.8, RngStream(6, i));
      CHECK(*path.xbar == g.x(3));
      end.push_back(path.S.back() - 2.0 * 0.8 * g.x(3) * 1.0);
    }
    const auto st = sample_stats(end);
    CHECK(within_se(st.mean, 0.0, st.std_error));
    CHECK(within_se(st.variance, 1.0, std::sqrt(2.0 / 9999.0)));
  }
  SUBCASE("S_t / t recovers the sampled atom at t = 100") {
    const TimeGrid long_grid(0.0, 1.0, 100);
    int wrong = 0;
    for (std::uint64_t i = 0; i < 10000; ++i) {
      const auto path = simulate_cheater(two_atoms(), long_grid, 0.5, RngStream(7, i));
      wrong += (path.S.back() / 100.0 > 0.0) != (*path.xbar > 0.0);
    }
    CHECK(wrong == 0);
  }
}

TEST_CASE("observer and cheater signals have the same law") {
  const TimeGrid grid(0.0, 1e-2, 100);
  std::vector<double> cheater, observer;
  for (std::uint64_t i = 0; i < 2000; ++i) {
    cheater.push_back(simulate_cheater(two_atoms(), grid, 0.5, RngStream(8, i)).S.back());
    observer.push_back(simulate_observer(two_atoms(), grid, 0.5, RngStream(8, 2000 + i), MonitorScheme::exponential, false)
                           .path.S.back());
  }
  CHECK_FALSE(ks_two_sample(cheater, observer).rejects());

  // point-mass prior: drift is constant, the two constructions coincide pathwise
  const auto pm = GridMeasure::point_mass(Grid1D(0.0, 1.0, 3), 2);
  const auto c = simulate_cheater(pm, grid, 0.5, RngStream(9, 0));
  const auto o = simulate_observer(pm, grid, 0.5, RngStream(9, 0));
  for (std::size_t k = 0; k < c.S.size(); ++k) CHECK(o.path.S[k] == doctest::Approx(c.S[k]).epsilon(1e-12));
}

TEST_CASE("posterior mean is an observer martingale") {
  const TimeGrid grid(0.0, 1e-2, 100);
  const auto mu0 = GridMeasure::atoms(Grid1D(-1.0, 0.5, 5), std::vector<std::pair<std::size_t, double>>{{0, 0.2}, {2, 0.5}, {4, 0.3}});
  std::vector<std::vector<double>> paths;
  for (std::uint64_t i = 0; i < 2000; ++i)
    paths.push_back(simulate_observer(mu0, grid, 0.7, RngStream(10, i), MonitorScheme::exponential, false).post_mean);
  std::vector<double> times;
  for (std::size_t k = 0; k <= grid.n_steps; ++k) times.push_back(grid.time(k));
  const std::pair<double, double> pairs[] = {{0.0, 0.25}, {0.25, 1.0}, {0.5, 0.75}, {0.0, 1.0}};
  for (const auto& d : martingale_drift(paths, times, pairs)) CHECK(within_se(d.mean, 0.0, d.std_error));
}

TEST_CASE("kernel closed form") {
  const Grid1D axis = Grid1D::spanning(-2.0, 2.0, 0.25);
  auto psi = [](double x) { return std::exp(-x * x / 2.0) * std::polar(1.0, 0.7 * x); };
  auto rho0 = KernelSnapshot::pure_state(axis, psi);
  // normalize the trace to one
  const double trace = std::exp(log_sum_exp([&] {
    std::vector<double> d;
    for (std::size_t i = 0; i < axis.n_points; ++i) d.push_back(rho0.log_magnitude(i, i) + std::log(axis.dx));
    return d;
  }()));
  rho0 = KernelSnapshot::from_function(axis, [&](double x, double y) { return psi(x) * std::conj(psi(y)) / trace; }, 0.0);

  SUBCASE("t = 0 leaves the kernel unchanged") {
    const auto sol = kernel_closed_form(rho0, 0.0, 0.0, 1.0);
    CHECK(std::abs(sol.log_Z) <= 1e-14);
    for (std::size_t i = 0; i < axis.n_points; ++i)
      for (std::size_t j = 0; j < axis.n_points; ++j)
        CHECK(std::abs(sol.rho_hat.value(i, j) - rho0.value(i, j)) <= 1e-15);
  }
  SUBCASE("hermitian with a real non-negative diagonal") {
    const auto sol = kernel_closed_form(rho0, 0.8, 1.5, 1.3);
    CHECK(sol.rho_hat.hermiticity_defect() <= 1e-12);
    CHECK_NOTHROW(sol.rho_hat.diagonal());
  }
  SUBCASE("diagonal slice equals the posterior") {
    const double S = -0.6, t = 0.9, gamma = 0.8;
    const auto sol = kernel_closed_form(rho0, S, t, gamma);
    const auto diag = normalized(sol.rho_hat.diagonal());
    const auto post = posterior_closed_form(normalized(rho0.diagonal()), S, t, gamma);
    CHECK(sup_mass_difference(diag, post) <= 1e-14);
    // Z is the trace of the unnormalized kernel
    double z = 0.0;
    const auto mu0 = normalized(rho0.diagonal());
    for (std::size_t i = 0; i < axis.n_points; ++i) {
      const double x = axis.x(i);
      z += mu0.node_mass(i) * std::exp(-2.0 * gamma * gamma * t * x * x + 2.0 * gamma * x * S);
    }
    CHECK(std::exp(sol.log_Z) == doctest::Approx(z).epsilon(1e-12));
  }
  SUBCASE("off-diagonal entries do not underflow") {
    const auto sol = kernel_closed_form(rho0, 0.0, 1e4, 3.0);
    CHECK(std::isfinite(sol.rho_hat.log_magnitude(0, axis.n_points - 1)));
  }
  SUBCASE("the kernel SDE residual decays at first order") {
    std::vector<double> dts{1e-3, 5e-4, 2.5e-4}, res;
    for (double dt : dts) {
      const auto n = static_cast<std::size_t>(std::llround(0.5 / dt));
      std::vector<double> dS(n);
      for (std::size_t k = 0; k < n; ++k) dS[k] = (k % 2 ? -1.0 : 1.0) * std::sqrt(dt);
      res.push_back(hat_rho_residual(rho0, 1.0, dS, dt));
    }
    CHECK(res[1] < res[0]);
    CHECK(res[2] < res[1]);
    CHECK(convergence_order_fit(dts, res).slope >= 0.8);
  }
}

TEST_CASE("collapse width") {
  CHECK(collapse_width(GridMeasure::point_mass(Grid1D(0.0, 1.0, 4), 1)) <= 1e-8);

  const auto mu0 = GridMeasure::gaussian(Grid1D::spanning(-6, 6, 0.002), 0.0, 1.0);
  SUBCASE("gaussian conjugacy") {
    for (double t : {0.5, 2.0, 10.0}) {
      const double gamma = 1.0;
      const double w = collapse_width(posterior_closed_form(mu0, 0.7, t, gamma));
      CHECK(w * w == doctest::Approx(1.0 / (1.0 + 4.0 * gamma * gamma * t)).epsilon(1e-5));
    }
  }
  SUBCASE("width decays like t^-1/2 along cheater paths") {
    const TimeGrid grid(0.0, 1.0, 100);
    const std::vector<std::size_t> idx{1, 2, 4, 8, 16, 32, 64, 100};
    std::vector<double> times, widths(idx.size(), 0.0);
    for (auto k : idx) times.push_back(static_cast<double>(k));
    for (std::uint64_t i = 0; i < 1000; ++i) {
      const auto path = simulate_cheater(mu0, grid, 1.0, RngStream(12, i));
      for (std::size_t j = 0; j < idx.size(); ++j)
        widths[j] += collapse_width(posterior_closed_form(mu0, path.S[idx[j]], times[j], 1.0)) / 1000.0;
    }
    const auto fit = convergence_order_fit(times, widths);
    CHECK(fit.slope == doctest::Approx(-0.5).epsilon(0.1));
  }
}

TEST_CASE("innovation process") {
  const TimeGrid grid(0.0, 1e-2, 100);
  SUBCASE("point-mass prior: W equals the cheater's B") {
    const auto mu0 = GridMeasure::point_mass(Grid1D(-1.0, 0.5, 5), 3);
    const auto path = simulate_cheater(mu0, grid, 0.9, RngStream(13, 0));
    const auto W = innovation_path(path, mu0, 0.9);
    const auto B = brownian_partial_sums(path.noise);
    for (std::size_t k = 0; k < W.size(); ++k) CHECK(std::abs(W[k] - B[k]) <= 1e-12);
  }
  SUBCASE("W is Brownian in law") {
    std::vector<double> w1, first, second;
    for (std::uint64_t i = 0; i < 2000; ++i) {
      const auto path = simulate_cheater(two_atoms(), grid, 0.5, RngStream(14, i));
      const auto W = innovation_path(path, two_atoms(), 0.5);
      w1.push_back(W[100]);
      first.push_back(W[50]);
      second.push_back(W[100] - W[50]);
    }
    const auto st = sample_stats(w1);
    CHECK(within_se(st.mean, 0.0, st.std_error));
    CHECK(within_se(st.variance, 1.0, std::sqrt(2.0 / 1999.0)));
    CHECK(std::abs(correlation(first, second)) <= 3.0 / std::sqrt(2000.0));
  }
  SUBCASE("observer paths: W reproduces the driving noise") {
    const auto run = simulate_observer(two_atoms(), grid, 0.5, RngStream(15, 0));
    const auto W = innovation_path(run.path, two_atoms(), 0.5);
    const auto B = brownian_partial_sums(run.path.noise);
    for (std::size_t k = 0; k < W.size(); ++k) CHECK(std::abs(W[k] - B[k]) <= 1e-10);
  }
}

TEST_CASE("girsanov identity") {
  const double times[] = {1.0};
  SUBCASE("f = A S_t with E[A^2] = 1") {
    const auto r = girsanov_check([](double A, std::span<const double> S) { return A * S[0]; }, two_atoms(), 0.5,
                                  times, 20000, 16);
    CHECK(within_se(r.lhs, 1.0, r.lhs_se));
    CHECK(within_se(r.rhs, 1.0, r.rhs_se));
    CHECK(within_se(r.lhs - r.rhs, 0.0, std::hypot(r.lhs_se, r.rhs_se)));
  }
  SUBCASE("f = 1") {
    const auto r = girsanov_check([](double, std::span<const double>) { return 1.0; }, two_atoms(), 0.5, times, 20000, 17);
    CHECK(r.lhs == 1.0);
    CHECK(r.lhs_se == 0.0);
    CHECK(within_se(r.rhs, 1.0, r.rhs_se));
  }
  SUBCASE("f = 1{S_t > 0}, symmetric prior") {
    const auto r = girsanov_check([](double, std::span<const double> S) { return S[0] > 0.0 ? 1.0 : 0.0; },
                                  two_atoms(), 0.5, times, 20000, 18);
    CHECK(within_se(r.lhs, 0.5, r.lhs_se));
    CHECK(within_se(r.rhs, 0.5, r.rhs_se));
  }
  SUBCASE("several observation times") {
    const double ts[] = {0.3, 0.6, 1.0};
    const auto r = girsanov_check([](double A, std::span<const double> S) { return A * (S[2] - S[0]) + S[1] * S[1]; },
                                  two_atoms(), 0.5, ts, 20000, 19);
    // E[A (S_1 - S_.3)] = 0.7, E[S_.6^2] = 0.6 + 0.36
    CHECK(within_se(r.lhs, 1.66, r.lhs_se));
    CHECK(within_se(r.rhs, 1.66, r.rhs_se));
  }
}

TEST_CASE("conditional variance") {
  CHECK(conditional_variance(two_atoms(), 0.0, 0.0, 0.5) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(conditional_variance(GridMeasure::point_mass(Grid1D(0.0, 1.0, 5), 2), 1.3, 4.0, 0.5) <= 1e-12);
  // gaussian prior in x-units with gamma = 1: Var(A | H_t) = 4 / (1 + 4 t)
  const auto mu0 = GridMeasure::gaussian(Grid1D::spanning(-8, 8, 0.01), 0.0, 1.0);
  CHECK(conditional_variance(mu0, 0.3, 1.0, 1.0) == doctest::Approx(0.8).epsilon(1e-5));

  const TimeGrid grid(0.0, 1.0, 16);
  std::vector<double> sums(3, 0.0);
  const std::size_t n = 2000;
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto path = simulate_cheater(two_atoms(), grid, 0.5, RngStream(20, i));
    std::size_t j = 0;
    for (std::size_t k : {1, 4, 16}) sums[j++] += conditional_variance(two_atoms(), path.S[k], double(k), 0.5) / n;
  }
  CHECK(sums[0] > sums[1]);
  CHECK(sums[1] > sums[2]);
  CHECK(sums[2] < 1e-3);
}

TEST_CASE("outcome table validation") {
  const Grid1D g(-1.0, 2.0, 2);
  CHECK_THROWS_AS(OutcomeTable(g, 2, [](std::size_t i, double) { return i == 0 ? 0.5 : 0.6; }), ConfigError);
  CHECK_THROWS_AS(OutcomeTable(g, 2, [](std::size_t i, double) { return i == 0 ? 1.5 : -0.5; }), ConfigError);
  CHECK_THROWS_AS(OutcomeTable(g, 17, [](std::size_t, double) { return 1.0 / 17.0; }), ConfigError);
  try {
    OutcomeTable(g, 2, [](std::size_t, double) { return 0.0; });
    FAIL("zero row accepted");
  } catch (const ConfigError& e) {
    CHECK(e.key() == "outcome_probabilities");
  }
}

TEST_CASE("discrete chain") {
  SUBCASE("uninformative outcomes leave the measure unchanged") {
    const auto mu0 = GridMeasure::atoms(Grid1D(-1.0, 1.0, 3), std::vector<std::pair<std::size_t, double>>{{0, 0.3}, {2, 0.7}});
    const OutcomeTable table(mu0.grid(), 3, [](std::size_t i, double) { return i == 0 ? 0.5 : 0.25; });
    RngStream rng(21, 0);
    auto mu = mu0;
    std::vector<double> counts(3, 0.0);
    for (int r = 0; r < 3000; ++r) {
      const auto step = discrete_chain_step(mu, table, rng);
      mu = step.measure;
      counts[step.outcome] += 1.0;
    }
    CHECK(sup_mass_difference(mu, mu0) <= 1e-12);
    CHECK(within_se(counts[0] / 3000, 0.5, std::sqrt(0.25 / 3000)));
  }
  SUBCASE("frequencies under a Dirac prior") {
    const Grid1D g(0.0, 1.0, 3);
    const auto mu0 = GridMeasure::point_mass(g, 1);
    const OutcomeTable table(g, 3, [](std::size_t i, double x) {
      const double p1 = 0.2 + 0.1 * x;
      return i == 0 ? p1 : (i == 1 ? 0.5 : 0.5 - p1);
    });
    RngStream rng(22, 0);
    auto mu = mu0;
    std::vector<double> counts(3, 0.0);
    const int n = 10000;
    for (int r = 0; r < n; ++r) {
      const auto step = discrete_chain_step(mu, table, rng);
      mu = step.measure;
      counts[step.outcome] += 1.0;
    }
    for (std::size_t i = 0; i < 3; ++i) {
      const double p = table.p(1, i);
      CHECK(std::abs(counts[i] / n - p) <= 3.0 * std::sqrt(p * (1 - p) / n));
    }
  }
  SUBCASE("outcome sequences are exchangeable") {
    const auto mu0 = two_atoms();
    const OutcomeTable table(mu0.grid(), 2, [](std::size_t i, double x) {
      const double p1 = x < 0 ? 0.3 : 0.8;
      return i == 1 ? p1 : 1.0 - p1;
    });
    std::map<int, double> freq;
    const int N = 30000;
    for (int r = 0; r < N; ++r) {
      RngStream rng(23, static_cast<std::uint64_t>(r));
      auto mu = mu0;
      int code = 0;
      for (int step = 0; step < 3; ++step) {
        const auto s = discrete_chain_step(mu, table, rng);
        mu = s.measure;
        code = code * 2 + static_cast<int>(s.outcome);
      }
      freq[code] += 1.0 / N;
    }
    const double a = freq[0b110], b = freq[0b101], c = freq[0b011];
    auto band = [N](double pa, double pb) { return 3.0 * std::sqrt((pa + pb - (pa - pb) * (pa - pb)) / N); };
    CHECK(std::abs(a - b) <= band(a, b));
    CHECK(std::abs(b - c) <= band(b, c));
    CHECK(std::abs(a - c) <= band(a, c));
    const double exact = 0.5 * (0.3 * 0.3 * 0.7) + 0.5 * (0.8 * 0.8 * 0.2);
    CHECK(std::abs(a - exact) <= 3.0 * std::sqrt(exact * (1 - exact) / N));
  }
}

TEST_CASE("trajectory CSV") {
  const TimeGrid grid(0.0, 0.1, 3);
  const auto path = simulate_cheater(two_atoms(), grid, 0.5, RngStream(24, 0));
  const auto W = innovation_path(path, two_atoms(), 0.5);
  std::vector<double> m(4, 0.0), v(4, 1.0);
  std::ostringstream out;
  write_trajectory_csv(out, path, W, m, v);
  const std::string s = out.str();
  CHECK(s.find("# xbar=") != std::string::npos);
  CHECK(s.find("t,S,W,post_mean,post_var\n") != std::string::npos);

  std::ostringstream obs;
  const auto run = simulate_observer(two_atoms(), grid, 0.5, RngStream(24, 1));
  write_trajectory_csv(obs, run.path, innovation_path(run.path, two_atoms(), 0.5), run.post_mean, run.post_var);
  CHECK(obs.str().find("xbar") == std::string::npos);
}

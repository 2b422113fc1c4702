#include <doctest.h>

#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>
#include <limits>
#include <sstream>

#include "qmon/core_sde.hpp"
#include "qmon/error.hpp"
#include "qmon/measure_grid.hpp"

using namespace qmon;

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

GridMeasure random_measure(RngStream& rng, std::size_t n) {
  const Grid1D g(-2.0 + rng.uniform(), 0.01 + 0.1 * rng.uniform(), n);
  std::vector<double> lw(n);
  for (auto& v : lw) v = 3.0 * rng.normal();
  lw[n / 3] = kNegInf;
  return normalized(GridMeasure(g, lw));
}
}  // namespace

TEST_CASE("moment of the constant function is one") {
  const auto mu = GridMeasure::gaussian(Grid1D::spanning(-5, 5, 0.05), 0.3, 0.7);
  CHECK(std::abs(moment(mu, [](double) { return 1.0; }) - 1.0) <= 1e-10);
}

TEST_CASE("second moment of a discretized standard normal") {
  const auto mu = GridMeasure::gaussian(Grid1D::spanning(-8, 8, 1e-2), 0.0, 1.0);
  CHECK(std::abs(moment(mu, [](double x) { return x * x; }) - 1.0) <= 1e-6);
  CHECK(std::abs(variance(mu) - 1.0) <= 1e-6);
}

TEST_CASE("point mass evaluates the test function at its node") {
  const Grid1D g(-1.0, 0.1, 21);
  const auto mu = GridMeasure::point_mass(g, 13);
  const TestFunction phi("cubic", [](double x) { return x * x * x - 2.0; });
  CHECK(moment(mu, phi) == doctest::Approx(phi(g.x(13))).epsilon(1e-14));
  CHECK(std::abs(connected_moment_x(mu, phi)) <= 1e-12);
  CHECK(std::abs(variance(mu)) <= 1e-12);
}

TEST_CASE("connected moments") {
  const auto mu = GridMeasure::gaussian(Grid1D::spanning(-10, 12, 1e-2), 1.0, 1.5);
  CHECK(std::abs(connected_moment_x(mu, [](double) { return 1.0; })) <= 1e-12);
  CHECK(std::abs(connected_moment_x(mu, [](double x) { return x; }) - 2.25) <= 1e-6);
}

TEST_CASE("moments require a normalized measure") {
  const GridMeasure raw(Grid1D(0.0, 1.0, 3), {0.0, 1.0, 2.0});
  CHECK_THROWS_AS(moment(raw, [](double x) { return x; }), ConfigError);
  CHECK_NOTHROW(moment(normalized(raw), [](double x) { return x; }));
}

TEST_CASE("log-weights reject +inf and NaN") {
  const Grid1D g(0.0, 1.0, 2);
  CHECK_THROWS_AS(GridMeasure(g, {0.0, std::numeric_limits<double>::infinity()}), ConfigError);
  CHECK_THROWS_AS(GridMeasure(g, {0.0, std::nan("")}), ConfigError);
  CHECK_THROWS_AS(GridMeasure(g, {0.0}), ConfigError);
  CHECK_NOTHROW(GridMeasure(g, {0.0, kNegInf}));
}

TEST_CASE("test functions are checked on the grid") {
  const Grid1D g(-1.0, 0.5, 5);
  CHECK_THROWS_AS(TestFunction::on_grid("inverse", [](double x) { return 1.0 / x; }, g), ConfigError);
  CHECK_NOTHROW(TestFunction::on_grid("square", [](double x) { return x * x; }, g));
}

TEST_CASE("renormalize: uniform weights with n dx = 1 shift to exactly zero") {
  const GridMeasure mu(Grid1D(0.0, 0.25, 4), {3.7, 3.7, 3.7, 3.7});
  const auto r = renormalize(mu);
  for (double v : r.measure.log_weights()) CHECK(v == 0.0);
  CHECK(r.measure.normalized());
}

TEST_CASE("renormalize restores scaled weights and reports the deficit") {
  const Grid1D g(-1.0, 2.0, 2);
  const GridMeasure mu(g, {std::log(0.2e3 / 2.0), std::log(0.8e3 / 2.0)});
  const auto r = renormalize(mu);
  CHECK(r.measure.node_mass(0) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(r.measure.node_mass(1) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(r.mass_deficit == doctest::Approx(1.0 - 1e3));
}

TEST_CASE("an empty measure dies") {
  const GridMeasure mu(Grid1D(0.0, 1.0, 3), {kNegInf, kNegInf, kNegInf});
  CHECK_THROWS_AS(renormalize(mu), MeasureDied);
  CHECK_THROWS_WITH(renormalize(mu), doctest::Contains("measure died"));
}

TEST_CASE("log-domain normalization matches 50-digit linear arithmetic") {
  using Big = boost::multiprecision::cpp_bin_float_50;
  // Posterior weights exp(a S - a^2 t / 2) with a up to 50 and t = 10.
  const Grid1D g = Grid1D::spanning(-50.0, 50.0, 0.25);
  for (double S : {-120.0, 0.0, 37.5, 300.0}) {
    const double t = 10.0;
    std::vector<double> lw(g.n_points);
    for (std::size_t i = 0; i < lw.size(); ++i) lw[i] = g.x(i) * S - 0.5 * g.x(i) * g.x(i) * t;
    const auto mu = normalized(GridMeasure(g, lw));

    std::vector<Big> w(lw.size());
    Big total = 0;
    for (std::size_t i = 0; i < lw.size(); ++i) {
      w[i] = exp(Big(g.x(i)) * S - Big(g.x(i)) * g.x(i) * t / 2) * g.dx;
      total += w[i];
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < lw.size(); ++i) {
      const double exact = static_cast<double>(w[i] / total);
      if (exact > 1e-30) worst = std::max(worst, std::abs(mu.node_mass(i) - exact) / exact);
    }
    CHECK(worst <= 1e-8);
  }
}

TEST_CASE("properties on random measures") {
  RngStream rng(31337, 0);
  for (int trial = 0; trial < 200; ++trial) {
    const auto mu = random_measure(rng, 20 + trial % 50);
    const double a = rng.normal(), b = rng.normal(), c = 10.0 * rng.normal();
    auto f = [](double x) { return std::sin(3.0 * x); };
    auto h = [](double x) { return x * x - x; };

    const double lin = moment(mu, [&](double x) { return a * f(x) + b * h(x); });
    CHECK(std::abs(lin - (a * moment(mu, f) + b * moment(mu, h))) <= 1e-12 * (1.0 + std::abs(a) + std::abs(b)));

    const double shifted = connected_moment_x(mu, [&](double x) { return f(x) + c; });
    CHECK(std::abs(shifted - connected_moment_x(mu, f)) <= 1e-12 * (1.0 + std::abs(c)));

    const auto once = renormalize(mu).measure;
    const auto twice = renormalize(once).measure;
    for (std::size_t i = 0; i < once.size(); ++i)
      CHECK(std::abs(std::exp(once.log_weights()[i]) - std::exp(twice.log_weights()[i])) <=
            1e-14 * std::exp(once.log_weights()[i]));
    CHECK(std::abs(moment(once, [](double) { return 1.0; }) - 1.0) <= 1e-10);
  }
}

TEST_CASE("factories") {
  const Grid1D g(-1.0, 0.5, 5);
  const std::pair<std::size_t, double> atoms[] = {{0, 1.0}, {4, 3.0}};
  const auto mu = GridMeasure::atoms(g, atoms);
  CHECK(mu.node_mass(0) == doctest::Approx(0.25));
  CHECK(mu.node_mass(4) == doctest::Approx(0.75));
  CHECK(mu.node_mass(2) == 0.0);

  const auto tp = GridMeasure::two_point(-1.0, 1.0);
  CHECK(tp.size() == 2);
  CHECK(mean(tp) == doctest::Approx(0.0));
  CHECK(variance(tp) == doctest::Approx(1.0));

  CHECK(g.nearest(0.26) == 3);
  CHECK(g.nearest(-7.0) == 0);
  CHECK(g.nearest(70.0) == 4);
  CHECK(Grid1D::spanning(-1.0, 1.0, 0.1).n_points == 21);
}

TEST_CASE("measure CSV lists normalized node masses") {
  std::ostringstream out;
  write_measure_csv(out, GridMeasure(Grid1D(0.0, 0.5, 3), {0.0, std::log(3.0), kNegInf}));
  std::istringstream in(out.str());
  std::string line;
  std::vector<std::string> rows;
  while (std::getline(in, line))
    if (!line.empty() && line[0] != '#') rows.push_back(line);
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] == "x,weight");
  CHECK(std::stod(rows[1].substr(2)) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(std::stod(rows[2].substr(4)) == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(rows[3] == "1,0");
}

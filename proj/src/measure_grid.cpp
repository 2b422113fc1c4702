#include "qmon/measure_grid.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "qmon/csv.hpp"
#include "qmon/error.hpp"
#include "qmon/summation.hpp"

namespace qmon {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require_normalized(const GridMeasure& mu) {
  if (!mu.normalized()) throw ConfigError("operation requires a normalized measure");
}
}  // namespace

Grid1D::Grid1D(double x_min_, double dx_, std::size_t n_points_) : x_min(x_min_), dx(dx_), n_points(n_points_) {
  validate();
}

Grid1D Grid1D::spanning(double lo, double hi, double dx) {
  if (!(hi > lo)) throw ConfigError("grid upper bound must exceed lower bound", "x_max");
  const auto cells = static_cast<std::size_t>(std::llround((hi - lo) / dx));
  return Grid1D(lo, dx, cells + 1);
}

std::size_t Grid1D::nearest(double x) const noexcept {
  const double k = std::round((x - x_min) / dx);
  if (!(k > 0.0)) return 0;
  return std::min(static_cast<std::size_t>(k), n_points - 1);
}

void Grid1D::validate() const {
  if (!(dx > 0.0) || !std::isfinite(dx)) throw ConfigError("grid spacing must be positive", "dx");
  if (n_points < 2) throw ConfigError("grid needs at least two points", "n_points");
  if (!std::isfinite(x_min)) throw ConfigError("grid origin must be finite", "x_min");
}

TestFunction::TestFunction(std::string label, std::function<double(double)> evaluator)
    : label_(std::move(label)), evaluator_(std::move(evaluator)) {
  if (!evaluator_) throw ConfigError("test function '" + label_ + "' has no evaluator");
}

TestFunction TestFunction::on_grid(std::string label, std::function<double(double)> evaluator, const Grid1D& grid) {
  TestFunction phi(std::move(label), std::move(evaluator));
  phi.check_bounded(grid);
  return phi;
}

void TestFunction::check_bounded(const Grid1D& grid) const {
  for (std::size_t i = 0; i < grid.n_points; ++i)
    if (!std::isfinite(evaluator_(grid.x(i))))
      throw ConfigError("test function '" + label_ + "' is not finite at x = " + format_double(grid.x(i)));
}

GridMeasure::GridMeasure(Grid1D grid, std::vector<double> log_weights, bool normalized)
    : grid_(grid), log_weights_(std::move(log_weights)), normalized_(normalized) {
  grid_.validate();
  if (log_weights_.size() != grid_.n_points) throw ConfigError("log-weight count does not match grid size", "n_points");
  for (double lw : log_weights_)
    if (std::isnan(lw) || lw == std::numeric_limits<double>::infinity())
      throw ConfigError("log-weights must be finite or -inf");
}

GridMeasure GridMeasure::from_density(const Grid1D& grid, const std::function<double(double)>& density) {
  std::vector<double> lw(grid.n_points);
  for (std::size_t i = 0; i < lw.size(); ++i) {
    const double f = density(grid.x(i));
    if (f < 0.0 || !std::isfinite(f)) throw ConfigError("density must be finite and non-negative");
    lw[i] = f > 0.0 ? std::log(f) : kNegInf;
  }
  return qmon::normalized(GridMeasure(grid, std::move(lw)));
}

GridMeasure GridMeasure::from_log_density(const Grid1D& grid, const std::function<double(double)>& log_density) {
  std::vector<double> lw(grid.n_points);
  for (std::size_t i = 0; i < lw.size(); ++i) lw[i] = log_density(grid.x(i));
  return qmon::normalized(GridMeasure(grid, std::move(lw)));
}

GridMeasure GridMeasure::point_mass(const Grid1D& grid, std::size_t node) {
  if (node >= grid.n_points) throw ConfigError("point mass node outside grid");
  std::vector<double> lw(grid.n_points, kNegInf);
  lw[node] = -std::log(grid.dx);
  return GridMeasure(grid, std::move(lw), true);
}

GridMeasure GridMeasure::gaussian(const Grid1D& grid, double mean, double sd) {
  if (!(sd > 0.0)) throw ConfigError("Gaussian standard deviation must be positive", "sd");
  return from_log_density(grid, [=](double x) {
    const double z = (x - mean) / sd;
    return -0.5 * z * z;
  });
}

GridMeasure GridMeasure::atoms(const Grid1D& grid, std::span<const std::pair<std::size_t, double>> masses) {
  std::vector<double> lw(grid.n_points, kNegInf);
  for (const auto& [node, p] : masses) {
    if (node >= grid.n_points) throw ConfigError("atom outside grid");
    if (!(p >= 0.0) || !std::isfinite(p)) throw ConfigError("atom mass must be finite and non-negative");
    if (p > 0.0) lw[node] = std::log(p / grid.dx);
  }
  return qmon::normalized(GridMeasure(grid, std::move(lw)));
}

GridMeasure GridMeasure::two_point(double left, double right, double p_left) {
  const Grid1D grid(left, right - left, 2);
  const std::pair<std::size_t, double> masses[] = {{0, p_left}, {1, 1.0 - p_left}};
  return atoms(grid, masses);
}

double GridMeasure::node_mass(std::size_t i) const noexcept { return std::exp(log_weights_[i]) * grid_.dx; }

std::vector<double> GridMeasure::node_masses() const {
  std::vector<double> m(size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = node_mass(i);
  return m;
}

double log_sum_exp(std::span<const double> values) noexcept {
  if (values.empty()) return kNegInf;
  const double max = *std::max_element(values.begin(), values.end());
  if (max == kNegInf) return kNegInf;
  CompensatedSum s;
  for (double v : values) s.add(std::exp(v - max));
  return max + std::log(s.value());
}

double renormalize_log_weights(std::span<double> lw, double dx) {
  const double max = *std::max_element(lw.begin(), lw.end());
  if (max == kNegInf) throw MeasureDied();
  CompensatedSum s;
  for (double v : lw) s.add(std::exp(v - max));
  // log of the total mass; written so that uniform weights with n*dx = 1 shift exactly.
  const double log_mass = max + std::log(s.value() * dx);
  for (double& v : lw) v -= log_mass;
  return -std::expm1(log_mass);
}

double mean_of_log_weights(const Grid1D& grid, std::span<const double> lw) {
  CompensatedSum s;
  for (std::size_t i = 0; i < lw.size(); ++i)
    if (lw[i] != kNegInf) s.add(std::exp(lw[i]) * grid.dx * grid.x(i));
  return s.value();
}

Renormalized renormalize(const GridMeasure& mu) {
  std::vector<double> shifted(mu.log_weights().begin(), mu.log_weights().end());
  const double deficit = renormalize_log_weights(shifted, mu.grid().dx);
  return {GridMeasure(mu.grid(), std::move(shifted), true), deficit};
}

GridMeasure normalized(const GridMeasure& mu) { return renormalize(mu).measure; }

double moment(const GridMeasure& mu, const std::function<double(double)>& phi) {
  require_normalized(mu);
  CompensatedSum s;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double m = mu.node_mass(i);
    if (m > 0.0) s.add(m * phi(mu.x(i)));
  }
  return s.value();
}

double moment(const GridMeasure& mu, const TestFunction& phi) {
  return moment(mu, [&](double x) { return phi(x); });
}

double mean(const GridMeasure& mu) {
  return moment(mu, [](double x) { return x; });
}

double connected_moment_x(const GridMeasure& mu, const std::function<double(double)>& phi) {
  const double m = mean(mu);
  CompensatedSum s;
  for (std::size_t i = 0; i < mu.size(); ++i) {
    const double w = mu.node_mass(i);
    if (w > 0.0) s.add(w * (mu.x(i) - m) * phi(mu.x(i)));
  }
  return s.value();
}

double connected_moment_x(const GridMeasure& mu, const TestFunction& phi) {
  return connected_moment_x(mu, [&](double x) { return phi(x); });
}

double variance(const GridMeasure& mu) {
  return connected_moment_x(mu, [](double x) { return x; });
}

void write_measure_csv(std::ostream& out, const GridMeasure& mu) {
  const GridMeasure normal = mu.normalized() ? mu : normalized(mu);
  CsvWriter csv(out, {"x", "weight"});
  csv.comment("weight: probability mass of the grid node (sums to 1)");
  for (std::size_t i = 0; i < normal.size(); ++i) csv.row({normal.x(i), normal.node_mass(i)});
}

}  // namespace qmon

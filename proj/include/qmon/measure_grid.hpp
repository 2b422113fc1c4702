#pragma once

// Probability measures on a truncated uniform 1-D grid, stored as log
// densities so that strongly peaked posteriors neither overflow nor underflow.

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace qmon {

struct Grid1D {
  double x_min = 0.0;
  double dx = 1.0;
  std::size_t n_points = 2;

  Grid1D() = default;
  Grid1D(double x_min, double dx, std::size_t n_points);

  // Uniform grid from lo to hi (inclusive, hi rounded to the nearest node).
  static Grid1D spanning(double lo, double hi, double dx);

  double x(std::size_t i) const noexcept { return x_min + static_cast<double>(i) * dx; }
  double x_max() const noexcept { return x(n_points - 1); }
  // Nearest node to x, clamped to the grid.
  std::size_t nearest(double x) const noexcept;
  void validate() const;

  friend bool operator==(const Grid1D&, const Grid1D&) = default;
};

class TestFunction {
 public:
  TestFunction(std::string label, std::function<double(double)> evaluator);

  // Builds the function and checks that it is finite on every node of grid.
  static TestFunction on_grid(std::string label, std::function<double(double)> evaluator, const Grid1D& grid);

  double operator()(double x) const { return evaluator_(x); }
  const std::string& label() const noexcept { return label_; }
  void check_bounded(const Grid1D& grid) const;

 private:
  std::string label_;
  std::function<double(double)> evaluator_;
};

class GridMeasure {
 public:
  // log_weights are log densities: node mass is exp(log_weight) * dx.
  // -inf marks an empty node; +inf and NaN are rejected.
  GridMeasure(Grid1D grid, std::vector<double> log_weights, bool normalized = false);

  static GridMeasure from_density(const Grid1D& grid, const std::function<double(double)>& density);
  static GridMeasure from_log_density(const Grid1D& grid, const std::function<double(double)>& log_density);
  static GridMeasure point_mass(const Grid1D& grid, std::size_t node);
  static GridMeasure gaussian(const Grid1D& grid, double mean, double sd);
  // Atoms (node index, probability); probabilities are renormalized.
  static GridMeasure atoms(const Grid1D& grid, std::span<const std::pair<std::size_t, double>> masses);
  // Two-node grid {left, right} with mass p_left on the left node.
  static GridMeasure two_point(double left, double right, double p_left = 0.5);

  const Grid1D& grid() const noexcept { return grid_; }
  std::size_t size() const noexcept { return log_weights_.size(); }
  double x(std::size_t i) const noexcept { return grid_.x(i); }
  std::span<const double> log_weights() const noexcept { return log_weights_; }
  bool normalized() const noexcept { return normalized_; }

  double node_mass(std::size_t i) const noexcept;
  std::vector<double> node_masses() const;

 private:
  Grid1D grid_;
  std::vector<double> log_weights_;
  bool normalized_;
};

struct Renormalized {
  GridMeasure measure;
  double mass_deficit;  // 1 - (total mass before the shift)
};

// Shifts log-weights by the log of the total mass. Throws MeasureDied when no
// node carries mass.
Renormalized renormalize(const GridMeasure& mu);
GridMeasure normalized(const GridMeasure& mu);

// In-place variant used by the steppers; returns the mass deficit.
double renormalize_log_weights(std::span<double> log_weights, double dx);
// Mean of x under normalized log-weights on grid.
double mean_of_log_weights(const Grid1D& grid, std::span<const double> log_weights);

// mu[phi] = sum_i exp(lw_i) phi(x_i) dx. Requires a normalized measure.
double moment(const GridMeasure& mu, const TestFunction& phi);
double moment(const GridMeasure& mu, const std::function<double(double)>& phi);
// mu[x phi] - mu[x] mu[phi], evaluated in centred form.
double connected_moment_x(const GridMeasure& mu, const TestFunction& phi);
double connected_moment_x(const GridMeasure& mu, const std::function<double(double)>& phi);
double mean(const GridMeasure& mu);
double variance(const GridMeasure& mu);

// log(sum_i exp(v_i)); -inf for an empty or all -inf input.
double log_sum_exp(std::span<const double> values) noexcept;

// CSV with columns x,weight (normalized node masses).
void write_measure_csv(std::ostream& out, const GridMeasure& mu);

}  // namespace qmon

#pragma once

// Pure QND monitoring of position: the observer-side measure SDE, the
// cheater construction S = B + A t, the closed-form posterior and kernel,
// and the filtering identities (innovation, Girsanov, conditional variance)
// as executable checks.
//
// Units: measures live in x-units. The signal couples to A = 2*gamma*X;
// alpha_from_x is the only place that conversion happens.

#include <complex>
#include <cstddef>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include "qmon/core_sde.hpp"
#include "qmon/measure_grid.hpp"

namespace qmon {

inline double alpha_from_x(double x, double gamma) noexcept { return 2.0 * gamma * x; }
inline double x_from_alpha(double alpha, double gamma) noexcept { return alpha / (2.0 * gamma); }

// exponential: log-weights gain beta*dW - beta^2*dt/2 with beta = 2*gamma*(x - <X>).
//   Reproduces the closed-form posterior for any signal path.
// euler: linear Euler-Maruyama, weights multiplied by 1 + beta*dW. Nodes whose
//   factor is non-positive are emptied (the scheme cannot represent them).
enum class MonitorScheme { exponential, euler };

struct QndConfig {
  double gamma;
  GridMeasure mu0;
  TimeGrid grid;
  RngStream rng;

  void validate() const;
};

struct StepResult {
  GridMeasure measure;
  double dS;
  double mass_deficit;  // before renormalization
};

StepResult qnd_step(const GridMeasure& mu, double dW, double dt, double gamma,
                    MonitorScheme scheme = MonitorScheme::exponential);

// Applies the monitoring update to normalized log-weights in place; mean is
// <X> before the step. Does not renormalize.
void apply_monitoring(std::span<double> log_weights, const Grid1D& grid, double mean, double dW, double dt,
                      double gamma, MonitorScheme scheme);

// mu0 reweighted by exp(alpha*S - alpha^2*t/2), alpha = 2*gamma*x.
GridMeasure posterior_closed_form(const GridMeasure& mu0, double S, double t, double gamma);

enum class SignalMode { cheater, observer };

struct SignalPath {
  TimeGrid grid;
  std::vector<double> S;  // S[0] = 0, one entry per time point
  NoisePath noise;        // B increments (cheater) or innovation dW (observer)
  SignalMode mode = SignalMode::observer;
  std::optional<double> xbar;  // cheater only
};

// Draws a node of mu according to its masses using one uniform.
double sample_from(const GridMeasure& mu, double uniform01);

// xbar is drawn from mu0 on lane 1 of rng; B uses lane 0.
SignalPath simulate_cheater(const GridMeasure& mu0, const TimeGrid& grid, double gamma, const RngStream& rng);

struct ObserverRun {
  SignalPath path;
  std::vector<double> post_mean;  // <X> at each time point
  std::vector<double> post_var;
  std::vector<GridMeasure> measures;  // every time point when kept, else only the final one
};

ObserverRun simulate_observer(const GridMeasure& mu0, const TimeGrid& grid, double gamma, const RngStream& rng,
                              MonitorScheme scheme = MonitorScheme::exponential, bool keep_measures = true);

// Complex kernel on a square grid, stored as log|rho| and arg(rho) so that the
// strongly damped off-diagonal never underflows.
class KernelSnapshot {
 public:
  KernelSnapshot(Grid1D axis, std::vector<double> log_magnitude, std::vector<double> phase, double time);

  static KernelSnapshot from_function(const Grid1D& axis,
                                      const std::function<std::complex<double>(double, double)>& rho, double time);
  // Pure state psi(x) conj(psi(y)).
  static KernelSnapshot pure_state(const Grid1D& axis, const std::function<std::complex<double>(double)>& psi);

  const Grid1D& axis() const noexcept { return axis_; }
  std::size_t n() const noexcept { return axis_.n_points; }
  double time() const noexcept { return time_; }
  double log_magnitude(std::size_t i, std::size_t j) const noexcept { return log_mag_[i * n() + j]; }
  double phase(std::size_t i, std::size_t j) const noexcept { return phase_[i * n() + j]; }
  std::complex<double> value(std::size_t i, std::size_t j) const noexcept;

  // max |rho(x,y) - conj(rho(y,x))| relative to the largest entry.
  double hermiticity_defect() const noexcept;
  // Diagonal as an (unnormalized) measure; the phase of the diagonal must vanish.
  GridMeasure diagonal() const;

 private:
  Grid1D axis_;
  std::vector<double> log_mag_;
  std::vector<double> phase_;
  double time_;
};

struct KernelSolution {
  KernelSnapshot rho_hat;
  double log_Z;  // log of the trace of rho_hat
};

KernelSolution kernel_closed_form(const KernelSnapshot& rho0, double S, double t, double gamma);

// Global Euler defect of the linear kernel SDE along a given signal path:
// max over the grid of |rho_hat(T) - rho0 - sum_k rhs_k| / max|rho0|, where
// rho_hat is the closed form at each step and rhs_k the SDE increment.
double hat_rho_residual(const KernelSnapshot& rho0, double gamma, std::span<const double> dS, double dt);

// Standard deviation of a normalized measure.
double collapse_width(const GridMeasure& mu);

// W_{t_k} = S_{t_k} - sum_{j<k} E[A | H_{t_j}] dt, with A = 2*gamma*X.
std::vector<double> innovation_path(const SignalPath& path, const GridMeasure& mu0, double gamma);

struct GirsanovResult {
  double lhs, lhs_se;
  double rhs, rhs_se;
};

// Functional f(A, S_{t_1}, ..., S_{t_k}) in alpha-units.
using PathFunctional = std::function<double(double, std::span<const double>)>;

// E[f(A, S)] with S = B + A t versus E[f(A, B) exp(A B_T - A^2 T/2)], T the last
// time. A = 2*gamma*xbar with xbar ~ mu0. The two sides use disjoint streams.
GirsanovResult girsanov_check(const PathFunctional& f, const GridMeasure& mu0, double gamma,
                              std::span<const double> times, std::size_t n_samples, std::uint64_t seed);

// Posterior variance of A = 2*gamma*X given (S_t, t); computed both as a
// centred sum and as the pair sum (1/2) sum p_i p_j (a_i - a_j)^2. Throws
// NumericalError if the two disagree beyond 1e-10 (relative to max(1, E[A^2])).
double conditional_variance(const GridMeasure& mu0, double S, double t, double gamma);

// p[node][outcome] for a finite outcome set, validated row by row.
class OutcomeTable {
 public:
  static constexpr std::size_t kMaxOutcomes = 16;

  OutcomeTable(const Grid1D& grid, std::size_t n_outcomes, const std::function<double(std::size_t, double)>& p);

  std::size_t n_outcomes() const noexcept { return k_; }
  double p(std::size_t node, std::size_t outcome) const noexcept { return table_[node * k_ + outcome]; }
  const Grid1D& grid() const noexcept { return grid_; }

 private:
  Grid1D grid_;
  std::size_t k_;
  std::vector<double> table_;
};

struct DiscreteChainConfig {
  OutcomeTable table;
  GridMeasure mu0;
  std::size_t n_rounds;
};

struct ChainStep {
  GridMeasure measure;
  std::size_t outcome;
};

// Samples outcome i with probability mu[p(i|.)] and returns the Bayes update.
ChainStep discrete_chain_step(const GridMeasure& mu, const OutcomeTable& table, RngStream& rng);

// Columns t,S,W,post_mean,post_var. Cheater paths carry a "# xbar=" line.
void write_trajectory_csv(std::ostream& out, const SignalPath& path, std::span<const double> W,
                          std::span<const double> post_mean, std::span<const double> post_var);

}  // namespace qmon

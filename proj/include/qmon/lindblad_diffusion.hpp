#pragma once

// Position monitoring in competition with a Lindbladian quadratic in momentum.
// On functions of X such a Lindbladian acts as the generator of the classical
// SDE dY = U(Y) dt + V(Y) dB; the quantum Laplacian -(D/2)[P,[P,.]] is the
// case U = 0, V = sqrt(D).

#include <array>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "qmon/core_sde.hpp"
#include "qmon/ensemble_stats.hpp"
#include "qmon/measure_grid.hpp"
#include "qmon/qnd_monitor.hpp"

namespace qmon {

struct LindbladSpec {
  std::string label;
  std::function<double(double)> U, V, dU, dV, ddV;

  static LindbladSpec quantum_laplacian(double D);
  // U(x) = -theta * (x - center), V = sigma.
  static LindbladSpec ornstein_uhlenbeck(double theta, double sigma, double center = 0.0);

  // V >= 0 and every evaluator finite on the grid nodes and interfaces.
  void validate(const Grid1D& grid) const;
};

// Grid discretization of the generator (1/2) V^2 d^2 + U d in flux form with
// zero flux through both ends. forward acts on densities, backward on test
// functions; the two are exact adjoints for sum_i a_i b_i dx.
class FokkerPlanckOperator {
 public:
  FokkerPlanckOperator(const LindbladSpec& spec, const Grid1D& grid);

  void forward(std::span<const double> density, std::span<double> out) const;
  void backward(std::span<const double> phi, std::span<double> out) const;

  const Grid1D& grid() const noexcept { return grid_; }
  // max_i V(x_i)^2 dt / dx^2; explicit steps need this <= 1/2.
  double diffusion_number(double dt) const noexcept;
  // Throws StabilityError when the bound is violated.
  void check_stability(double dt) const;
  bool trivial() const noexcept { return trivial_; }

 private:
  Grid1D grid_;
  std::vector<double> u_face_;  // U at x_{i+1/2}
  std::vector<double> v2_;      // V^2 at x_i
  bool trivial_ = false;        // U == 0 and V == 0 everywhere
};

struct MonitoredDiffusionConfig {
  std::variant<double, LindbladSpec> dynamics;  // diffusion constant D, or a general (U, V)
  double gamma = 1.0;                           // 0 switches monitoring off
  GridMeasure mu0;
  TimeGrid grid;
  RngStream rng;
  MonitorScheme scheme = MonitorScheme::exponential;
  // Nodes whose log-weight falls this far below the maximum are emptied after
  // each step. 0 disables pruning. Saves time in large sweeps.
  double prune_log_cutoff = 0.0;

  LindbladSpec spec() const;
  void validate() const;
};

// Prepared stepper: builds the grid operator once.
class MonitoredDiffusion {
 public:
  explicit MonitoredDiffusion(const MonitoredDiffusionConfig& cfg);

  // Lie splitting: one explicit generator step, then the monitoring update and
  // renormalization. Returns dS = 2 gamma <X> dt + dW, <X> taken after the
  // generator step. With a trivial generator this is exactly qnd_step.
  double step(std::vector<double>& log_weights, double dW, double* mass_deficit = nullptr) const;
  StepResult step(const GridMeasure& mu, double dW) const;

  const MonitoredDiffusionConfig& config() const noexcept { return cfg_; }
  const FokkerPlanckOperator& generator() const noexcept { return op_; }

 private:
  MonitoredDiffusionConfig cfg_;
  FokkerPlanckOperator op_;
};

StepResult monitored_diffusion_step(const GridMeasure& mu, const MonitoredDiffusionConfig& cfg, double dW);

struct DiffusionRun {
  TimeGrid grid;
  std::vector<double> S, W, post_mean, post_var;  // one entry per time point
  double max_mass_deficit = 0.0;
  GridMeasure final_measure;
  std::vector<GridMeasure> measures;  // filled only when requested
};

// Noise comes from lane 0 of cfg.rng, or from the supplied path.
DiffusionRun simulate_monitored(const MonitoredDiffusionConfig& cfg, bool keep_measures = false,
                                const NoisePath* noise = nullptr);

// Euler-Maruyama path of dY = U dt + V dB, one value per time point.
std::vector<double> classical_sde_oracle(const LindbladSpec& spec, double y0, const TimeGrid& grid,
                                         const RngStream& rng);

// E_{mu0}[g(Y_t)] by evolving g with the backward operator on the grid.
double backward_expectation(const LindbladSpec& spec, const GridMeasure& mu0, const std::function<double(double)>& g,
                            double t, double dt);

// Polynomial of total degree <= 4 in at most three moments.
class MomentPolynomial {
 public:
  struct Term {
    double coefficient;
    std::array<unsigned, 3> powers;
  };

  MomentPolynomial(std::size_t arity, std::vector<Term> terms);
  static MomentPolynomial identity();  // f(m) = m
  static MomentPolynomial square();    // f(m) = m^2

  std::size_t arity() const noexcept { return arity_; }
  unsigned degree() const noexcept;
  double operator()(std::span<const double> m) const;

 private:
  std::size_t arity_;
  std::vector<Term> terms_;
};

// F(mu) = f(mu[phi_1], ..., mu[phi_k]); its limit reference is E[f(phi_1(Y), ...)].
struct MomentObservable {
  std::string label;
  std::vector<TestFunction> phis;
  MomentPolynomial f;

  double evaluate(const GridMeasure& mu) const;
  double pointwise(double x) const;

  static MomentObservable power_moment(unsigned k);  // mu[x^k]
  static MomentObservable squared_mean();            // mu[x]^2
};

struct SweepRow {
  double gamma;
  std::string observable;
  double estimate, std_err, reference, abs_error;
};

struct SweepOptions {
  std::vector<double> gammas;
  std::vector<MomentObservable> observables;
  std::size_t n_paths = 1000;
  std::uint64_t seed = 0;
  unsigned threads = 0;
  // Analytic references, one per observable. Backward-operator oracle when absent.
  std::optional<std::vector<double>> references;
};

struct SweepReport {
  std::vector<SweepRow> rows;                  // observables, then concentration proxies
  std::vector<std::size_t> failures_per_gamma;  // paths lost to NumericalError
  std::size_t n_paths = 0;

  const SweepRow& find(double gamma, const std::string& observable) const;
  bool valid() const noexcept;
  void write_csv(std::ostream& out) const;  // gamma,observable,estimate,std_err,reference,abs_error
};

// Label of the concentration proxy E[mu[phi^2] - mu[phi]^2] for test function phi.
std::string concentration_label(const std::string& phi_label);

// Runs base.mu0 to base.grid's horizon for each gamma. Path i of every gamma
// uses stream (seed, i), so the sweep is on common random numbers.
SweepReport strong_limit_sweep(const MonitoredDiffusionConfig& base, const SweepOptions& options);

// rho(x, y) = sigma0((x - y)/2) exp(-(gamma^2/2)(x - y)^2 t) mu~((x + y)/2) on
// the square grid of mu~'s nodes. (x + y)/2 falls between two nodes when i + j
// is odd; the density is interpolated linearly there.
KernelSnapshot separated_kernel(const std::function<std::complex<double>(double)>& sigma0,
                                const GridMeasure& mu_tilde, double gamma, double t);

// Global Euler defect of the kernel SDE
//   d rho = (D/2)(dx + dy)^2 rho dt - (gamma^2/2)(x - y)^2 rho dt + gamma (x + y - 2<X>) rho dW
// for kernels assembled by separated_kernel along a diagonal trajectory
// mu_path (n + 1 measures) driven by dW. Evaluated where (x + y)/2 is a node
// and all diagonal neighbours exist; relative to max |rho_0|.
double separated_kernel_residual(const std::function<std::complex<double>(double)>& sigma0,
                                 std::span<const GridMeasure> mu_path, std::span<const double> dW, double D,
                                 double gamma, double dt);

}  // namespace qmon

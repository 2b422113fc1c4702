#include "qmon/qnd_monitor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <ostream>
#include <string>

#include "qmon/csv.hpp"
#include "qmon/error.hpp"
#include "qmon/summation.hpp"

namespace qmon {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void require_gamma(double gamma) {
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma must be finite and positive", "gamma");
}

void require_time(double t) {
  if (!(t >= 0.0) || !std::isfinite(t)) throw ConfigError("time must be finite and non-negative", "t");
}

double posterior_variance_x(const GridMeasure& mu) {
  return std::max(0.0, variance(mu));
}
}  // namespace

void QndConfig::validate() const {
  require_gamma(gamma);
  grid.validate();
  if (!mu0.normalized()) throw ConfigError("initial measure must be normalized", "mu0");
}

void apply_monitoring(std::span<double> lw, const Grid1D& grid, double mean, double dW, double dt, double gamma,
                      MonitorScheme scheme) {
  for (std::size_t i = 0; i < lw.size(); ++i) {
    if (lw[i] == kNegInf) continue;
    const double beta = 2.0 * gamma * (grid.x(i) - mean);
    if (scheme == MonitorScheme::exponential) {
      lw[i] += beta * dW - 0.5 * beta * beta * dt;
    } else {
      const double factor = beta * dW;
      lw[i] = factor > -1.0 ? lw[i] + std::log1p(factor) : kNegInf;
    }
  }
}

StepResult qnd_step(const GridMeasure& mu, double dW, double dt, double gamma, MonitorScheme scheme) {
  if (!mu.normalized()) throw ConfigError("qnd_step requires a normalized measure");
  const double m = mean_of_log_weights(mu.grid(), mu.log_weights());
  std::vector<double> lw(mu.log_weights().begin(), mu.log_weights().end());
  apply_monitoring(lw, mu.grid(), m, dW, dt, gamma, scheme);
  const double deficit = renormalize_log_weights(lw, mu.grid().dx);
  return {GridMeasure(mu.grid(), std::move(lw), true), 2.0 * gamma * m * dt + dW, deficit};
}

GridMeasure posterior_closed_form(const GridMeasure& mu0, double S, double t, double gamma) {
  require_gamma(gamma);
  require_time(t);
  std::vector<double> lw(mu0.log_weights().begin(), mu0.log_weights().end());
  for (std::size_t i = 0; i < lw.size(); ++i) {
    if (lw[i] == kNegInf) continue;
    const double a = alpha_from_x(mu0.x(i), gamma);
    lw[i] += a * S - 0.5 * a * a * t;
  }
  renormalize_log_weights(lw, mu0.grid().dx);
  return GridMeasure(mu0.grid(), std::move(lw), true);
}

double sample_from(const GridMeasure& mu, double u) {
  const auto masses = mu.node_masses();
  CompensatedSum total;
  for (double m : masses) total.add(m);
  const double target = u * total.value();
  double cumulative = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < masses.size(); ++i) {
    if (masses[i] <= 0.0) continue;
    cumulative += masses[i];
    last = i;
    if (cumulative >= target) return mu.x(i);
  }
  return mu.x(last);
}

SignalPath simulate_cheater(const GridMeasure& mu0, const TimeGrid& grid, double gamma, const RngStream& rng) {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma must be finite and non-negative", "gamma");
  grid.validate();
  RngStream draw = rng.substream(1);
  const double xbar = sample_from(mu0, draw.uniform());
  SignalPath path{grid, {}, sample_noise(grid, rng.substream(0)), SignalMode::cheater, xbar};
  const auto B = brownian_partial_sums(path.noise);
  const double a = alpha_from_x(xbar, gamma);
  path.S.resize(B.size());
  for (std::size_t k = 0; k < B.size(); ++k) path.S[k] = B[k] + a * (grid.time(k) - grid.t0);
  return path;
}

ObserverRun simulate_observer(const GridMeasure& mu0, const TimeGrid& grid, double gamma, const RngStream& rng,
                              MonitorScheme scheme, bool keep_measures) {
  require_gamma(gamma);
  grid.validate();
  if (!mu0.normalized()) throw ConfigError("initial measure must be normalized", "mu0");

  ObserverRun run{SignalPath{grid, {}, sample_noise(grid, rng.substream(0)), SignalMode::observer, std::nullopt},
                  {}, {}, {}};
  const std::size_t n = grid.n_steps;
  run.path.S.assign(n + 1, 0.0);
  run.post_mean.resize(n + 1);
  run.post_var.resize(n + 1);
  if (keep_measures) run.measures.reserve(n + 1);

  std::vector<double> lw(mu0.log_weights().begin(), mu0.log_weights().end());
  const Grid1D& g = mu0.grid();
  CompensatedSum S;
  for (std::size_t k = 0;; ++k) {
    GridMeasure current(g, lw, true);
    run.post_mean[k] = mean(current);
    run.post_var[k] = posterior_variance_x(current);
    if (keep_measures || k == n) run.measures.push_back(std::move(current));
    if (k == n) break;
    const double dW = run.path.noise.increments[k];
    apply_monitoring(lw, g, run.post_mean[k], dW, grid.dt, gamma, scheme);
    renormalize_log_weights(lw, g.dx);
    S.add(2.0 * gamma * run.post_mean[k] * grid.dt + dW);
    run.path.S[k + 1] = S.value();
  }
  return run;
}

KernelSnapshot::KernelSnapshot(Grid1D axis, std::vector<double> log_magnitude, std::vector<double> phase, double time)
    : axis_(axis), log_mag_(std::move(log_magnitude)), phase_(std::move(phase)), time_(time) {
  const std::size_t cells = axis_.n_points * axis_.n_points;
  if (log_mag_.size() != cells || phase_.size() != cells) throw ConfigError("kernel storage does not match its axis");
  for (double v : log_mag_)
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
      throw ConfigError("kernel log-magnitudes must be finite or -inf");
}

KernelSnapshot KernelSnapshot::from_function(const Grid1D& axis,
                                             const std::function<std::complex<double>(double, double)>& rho,
                                             double time) {
  const std::size_t n = axis.n_points;
  std::vector<double> lm(n * n), ph(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const std::complex<double> v = rho(axis.x(i), axis.x(j));
      const double r = std::abs(v);
      lm[i * n + j] = r > 0.0 ? std::log(r) : kNegInf;
      ph[i * n + j] = r > 0.0 ? std::arg(v) : 0.0;
    }
  return KernelSnapshot(axis, std::move(lm), std::move(ph), time);
}

KernelSnapshot KernelSnapshot::pure_state(const Grid1D& axis, const std::function<std::complex<double>(double)>& psi) {
  return from_function(axis, [&](double x, double y) { return psi(x) * std::conj(psi(y)); }, 0.0);
}

std::complex<double> KernelSnapshot::value(std::size_t i, std::size_t j) const noexcept {
  return std::polar(std::exp(log_magnitude(i, j)), phase(i, j));
}

double KernelSnapshot::hermiticity_defect() const noexcept {
  double scale = 0.0, defect = 0.0;
  for (std::size_t i = 0; i < n(); ++i)
    for (std::size_t j = 0; j < n(); ++j) {
      scale = std::max(scale, std::abs(value(i, j)));
      defect = std::max(defect, std::abs(value(i, j) - std::conj(value(j, i))));
    }
  return scale > 0.0 ? defect / scale : 0.0;
}

GridMeasure KernelSnapshot::diagonal() const {
  std::vector<double> lw(n());
  for (std::size_t i = 0; i < n(); ++i) {
    const double lm = log_magnitude(i, i);
    if (lm != kNegInf && std::abs(std::remainder(phase(i, i), 2.0 * M_PI)) > 1e-12)
      throw NumericalError("kernel diagonal is not real and non-negative");
    lw[i] = lm;
  }
  return GridMeasure(axis_, std::move(lw));
}

KernelSolution kernel_closed_form(const KernelSnapshot& rho0, double S, double t, double gamma) {
  require_gamma(gamma);
  require_time(t);
  const std::size_t n = rho0.n();
  const Grid1D& axis = rho0.axis();
  std::vector<double> lm(n * n), ph(n * n);
  const double g2t = gamma * gamma * t;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double x = axis.x(i), y = axis.x(j);
      lm[i * n + j] = rho0.log_magnitude(i, j) - g2t * (x * x + y * y) + gamma * (x + y) * S;
      ph[i * n + j] = rho0.phase(i, j);
    }
  KernelSnapshot rho_hat(axis, std::move(lm), std::move(ph), rho0.time() + t);

  std::vector<double> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = rho_hat.log_magnitude(i, i) + std::log(axis.dx);
  return {std::move(rho_hat), log_sum_exp(diag)};
}

double hat_rho_residual(const KernelSnapshot& rho0, double gamma, std::span<const double> dS, double dt) {
  require_gamma(gamma);
  const std::size_t n = rho0.n();
  const Grid1D& axis = rho0.axis();
  std::vector<double> S(dS.size() + 1, 0.0);
  for (std::size_t k = 0; k < dS.size(); ++k) S[k + 1] = S[k] + dS[k];
  const double T = dt * static_cast<double>(dS.size());

  double scale = 0.0, defect = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double r0 = std::exp(rho0.log_magnitude(i, j));
      if (r0 == 0.0) continue;
      const double x = axis.x(i), y = axis.x(j);
      const double q = x * x + y * y, s = x + y, d2 = (x - y) * (x - y);
      // rho_hat = rho0 * E(t, S); the complex phase of rho0 factors out.
      CompensatedSum drift;
      for (std::size_t k = 0; k < dS.size(); ++k) {
        const double E = std::exp(-gamma * gamma * dt * static_cast<double>(k) * q + gamma * s * S[k]);
        drift.add(E * (-0.5 * gamma * gamma * d2 * dt + gamma * s * dS[k]));
      }
      const double E_end = std::exp(-gamma * gamma * T * q + gamma * s * S.back());
      scale = std::max(scale, r0);
      defect = std::max(defect, r0 * std::abs(E_end - 1.0 - drift.value()));
    }
  return scale > 0.0 ? defect / scale : 0.0;
}

double collapse_width(const GridMeasure& mu) { return std::sqrt(posterior_variance_x(mu)); }

std::vector<double> innovation_path(const SignalPath& path, const GridMeasure& mu0, double gamma) {
  require_gamma(gamma);
  const std::size_t n = path.S.size();
  std::vector<double> W(n, 0.0);
  CompensatedSum integral;
  for (std::size_t k = 0; k < n; ++k) {
    W[k] = path.S[k] - integral.value();
    if (k + 1 == n) break;
    const double t = path.grid.time(k) - path.grid.t0;
    const double posterior_mean_a = alpha_from_x(mean(posterior_closed_form(mu0, path.S[k], t, gamma)), gamma);
    integral.add(posterior_mean_a * path.grid.dt);
  }
  return W;
}

GirsanovResult girsanov_check(const PathFunctional& f, const GridMeasure& mu0, double gamma,
                              std::span<const double> times, std::size_t n_samples, std::uint64_t seed) {
  require_gamma(gamma);
  if (times.empty()) throw ConfigError("girsanov check needs at least one observation time", "times");
  if (n_samples < 2) throw ConfigError("girsanov check needs at least two samples", "n_paths");
  for (std::size_t k = 0; k < times.size(); ++k)
    if (!(times[k] > (k ? times[k - 1] : 0.0))) throw ConfigError("observation times must increase from 0", "times");
  const double T = times.back();

  std::vector<double> S(times.size());
  auto brownian_at_times = [&](RngStream& rng, std::vector<double>& out) {
    double b = 0.0, prev = 0.0;
    for (std::size_t k = 0; k < times.size(); ++k) {
      b += std::sqrt(times[k] - prev) * rng.normal();
      prev = times[k];
      out[k] = b;
    }
  };

  CompensatedSum l1, l2, r1, r2;
  for (std::size_t i = 0; i < n_samples; ++i) {
    RngStream left(seed, i, 0), right(seed, i, 1);

    const double a_left = alpha_from_x(sample_from(mu0, left.uniform()), gamma);
    brownian_at_times(left, S);
    for (std::size_t k = 0; k < times.size(); ++k) S[k] += a_left * times[k];
    const double lv = f(a_left, S);
    l1.add(lv);
    l2.add(lv * lv);

    const double a_right = alpha_from_x(sample_from(mu0, right.uniform()), gamma);
    brownian_at_times(right, S);
    const double rv = f(a_right, S) * std::exp(a_right * S.back() - 0.5 * a_right * a_right * T);
    r1.add(rv);
    r2.add(rv * rv);
  }
  const double n = static_cast<double>(n_samples);
  auto se = [n](double sum, double sum_sq) {
    const double m = sum / n;
    return std::sqrt(std::max(0.0, (sum_sq / n - m * m) * n / (n - 1.0)) / n);
  };
  return {l1.value() / n, se(l1.value(), l2.value()), r1.value() / n, se(r1.value(), r2.value())};
}

double conditional_variance(const GridMeasure& mu0, double S, double t, double gamma) {
  const GridMeasure post = posterior_closed_form(mu0, S, t, gamma);
  const auto p = post.node_masses();
  std::vector<std::size_t> support;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0.0) support.push_back(i);

  const double centred = 4.0 * gamma * gamma * posterior_variance_x(post);
  CompensatedSum pair_sum, second;
  for (std::size_t a = 0; a < support.size(); ++a) {
    const std::size_t i = support[a];
    const double ai = alpha_from_x(post.x(i), gamma);
    second.add(p[i] * ai * ai);
    for (std::size_t b = a + 1; b < support.size(); ++b) {
      const std::size_t j = support[b];
      const double d = ai - alpha_from_x(post.x(j), gamma);
      pair_sum.add(p[i] * p[j] * d * d);  // (i,j) and (j,i) each carry 1/2
    }
  }
  const double paired = pair_sum.value();
  if (std::abs(centred - paired) > 1e-10 * std::max(1.0, second.value()))
    throw NumericalError("conditional variance formulas disagree: " + format_double(centred) + " vs " +
                         format_double(paired));
  return centred;
}

OutcomeTable::OutcomeTable(const Grid1D& grid, std::size_t n_outcomes,
                           const std::function<double(std::size_t, double)>& p)
    : grid_(grid), k_(n_outcomes), table_(grid.n_points * n_outcomes) {
  if (k_ < 1 || k_ > kMaxOutcomes) throw ConfigError("number of outcomes must be between 1 and 16", "n_outcomes");
  for (std::size_t node = 0; node < grid.n_points; ++node) {
    CompensatedSum row;
    for (std::size_t i = 0; i < k_; ++i) {
      const double v = p(i, grid.x(node));
      if (!(v >= 0.0) || !std::isfinite(v))
        throw ConfigError("outcome probability must be finite and non-negative at x = " + format_double(grid.x(node)),
                          "outcome_probabilities");
      table_[node * k_ + i] = v;
      row.add(v);
    }
    if (std::abs(row.value() - 1.0) > 1e-12)
      throw ConfigError("outcome probabilities at x = " + format_double(grid.x(node)) + " sum to " +
                            format_double(row.value()),
                        "outcome_probabilities");
  }
}

ChainStep discrete_chain_step(const GridMeasure& mu, const OutcomeTable& table, RngStream& rng) {
  if (!mu.normalized()) throw ConfigError("discrete_chain_step requires a normalized measure");
  if (!(mu.grid() == table.grid())) throw ConfigError("outcome table grid does not match the measure");
  const std::size_t K = table.n_outcomes();
  const auto masses = mu.node_masses();
  std::vector<double> marginal(K, 0.0);
  for (std::size_t i = 0; i < K; ++i) {
    CompensatedSum s;
    for (std::size_t node = 0; node < masses.size(); ++node) s.add(masses[node] * table.p(node, i));
    marginal[i] = s.value();
  }
  const double total = std::accumulate(marginal.begin(), marginal.end(), 0.0);
  const double target = rng.uniform() * total;
  std::size_t outcome = K;
  double cumulative = 0.0;
  for (std::size_t i = 0; i < K; ++i) {
    if (marginal[i] <= 0.0) continue;
    cumulative += marginal[i];
    outcome = i;
    if (cumulative >= target) break;
  }
  if (outcome == K) throw ConfigError("every outcome has zero probability under the current measure");

  std::vector<double> lw(mu.log_weights().begin(), mu.log_weights().end());
  for (std::size_t node = 0; node < lw.size(); ++node) {
    const double p = table.p(node, outcome);
    lw[node] = p > 0.0 ? lw[node] + std::log(p) : kNegInf;
  }
  renormalize_log_weights(lw, mu.grid().dx);
  return {GridMeasure(mu.grid(), std::move(lw), true), outcome};
}

void write_trajectory_csv(std::ostream& out, const SignalPath& path, std::span<const double> W,
                          std::span<const double> post_mean, std::span<const double> post_var) {
  const std::size_t n = path.S.size();
  if (W.size() != n || post_mean.size() != n || post_var.size() != n)
    throw Error("trajectory columns have inconsistent lengths");
  CsvWriter csv(out, {"t", "S", "W", "post_mean", "post_var"});
  csv.comment(std::string("mode=") + (path.mode == SignalMode::cheater ? "cheater" : "observer"));
  if (path.xbar) csv.comment("xbar=" + format_double(*path.xbar));
  csv.comment("t: time; S: output signal; W: innovation S - int E[A|H] dt; post_mean, post_var: posterior of X");
  for (std::size_t k = 0; k < n; ++k) csv.row({path.grid.time(k), path.S[k], W[k], post_mean[k], post_var[k]});
}

}  // namespace qmon

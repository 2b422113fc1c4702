#include "qmon/lindblad_diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <ostream>

#include "qmon/csv.hpp"
#include "qmon/error.hpp"
#include "qmon/summation.hpp"

namespace qmon {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::size_t steps_for(double t, double dt) {
  const double n = std::round(t / dt);
  if (!(n >= 1.0) || std::abs(n * dt - t) > 1e-9 * std::max(1.0, t))
    throw ConfigError("horizon must be a positive multiple of dt", "t_eval");
  return static_cast<std::size_t>(n);
}
}  // namespace

LindbladSpec LindbladSpec::quantum_laplacian(double D) {
  if (!(D >= 0.0) || !std::isfinite(D)) throw ConfigError("diffusion constant must be finite and non-negative", "D");
  const double v = std::sqrt(D);
  auto zero = [](double) { return 0.0; };
  return {"quantum-laplacian", zero, [v](double) { return v; }, zero, zero, zero};
}

LindbladSpec LindbladSpec::ornstein_uhlenbeck(double theta, double sigma, double center) {
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("sigma must be finite and non-negative", "sigma");
  if (!std::isfinite(theta)) throw ConfigError("theta must be finite", "theta");
  auto zero = [](double) { return 0.0; };
  return {"ornstein-uhlenbeck", [=](double x) { return -theta * (x - center); }, [sigma](double) { return sigma; },
          [theta](double) { return -theta; }, zero, zero};
}

void LindbladSpec::validate(const Grid1D& grid) const {
  if (!U || !V) throw ConfigError("Lindblad spec needs both U and V", "U");
  for (std::size_t i = 0; i < grid.n_points; ++i) {
    for (double x : {grid.x(i), grid.x(i) + 0.5 * grid.dx}) {
      const double u = U(x), v = V(x);
      if (!std::isfinite(u)) throw ConfigError("U is not finite at x = " + format_double(x), "U");
      if (!std::isfinite(v) || v < 0.0) throw ConfigError("V must be finite and >= 0, fails at x = " + format_double(x), "V");
      for (const auto* d : {&dU, &dV, &ddV})
        if (*d && !std::isfinite((*d)(x))) throw ConfigError("derivative of U or V not finite at x = " + format_double(x), "V");
    }
  }
}

FokkerPlanckOperator::FokkerPlanckOperator(const LindbladSpec& spec, const Grid1D& grid) : grid_(grid) {
  spec.validate(grid);
  const std::size_t n = grid.n_points;
  u_face_.resize(n - 1);
  v2_.resize(n);
  trivial_ = true;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    u_face_[i] = spec.U(grid.x(i) + 0.5 * grid.dx);
    trivial_ = trivial_ && u_face_[i] == 0.0;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double v = spec.V(grid.x(i));
    v2_[i] = v * v;
    trivial_ = trivial_ && v2_[i] == 0.0;
  }
}

void FokkerPlanckOperator::forward(std::span<const double> p, std::span<double> out) const {
  const std::size_t n = grid_.n_points;
  const double dx = grid_.dx;
  double left_flux = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double right_flux = 0.0;
    if (i + 1 < n)
      right_flux = u_face_[i] * 0.5 * (p[i] + p[i + 1]) - (v2_[i + 1] * p[i + 1] - v2_[i] * p[i]) / (2.0 * dx);
    out[i] = -(right_flux - left_flux) / dx;
    left_flux = right_flux;
  }
}

void FokkerPlanckOperator::backward(std::span<const double> phi, std::span<double> out) const {
  const std::size_t n = grid_.n_points;
  const double dx = grid_.dx;
  for (std::size_t i = 0; i < n; ++i) {
    double advect = 0.0, diffuse = 0.0;
    if (i + 1 < n) {
      const double d = phi[i + 1] - phi[i];
      advect += u_face_[i] * d;
      diffuse += d;
    }
    if (i > 0) {
      const double d = phi[i] - phi[i - 1];
      advect += u_face_[i - 1] * d;
      diffuse -= d;
    }
    out[i] = advect / (2.0 * dx) + v2_[i] * diffuse / (2.0 * dx * dx);
  }
}

double FokkerPlanckOperator::diffusion_number(double dt) const noexcept {
  return *std::max_element(v2_.begin(), v2_.end()) * dt / (grid_.dx * grid_.dx);
}

void FokkerPlanckOperator::check_stability(double dt) const {
  const double r = diffusion_number(dt);
  if (r > 0.5)
    throw StabilityError("explicit generator step unstable: max V^2 dt/dx^2 = " + format_double(r) +
                         " exceeds 1/2; reduce dt or enlarge dx");
}

LindbladSpec MonitoredDiffusionConfig::spec() const {
  if (const double* D = std::get_if<double>(&dynamics)) return LindbladSpec::quantum_laplacian(*D);
  return std::get<LindbladSpec>(dynamics);
}

void MonitoredDiffusionConfig::validate() const {
  if (!(gamma >= 0.0) || !std::isfinite(gamma)) throw ConfigError("gamma must be finite and non-negative", "gamma");
  if (!(prune_log_cutoff >= 0.0)) throw ConfigError("prune cutoff must be non-negative", "prune_log_cutoff");
  grid.validate();
  if (!mu0.normalized()) throw ConfigError("initial measure must be normalized", "mu0");
  spec().validate(mu0.grid());
}

MonitoredDiffusion::MonitoredDiffusion(const MonitoredDiffusionConfig& cfg)
    : cfg_(cfg), op_((cfg.validate(), cfg.spec()), cfg.mu0.grid()) {
  if (!op_.trivial()) op_.check_stability(cfg_.grid.dt);
}

double MonitoredDiffusion::step(std::vector<double>& lw, double dW, double* mass_deficit) const {
  const Grid1D& g = op_.grid();
  const double dt = cfg_.grid.dt;
  double m;
  if (op_.trivial()) {
    m = mean_of_log_weights(g, lw);
  } else {
    thread_local std::vector<double> p, flow;
    p.resize(lw.size());
    flow.resize(lw.size());
    double pmax = 0.0;
    for (std::size_t i = 0; i < lw.size(); ++i) {
      p[i] = std::exp(lw[i]);
      pmax = std::max(pmax, p[i]);
    }
    op_.forward(p, flow);
    CompensatedSum mass, first;
    for (std::size_t i = 0; i < lw.size(); ++i) {
      double q = p[i] + dt * flow[i];
      if (q < 0.0) {
        if (q < -1e-12 * pmax)
          throw NumericalError("generator step produced negative density at x = " + format_double(g.x(i)) +
                               "; reduce dt or dx");
        q = 0.0;
      }
      p[i] = q;
      mass.add(q);
      first.add(q * g.x(i));
    }
    if (!(mass.value() > 0.0)) throw MeasureDied();
    m = first.value() / mass.value();
    const double log_mass = std::log(mass.value() * g.dx);
    for (std::size_t i = 0; i < lw.size(); ++i) lw[i] = p[i] > 0.0 ? std::log(p[i]) - log_mass : kNegInf;
  }
  if (cfg_.gamma > 0.0) apply_monitoring(lw, g, m, dW, dt, cfg_.gamma, cfg_.scheme);
  const double deficit = renormalize_log_weights(lw, g.dx);
  if (mass_deficit) *mass_deficit = deficit;
  if (cfg_.prune_log_cutoff > 0.0) {
    const double floor = *std::max_element(lw.begin(), lw.end()) - cfg_.prune_log_cutoff;
    for (double& v : lw)
      if (v < floor) v = kNegInf;
  }
  return 2.0 * cfg_.gamma * m * dt + dW;
}

StepResult MonitoredDiffusion::step(const GridMeasure& mu, double dW) const {
  if (!mu.normalized()) throw ConfigError("monitored_diffusion_step requires a normalized measure");
  if (!(mu.grid() == op_.grid())) throw ConfigError("measure grid does not match the configured grid");
  std::vector<double> lw(mu.log_weights().begin(), mu.log_weights().end());
  double deficit = 0.0;
  const double dS = step(lw, dW, &deficit);
  return {GridMeasure(mu.grid(), std::move(lw), true), dS, deficit};
}

StepResult monitored_diffusion_step(const GridMeasure& mu, const MonitoredDiffusionConfig& cfg, double dW) {
  return MonitoredDiffusion(cfg).step(mu, dW);
}

DiffusionRun simulate_monitored(const MonitoredDiffusionConfig& cfg, bool keep_measures, const NoisePath* noise) {
  const MonitoredDiffusion model(cfg);
  const TimeGrid& grid = cfg.grid;
  const NoisePath own = noise ? NoisePath{} : sample_noise(grid, cfg.rng.substream(0));
  const NoisePath& path = noise ? *noise : own;
  if (path.increments.size() != grid.n_steps || path.grid.dt != grid.dt)
    throw ConfigError("supplied noise path does not match the time grid", "dt");

  const std::size_t n = grid.n_steps;
  DiffusionRun run{grid, std::vector<double>(n + 1, 0.0), std::vector<double>(n + 1, 0.0),
                   std::vector<double>(n + 1), std::vector<double>(n + 1), 0.0, cfg.mu0, {}};
  std::vector<double> lw(cfg.mu0.log_weights().begin(), cfg.mu0.log_weights().end());
  const Grid1D& g = cfg.mu0.grid();
  CompensatedSum S, W;
  for (std::size_t k = 0;; ++k) {
    GridMeasure current(g, lw, true);
    run.post_mean[k] = mean(current);
    run.post_var[k] = std::max(0.0, variance(current));
    if (keep_measures) run.measures.push_back(current);
    if (k == n) {
      run.final_measure = std::move(current);
      break;
    }
    double deficit = 0.0;
    S.add(model.step(lw, path.increments[k], &deficit));
    W.add(path.increments[k]);
    run.max_mass_deficit = std::max(run.max_mass_deficit, std::abs(deficit));
    run.S[k + 1] = S.value();
    run.W[k + 1] = W.value();
  }
  return run;
}

std::vector<double> classical_sde_oracle(const LindbladSpec& spec, double y0, const TimeGrid& grid,
                                         const RngStream& rng) {
  if (!spec.U || !spec.V) throw ConfigError("Lindblad spec needs both U and V", "U");
  const NoisePath noise = sample_noise(grid, rng.substream(0));
  std::vector<double> y(grid.n_steps + 1);
  y[0] = y0;
  for (std::size_t k = 0; k < grid.n_steps; ++k)
    y[k + 1] = y[k] + spec.U(y[k]) * grid.dt + spec.V(y[k]) * noise.increments[k];
  return y;
}

double backward_expectation(const LindbladSpec& spec, const GridMeasure& mu0, const std::function<double(double)>& g,
                            double t, double dt) {
  const FokkerPlanckOperator op(spec, mu0.grid());
  op.check_stability(dt);
  const std::size_t n = steps_for(t, dt);
  std::vector<double> u(mu0.size()), du(mu0.size());
  for (std::size_t i = 0; i < u.size(); ++i) u[i] = g(mu0.x(i));
  for (std::size_t k = 0; k < n; ++k) {
    op.backward(u, du);
    for (std::size_t i = 0; i < u.size(); ++i) u[i] += dt * du[i];
  }
  const GridMeasure mu = mu0.normalized() ? mu0 : normalized(mu0);
  CompensatedSum s;
  for (std::size_t i = 0; i < u.size(); ++i) s.add(mu.node_mass(i) * u[i]);
  return s.value();
}

MomentPolynomial::MomentPolynomial(std::size_t arity, std::vector<Term> terms) : arity_(arity), terms_(std::move(terms)) {
  if (arity_ < 1 || arity_ > 3) throw ConfigError("moment polynomials take one to three moments", "observables");
  for (const auto& term : terms_) {
    for (std::size_t j = arity_; j < 3; ++j)
      if (term.powers[j] != 0) throw ConfigError("polynomial term uses more moments than declared", "observables");
  }
  if (degree() > 4) throw ConfigError("moment polynomials are limited to total degree 4", "observables");
}

MomentPolynomial MomentPolynomial::identity() { return MomentPolynomial(1, {{1.0, {1, 0, 0}}}); }
MomentPolynomial MomentPolynomial::square() { return MomentPolynomial(1, {{1.0, {2, 0, 0}}}); }

unsigned MomentPolynomial::degree() const noexcept {
  unsigned d = 0;
  for (const auto& term : terms_) d = std::max(d, term.powers[0] + term.powers[1] + term.powers[2]);
  return d;
}

double MomentPolynomial::operator()(std::span<const double> m) const {
  if (m.size() != arity_) throw ConfigError("moment polynomial called with the wrong number of moments");
  double total = 0.0;
  for (const auto& term : terms_) {
    double v = term.coefficient;
    for (std::size_t j = 0; j < arity_; ++j)
      for (unsigned p = 0; p < term.powers[j]; ++p) v *= m[j];
    total += v;
  }
  return total;
}

double MomentObservable::evaluate(const GridMeasure& mu) const {
  std::array<double, 3> m{};
  for (std::size_t j = 0; j < phis.size(); ++j) m[j] = moment(mu, phis[j]);
  return f(std::span<const double>(m.data(), phis.size()));
}

double MomentObservable::pointwise(double x) const {
  std::array<double, 3> v{};
  for (std::size_t j = 0; j < phis.size(); ++j) v[j] = phis[j](x);
  return f(std::span<const double>(v.data(), phis.size()));
}

MomentObservable MomentObservable::power_moment(unsigned k) {
  const std::string label = k == 1 ? "x" : "x^" + std::to_string(k);
  return {label, {TestFunction(label, [k](double x) { return std::pow(x, static_cast<int>(k)); })},
          MomentPolynomial::identity()};
}

MomentObservable MomentObservable::squared_mean() {
  return {"mean^2", {TestFunction("x", [](double x) { return x; })}, MomentPolynomial::square()};
}

std::string concentration_label(const std::string& phi_label) { return "concentration[" + phi_label + "]"; }

const SweepRow& SweepReport::find(double gamma, const std::string& observable) const {
  for (const auto& r : rows)
    if (r.gamma == gamma && r.observable == observable) return r;
  throw Error("sweep report has no row for " + observable + " at gamma " + format_double(gamma));
}

bool SweepReport::valid() const noexcept {
  for (std::size_t f : failures_per_gamma)
    if (f * 100 > n_paths) return false;
  return true;
}

void SweepReport::write_csv(std::ostream& out) const {
  CsvWriter csv(out, {"gamma", "observable", "estimate", "std_err", "reference", "abs_error"});
  csv.comment("estimate: ensemble mean of F(mu_t) over " + std::to_string(n_paths) + " paths; std_err: its standard error");
  csv.comment("reference: the gamma -> infinity limit E[f(phi(Y_t))]; concentration rows estimate E[mu_t[phi^2] - mu_t[phi]^2]");
  for (const auto& r : rows)
    csv.row_cells({format_double(r.gamma), r.observable, format_double(r.estimate), format_double(r.std_err),
                   format_double(r.reference), format_double(r.abs_error)});
}

SweepReport strong_limit_sweep(const MonitoredDiffusionConfig& base, const SweepOptions& options) {
  if (options.gammas.empty()) throw ConfigError("sweep needs at least one gamma", "gammas");
  for (std::size_t i = 1; i < options.gammas.size(); ++i)
    if (!(options.gammas[i] > options.gammas[i - 1])) throw ConfigError("gammas must be increasing", "gammas");
  if (options.observables.empty()) throw ConfigError("sweep needs at least one observable", "observables");
  if (options.references && options.references->size() != options.observables.size())
    throw ConfigError("one reference per observable is required", "references");
  if (options.n_paths < 2) throw ConfigError("sweep needs at least two paths", "n_paths");
  base.validate();
  for (const auto& obs : options.observables)
    for (const auto& phi : obs.phis) phi.check_bounded(base.mu0.grid());

  // Distinct test functions, for the concentration proxies.
  std::vector<const TestFunction*> phis;
  for (const auto& obs : options.observables)
    for (const auto& phi : obs.phis)
      if (std::none_of(phis.begin(), phis.end(), [&](const TestFunction* p) { return p->label() == phi.label(); }))
        phis.push_back(&phi);

  const double horizon = base.grid.horizon() - base.grid.t0;
  std::vector<double> references;
  if (options.references) {
    references = *options.references;
  } else {
    const LindbladSpec spec = base.spec();
    for (const auto& obs : options.observables)
      references.push_back(
          backward_expectation(spec, base.mu0, [&](double x) { return obs.pointwise(x); }, horizon, base.grid.dt));
  }

  SweepReport report;
  report.n_paths = options.n_paths;
  const std::size_t n_obs = options.observables.size();
  for (double gamma : options.gammas) {
    MonitoredDiffusionConfig cfg = base;
    cfg.gamma = gamma;
    const MonitoredDiffusion model(cfg);
    const double sqrt_dt = std::sqrt(cfg.grid.dt);
    auto mapped = parallel_map<std::vector<double>>(
        options.n_paths,
        [&](std::size_t i) {
          RngStream rng(options.seed, i);
          std::vector<double> lw(cfg.mu0.log_weights().begin(), cfg.mu0.log_weights().end());
          for (std::size_t k = 0; k < cfg.grid.n_steps; ++k) model.step(lw, sqrt_dt * rng.normal());
          const GridMeasure mu(cfg.mu0.grid(), std::move(lw), true);
          std::vector<double> values;
          for (const auto& obs : options.observables) values.push_back(obs.evaluate(mu));
          for (const TestFunction* phi : phis) {
            const double m1 = moment(mu, *phi);
            const double m2 = moment(mu, [phi](double x) {
              const double v = (*phi)(x);
              return v * v;
            });
            values.push_back(m2 - m1 * m1);
          }
          return values;
        },
        options.threads);

    std::vector<std::vector<double>> samples;
    for (auto& v : mapped.values)
      if (v) samples.push_back(std::move(*v));
    report.failures_per_gamma.push_back(mapped.failures.size());
    for (std::size_t j = 0; j < n_obs + phis.size(); ++j) {
      const auto st = sample_stats(column(samples, j));
      const bool is_obs = j < n_obs;
      const double ref = is_obs ? references[j] : 0.0;
      report.rows.push_back({gamma, is_obs ? options.observables[j].label : concentration_label(phis[j - n_obs]->label()),
                             st.mean, st.std_error, ref, std::abs(st.mean - ref)});
    }
  }
  return report;
}

KernelSnapshot separated_kernel(const std::function<std::complex<double>(double)>& sigma0,
                                const GridMeasure& mu_tilde, double gamma, double t) {
  if (std::abs(sigma0(0.0) - 1.0) > 1e-12) throw ConfigError("sigma0 must be normalized to sigma0(0) = 1", "sigma0");
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be non-negative", "gamma");
  const Grid1D& axis = mu_tilde.grid();
  const std::size_t n = axis.n_points;
  const auto lw = mu_tilde.log_weights();
  std::vector<double> lm(n * n), ph(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double x = axis.x(i), y = axis.x(j);
      const std::size_t s = i + j;
      double log_density;
      if (s % 2 == 0) {
        log_density = lw[s / 2];
      } else {
        const double mid = 0.5 * (std::exp(lw[s / 2]) + std::exp(lw[s / 2 + 1]));
        log_density = mid > 0.0 ? std::log(mid) : kNegInf;
      }
      const std::complex<double> s0 = sigma0(0.5 * (x - y));
      const double r = std::abs(s0);
      const double d = x - y;
      lm[i * n + j] = r > 0.0 && log_density != kNegInf ? std::log(r) - 0.5 * gamma * gamma * d * d * t + log_density
                                                        : kNegInf;
      ph[i * n + j] = r > 0.0 ? std::arg(s0) : 0.0;
    }
  return KernelSnapshot(axis, std::move(lm), std::move(ph), t);
}

double separated_kernel_residual(const std::function<std::complex<double>(double)>& sigma0,
                                 std::span<const GridMeasure> mu_path, std::span<const double> dW, double D,
                                 double gamma, double dt) {
  if (mu_path.size() != dW.size() + 1) throw ConfigError("trajectory needs one more measure than increments");
  if (mu_path.empty()) throw ConfigError("empty trajectory");
  const Grid1D& axis = mu_path.front().grid();
  const std::size_t n = axis.n_points;
  if (n < 3) throw ConfigError("grid too small for the residual stencil", "n_points");
  const double dx2 = axis.dx * axis.dx;

  auto on_lattice = [n](std::size_t i, std::size_t j) { return i >= 1 && j >= 1 && i + 1 < n && j + 1 < n && (i + j) % 2 == 0; };
  std::vector<std::complex<double>> drift(n * n, 0.0);
  std::vector<std::complex<double>> first;
  std::vector<std::complex<double>> rho(n * n);

  for (std::size_t k = 0; k < mu_path.size(); ++k) {
    const KernelSnapshot snap = separated_kernel(sigma0, mu_path[k], gamma, dt * static_cast<double>(k));
    for (std::size_t idx = 0; idx < n * n; ++idx) rho[idx] = snap.value(idx / n, idx % n);
    if (k == 0) first = rho;
    if (k + 1 == mu_path.size()) break;
    const double m = mean_of_log_weights(axis, mu_path[k].log_weights());
    for (std::size_t i = 1; i + 1 < n; ++i)
      for (std::size_t j = 1; j + 1 < n; ++j) {
        if (!on_lattice(i, j)) continue;
        const double x = axis.x(i), y = axis.x(j);
        const std::complex<double> r = rho[i * n + j];
        const std::complex<double> lap = (rho[(i + 1) * n + j + 1] - 2.0 * r + rho[(i - 1) * n + j - 1]) / dx2;
        drift[i * n + j] += (0.5 * D * lap - 0.5 * gamma * gamma * (x - y) * (x - y) * r) * dt +
                            gamma * (x + y - 2.0 * m) * r * dW[k];
      }
  }
  double scale = 0.0, defect = 0.0;
  for (std::size_t i = 1; i + 1 < n; ++i)
    for (std::size_t j = 1; j + 1 < n; ++j) {
      if (!on_lattice(i, j)) continue;
      const std::size_t idx = i * n + j;
      scale = std::max(scale, std::abs(first[idx]));
      defect = std::max(defect, std::abs(rho[idx] - first[idx] - drift[idx]));
    }
  return scale > 0.0 ? defect / scale : 0.0;
}

}  // namespace qmon

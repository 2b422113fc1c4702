#include "qmon/acceptance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "qmon/csv.hpp"
#include "qmon/ensemble_stats.hpp"
#include "qmon/error.hpp"
#include "qmon/experiment.hpp"
#include "qmon/lindblad_diffusion.hpp"
#include "qmon/packet_hamiltonian.hpp"
#include "qmon/qnd_monitor.hpp"

namespace qmon {

namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
  nlohmann::json data = nlohmann::json::object();
};

struct Criterion {
  std::string id, title;
  double budget_seconds;
  std::function<Outcome(std::uint64_t seed, const AcceptanceOptions&)> run;
};

std::string fmt(double v, int digits = 3) {
  std::ostringstream s;
  s << std::setprecision(digits) << v;
  return s.str();
}

bool strictly_decreasing(const std::vector<double>& v) {
  for (std::size_t i = 1; i < v.size(); ++i)
    if (!(v[i] < v[i - 1])) return false;
  return true;
}

std::string join(const std::vector<double>& v) {
  std::string s;
  for (double x : v) s += (s.empty() ? "" : ", ") + fmt(x);
  return "[" + s + "]";
}

double sup_mass_difference(const GridMeasure& a, const GridMeasure& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a.node_mass(i) - b.node_mass(i)));
  return d;
}

// Two atoms at x = -1, +1; with gamma = 1/2 these are A = -1, +1.
GridMeasure two_atoms() { return GridMeasure::two_point(-1.0, 1.0); }

// A1. The filter is driven by the observer's signal S itself (innovation
// dW = dS - 2 gamma <X> dt), so every step size sees the same path.
Outcome a1(std::uint64_t seed, const AcceptanceOptions&) {
  const double gamma = 0.5;
  const TimeGrid fine(0.0, 1e-4, 10000);
  const auto mu0 = two_atoms();
  const auto S = simulate_observer(mu0, fine, gamma, RngStream(seed, 0), MonitorScheme::exponential, false).path.S;

  auto sup_error = [&](std::size_t stride, MonitorScheme scheme) {
    const double dt = fine.dt * static_cast<double>(stride);
    GridMeasure mu = mu0;
    double worst = 0.0;
    for (std::size_t k = 0; k + stride <= fine.n_steps; k += stride) {
      const double dS = S[k + stride] - S[k];
      const double dW = dS - 2.0 * gamma * mean(mu) * dt;
      mu = qnd_step(mu, dW, dt, gamma, scheme).measure;
      worst = std::max(worst, sup_mass_difference(mu, posterior_closed_form(mu0, S[k + stride], fine.time(k + stride), gamma)));
    }
    return worst;
  };
  const std::vector<double> errs{sup_error(1, MonitorScheme::euler), sup_error(2, MonitorScheme::euler),
                                 sup_error(4, MonitorScheme::euler)};
  const double exact = sup_error(1, MonitorScheme::exponential);
  Outcome o;
  o.passed = errs[0] <= 5e-3 && errs[0] < errs[1];
  o.detail = "Euler sup error at dt = 1e-4, 2e-4, 4e-4: " + join(errs) + "; exponential scheme " + fmt(exact);
  o.data = {{"euler_errors", errs}, {"exponential_error", exact}};
  return o;
}

// A2
Outcome a2(std::uint64_t seed, const AcceptanceOptions& opt) {
  const std::size_t n = 10000;
  const double gamma = 0.5;
  const auto mu0 = two_atoms();
  const TimeGrid coarse(0.0, 1e-2, 100), fine(0.0, 1e-3, 1000);
  const auto cheater = parallel_map<double>(
      n, [&](std::size_t i) { return simulate_cheater(mu0, coarse, gamma, RngStream(seed, i)).S.back(); }, opt.threads);
  const auto observer = parallel_map<double>(
      n,
      [&](std::size_t i) {
        return simulate_observer(mu0, fine, gamma, RngStream(seed, n + i), MonitorScheme::exponential, false).path.S.back();
      },
      opt.threads);
  std::vector<double> a, b;
  for (const auto& v : cheater.values)
    if (v) a.push_back(*v);
  for (const auto& v : observer.values)
    if (v) b.push_back(*v);
  const auto ks = ks_two_sample(a, b);
  Outcome o;
  o.passed = !ks.rejects() && a.size() == n && b.size() == n;
  o.detail = "KS " + fmt(ks.statistic) + " vs critical " + fmt(ks.critical_value);
  o.data = {{"ks", ks.statistic}, {"critical", ks.critical_value}};
  return o;
}

// A3
Outcome a3(std::uint64_t seed, const AcceptanceOptions&) {
  const double t[] = {1.0};
  const auto r = girsanov_check([](double A, std::span<const double> S) { return A * S[0]; }, two_atoms(), 0.5, t,
                                100000, seed);
  const bool lhs_ok = within_se(r.lhs, 1.0, r.lhs_se), rhs_ok = within_se(r.rhs, 1.0, r.rhs_se);
  const bool agree = within_se(r.lhs - r.rhs, 0.0, std::hypot(r.lhs_se, r.rhs_se));
  Outcome o;
  o.passed = lhs_ok && rhs_ok && agree;
  o.detail = "E[A S] = " + fmt(r.lhs, 4) + " +- " + fmt(r.lhs_se, 2) + ", weighted " + fmt(r.rhs, 4) + " +- " +
             fmt(r.rhs_se, 2);
  o.data = {{"lhs", r.lhs}, {"lhs_se", r.lhs_se}, {"rhs", r.rhs}, {"rhs_se", r.rhs_se}};
  return o;
}

// A4
Outcome a4(std::uint64_t seed, const AcceptanceOptions& opt) {
  const std::size_t n = 10000;
  const TimeGrid grid(0.0, 1e-3, 1000);
  const auto mu0 = two_atoms();
  const auto mapped = parallel_map<std::array<double, 2>>(
      n,
      [&](std::size_t i) {
        const auto path = simulate_cheater(mu0, grid, 0.5, RngStream(seed, i));
        const auto W = innovation_path(path, mu0, 0.5);
        return std::array<double, 2>{W[500], W[1000]};
      },
      opt.threads);
  std::vector<double> w1, first, second;
  for (const auto& v : mapped.values) {
    if (!v) continue;
    w1.push_back((*v)[1]);
    first.push_back((*v)[0]);
    second.push_back((*v)[1] - (*v)[0]);
  }
  const auto st = sample_stats(w1);
  const double var_se = std::sqrt(2.0 / static_cast<double>(w1.size() - 1));
  const double corr = correlation(first, second);
  const double corr_se = 1.0 / std::sqrt(static_cast<double>(w1.size()));
  Outcome o;
  o.passed = w1.size() == n && within_se(st.mean, 0.0, st.std_error) && within_se(st.variance, 1.0, var_se) &&
             within_se(corr, 0.0, corr_se);
  o.detail = "W_1 mean " + fmt(st.mean) + " (se " + fmt(st.std_error, 2) + "), var " + fmt(st.variance, 4) + " (se " +
             fmt(var_se, 2) + "), increment correlation " + fmt(corr);
  o.data = {{"mean", st.mean}, {"variance", st.variance}, {"correlation", corr}};
  return o;
}

// A5
Outcome a5(std::uint64_t seed, const AcceptanceOptions& opt) {
  const std::size_t n = 10000;
  const TimeGrid grid(0.0, 1.0, 16);
  const auto mu0 = two_atoms();
  const std::size_t at[] = {1, 4, 16};
  const auto mapped = parallel_map<std::array<double, 3>>(
      n,
      [&](std::size_t i) {
        const auto path = simulate_cheater(mu0, grid, 0.5, RngStream(seed, i));
        std::array<double, 3> v{};
        for (std::size_t j = 0; j < 3; ++j) v[j] = conditional_variance(mu0, path.S[at[j]], grid.time(at[j]), 0.5);
        return v;
      },
      opt.threads);
  std::vector<double> means;
  for (std::size_t j = 0; j < 3; ++j) {
    std::vector<double> col;
    for (const auto& v : mapped.values)
      if (v) col.push_back((*v)[j]);
    means.push_back(sample_stats(col).mean);
  }
  Outcome o;
  o.passed = strictly_decreasing(means) && means[2] < 1e-3;
  o.detail = "E[Var(A | H_t)] at t = 1, 4, 16: " + join(means);
  o.data = {{"means", means}};
  return o;
}

// A6
Outcome a6(std::uint64_t seed, const AcceptanceOptions&) {
  Outcome o;
  // Exchangeability, two outcomes, three rounds.
  const auto mu0 = two_atoms();
  const OutcomeTable binary(mu0.grid(), 2, [](std::size_t i, double x) {
    const double p1 = x < 0 ? 0.3 : 0.8;
    return i == 1 ? p1 : 1.0 - p1;
  });
  const int N = 100000;
  std::vector<double> freq(8, 0.0);
  for (int r = 0; r < N; ++r) {
    RngStream rng(seed, static_cast<std::uint64_t>(r));
    GridMeasure mu = mu0;
    int code = 0;
    for (int step = 0; step < 3; ++step) {
      const auto s = discrete_chain_step(mu, binary, rng);
      mu = s.measure;
      code = code * 2 + static_cast<int>(s.outcome);
    }
    freq[static_cast<std::size_t>(code)] += 1.0 / N;
  }
  bool exchangeable = true;
  std::string worst;
  // sequences with one zero, then sequences with two zeros
  for (const auto& group : {std::vector<int>{0b110, 0b101, 0b011}, std::vector<int>{0b100, 0b010, 0b001}})
    for (std::size_t a = 0; a < 3; ++a)
      for (std::size_t b = a + 1; b < 3; ++b) {
        const double pa = freq[group[a]], pb = freq[group[b]];
        const double se = std::sqrt((pa + pb - (pa - pb) * (pa - pb)) / N);
        if (!within_se(pa - pb, 0.0, se)) exchangeable = false;
      }

  // Frequencies over 10^4 rounds against p(i | alpha) of the atom the chain settles on.
  const OutcomeTable ternary(mu0.grid(), 3, [](std::size_t i, double x) {
    const double lo[] = {0.2, 0.3, 0.5}, hi[] = {0.5, 0.3, 0.2};
    return x < 0 ? lo[i] : hi[i];
  });
  RngStream rng(seed, N);
  GridMeasure mu = mu0;
  std::vector<double> counts(3, 0.0);
  const int n = 10000;
  for (int r = 0; r < n; ++r) {
    const auto s = discrete_chain_step(mu, ternary, rng);
    mu = s.measure;
    counts[s.outcome] += 1.0;
  }
  const std::size_t settled = mu.node_mass(0) > mu.node_mass(1) ? 0 : 1;
  bool settled_ok = std::max(mu.node_mass(0), mu.node_mass(1)) > 0.99;
  bool bands = true;
  std::vector<double> rates;
  for (std::size_t i = 0; i < 3; ++i) {
    const double p = ternary.p(settled, i);
    rates.push_back(counts[i] / n);
    if (std::abs(counts[i] / n - p) > 3.0 * std::sqrt(p * (1.0 - p) / n)) bands = false;
  }
  o.passed = exchangeable && bands && settled_ok;
  o.detail = std::string("permuted sequences ") + (exchangeable ? "agree" : "DIFFER") + " (P(110) = " +
             fmt(freq[0b110], 4) + ", P(011) = " + fmt(freq[0b011], 4) + "); frequencies " + join(rates) +
             " vs p(.|x = " + fmt(mu0.x(settled)) + ")";
  o.data = {{"sequence_probabilities", freq}, {"frequencies", rates}, {"settled_atom", mu0.x(settled)}};
  return o;
}

// A7. The Lie-split monitored step carries a bias of order gamma^4 dt in
// E[mu_t[x^2]], so dt shrinks with gamma to keep gamma^2 dt <= 0.025.
Outcome a7(std::uint64_t seed, const AcceptanceOptions& opt) {
  const Grid1D g = Grid1D::spanning(-6.0, 6.0, 0.05);
  const auto mu0 = GridMeasure::gaussian(g, 0.0, 1.0);
  const double D = 1.0, t = 0.5;
  const double reference = moment(mu0, [](double x) { return x * x; }) + D * t;
  const std::vector<double> gammas{2.0, 5.0, 10.0};
  std::vector<double> errs, ses, proxies, dts;
  bool valid = true;
  for (double gamma : gammas) {
    const double dt = std::min(1e-3, 0.025 / (gamma * gamma));
    const MonitoredDiffusionConfig base{.dynamics = D, .gamma = gamma, .mu0 = mu0,
                                        .grid = TimeGrid(0.0, dt, static_cast<std::size_t>(std::llround(t / dt))),
                                        .rng = RngStream(seed, 0)};
    SweepOptions so;
    so.gammas = {gamma};
    so.observables = {MomentObservable::power_moment(1), MomentObservable::power_moment(2)};
    so.n_paths = 2000;
    so.seed = seed;
    so.threads = opt.threads;
    so.references = std::vector<double>{moment(mu0, [](double x) { return x; }), reference};
    const auto report = strong_limit_sweep(base, so);
    valid = valid && report.valid();
    const auto& r = report.find(gamma, "x^2");
    errs.push_back(r.abs_error);
    ses.push_back(r.std_err);
    proxies.push_back(report.find(gamma, concentration_label("x")).estimate);
    dts.push_back(dt);
  }
  Outcome o;
  const bool err_ok = strictly_decreasing(errs), proxy_ok = strictly_decreasing(proxies);
  const bool ratio_ok = proxies[2] < 0.25 * proxies[0];
  o.passed = err_ok && proxy_ok && ratio_ok && valid;
  o.detail = "|E[mu_t[x^2]] - ref| over gamma = 2, 5, 10: " + join(errs) + " (se " + join(ses) + "); proxy " +
             join(proxies) + "; ratio " + fmt(proxies[2] / proxies[0]);
  o.data = {{"errors", errs}, {"std_errors", ses}, {"proxies", proxies}, {"reference", reference}, {"dts", dts}};
  return o;
}

// A8. Spread is the across-path variance of mu_t[x]; as gamma grows mu_t
// collapses onto Y_t and this variance approaches Var(Y_t).
Outcome a8(std::uint64_t seed, const AcceptanceOptions& opt) {
  const Grid1D g = Grid1D::spanning(-3.0, 5.0, 0.05);
  const double x0 = 2.0, t = 1.0, dt = 1e-3;
  const auto mu0 = GridMeasure::point_mass(g, g.nearest(x0));
  const double mean_ref = x0 * std::exp(-t), var_ref = (1.0 - std::exp(-2.0 * t)) / 2.0;
  const std::vector<double> gammas{2.0, 5.0, 10.0};
  const std::size_t n = 1000;
  std::vector<double> mean_err, spread_err, errs, means, spreads;
  for (double gamma : gammas) {
    const MonitoredDiffusionConfig cfg{.dynamics = LindbladSpec::ornstein_uhlenbeck(1.0, 1.0), .gamma = gamma,
                                       .mu0 = mu0, .grid = TimeGrid(0.0, dt, static_cast<std::size_t>(t / dt)),
                                       .rng = RngStream(seed, 0)};
    const MonitoredDiffusion model(cfg);
    const double sdt = std::sqrt(dt);
    const auto mapped = parallel_map<double>(
        n,
        [&](std::size_t i) {
          RngStream rng(seed, i);
          std::vector<double> lw(mu0.log_weights().begin(), mu0.log_weights().end());
          for (std::size_t k = 0; k < cfg.grid.n_steps; ++k) model.step(lw, sdt * rng.normal());
          return mean_of_log_weights(g, lw);
        },
        opt.threads);
    std::vector<double> xs;
    for (const auto& v : mapped.values)
      if (v) xs.push_back(*v);
    if (mapped.failures.size() * 100 > n) throw NumericalError("more than 1% of the paths failed");
    const auto st = sample_stats(xs);
    means.push_back(st.mean);
    spreads.push_back(st.variance);
    mean_err.push_back(std::abs(st.mean - mean_ref));
    spread_err.push_back(std::abs(st.variance - var_ref));
    errs.push_back(mean_err.back() + spread_err.back());
  }
  Outcome o;
  o.passed = strictly_decreasing(errs) && mean_err.back() <= 0.1 * mean_ref;
  o.detail = "mean " + join(means) + " vs " + fmt(mean_ref) + ", spread " + join(spreads) + " vs " + fmt(var_ref) +
             "; total error " + join(errs);
  o.data = {{"means", means}, {"spreads", spreads}, {"errors", errs}, {"mean_reference", mean_ref},
            {"variance_reference", var_ref}};
  return o;
}

// A9
Outcome a9(std::uint64_t seed, const AcceptanceOptions&) {
  const Grid1D g = Grid1D::spanning(-4.0, 4.0, 0.05);
  auto sigma0 = [](double u) { return std::exp(-u * u / 2.0) * std::polar(1.0, u); };
  const TimeGrid fine(0.0, 1e-4, 2000);
  const auto f = sample_noise(fine, RngStream(seed, 0));
  const std::vector<NoisePath> paths{coarsen(f, 4), coarsen(f, 2), f};
  std::vector<double> dts, res;
  for (const auto& noise : paths) {
    MonitoredDiffusionConfig cfg{.dynamics = 1.0, .gamma = 1.0, .mu0 = GridMeasure::gaussian(g, 0.0, 1.0),
                                 .grid = noise.grid, .rng = RngStream(seed, 0)};
    cfg.scheme = MonitorScheme::euler;
    const auto run = simulate_monitored(cfg, true, &noise);
    dts.push_back(noise.grid.dt);
    res.push_back(separated_kernel_residual(sigma0, run.measures, noise.increments, 1.0, 1.0, noise.grid.dt));
  }
  const auto fit = convergence_order_fit(dts, res);
  Outcome o;
  o.passed = strictly_decreasing(res) && fit.slope >= 0.8;
  o.detail = "residual at dt = 4e-4, 2e-4, 1e-4: " + join(res) + "; fitted order " + fmt(fit.slope);
  o.data = {{"residuals", res}, {"order", fit.slope}};
  return o;
}

// A10
Outcome a10(std::uint64_t, const AcceptanceOptions&) {
  double worst_residual = 0.0, worst_value = 0.0;
  for (const PhysicalScales s : {PhysicalScales{1.0, 1.0, 1.0}, PhysicalScales{2.0, 0.3, 5.0}}) {
    for (double Omega : {0.0, s.omega() / 10.0}) {
      const GaussianPacket p{a_infinity(s, Omega), 0.0, 0.0};
      const auto c = packet_coefficients(p, Potential::harmonic(Omega, s.m), s);
      worst_residual = std::max(worst_residual, std::abs(c.a_drift) / (s.gamma * s.gamma));
    }
    const double l2 = s.ell() * s.ell();
    worst_value = std::max(worst_value, std::abs(a_infinity(s, 0.0) * l2 - std::complex<double>(0.5, -0.5)));
  }
  Outcome o;
  o.passed = worst_residual <= 1e-12 && worst_value <= 1e-12;
  o.detail = "drift residual " + fmt(worst_residual) + ", |a_inf l^2 - (1 - i)/2| " + fmt(worst_value);
  o.data = {{"residual", worst_residual}, {"value_error", worst_value}};
  return o;
}

// A11
Outcome a11(std::uint64_t seed, const AcceptanceOptions& opt) {
  const std::size_t n = 10000;
  const double dt = 1e-3;
  const TimeGrid grid(0.0, dt, 10000);
  const std::vector<double> ts{0.1, 1.0, std::numbers::pi, 10.0};
  std::vector<std::size_t> idx;
  for (double t : ts) idx.push_back(static_cast<std::size_t>(std::llround(t / dt)));
  const auto pot = Potential::harmonic(1.0, 1.0);
  const auto mapped = parallel_map<std::vector<double>>(
      n,
      [&](std::size_t i) {
        RngStream rng(seed, i);
        std::vector<double> out;
        double x = 2.0, v = 0.0;
        const double sdt = std::sqrt(dt);
        for (std::size_t k = 1, j = 0; k <= grid.n_steps; ++k) {
          const auto p = langevin_step(x, v, pot, 1.0, 1.0, dt, sdt * rng.normal());
          x = p.x;
          v = p.v;
          if (j < idx.size() && k == idx[j]) {
            out.push_back(x);
            ++j;
          }
        }
        return out;
      },
      opt.threads);
  std::vector<std::vector<double>> rows;
  for (const auto& v : mapped.values)
    if (v) rows.push_back(*v);
  bool ok = rows.size() == n;
  std::vector<double> vars, refs, zs;
  for (std::size_t j = 0; j < ts.size(); ++j) {
    const auto st = sample_stats(column(rows, j));
    const double ref = variance_closed_form(grid.time(idx[j]), 1.0, 1.0);
    const double se = st.variance * std::sqrt(2.0 / static_cast<double>(rows.size() - 1));
    vars.push_back(st.variance);
    refs.push_back(ref);
    zs.push_back((st.variance - ref) / se);
    ok = ok && within_se(st.variance, ref, se);
  }
  const double short_ratio = variance_closed_form(0.01, 1.0, 1.0) / variance_short_time(0.01, 1.0);
  const double long_ratio = variance_closed_form(100.0, 1.0, 1.0) / variance_long_time(100.0, 1.0, 1.0);
  ok = ok && std::abs(short_ratio - 1.0) <= 1e-3 && std::abs(long_ratio - 1.0) <= 1e-2;
  Outcome o;
  o.passed = ok;
  o.detail = "Var(x_t) " + join(vars) + " vs " + join(refs) + " (z " + join(zs) + "); ratios " + fmt(short_ratio, 6) +
             ", " + fmt(long_ratio, 6);
  o.data = {{"variances", vars}, {"references", refs}, {"short_ratio", short_ratio}, {"long_ratio", long_ratio}};
  return o;
}

// A12
Outcome a12(std::uint64_t seed, const AcceptanceOptions&) {
  const auto pot = Potential::harmonic(1.0, 1.0);
  const std::size_t steps = 62900;  // dt = 1e-4, covers [0, 2 pi] and divides by 100
  const TimeGrid fine(0.0, 1e-4, steps);
  auto sup_diff = [&](const NoisePath& noise) {
    const auto exact = langevin_harmonic_exact(2.0, 1.0, 1.0, noise);
    const auto euler = simulate_langevin(2.0, 0.0, pot, 1.0, 1.0, noise);
    double sup = 0.0;
    for (std::size_t k = 0; k < exact.size(); ++k) sup = std::max(sup, std::abs(exact[k] - euler.x[k]));
    return sup;
  };
  const int n = 20;
  std::vector<double> errs(3, 0.0);
  double first_path = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto f = sample_noise(fine, RngStream(seed, static_cast<std::uint64_t>(i)));
    const auto mid = coarsen(f, 10);
    const double e = sup_diff(f);
    if (i == 0) first_path = e;
    errs[0] += sup_diff(coarsen(mid, 10)) / n;
    errs[1] += sup_diff(mid) / n;
    errs[2] += e / n;
  }
  const std::vector<double> dts{1e-2, 1e-3, 1e-4};
  const auto fit = convergence_order_fit(dts, errs);
  Outcome o;
  o.passed = first_path <= 1e-2 && fit.slope >= 0.5;
  o.detail = "sup error at dt = 1e-4: " + fmt(first_path) + "; mean sup error " + join(errs) + ", order " +
             fmt(fit.slope) + " [" + fmt(fit.ci_low) + ", " + fmt(fit.ci_high) + "]";
  o.data = {{"sup_error", first_path}, {"mean_errors", errs}, {"order", fit.slope}};
  return o;
}

// A13. The assertion uses the matched-noise ensembles: with a shared noise
// path the KS distance reflects the model difference rather than sampling
// noise. The independent-ensemble KS is reported alongside.
Outcome a13(std::uint64_t seed, const AcceptanceOptions& opt) {
  DoubleScalingOptions o;
  o.Omega = 1.0;
  o.eps = 1.0;
  o.omegas = {10.0, 30.0, 100.0};
  o.horizon = 1.0;
  o.n_paths = 2000;
  o.seed = seed;
  o.threads = opt.threads;
  const auto rows = double_scaling_study(o);
  std::vector<double> matched, independent, crit, sup;
  std::size_t failures = 0;
  for (const auto& r : rows) {
    matched.push_back(r.ks_matched.statistic);
    independent.push_back(r.ks_independent.statistic);
    crit.push_back(r.ks_independent.critical_value);
    sup.push_back(r.mean_sup_diff);
    failures += r.failures;
  }
  Outcome out;
  out.passed = strictly_decreasing(matched) && failures * 100 <= o.n_paths;
  out.detail = "KS matched " + join(matched) + ", independent " + join(independent) + " (critical " + fmt(crit[0]) +
               "); mean sup |xbar - x| " + join(sup);
  out.data = {{"ks_matched", matched}, {"ks_independent", independent}, {"mean_sup_diff", sup}};
  return out;
}

// A14
Config small_config(std::initializer_list<std::pair<const char*, const char*>> entries, std::uint64_t seed) {
  Config c;
  for (const auto& [k, v] : entries) c.set(k, v);
  c.set("run.seed", std::to_string(seed));
  return c;
}

Outcome a14(std::uint64_t seed, const AcceptanceOptions& opt) {
  const fs::path root = opt.work_dir.empty() ? fs::temp_directory_path() / "qmon-determinism" : opt.work_dir;
  fs::remove_all(root);
  const std::vector<Config> configs{
      small_config({{"run.kind", "qnd-observer"}, {"run.n_paths", "200"}, {"model.gamma", "0.5"},
                    {"prior.type", "two-point"}, {"time.dt", "1e-3"}, {"time.steps", "1000"}}, seed),
      small_config({{"run.kind", "qnd-cheater"}, {"model.gamma", "0.5"}, {"prior.type", "gaussian"},
                    {"prior.sd", "1"}, {"space.x_min", "-5"}, {"space.x_max", "5"}, {"space.dx", "0.05"},
                    {"time.dt", "1e-3"}, {"time.steps", "500"}}, seed),
      small_config({{"run.kind", "qnd-discrete"}, {"prior.type", "two-point"}, {"space.x_min", "-1"},
                    {"space.x_max", "1"}, {"space.dx", "1"}, {"discrete.p_low", "0.3"}, {"discrete.p_high", "0.8"},
                    {"discrete.rounds", "500"}}, seed),
      small_config({{"run.kind", "diffusion"}, {"model.gamma", "2"}, {"model.D", "1"}, {"prior.type", "gaussian"},
                    {"prior.sd", "1"}, {"space.x_min", "-5"}, {"space.x_max", "5"}, {"space.dx", "0.1"},
                    {"time.dt", "1e-3"}, {"time.horizon", "0.2"}, {"sweep.gammas", "0, 2"},
                    {"sweep.n_paths", "20"}}, seed),
      small_config({{"run.kind", "lindblad-sde"}, {"model.gamma", "2"}, {"model.theta", "1"}, {"model.sigma", "1"},
                    {"prior.type", "point"}, {"prior.at", "2"}, {"space.x_min", "-3"}, {"space.x_max", "5"},
                    {"space.dx", "0.1"}, {"time.dt", "1e-3"}, {"time.horizon", "0.2"}}, seed),
      small_config({{"run.kind", "packet"}, {"packet.Omega", "1"}, {"packet.xbar", "2"}, {"time.dt", "1e-3"},
                    {"time.steps", "1000"}}, seed),
      small_config({{"run.kind", "langevin"}, {"run.n_paths", "200"}, {"langevin.Omega", "1"}, {"langevin.eps", "1"},
                    {"langevin.x0", "2"}, {"time.dt", "1e-2"}, {"time.horizon", "20"}}, seed),
      small_config({{"run.kind", "double-scaling"}, {"run.n_paths", "100"}, {"double_scaling.eps", "1"},
                    {"double_scaling.omegas", "10, 20"}, {"double_scaling.horizon", "0.2"}}, seed),
      small_config({{"run.kind", "girsanov"}, {"model.gamma", "0.5"}, {"prior.type", "two-point"},
                    {"girsanov.times", "0.5, 1"}, {"girsanov.n_samples", "2000"}}, seed),
  };
  bool all_identical = true, all_tamper_detected = true;
  std::vector<std::string> bad;
  std::size_t files = 0;
  for (const auto& cfg : configs) {
    const std::string kind = cfg.entries().at("run.kind");
    const fs::path dir = root / kind;
    run_experiment(cfg, dir / "run", opt.threads);
    // a different worker count must not matter
    const auto again = rerun_from_manifest(dir / "run", dir / "rerun", opt.threads == 1 ? 2 : 1);
    files += again.checks.size();
    if (!again.all_match()) {
      all_identical = false;
      bad.push_back(kind + " rerun");
    }
    // tampered seed
    fs::create_directories(dir / "tampered");
    auto manifest = read_manifest(dir / "run");
    manifest["seed"] = manifest["seed"].get<std::uint64_t>() + 1;
    std::ofstream(dir / "tampered" / kManifestName) << manifest.dump(2);
    const auto tampered = rerun_from_manifest(dir / "tampered", dir / "tampered" / "out", opt.threads);
    if (tampered.all_match()) {
      all_tamper_detected = false;
      bad.push_back(kind + " tamper");
    }
  }
  Outcome o;
  o.passed = all_identical && all_tamper_detected;
  std::string failed;
  for (const auto& b : bad) failed += " " + b;
  o.detail = std::to_string(configs.size()) + " experiment kinds, " + std::to_string(files) +
             " artifacts: reruns " + (all_identical ? "bitwise identical" : "DIFFER") + ", tampered seeds " +
             (all_tamper_detected ? "detected" : "NOT detected") + failed;
  o.data = {{"kinds", configs.size()}, {"artifacts", files}};
  return o;
}

const std::vector<Criterion>& criteria() {
  static const std::vector<Criterion> list{
      {"A1", "posterior oracle equivalence", 10, a1},
      {"A2", "filtration equivalence in law", 60, a2},
      {"A3", "Girsanov identity", 30, a3},
      {"A4", "innovation is Brownian", 60, a4},
      {"A5", "conditional-variance decay", 30, a5},
      {"A6", "discrete chain exchangeability and frequencies", 30, a6},
      {"A7", "strong-measurement diffusion limit", 300, a7},
      {"A8", "general Lindbladian to classical SDE", 300, a8},
      {"A9", "separated kernel residual", 30, a9},
      {"A10", "a_inf fixed point", 1, a10},
      {"A11", "Langevin variance law", 60, a11},
      {"A12", "Euler vs exact harmonic solution", 60, a12},
      {"A13", "double-scaling convergence", 600, a13},
      {"A14", "determinism from manifests", 300, a14},
  };
  return list;
}

// Seed for the single retry of a failed criterion.
std::uint64_t retry_seed(std::uint64_t seed) { return seed ^ 0x9e3779b97f4a7c15ULL; }

}  // namespace

std::vector<std::string> acceptance_ids() {
  std::vector<std::string> ids;
  for (const auto& c : criteria()) ids.push_back(c.id);
  return ids;
}

std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options, std::ostream* progress) {
  for (const auto& id : options.only) {
    const auto ids = acceptance_ids();
    if (std::find(ids.begin(), ids.end(), id) == ids.end()) throw ConfigError("unknown criterion " + id, "only");
  }
  if (options.threads > 0) set_default_threads(options.threads);
  std::vector<CriterionResult> results;
  for (const auto& c : criteria()) {
    if (!options.only.empty() && std::find(options.only.begin(), options.only.end(), c.id) == options.only.end())
      continue;
    CriterionResult r;
    r.id = c.id;
    r.title = c.title;
    r.budget_seconds = c.budget_seconds;
    auto attempt = [&](std::uint64_t seed) {
      const auto start = std::chrono::steady_clock::now();
      Outcome o;
      try {
        o = c.run(seed, options);
      } catch (const Error& e) {
        o.passed = false;
        o.detail = std::string("error: ") + e.what();
      }
      r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      r.seed = seed;
      r.detail = o.detail;
      r.data = o.data;
      return o.passed;
    };
    bool ok = attempt(options.seed);
    if (!ok) {
      if (progress) *progress << c.id << " first attempt failed (" << r.detail << "); retrying with a fresh seed\n";
      r.retried = true;
      ok = attempt(retry_seed(options.seed));
    }
    r.within_budget = r.seconds <= r.budget_seconds;
    r.passed = ok && r.within_budget;
    if (progress)
      *progress << r.id << ' ' << (r.passed ? "PASS" : "FAIL") << (r.retried ? " (retried)" : "") << "  "
                << r.title << "  [" << fmt(r.seconds) << " s / " << fmt(r.budget_seconds) << " s]  " << r.detail
                << std::endl;
    results.push_back(std::move(r));
  }
  return results;
}

void print_acceptance_table(std::ostream& out, const std::vector<CriterionResult>& results) {
  out << "\nid   result  retry  seconds/budget  criterion\n";
  std::size_t passed = 0;
  for (const auto& r : results) {
    passed += r.passed;
    std::ostringstream time;
    time << std::fixed << std::setprecision(1) << r.seconds << '/' << r.budget_seconds;
    out << std::left << std::setw(5) << r.id << std::setw(8) << (r.passed ? "PASS" : "FAIL") << std::setw(7)
        << (r.retried ? "yes" : "no") << std::setw(16) << time.str() << r.title
        << (r.within_budget ? "" : " (over budget)") << '\n';
  }
  out << passed << '/' << results.size() << " criteria passed\n";
}

void write_acceptance_csv(std::ostream& out, const std::vector<CriterionResult>& results) {
  CsvWriter csv(out, {"id", "title", "passed", "retried", "seed", "detail"});
  csv.comment("one row per acceptance criterion; seed is the seed of the reported attempt");
  for (const auto& r : results)
    csv.row_cells({r.id, r.title, r.passed ? "1" : "0", r.retried ? "1" : "0", std::to_string(r.seed), r.detail});
}

}  // namespace qmon

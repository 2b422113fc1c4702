#include "qmon/ensemble_stats.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <ostream>

#include "qmon/csv.hpp"
#include "qmon/summation.hpp"

namespace qmon {

namespace {
std::atomic<unsigned> g_default_threads{0};

void require_ks_size(std::size_t n) {
  if (n < 100) throw ConfigError("KS test needs at least 100 samples per side");
}
}  // namespace

void set_default_threads(unsigned threads) noexcept { g_default_threads.store(threads); }

unsigned default_threads() noexcept {
  const unsigned t = g_default_threads.load();
  if (t) return t;
  return std::max(1u, std::thread::hardware_concurrency());
}

SampleStats sample_stats(std::span<const double> xs) {
  SampleStats s;
  s.n = xs.size();
  if (s.n == 0) return s;
  CompensatedSum sum;
  for (double x : xs) sum.add(x);
  s.mean = sum.value() / static_cast<double>(s.n);
  if (s.n < 2) return s;
  CompensatedSum sq;
  for (double x : xs) sq.add((x - s.mean) * (x - s.mean));
  s.variance = sq.value() / static_cast<double>(s.n - 1);
  s.std_error = std::sqrt(s.variance / static_cast<double>(s.n));
  return s;
}

double correlation(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ConfigError("correlation needs samples of equal length");
  const auto sa = sample_stats(a), sb = sample_stats(b);
  if (sa.variance <= 0.0 || sb.variance <= 0.0) return 0.0;
  CompensatedSum cross;
  for (std::size_t i = 0; i < a.size(); ++i) cross.add((a[i] - sa.mean) * (b[i] - sb.mean));
  return cross.value() / static_cast<double>(a.size() - 1) / std::sqrt(sa.variance * sb.variance);
}

double standard_normal_cdf(double x) noexcept { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

KsResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
  require_ks_size(a.size());
  require_ks_size(b.size());
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double n = static_cast<double>(x.size()), m = static_cast<double>(y.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / n - static_cast<double>(j) / m));
  }
  return {d, kKsCoefficient1Percent * std::sqrt((n + m) / (n * m)), x.size(), y.size()};
}

KsResult ks_one_sample(std::span<const double> a, const std::function<double(double)>& cdf) {
  require_ks_size(a.size());
  std::vector<double> x(a.begin(), a.end());
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double F = cdf(x[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - F, F - static_cast<double>(i) / n});
  }
  return {d, kKsCoefficient1Percent / std::sqrt(n), x.size(), 0};
}

std::vector<DriftEstimate> martingale_drift(const std::vector<std::vector<double>>& paths,
                                            std::span<const double> times,
                                            std::span<const std::pair<double, double>> pairs) {
  auto index_of = [&](double t) {
    for (std::size_t k = 0; k < times.size(); ++k)
      if (std::abs(times[k] - t) <= 1e-12 * std::max(1.0, std::abs(t))) return k;
    throw ConfigError("martingale_drift: time " + format_double(t) + " is not on the path grid");
  };
  std::vector<DriftEstimate> out;
  for (const auto& [s, t] : pairs) {
    if (!(s < t)) throw ConfigError("martingale_drift: pairs need s < t");
    const std::size_t ks = index_of(s), kt = index_of(t);
    std::vector<double> inc;
    inc.reserve(paths.size());
    for (const auto& p : paths) inc.push_back(p.at(kt) - p.at(ks));
    const auto st = sample_stats(inc);
    out.push_back({s, t, st.mean, st.std_error, st.n});
  }
  return out;
}

SlopeFit convergence_order_fit(std::span<const double> xs, std::span<const double> errors) {
  if (xs.size() != errors.size()) throw ConfigError("convergence fit needs matching inputs");
  if (xs.size() < 3) throw ConfigError("convergence fit needs at least three points");
  const std::size_t n = xs.size();
  std::vector<double> lx(n), ly(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!(xs[i] > 0.0) || !(errors[i] > 0.0)) throw ConfigError("convergence fit needs positive values");
    lx[i] = std::log(xs[i]);
    ly[i] = std::log(errors[i]);
  }
  const double mx = sample_stats(lx).mean, my = sample_stats(ly).mean;
  CompensatedSum sxx, sxy;
  for (std::size_t i = 0; i < n; ++i) {
    sxx.add((lx[i] - mx) * (lx[i] - mx));
    sxy.add((lx[i] - mx) * (ly[i] - my));
  }
  if (!(sxx.value() > 0.0)) throw ConfigError("convergence fit needs distinct abscissae");
  SlopeFit fit;
  fit.slope = sxy.value() / sxx.value();
  fit.intercept = my - fit.slope * mx;
  CompensatedSum rss;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = ly[i] - fit.intercept - fit.slope * lx[i];
    rss.add(r * r);
  }
  const double dof = static_cast<double>(n - 2);
  const double se = std::sqrt(rss.value() / dof / sxx.value());
  const boost::math::students_t dist(dof);
  const double q = boost::math::quantile(boost::math::complement(dist, 0.025));
  fit.ci_low = fit.slope - q * se;
  fit.ci_high = fit.slope + q * se;
  return fit;
}

void EnsembleReport::write_csv(std::ostream& out) const {
  CsvWriter csv(out, {"time", "mean", "variance", "std_error", "n"});
  csv.comment("ensemble=" + label);
  csv.comment("requested=" + std::to_string(requested) + " failures=" + std::to_string(failures.size()) +
              (valid() ? "" : " INVALID"));
  for (const auto& t : per_time)
    csv.row({t.time, t.stats.mean, t.stats.variance, t.stats.std_error, static_cast<double>(t.stats.n)});
}

nlohmann::json EnsembleReport::to_json() const {
  nlohmann::json j;
  j["label"] = label;
  j["requested"] = requested;
  j["valid"] = valid();
  auto& f = j["failures"] = nlohmann::json::array();
  for (const auto& e : failures) f.push_back({{"index", e.index}, {"message", e.message}});
  auto& rows = j["per_time"] = nlohmann::json::array();
  for (const auto& t : per_time)
    rows.push_back({{"time", t.time},
                    {"mean", t.stats.mean},
                    {"variance", t.stats.variance},
                    {"std_error", t.stats.std_error},
                    {"n", t.stats.n}});
  if (ks)
    j["ks"] = {{"statistic", ks->statistic}, {"critical_value", ks->critical_value}, {"n", ks->n}, {"m", ks->m}};
  if (fit)
    j["fit"] = {{"slope", fit->slope}, {"intercept", fit->intercept}, {"ci_low", fit->ci_low},
                {"ci_high", fit->ci_high}};
  return j;
}

std::vector<double> column(const std::vector<std::vector<double>>& paths, std::size_t k) {
  std::vector<double> out;
  out.reserve(paths.size());
  for (const auto& p : paths) out.push_back(p.at(k));
  return out;
}

EnsembleRun run_ensemble(std::string label, std::span<const double> times, std::size_t n_paths, std::uint64_t seed,
                         const std::function<std::vector<double>(const RngStream&)>& sampler, unsigned threads) {
  if (n_paths == 0) throw ConfigError("ensemble needs at least one path", "n_paths");
  auto mapped = parallel_map<std::vector<double>>(
      n_paths,
      [&](std::size_t i) {
        auto v = sampler(RngStream(seed, i));
        if (v.size() != times.size()) throw Error("sampler returned the wrong number of values");
        return v;
      },
      threads);

  EnsembleRun run;
  run.report.label = std::move(label);
  run.report.requested = n_paths;
  run.report.failures = std::move(mapped.failures);
  for (auto& v : mapped.values)
    if (v) run.samples.push_back(std::move(*v));
  for (std::size_t k = 0; k < times.size(); ++k)
    run.report.per_time.push_back({times[k], sample_stats(column(run.samples, k))});
  return run;
}

}  // namespace qmon

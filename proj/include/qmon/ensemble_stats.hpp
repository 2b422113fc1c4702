#pragma once

// Ensemble Monte-Carlo runner and the statistics used to turn propositions
// into tests: moment/SE estimates, KS tests, martingale drift, order fits.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <functional>
#include <iosfwd>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qmon/core_sde.hpp"
#include "qmon/error.hpp"

namespace qmon {

// Worker cap used by parallel_map when no explicit count is given. 0 means
// hardware concurrency.
void set_default_threads(unsigned threads) noexcept;
unsigned default_threads() noexcept;

struct PathFailure {
  std::size_t index;
  std::string message;
};

template <class T>
struct MapResult {
  std::vector<std::optional<T>> values;  // indexed like the inputs
  std::vector<PathFailure> failures;     // sorted by index
};

// Evaluates f(i) for i in [0, n) on up to `threads` workers. NumericalError
// from a path is recorded as a failure; any other exception is rethrown.
// Results land in a buffer indexed by i, so the outcome is independent of the
// scheduling.
template <class T, class F>
MapResult<T> parallel_map(std::size_t n, F&& f, unsigned threads = 0) {
  MapResult<T> result;
  result.values.resize(n);
  if (threads == 0) threads = default_threads();
  threads = static_cast<unsigned>(std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(n, 1)));

  std::atomic<std::size_t> next{0};
  std::mutex mutex;
  std::exception_ptr fatal;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        result.values[i] = f(i);
      } catch (const NumericalError& e) {
        std::lock_guard lock(mutex);
        result.failures.push_back({i, e.what()});
      } catch (...) {
        std::lock_guard lock(mutex);
        if (!fatal) fatal = std::current_exception();
        next.store(n);
      }
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (fatal) std::rethrow_exception(fatal);
  std::sort(result.failures.begin(), result.failures.end(),
            [](const PathFailure& a, const PathFailure& b) { return a.index < b.index; });
  return result;
}

struct SampleStats {
  double mean = 0.0;
  double variance = 0.0;  // unbiased
  double std_error = 0.0;
  std::size_t n = 0;
};

SampleStats sample_stats(std::span<const double> xs);
// Pearson correlation; 0 when either sample is constant.
double correlation(std::span<const double> a, std::span<const double> b);
// |value - target| <= k * se.
inline bool within_se(double value, double target, double se, double k = 3.0) noexcept {
  return std::abs(value - target) <= k * se;
}

struct KsResult {
  double statistic = 0.0;
  double critical_value = 0.0;  // asymptotic 1% level
  std::size_t n = 0, m = 0;
  bool rejects() const noexcept { return statistic > critical_value; }
};

inline constexpr double kKsCoefficient1Percent = 1.628;

// Both samples need at least 100 points.
KsResult ks_two_sample(std::span<const double> a, std::span<const double> b);
KsResult ks_one_sample(std::span<const double> a, const std::function<double(double)>& cdf);

double standard_normal_cdf(double x) noexcept;

struct DriftEstimate {
  double s = 0.0, t = 0.0;
  double mean = 0.0, std_error = 0.0;
  std::size_t n = 0;
};

// paths[p][k] is the value of path p at times[k]; each pair names two times.
std::vector<DriftEstimate> martingale_drift(const std::vector<std::vector<double>>& paths,
                                            std::span<const double> times,
                                            std::span<const std::pair<double, double>> pairs);

struct SlopeFit {
  double slope = 0.0, intercept = 0.0;
  double ci_low = 0.0, ci_high = 0.0;  // 95% on the slope
};

// Least squares of log(err) on log(x); needs >= 3 strictly positive points.
SlopeFit convergence_order_fit(std::span<const double> xs, std::span<const double> errors);

struct TimeStats {
  double time = 0.0;
  SampleStats stats;
};

struct EnsembleReport {
  std::string label;
  std::size_t requested = 0;
  std::vector<TimeStats> per_time;
  std::vector<PathFailure> failures;
  std::optional<KsResult> ks;
  std::optional<SlopeFit> fit;

  // Flagged invalid when more than 1% of the paths failed.
  bool valid() const noexcept { return failures.size() * 100 <= requested; }
  void write_csv(std::ostream& out) const;  // time,mean,variance,std_error,n
  nlohmann::json to_json() const;
};

struct EnsembleRun {
  EnsembleReport report;
  std::vector<std::vector<double>> samples;  // successful paths, in index order
};

// Path i runs on stream (seed, i). sampler returns one value per entry of times.
EnsembleRun run_ensemble(std::string label, std::span<const double> times, std::size_t n_paths, std::uint64_t seed,
                         const std::function<std::vector<double>(const RngStream&)>& sampler,
                         unsigned threads = 0);

// Column k of a path matrix.
std::vector<double> column(const std::vector<std::vector<double>>& paths, std::size_t k);

}  // namespace qmon

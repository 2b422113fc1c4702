#include "qmon/experiment.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "qmon/acceptance.hpp"
#include "qmon/csv.hpp"
#include "qmon/ensemble_stats.hpp"
#include "qmon/error.hpp"
#include "qmon/lindblad_diffusion.hpp"
#include "qmon/packet_hamiltonian.hpp"
#include "qmon/qnd_monitor.hpp"

#ifndef QMON_VERSION
#define QMON_VERSION "unknown"
#endif

namespace qmon {

namespace fs = std::filesystem;

std::string library_version() { return QMON_VERSION; }

// ---------------------------------------------------------------- Config

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

Config Config::parse(std::istream& in, const std::string& source) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(source + ": " + e.message() + " at line " + std::to_string(e.line()));
  }
  Config cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError(source + ": key '" + section + "' must live inside a [section]", section);
    for (const auto& [key, value] : body) {
      if (!value.empty()) throw ConfigError(source + ": nested sections are not supported", section + "." + key);
      cfg.entries_[section + "." + key] = trim(value.data());
    }
  }
  return cfg;
}

Config Config::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string(), "config");
  return parse(in, path.string());
}

Config Config::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("manifest config block must be an object", "config");
  Config cfg;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_string()) throw ConfigError("manifest config values must be strings", k);
    cfg.entries_[k] = v.get<std::string>();
  }
  return cfg;
}

void Config::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override must look like section.key=value: " + assignment, "set");
  const std::string key = trim(assignment.substr(0, eq));
  if (key.find('.') == std::string::npos || key.front() == '.' || key.back() == '.')
    throw ConfigError("override key must be section.key: " + key, key);
  set(key, trim(assignment.substr(eq + 1)));
}

void Config::set(const std::string& key, std::string value) { entries_[key] = std::move(value); }

bool Config::has(const std::string& key) const { return entries_.count(key) != 0; }

const std::string& Config::raw(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) throw ConfigError("missing required key '" + key + "'", key);
  used_.insert(key);
  return it->second;
}

std::string Config::get_string(const std::string& key) const { return raw(key); }

std::string Config::get_string(const std::string& key, const std::string& fallback) const {
  return has(key) ? raw(key) : fallback;
}

double Config::get_double(const std::string& key) const {
  const std::string& s = raw(key);
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("key '" + key + "' must be a number, got '" + s + "'", key);
  }
}

double Config::get_double(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}

std::uint64_t Config::get_u64(const std::string& key) const {
  const std::string& s = raw(key);
  try {
    std::size_t pos = 0;
    if (s.empty() || s.front() == '-') throw std::invalid_argument(s);
    const auto v = std::stoull(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError("key '" + key + "' must be a non-negative integer, got '" + s + "'", key);
  }
}

std::uint64_t Config::get_u64(const std::string& key, std::uint64_t fallback) const {
  return has(key) ? get_u64(key) : fallback;
}

std::vector<std::string> Config::get_words(const std::string& key) const {
  std::vector<std::string> out;
  std::stringstream ss(raw(key));
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) throw ConfigError("key '" + key + "' has an empty list entry", key);
    out.push_back(item);
  }
  if (out.empty()) throw ConfigError("key '" + key + "' must be a non-empty list", key);
  return out;
}

std::vector<double> Config::get_list(const std::string& key) const {
  std::vector<double> out;
  for (const auto& w : get_words(key)) {
    try {
      std::size_t pos = 0;
      out.push_back(std::stod(w, &pos));
      if (pos != w.size()) throw std::invalid_argument(w);
    } catch (const std::logic_error&) {
      throw ConfigError("key '" + key + "' must be a list of numbers, got '" + w + "'", key);
    }
  }
  return out;
}

void Config::reject_unused() const {
  for (const auto& [k, v] : entries_)
    if (!used_.count(k)) throw ConfigError("unknown or unused key '" + k + "' for this experiment kind", k);
}

nlohmann::json Config::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, v] : entries_) j[k] = v;
  return j;
}

// ---------------------------------------------------------------- hashing

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw Error("SHA-256 unavailable");
  }
  char buf[1 << 15];
  while (in) {
    in.read(buf, sizeof buf);
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return hex.str();
}

// ---------------------------------------------------------------- runners

namespace {

struct Context {
  const Config& cfg;
  fs::path dir;
  std::uint64_t seed;
  unsigned threads;
  std::ostream* log;
  std::vector<std::string> outputs;
  bool passed = true;

  std::ofstream open(const std::string& name) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw Error("cannot write " + (dir / name).string());
    out.precision(17);
    outputs.push_back(name);
    return out;
  }
  void note(const std::string& line) const {
    if (log) *log << line << '\n';
  }
};

using Runner = std::function<void(Context&)>;
// Each kind reads and validates its parameters, then returns the computation.
using Planner = std::function<Runner(const Config&)>;

TimeGrid time_grid(const Config& c) {
  const double dt = c.get_double("time.dt");
  if (!(dt > 0.0)) throw ConfigError("time.dt must be positive", "time.dt");
  const bool by_steps = c.has("time.steps"), by_horizon = c.has("time.horizon");
  if (by_steps == by_horizon) throw ConfigError("give exactly one of time.steps and time.horizon", "time.steps");
  std::size_t n;
  if (by_steps) {
    n = c.get_u64("time.steps");
  } else {
    const double T = c.get_double("time.horizon");
    const double r = T / dt;
    if (!(T > 0.0) || std::abs(r - std::round(r)) > 1e-9 * std::max(1.0, r))
      throw ConfigError("time.horizon must be a positive multiple of time.dt", "time.horizon");
    n = static_cast<std::size_t>(std::llround(r));
  }
  if (n == 0) throw ConfigError("the time grid needs at least one step", by_steps ? "time.steps" : "time.horizon");
  TimeGrid g(c.get_double("time.t0", 0.0), dt, n);
  g.validate();
  return g;
}

Grid1D space_grid(const Config& c) {
  const double lo = c.get_double("space.x_min"), hi = c.get_double("space.x_max"), dx = c.get_double("space.dx");
  if (!(hi > lo)) throw ConfigError("space.x_max must exceed space.x_min", "space.x_max");
  if (!(dx > 0.0)) throw ConfigError("space.dx must be positive", "space.dx");
  return Grid1D::spanning(lo, hi, dx);
}

// Priors that need no spatial grid (two-point, point) build their own.
GridMeasure prior(const Config& c, bool grid_required) {
  const std::string type = c.get_string("prior.type");
  if (type == "two-point") {
    const double left = c.get_double("prior.left", -1.0), right = c.get_double("prior.right", 1.0);
    const double p = c.get_double("prior.p_left", 0.5);
    if (!(right > left)) throw ConfigError("prior.right must exceed prior.left", "prior.right");
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("prior.p_left must lie in (0, 1)", "prior.p_left");
    if (!grid_required) return GridMeasure::two_point(left, right, p);
    const Grid1D g = space_grid(c);
    const std::size_t i = g.nearest(left), j = g.nearest(right);
    if (std::abs(g.x(i) - left) > 1e-9 * g.dx || std::abs(g.x(j) - right) > 1e-9 * g.dx)
      throw ConfigError("two-point atoms must sit on grid nodes", "prior.left");
    const std::pair<std::size_t, double> atoms[] = {{i, p}, {j, 1.0 - p}};
    return GridMeasure::atoms(g, atoms);
  }
  if (type == "point") {
    const double at = c.get_double("prior.at");
    if (!grid_required) return GridMeasure::point_mass(Grid1D(at, 1.0, 1), 0);
    const Grid1D g = space_grid(c);
    const std::size_t i = g.nearest(at);
    if (std::abs(g.x(i) - at) > 1e-9 * g.dx) throw ConfigError("prior.at must be a grid node", "prior.at");
    return GridMeasure::point_mass(g, i);
  }
  if (type == "gaussian") {
    const Grid1D g = space_grid(c);
    return GridMeasure::gaussian(g, c.get_double("prior.mean", 0.0), c.get_double("prior.sd"));
  }
  if (type == "uniform") return GridMeasure::from_density(space_grid(c), [](double) { return 1.0; });
  throw ConfigError("prior.type must be one of two-point, point, gaussian, uniform", "prior.type");
}

double positive(const Config& c, const std::string& key) {
  const double v = c.get_double(key);
  if (!(v > 0.0)) throw ConfigError("key '" + key + "' must be positive", key);
  return v;
}

double non_negative(const Config& c, const std::string& key) {
  const double v = c.get_double(key);
  if (!(v >= 0.0)) throw ConfigError("key '" + key + "' must be non-negative", key);
  return v;
}

double non_negative(const Config& c, const std::string& key, double fallback) {
  return c.has(key) ? non_negative(c, key) : fallback;
}

MonitorScheme scheme(const Config& c) {
  const std::string s = c.get_string("model.scheme", "exponential");
  if (s == "exponential") return MonitorScheme::exponential;
  if (s == "euler") return MonitorScheme::euler;
  throw ConfigError("model.scheme must be exponential or euler", "model.scheme");
}

std::size_t n_paths(const Config& c) {
  const auto n = c.get_u64("run.n_paths", 1);
  if (n == 0) throw ConfigError("run.n_paths must be at least 1", "run.n_paths");
  return n;
}

// Up to 101 evenly spaced time indices, always including both ends.
std::vector<std::size_t> record_indices(const TimeGrid& g) {
  std::vector<std::size_t> idx;
  const std::size_t n = g.n_steps, stride = std::max<std::size_t>(1, n / 100);
  for (std::size_t k = 0; k <= n; k += stride) idx.push_back(k);
  if (idx.back() != n) idx.push_back(n);
  return idx;
}

std::vector<double> times_of(const TimeGrid& g, const std::vector<std::size_t>& idx) {
  std::vector<double> t;
  for (auto k : idx) t.push_back(g.time(k));
  return t;
}

void write_ensemble(Context& ctx, const EnsembleReport& report) {
  auto out = ctx.open("ensemble.csv");
  report.write_csv(out);
  if (!report.valid()) throw NumericalError("more than 1% of the ensemble paths failed");
}

Runner plan_qnd(const Config& c, SignalMode mode) {
  const double gamma = non_negative(c, "model.gamma");
  const auto mu0 = prior(c, c.has("space.x_min"));
  const TimeGrid tg = time_grid(c);
  const auto sch = mode == SignalMode::observer ? scheme(c) : MonitorScheme::exponential;
  const std::size_t n = n_paths(c);
  return [=](Context& ctx) {
    const RngStream rng(ctx.seed, 0);
    SignalPath path;
    std::vector<double> m, v;
    if (mode == SignalMode::observer) {
      auto run = simulate_observer(mu0, tg, gamma, rng, sch, false);
      path = std::move(run.path);
      m = std::move(run.post_mean);
      v = std::move(run.post_var);
    } else {
      path = simulate_cheater(mu0, tg, gamma, rng);
      for (std::size_t k = 0; k <= tg.n_steps; ++k) {
        const auto post = posterior_closed_form(mu0, path.S[k], tg.time(k), gamma);
        m.push_back(mean(post));
        v.push_back(variance(post));
      }
    }
    {
      auto out = ctx.open("trajectory.csv");
      write_trajectory_csv(out, path, innovation_path(path, mu0, gamma), m, v);
    }
    {
      auto out = ctx.open("measure_final.csv");
      write_measure_csv(out, posterior_closed_form(mu0, path.S.back(), tg.horizon() - tg.t0, gamma));
    }
    if (n > 1) {
      const auto idx = record_indices(tg);
      const auto times = times_of(tg, idx);
      const auto ens = run_ensemble(mode == SignalMode::observer ? "posterior mean" : "signal S", times, n, ctx.seed,
                                    [&](const RngStream& r) {
                                      std::vector<double> out;
                                      if (mode == SignalMode::observer) {
                                        const auto run = simulate_observer(mu0, tg, gamma, r, sch, false);
                                        for (auto k : idx) out.push_back(run.post_mean[k]);
                                      } else {
                                        const auto p = simulate_cheater(mu0, tg, gamma, r);
                                        for (auto k : idx) out.push_back(p.S[k]);
                                      }
                                      return out;
                                    },
                                    ctx.threads);
      write_ensemble(ctx, ens.report);
    }
    ctx.note("final posterior mean " + format_double(m.back()));
  };
}

Runner plan_discrete(const Config& c) {
  const auto mu0 = prior(c, true);
  const double lo = c.get_double("discrete.p_low"), hi = c.get_double("discrete.p_high");
  for (const auto& [key, p] : {std::pair{"discrete.p_low", lo}, std::pair{"discrete.p_high", hi}})
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError(std::string(key) + " must lie in [0, 1]", key);
  const auto rounds = c.get_u64("discrete.rounds");
  if (rounds == 0) throw ConfigError("discrete.rounds must be at least 1", "discrete.rounds");
  const Grid1D& g = mu0.grid();
  const double span = g.x_max() - g.x_min;
  // p(1 | x) interpolates linearly from p_low at the left end to p_high at the right end.
  const OutcomeTable table(g, 2, [=](std::size_t i, double x) {
    const double p1 = span > 0.0 ? lo + (hi - lo) * (x - g.x_min) / span : lo;
    return i == 1 ? p1 : 1.0 - p1;
  });
  return [=](Context& ctx) {
    RngStream rng(ctx.seed, 0);
    auto out = ctx.open("chain.csv");
    CsvWriter csv(out, {"round", "outcome", "post_mean", "post_var"});
    csv.comment("outcome 1 has probability p(1|x) = p_low + (p_high - p_low)(x - x_min)/(x_max - x_min)");
    csv.comment("round 0 is the prior; post_mean and post_var in position units");
    GridMeasure mu = mu0;
    csv.row({0.0, std::nan(""), mean(mu), variance(mu)});
    for (std::uint64_t r = 1; r <= rounds; ++r) {
      const auto step = discrete_chain_step(mu, table, rng);
      mu = step.measure;
      csv.row({static_cast<double>(r), static_cast<double>(step.outcome), mean(mu), variance(mu)});
    }
  };
}

void write_diffusion_csv(std::ostream& out, const DiffusionRun& run) {
  CsvWriter csv(out, {"t", "S", "W", "post_mean", "post_var"});
  csv.comment("mode=observer");
  csv.comment("S: measurement signal; W: innovation; post_mean, post_var: posterior moments of the position");
  for (std::size_t k = 0; k <= run.grid.n_steps; ++k)
    csv.row({run.grid.time(k), run.S[k], run.W[k], run.post_mean[k], run.post_var[k]});
}

Runner plan_diffusion(const Config& c, bool ou) {
  const double gamma = non_negative(c, "model.gamma");
  const auto mu0 = prior(c, true);
  const TimeGrid tg = time_grid(c);
  MonitoredDiffusionConfig base{.dynamics = 0.0, .gamma = gamma, .mu0 = mu0, .grid = tg, .rng = RngStream()};
  if (ou) {
    base.dynamics = LindbladSpec::ornstein_uhlenbeck(c.get_double("model.theta"), c.get_double("model.sigma"),
                                                     c.get_double("model.center", 0.0));
  } else {
    base.dynamics = non_negative(c, "model.D");
  }
  base.scheme = scheme(c);
  base.prune_log_cutoff = non_negative(c, "model.prune_log_cutoff", 0.0);
  base.validate();
  FokkerPlanckOperator(base.spec(), mu0.grid()).check_stability(tg.dt);

  std::optional<SweepOptions> sweep;
  if (c.has("sweep.gammas")) {
    SweepOptions o;
    o.gammas = c.get_list("sweep.gammas");
    o.n_paths = c.get_u64("sweep.n_paths", 200);
    o.observables = {MomentObservable::power_moment(1), MomentObservable::power_moment(2),
                     MomentObservable::squared_mean()};
    sweep = o;
  }
  const double y0 = mean(mu0);
  return [=](Context& ctx) mutable {
    base.rng = RngStream(ctx.seed, 0);
    const auto run = simulate_monitored(base);
    {
      auto out = ctx.open("trajectory.csv");
      write_diffusion_csv(out, run);
    }
    {
      auto out = ctx.open("measure_final.csv");
      write_measure_csv(out, run.final_measure);
    }
    if (ou) {
      const auto y = classical_sde_oracle(base.spec(), y0, tg, RngStream(ctx.seed, 0, 1));
      auto out = ctx.open("oracle.csv");
      CsvWriter csv(out, {"t", "y"});
      csv.comment("Euler-Maruyama path of dY = U(Y) dt + V(Y) dB started at the prior mean");
      for (std::size_t k = 0; k <= tg.n_steps; ++k) csv.row({tg.time(k), y[k]});
    }
    ctx.note("max pre-renormalization mass deficit " + format_double(run.max_mass_deficit));
    if (sweep) {
      sweep->seed = ctx.seed;
      sweep->threads = ctx.threads;
      const auto report = strong_limit_sweep(base, *sweep);
      auto out = ctx.open("sweep.csv");
      report.write_csv(out);
      if (!report.valid()) throw NumericalError("more than 1% of the sweep paths failed");
    }
  };
}

PhysicalScales scales(const Config& c) {
  PhysicalScales s{c.get_double("scales.m", 1.0), c.get_double("scales.hbar", 1.0), c.get_double("scales.gamma", 1.0)};
  s.validate();
  return s;
}

Potential potential(const Config& c, const std::string& section, double m) {
  const std::string kind = c.get_string(section + ".potential", "harmonic");
  if (kind == "free") return Potential::free();
  if (kind == "harmonic") {
    const double Omega = c.get_double(section + ".Omega");
    if (!(Omega >= 0.0)) throw ConfigError(section + ".Omega must be non-negative", section + ".Omega");
    return Potential::harmonic(Omega, m);
  }
  throw ConfigError(section + ".potential must be free or harmonic", section + ".potential");
}

Runner plan_packet(const Config& c) {
  const PhysicalScales s = scales(c);
  const Potential pot = potential(c, "packet", s.m);
  const TimeGrid tg = time_grid(c);
  GaussianPacket p0{a_infinity(s, pot.kind() == Potential::Kind::harmonic ? pot.Omega() : 0.0),
                    c.get_double("packet.xbar", 0.0), c.get_double("packet.vbar", 0.0)};
  if (c.has("packet.re_a") || c.has("packet.im_a")) {
    p0.a = {c.get_double("packet.re_a"), c.get_double("packet.im_a", 0.0)};
    if (!(p0.a.real() > 0.0)) throw ConfigError("packet.re_a must be positive", "packet.re_a");
  }
  return [=](Context& ctx) {
    const auto run = simulate_packet(p0, pot, s, sample_noise(tg, RngStream(ctx.seed, 0)));
    auto out = ctx.open("packet.csv");
    write_packet_csv(out, tg, run, s);
    ctx.note("validity violations: smooth " + std::to_string(run.smooth_violations) + ", cubic " +
             std::to_string(run.cubic_violations));
  };
}

Runner plan_langevin(const Config& c) {
  const double m = c.get_double("langevin.m", 1.0);
  if (!(m > 0.0)) throw ConfigError("langevin.m must be positive", "langevin.m");
  const Potential pot = potential(c, "langevin", m);
  const double eps = non_negative(c, "langevin.eps");
  const double x0 = c.get_double("langevin.x0"), v0 = c.get_double("langevin.v0", 0.0);
  const TimeGrid tg = time_grid(c);
  const std::size_t n = n_paths(c);
  return [=](Context& ctx) {
    {
      const auto run = simulate_langevin(x0, v0, pot, m, eps, sample_noise(tg, RngStream(ctx.seed, 0)));
      auto out = ctx.open("langevin.csv");
      write_langevin_csv(out, tg, run);
    }
    if (n > 1) {
      const auto idx = record_indices(tg);
      const auto times = times_of(tg, idx);
      const auto ens = run_ensemble("position", times, n, ctx.seed,
                                    [&](const RngStream& r) {
                                      const auto run = simulate_langevin(x0, v0, pot, m, eps, sample_noise(tg, r));
                                      std::vector<double> out;
                                      for (auto k : idx) out.push_back(run.x[k]);
                                      return out;
                                    },
                                    ctx.threads);
      const bool harmonic = pot.kind() == Potential::Kind::harmonic && pot.Omega() > 0.0 && v0 == 0.0;
      auto out = ctx.open("variance.csv");
      CsvWriter csv(out, {"t", "mean", "variance", "variance_se", "closed_form_variance"});
      csv.comment("ensemble of " + std::to_string(n) + " Langevin paths; variance_se assumes Gaussian fluctuations");
      csv.comment(harmonic ? "closed_form_variance: (eps/Omega^2)(2 Omega t - sin 2 Omega t)/(4 Omega)"
                           : "closed_form_variance: eps t^3 / 3 (free particle, v0 = 0), nan otherwise");
      for (const auto& ts : ens.report.per_time) {
        double ref = std::nan("");
        if (harmonic) ref = variance_closed_form(ts.time - tg.t0, pot.Omega(), eps);
        else if (pot.kind() == Potential::Kind::free && v0 == 0.0) ref = variance_short_time(ts.time - tg.t0, eps);
        const double n_eff = static_cast<double>(ts.stats.n);
        csv.row({ts.time, ts.stats.mean, ts.stats.variance, ts.stats.variance * std::sqrt(2.0 / (n_eff - 1.0)), ref});
      }
      if (!ens.report.valid()) throw NumericalError("more than 1% of the ensemble paths failed");
    }
  };
}

Runner plan_double_scaling(const Config& c) {
  DoubleScalingOptions o;
  o.Omega = c.get_double("double_scaling.Omega", 1.0);
  o.eps = positive(c, "double_scaling.eps");
  o.omegas = c.get_list("double_scaling.omegas");
  o.horizon = positive(c, "double_scaling.horizon");
  o.x0 = c.get_double("double_scaling.x0", 2.0);
  o.v0 = c.get_double("double_scaling.v0", 0.0);
  o.dt_times_omega = c.get_double("double_scaling.dt_times_omega", 1e-2);
  if (!(o.dt_times_omega > 0.0 && o.dt_times_omega <= 1e-2))
    throw ConfigError("the time step must satisfy dt <= 1e-2 / omega", "double_scaling.dt_times_omega");
  o.n_paths = n_paths(c);
  if (o.n_paths < 100) throw ConfigError("double scaling needs run.n_paths >= 100 for the KS tests", "run.n_paths");
  for (double w : o.omegas)
    if (!(w > 0.0)) throw ConfigError("omegas must be positive", "double_scaling.omegas");
  return [=](Context& ctx) mutable {
    o.seed = ctx.seed;
    o.threads = ctx.threads;
    const auto rows = double_scaling_study(o);
    auto out = ctx.open("double_scaling.csv");
    write_double_scaling_csv(out, rows);
  };
}

Runner plan_girsanov(const Config& c) {
  const double gamma = non_negative(c, "model.gamma");
  const auto mu0 = prior(c, c.has("space.x_min"));
  const std::string fn = c.get_string("girsanov.function", "A*S");
  const auto times = c.get_list("girsanov.times");
  for (std::size_t i = 0; i < times.size(); ++i)
    if (!(times[i] > 0.0) || (i > 0 && !(times[i] > times[i - 1])))
      throw ConfigError("girsanov.times must be positive and increasing", "girsanov.times");
  const auto n = c.get_u64("girsanov.n_samples");
  if (n < 2) throw ConfigError("girsanov.n_samples must be at least 2", "girsanov.n_samples");
  PathFunctional f;
  if (fn == "A*S") f = [](double A, std::span<const double> S) { return A * S.back(); };
  else if (fn == "one") f = [](double, std::span<const double>) { return 1.0; };
  else if (fn == "indicator") f = [](double, std::span<const double> S) { return S.back() > 0.0 ? 1.0 : 0.0; };
  else throw ConfigError("girsanov.function must be A*S, one or indicator", "girsanov.function");
  return [=](Context& ctx) {
    const auto r = girsanov_check(f, mu0, gamma, times, n, ctx.seed);
    auto out = ctx.open("girsanov.csv");
    CsvWriter csv(out, {"lhs", "lhs_se", "rhs", "rhs_se"});
    csv.comment("function=" + fn + " with A = 2 gamma x and S in alpha units, evaluated at the last time");
    csv.comment("lhs: E[f(A, B + A t)]; rhs: E[f(A, B) exp(A B_T - A^2 T / 2)]");
    csv.row({r.lhs, r.lhs_se, r.rhs, r.rhs_se});
    ctx.note("lhs " + format_double(r.lhs) + " +- " + format_double(r.lhs_se) + ", rhs " + format_double(r.rhs) +
             " +- " + format_double(r.rhs_se));
  };
}

Runner plan_verify_suite(const Config& c) {
  std::vector<std::string> only;
  if (c.has("suite.only")) {
    only = c.get_words("suite.only");
    const auto ids = acceptance_ids();
    for (const auto& id : only)
      if (std::find(ids.begin(), ids.end(), id) == ids.end())
        throw ConfigError("suite.only names an unknown criterion '" + id + "'", "suite.only");
  }
  return [=](Context& ctx) {
    AcceptanceOptions o;
    o.seed = ctx.seed;
    o.threads = ctx.threads;
    o.only = only;
    o.work_dir = ctx.dir / "determinism";
    const auto results = run_acceptance(o, ctx.log);
    if (ctx.log) print_acceptance_table(*ctx.log, results);
    auto out = ctx.open("acceptance.csv");
    write_acceptance_csv(out, results);
    ctx.passed = std::all_of(results.begin(), results.end(), [](const CriterionResult& r) { return r.passed; });
  };
}

const std::map<std::string, Planner>& planners() {
  static const std::map<std::string, Planner> table{
      {"qnd-observer", [](const Config& c) { return plan_qnd(c, SignalMode::observer); }},
      {"qnd-cheater", [](const Config& c) { return plan_qnd(c, SignalMode::cheater); }},
      {"qnd-discrete", plan_discrete},
      {"diffusion", [](const Config& c) { return plan_diffusion(c, false); }},
      {"lindblad-sde", [](const Config& c) { return plan_diffusion(c, true); }},
      {"packet", plan_packet},
      {"langevin", plan_langevin},
      {"double-scaling", plan_double_scaling},
      {"girsanov", plan_girsanov},
      {"verify-suite", plan_verify_suite},
  };
  return table;
}

}  // namespace

RunResult run_experiment(const Config& config, const fs::path& out_dir, unsigned threads, std::ostream* log) {
  const auto start = std::chrono::steady_clock::now();
  const std::string kind = config.get_string("run.kind");
  const auto it = planners().find(kind);
  if (it == planners().end()) {
    std::string names;
    for (const auto& [k, p] : planners()) names += (names.empty() ? "" : ", ") + k;
    throw ConfigError("run.kind must be one of " + names, "run.kind");
  }
  const std::uint64_t seed = config.get_u64("run.seed", 0);
  config.get_string("run.note", "");  // free-form, recorded in the manifest
  Runner runner = it->second(config);
  config.reject_unused();

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw Error("cannot create output directory " + out_dir.string() + ": " + ec.message());
  if (threads > 0) set_default_threads(threads);

  Context ctx{config, out_dir, seed, threads, log, {}, true};
  runner(ctx);

  RunResult result;
  result.kind = kind;
  result.out_dir = out_dir;
  result.outputs = ctx.outputs;
  result.passed = ctx.passed;
  auto& m = result.manifest;
  m["tool"] = "qmon";
  m["version"] = library_version();
  m["kind"] = kind;
  m["seed"] = seed;
  m["threads"] = threads;
  m["config"] = config.to_json();
  m["wall_time_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  auto& hashes = m["outputs"] = nlohmann::json::object();
  for (const auto& name : ctx.outputs) hashes[name] = sha256_file(out_dir / name);
  if (kind == "verify-suite") m["passed"] = ctx.passed;
  std::ofstream(out_dir / kManifestName) << m.dump(2) << '\n';
  return result;
}

nlohmann::json read_manifest(const fs::path& run_dir) {
  const fs::path p = run_dir / kManifestName;
  std::ifstream in(p);
  if (!in) throw ConfigError("no manifest at " + p.string(), "manifest");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("corrupt manifest " + p.string() + ": " + e.what(), "manifest");
  }
  for (const char* key : {"config", "outputs", "seed", "kind"})
    if (!j.contains(key)) throw ConfigError(std::string("manifest lacks '") + key + "'", key);
  if (!j["seed"].is_number_unsigned()) throw ConfigError("manifest seed must be a non-negative integer", "seed");
  return j;
}

bool RerunReport::all_match() const noexcept {
  return std::all_of(checks.begin(), checks.end(), [](const OutputCheck& c) { return c.match(); });
}

RerunReport rerun_from_manifest(const fs::path& run_dir, const fs::path& out_dir, unsigned threads, std::ostream* log) {
  const auto manifest = read_manifest(run_dir);
  Config cfg = Config::from_json(manifest["config"]);
  cfg.set("run.seed", std::to_string(manifest["seed"].get<std::uint64_t>()));
  const auto result = run_experiment(cfg, out_dir, threads, log);
  RerunReport report;
  report.out_dir = out_dir;
  for (const auto& [name, hash] : manifest["outputs"].items()) {
    OutputCheck check{name, hash.get<std::string>(), {}};
    if (fs::exists(out_dir / name)) check.actual = sha256_file(out_dir / name);
    report.checks.push_back(check);
  }
  for (const auto& name : result.outputs)
    if (!manifest["outputs"].contains(name)) report.checks.push_back({name, {}, sha256_file(out_dir / name)});
  return report;
}

}  // namespace qmon

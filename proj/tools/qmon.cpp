#include <CLI11.hpp>

#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "qmon/acceptance.hpp"
#include "qmon/error.hpp"
#include "qmon/experiment.hpp"

namespace fs = std::filesystem;

namespace {

// Exit codes: 0 success, 1 failed verification or checksum mismatch,
// 2 configuration error, 3 numerical failure.
constexpr int kFailed = 1, kConfig = 2, kNumerical = 3;

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const qmon::ConfigError& e) {
    std::cerr << "config error";
    if (!e.key().empty()) std::cerr << " [" << e.key() << "]";
    std::cerr << ": " << e.what() << '\n';
    return kConfig;
  } catch (const qmon::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailed;
  }
}

void report_outputs(const qmon::RunResult& r) {
  std::cout << "wrote";
  for (const auto& f : r.outputs) std::cout << ' ' << f;
  std::cout << " and " << qmon::kManifestName << " to " << r.out_dir.string() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous position monitoring: simulation runs and verification"};
  app.require_subcommand(1);
  app.set_version_flag("--version", qmon::library_version());

  unsigned threads = 0;
  auto add_threads = [&](CLI::App* sub) {
    sub->add_option("--threads", threads, "worker cap; 0 uses every hardware thread");
  };

  auto* run = app.add_subcommand("run", "run an experiment described by a config file");
  std::string config_path, out_dir;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  run->add_option("config", config_path, "INI config file")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "overrides run.seed");
  run->add_option("--set", overrides, "section.key=value override, repeatable");
  run->add_option("--out", out_dir, "output directory (default: runs/<config name>)");
  add_threads(run);

  auto* manifest = app.add_subcommand("manifest", "print the manifest of a run directory");
  std::string run_dir;
  manifest->add_option("dir", run_dir, "run directory")->required();

  auto* rerun = app.add_subcommand("rerun", "re-run from a manifest and compare output checksums");
  std::string rerun_out;
  rerun->add_option("dir", run_dir, "run directory")->required();
  rerun->add_option("--out", rerun_out, "where the re-run writes (default: <dir>/rerun)");
  add_threads(rerun);

  auto* verify = app.add_subcommand("verify-suite", "run the acceptance criteria and print a pass/fail table");
  std::vector<std::string> only;
  std::string verify_out = "verify-suite";
  std::uint64_t verify_seed = qmon::AcceptanceOptions{}.seed;
  verify->add_option("--seed", verify_seed, "base seed");
  verify->add_option("--only", only, "criterion ids, e.g. A1,A10")->delimiter(',');
  verify->add_option("--out", verify_out, "output directory");
  add_threads(verify);

  CLI11_PARSE(app, argc, argv);

  if (*run) {
    return guarded([&] {
      qmon::Config cfg = qmon::Config::load(config_path);
      for (const auto& o : overrides) cfg.apply_override(o);
      if (seed) cfg.set("run.seed", std::to_string(*seed));
      const fs::path out = out_dir.empty() ? fs::path("runs") / fs::path(config_path).stem() : fs::path(out_dir);
      const auto result = qmon::run_experiment(cfg, out, threads, &std::cout);
      report_outputs(result);
      return result.passed ? 0 : kFailed;
    });
  }
  if (*manifest) {
    return guarded([&] {
      std::cout << qmon::read_manifest(run_dir).dump(2) << '\n';
      return 0;
    });
  }
  if (*rerun) {
    return guarded([&] {
      const fs::path out = rerun_out.empty() ? fs::path(run_dir) / "rerun" : fs::path(rerun_out);
      const auto report = qmon::rerun_from_manifest(run_dir, out, threads);
      for (const auto& c : report.checks) {
        std::cout << (c.match() ? "match     " : "MISMATCH  ") << c.file;
        if (!c.match())
          std::cout << "  expected " << (c.expected.empty() ? "<absent>" : c.expected) << ", got "
                    << (c.actual.empty() ? "<absent>" : c.actual);
        std::cout << '\n';
      }
      if (!report.all_match()) {
        std::cout << "checksum mismatch against the stored outputs\n";
        return kFailed;
      }
      std::cout << "all " << report.checks.size() << " outputs reproduced bitwise\n";
      return 0;
    });
  }
  return guarded([&] {
    qmon::Config cfg;
    cfg.set("run.kind", "verify-suite");
    cfg.set("run.seed", std::to_string(verify_seed));
    if (!only.empty()) {
      std::string list;
      for (const auto& id : only) list += (list.empty() ? "" : ",") + id;
      cfg.set("suite.only", list);
    }
    const auto result = qmon::run_experiment(cfg, verify_out, threads, &std::cout);
    return result.passed ? 0 : kFailed;
  });
}

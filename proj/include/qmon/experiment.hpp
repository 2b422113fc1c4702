#pragma once

// Experiment configurations (INI-style key-value files), the runners that turn
// them into CSV artifacts, and the run manifest used to reproduce a run.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

namespace qmon {

std::string library_version();

// Flat "section.key" -> value map. Every read marks the key as used so that
// misspelled or unsupported keys are reported instead of silently ignored.
class Config {
 public:
  static Config parse(std::istream& in, const std::string& source = "<config>");
  static Config load(const std::filesystem::path& path);
  static Config from_json(const nlohmann::json& j);

  // "section.key=value"
  void apply_override(const std::string& assignment);
  void set(const std::string& key, std::string value);
  bool has(const std::string& key) const;

  std::string get_string(const std::string& key) const;
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  std::uint64_t get_u64(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  std::vector<double> get_list(const std::string& key) const;
  std::vector<std::string> get_words(const std::string& key) const;

  // Throws ConfigError naming the first key that no runner read.
  void reject_unused() const;

  const std::map<std::string, std::string>& entries() const noexcept { return entries_; }
  nlohmann::json to_json() const;

 private:
  const std::string& raw(const std::string& key) const;

  std::map<std::string, std::string> entries_;
  mutable std::set<std::string> used_;
};

struct RunResult {
  std::string kind;
  std::filesystem::path out_dir;
  std::vector<std::string> outputs;  // file names inside out_dir
  nlohmann::json manifest;
  bool passed = true;  // false only for a failing verify-suite
};

// Validates the whole config, runs it and writes the artifacts plus
// manifest.json into out_dir (created if needed). threads = 0 keeps the
// library default.
RunResult run_experiment(const Config& config, const std::filesystem::path& out_dir, unsigned threads = 0,
                         std::ostream* log = nullptr);

inline constexpr const char* kManifestName = "manifest.json";

nlohmann::json read_manifest(const std::filesystem::path& run_dir);
std::string sha256_file(const std::filesystem::path& path);

struct OutputCheck {
  std::string file;
  std::string expected, actual;  // actual is empty when the file was not produced
  bool match() const noexcept { return !actual.empty() && expected == actual; }
};

struct RerunReport {
  std::filesystem::path out_dir;
  std::vector<OutputCheck> checks;
  bool all_match() const noexcept;
};

// Re-runs the configuration recorded in run_dir's manifest into out_dir and
// compares output hashes with the recorded ones. The manifest's top-level seed
// takes precedence over the seed inside its config block.
RerunReport rerun_from_manifest(const std::filesystem::path& run_dir, const std::filesystem::path& out_dir,
                                unsigned threads = 0, std::ostream* log = nullptr);

}  // namespace qmon

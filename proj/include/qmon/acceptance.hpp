#pragma once

// Acceptance criteria A1-A14: each one runs a fixed numerical experiment and
// compares it with its oracle. A failing criterion is retried once with a
// fresh seed; the retry is flagged in the result.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

namespace qmon {

struct CriterionResult {
  std::string id, title;
  bool passed = false;
  bool retried = false;
  bool within_budget = true;
  double seconds = 0.0, budget_seconds = 0.0;
  std::uint64_t seed = 0;  // seed of the attempt that produced this result
  std::string detail;
  nlohmann::json data;
};

struct AcceptanceOptions {
  std::uint64_t seed = 1729;
  unsigned threads = 0;
  std::vector<std::string> only;       // empty runs every criterion
  std::filesystem::path work_dir;      // scratch space for the determinism check
};

std::vector<std::string> acceptance_ids();

std::vector<CriterionResult> run_acceptance(const AcceptanceOptions& options, std::ostream* progress = nullptr);

void print_acceptance_table(std::ostream& out, const std::vector<CriterionResult>& results);
// id,title,passed,retried,seed,detail. Timings are left out so the file is
// reproducible.
void write_acceptance_csv(std::ostream& out, const std::vector<CriterionResult>& results);

}  // namespace qmon

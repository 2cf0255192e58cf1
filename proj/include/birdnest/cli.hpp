#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace birdnest::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

class usage_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::string command;  // fit | score | rank | simulate | export-plots
  std::string input;
  std::string model;
  std::string output;
  int stars = 5;
  int buckets = 20;
  std::optional<int> k;
  int k_min = 1;
  int k_max = 5;
  std::optional<std::uint64_t> seed;
  int samples = 128;
  int max_iters = 100;
  double tol = 1e-5;
  int restarts = 5;
  int threads = 0;  // 0 = library default
  int top = 50;
  std::vector<std::string> users;  // export-plots: posterior draw users
};

/// Runs one command. Errors become a single `error kind=<...> message=<...>`
/// line on `err` and the matching exit code.
int run(const RunConfig& config, std::ostream& err);

/// Parses argv (CLI11) and runs; usage errors return kUsage.
int parse_and_run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace birdnest::cli

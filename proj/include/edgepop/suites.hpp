#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace edgepop {

// One named verification suite run with pinned seeds. `data` carries the
// machine-readable summary printed by the CLI.
struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
  nlohmann::json data;
};

SuiteResult verify_topk(uint64_t seed = 7);
SuiteResult verify_gradients(uint64_t seed = 7);
SuiteResult verify_theorem1(uint64_t seed = 7);
SuiteResult verify_theorem1_general(uint64_t seed = 7);
SuiteResult verify_bruteforce(uint64_t seed = 7);
SuiteResult verify_variance(uint64_t seed = 7);

// Dispatch by suite name; throws ConfigError for unknown names.
SuiteResult run_verify_suite(const std::string& name);

std::vector<std::string> verify_suite_names();

}  // namespace edgepop

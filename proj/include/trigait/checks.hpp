#pragma once

#include <string>
#include <vector>

namespace trigait {

struct CheckResult {
  std::string group;
  std::string name;
  bool passed = false;
  std::string detail;
};

// grad, branches, softmax, sigmoid, gem, jsa, attention, alignment, triplet, rank1
const std::vector<std::string>& check_groups();

// Runs the listed groups (all when empty). Unknown group names are rejected.
std::vector<CheckResult> run_checks(const std::vector<std::string>& only = {});

}  // namespace trigait

#pragma once

// Training-free numerical self-checks: gradients against finite
// differences, SVD and Gram-trick properties, parameter counts, lossless
// reconstruction identities, and artifact round-trips.

#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace grok {

struct CheckResult {
  std::string id;      // "gradient", "svd", ...
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double limit = 0.0;
  std::string detail;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  std::filesystem::path scratch;  // temporary files; defaults to the system temp directory
  std::vector<std::string> only;  // check ids to run; empty runs all
};

std::vector<std::string> verify_check_ids();

/// Runs the checks in order, calling `on_result` as each finishes.
std::vector<CheckResult> run_verify(const VerifyOptions& opt = {},
                                    const std::function<void(const CheckResult&)>& on_result = {});

}  // namespace grok

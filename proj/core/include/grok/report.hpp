#pragma once

// Aggregation of analyzed runs into per-condition summaries and table CSVs.
// A run directory is expected to hold record.json, analysis/ (from
// analyze_run) and probes/ (from probe_run). Missing artifacts leave the
// affected fields empty; nothing is filled in by default.

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "grok/tasks.hpp"

namespace grok {

/// A value together with the artifact it was read from.
struct Cell {
  std::optional<double> value;
  std::string source;  // path relative to the run directory, empty when missing
  std::string text;    // non-numeric rendering, e.g. ">30"
  bool present() const { return value.has_value() || !text.empty(); }
};

struct ConditionSummary {
  std::filesystem::path run_dir;
  std::string model_tag;
  double weight_decay = 0.0;
  Cell grok_step;
  std::array<Cell, kNumTasks> baseline;
  Cell kstar95, kstar99;
  Cell pm64, joint_half, joint_full, traj3, traj5, baseline_mean;
  Cell k90_pct, k99_pct, entropy;
  Cell mean_si, mean_si_trunk, mean_overlap;
};

ConditionSummary summarize(const std::filesystem::path& run_dir);

/// Run directories under `dirs`: each entry is either a run (has
/// record.json) or a directory whose children are runs.
std::vector<std::filesystem::path> collect_runs(const std::vector<std::filesystem::path>& dirs);

/// Writes summary.csv and tables/table2.csv ... tables/table6.csv into
/// `out_dir`. Rows are ordered by model preset, then weight decay.
void emit_tables(std::vector<ConditionSummary> summaries, const std::filesystem::path& out_dir);

}  // namespace grok

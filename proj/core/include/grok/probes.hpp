#pragma once

// Gradient-covariance probes. For each task, per-example gradients of that
// task's loss span a sample matrix whose top right singular vectors (the top
// eigenvectors of the uncentered gradient covariance) form the task's
// subspace. Projecting a subspace out of the learned delta and re-scoring
// the model measures how selectively it carries the task.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "grok/linalg.hpp"
#include "grok/model.hpp"
#include "grok/recon.hpp"
#include "grok/tasks.hpp"

namespace grok {

/// Coordinates a probe works on.
enum class ProbeScope {
  FullVector,     // every parameter
  TrunkInterior,  // encoder layers and final layer norm; no embeddings, no heads
};
std::string_view probe_scope_name(ProbeScope s);
ProbeScope probe_scope_from_name(std::string_view name);
std::vector<Range> probe_ranges(const ParamLayout& layout, ProbeScope s);

/// `m` distinct training indices drawn with a seeded partial shuffle.
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t m, std::uint64_t seed);

/// Row i = gradient of `task`'s cross-entropy on example indices[i],
/// restricted to `ranges`.
Mat task_grad_sample(const ParamSet<double>& params, TaskId task, const Dataset& data,
                     const std::vector<std::size_t>& indices, const std::vector<Range>& ranges);
Mat task_grad_sample(const ParamSet<double>& params, TaskId task, const Dataset& data, std::size_t m,
                     std::uint64_t seed, const std::vector<Range>& ranges);

struct TaskSubspace {
  TaskId task = TaskId::Add;
  std::string tag;  // "model" or "layers.<l>"
  Mat basis;        // D x k, orthonormal columns
  std::vector<double> s;
};

/// Top-k directions of the sample; `center` subtracts the mean row first.
TaskSubspace top_directions(const Mat& grads, std::size_t k, TaskId task, std::string tag = "model",
                            bool center = false);

/// Removes the span of all subspaces from the scoped delta (or from the raw
/// final vector when `raw` is set). Bases are concatenated and
/// re-orthonormalized before projection.
ParamSet<double> ablate(const ParamSet<double>& init, const ParamSet<double>& final_params,
                        const std::vector<const TaskSubspace*>& subspaces, const std::vector<Range>& ranges,
                        bool raw = false);

/// (self - collateral) / (self + collateral); nullopt when the denominator is 0.
std::optional<double> selectivity_index(double self_damage, double mean_collateral);

/// ||U_A^T U_B||_F^2 / k.
double layer_overlap(const Mat& a, const Mat& b);

struct AblationReport {
  std::vector<TaskId> removed;  // empty for the random control
  std::string label;
  std::size_t k = 0;
  ProbeScope scope = ProbeScope::FullVector;
  TaskAcc before{};
  TaskAcc after{};
  double self_damage = 0.0;      // mean drop over removed tasks, clamped at 0
  double mean_collateral = 0.0;  // mean drop over the remaining tasks, clamped at 0
  std::optional<double> si;
};

/// Fills damages and SI from before/after accuracies.
AblationReport make_report(std::vector<TaskId> removed, std::string label, std::size_t k, ProbeScope scope,
                           const TaskAcc& before, const TaskAcc& after);

struct OverlapRow {
  std::string layer;
  TaskId a, b;
  double overlap = 0.0;
};

struct ProbeOptions {
  std::size_t k = 10;
  std::size_t sample = 256;
  std::uint64_t seed = 0;
  std::vector<ProbeScope> scopes{ProbeScope::FullVector};
  bool center = false;
  bool raw = false;
};

struct ProbeReport {
  TaskAcc baseline{};
  std::vector<AblationReport> selectivity;  // one per (scope, task)
  std::vector<AblationReport> cross;        // pairs, all three, random control
  std::vector<OverlapRow> overlap;
  std::optional<double> mean_si(ProbeScope scope) const;
  double mean_overlap() const;
};

/// Writes selectivity.csv, overlap.csv, cross_ablation.csv and probes.json.
ProbeReport probe_run(const std::filesystem::path& run_dir, const std::filesystem::path& out_dir,
                      const ProbeOptions& opt = {});

}  // namespace grok

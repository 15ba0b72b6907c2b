#pragma once

// Low-rank reconstructions of a trained model and their spectral
// diagnostics. Every method rebuilds a full parameter set from the initial
// and final parameters; the result is scored by test accuracy.
//
//   per-matrix   each in-scope matrix gets W_init + rank-k SVD of its dW
//   joint        trunk dW matrices flattened as rows of one zero-padded
//                n x d_max matrix, truncated to rank r
//   trajectory   dW_final projected onto the top-k right singular vectors
//                of the (uncentered) checkpoint-delta matrix
//
// Vectors (biases, layer-norm parameters) and out-of-scope tensors always
// keep their final values.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "grok/ckpt.hpp"
#include "grok/linalg.hpp"
#include "grok/model.hpp"
#include "grok/tasks.hpp"

namespace grok {

using TaskAcc = std::array<double, kNumTasks>;

/// dW = final - init for one tensor, as a rows x cols matrix.
Mat delta_matrix(const ParamSet<double>& init, const ParamSet<double>& final_params, const TensorSpec& t);

ParamSet<double> per_matrix_truncate(const ParamSet<double>& init, const ParamSet<double>& final_params,
                                     std::size_t k, Scope scope);

/// The 2-D matrices of every encoder layer, canonical order (6 per layer).
std::vector<const TensorSpec*> trunk_matrices(const ParamLayout& layout);

ParamSet<double> joint_truncate(const ParamSet<double>& init, const ParamSet<double>& final_params,
                                std::size_t r);

struct TrajectoryBasis {
  Scope scope = Scope::Full;
  std::vector<Range> ranges;
  Mat dirs;                        // D x k_max, orthonormal columns
  std::vector<double> s;           // singular values of the kept directions
  std::vector<double> all_s;       // full trajectory spectrum
  std::vector<double> variance;    // s_i^2 / sum_j s_j^2 over the full spectrum
  std::size_t row_rank = 0;        // numerical rank of the trajectory matrix
  std::size_t k_max() const { return dirs.cols(); }
};

/// Keeps min(k_max, row_rank) directions. Throws if the trajectory never moves.
TrajectoryBasis trajectory_pca(const Trajectory& tr, Scope scope, std::size_t k_max);
TrajectoryBasis trajectory_pca(const std::filesystem::path& run_dir, Scope scope, std::size_t k_max);

/// Coefficients of the in-scope final delta on every basis direction.
std::vector<double> trajectory_coefficients(const ParamSet<double>& init, const ParamSet<double>& final_params,
                                            const TrajectoryBasis& basis);

ParamSet<double> traj_reconstruct(const ParamSet<double>& init, const ParamSet<double>& final_params,
                                  const TrajectoryBasis& basis, std::size_t k);

/// Final model with the delta's component along PC `pc` (0-based) removed.
ParamSet<double> remove_pc(const ParamSet<double>& init, const ParamSet<double>& final_params,
                           const TrajectoryBasis& basis, std::size_t pc);

/// `curve[k-1]` holds per-task accuracy with k components. Smallest k whose
/// accuracies all reach threshold x baseline, or nullopt within the curve.
std::optional<std::size_t> kstar(const std::vector<TaskAcc>& curve, const TaskAcc& baseline, double threshold);

struct EnergyRank {
  std::size_t k = 0;
  double percent = 0.0;  // 100 k / min(rows, cols)
};
/// Smallest k with sum_{i<=k} s_i^2 >= fraction * sum s_i^2. `full_rank` is
/// min(rows, cols) of the source matrix.
EnergyRank energy_rank(const std::vector<double>& s, double fraction, std::size_t full_rank);
EnergyRank energy_rank(const Mat& delta, double fraction);

/// Normalized Shannon entropy of s_i^2 / sum s_j^2, divided by ln(full_rank).
double spectral_entropy(const std::vector<double>& s, std::size_t full_rank);
double spectral_entropy(const Mat& delta);

/// Stored numbers for each method: k(m+n+1) per matrix (k capped at the
/// matrix rank), r(n + d_max + 1) for joint, k(D + 1) for trajectory.
std::size_t per_matrix_params(const ParamLayout& layout, Scope scope, std::size_t k);
std::size_t joint_params(const ParamLayout& layout, std::size_t r);
std::size_t trajectory_params(std::size_t dim, std::size_t k);

/// Test-set scorer with a reusable double-precision engine.
class Scorer {
 public:
  Scorer(const ModelConfig& cfg, Dataset test);
  TaskAcc accuracy(const ParamSet<double>& params);
  const Dataset& data() const { return test_; }

 private:
  Dataset test_;
  Engine<double> engine_;
};

struct ReconResult {
  std::string method;  // baseline, per_matrix, heads_only, joint, trajectory, pc_removed
  Scope scope = Scope::Full;
  std::size_t rank = 0;
  TaskAcc acc{};
  double mean = 0.0;
  std::size_t params_used = 0;
};

struct AnalyzeOptions {
  Scope scope = Scope::Trunk;  // scope of the per-matrix and trajectory comparison curves
  std::vector<std::size_t> ranks{1, 2, 4, 8, 16, 32, 64, 128};
  std::size_t kmax = 30;
  std::vector<double> kstar_thresholds{0.95, 0.99};
  std::size_t pc_removals = 5;  // PCs 1..n removed one at a time, plus the last kept PC
};

struct KStarRow {
  Scope scope = Scope::Full;
  double threshold = 0.0;
  std::optional<std::size_t> k;
};

struct MatrixSpectrum {
  std::string name;
  TensorGroup group = TensorGroup::Trunk;
  std::size_t rows = 0, cols = 0;
  std::vector<double> s;
  EnergyRank k90, k99;
  double entropy = 0.0;
};

struct AnalysisReport {
  ModelConfig model;
  std::int64_t final_step = 0;
  std::size_t checkpoints = 0;
  TaskAcc baseline{};
  std::vector<ReconResult> curve;
  std::vector<KStarRow> kstar;
  std::vector<MatrixSpectrum> spectra;
  std::vector<TrajectoryBasis> bases;  // full scope first, then the comparison scope if different
  double mean_k90_pct = 0.0;           // trunk matrices
  double mean_k99_pct = 0.0;
  double mean_entropy = 0.0;
};

/// Full reconstruction suite over one run directory. Writes recon_curve.csv,
/// spectra.csv, variance.csv, kstar.csv, entropy.csv and analysis.json into
/// `out_dir`.
AnalysisReport analyze_run(const std::filesystem::path& run_dir, const std::filesystem::path& out_dir,
                           const AnalyzeOptions& opt = {});

/// Loads step 0 and the last checkpoint as double parameters.
struct RunEndpoints {
  ParamSet<double> init;
  ParamSet<double> final_params;
  CheckpointMeta meta;
  std::vector<std::int64_t> steps;
};
RunEndpoints load_endpoints(const std::filesystem::path& run_dir);

}  // namespace grok

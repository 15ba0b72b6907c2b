#pragma once

// Full-batch AdamW training with grokking detection, metric logging and
// trajectory checkpoint capture.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "grok/model.hpp"
#include "grok/tasks.hpp"

namespace grok {

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-8;
  double weight_decay = 1.0;
  bool decay_norms_and_biases = true;  // false exempts 1-D tensors from weight decay
  std::int64_t max_steps = 200000;
  double grok_threshold = 0.95;
  std::int64_t eval_every = 100;
  double ckpt_growth = 1.05;      // capture when step >= growth * last captured step
  double ckpt_band = 0.05;        // also capture when a test accuracy changes band
  std::int64_t max_checkpoints = 400;
  std::uint64_t init_seed = 0;
  std::uint64_t split_seed = 0;

  void validate() const;
};

class TrainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Decoupled-weight-decay Adam over a flat float vector. Moments are stored
/// in 32 bits; each update is computed in double.
class AdamW {
 public:
  AdamW(const TrainConfig& cfg, std::vector<float> decay_scale);

  /// theta <- theta * (1 - lr * lambda_i) - lr * mhat / (sqrt(vhat) + eps)
  void step(std::span<float> params, std::span<const float> grads);
  std::int64_t steps_taken() const { return t_; }

 private:
  TrainConfig cfg_;
  std::vector<float> decay_scale_;
  std::vector<float> m_;
  std::vector<float> v_;
  std::int64_t t_ = 0;
};

/// Per-coordinate decay multiplier: 1 everywhere, or 0 on 1-D tensors when
/// norms and biases are exempt.
std::vector<float> decay_scale_for(const ParamLayout& layout, bool decay_norms_and_biases);

struct MetricRow {
  std::int64_t step = 0;
  double loss = 0.0;
  std::array<double, kNumTasks> train_acc{};
  std::array<double, kNumTasks> test_acc{};
};

enum class RunStatus { Grokked, MaxSteps, Diverged, Running };
std::string_view status_name(RunStatus s);

struct RunRecord {
  ModelConfig model;
  TrainConfig train;
  std::vector<MetricRow> metrics;
  std::array<std::optional<std::int64_t>, kNumTasks> task_grok_step{};
  std::optional<std::int64_t> grok_step;
  std::vector<std::int64_t> checkpoints;
  RunStatus status = RunStatus::Running;
  std::string error;
};

/// Decides which steps are captured. Step 0 is always captured.
class CheckpointSchedule {
 public:
  CheckpointSchedule(double growth, double band, std::int64_t cap);
  /// Whether a non-final step should be captured. `test_acc` is set on eval steps.
  bool want(std::int64_t step, const std::optional<std::array<double, kNumTasks>>& test_acc);
  /// Record that `step` was captured.
  void captured(std::int64_t step);
  std::int64_t count() const { return count_; }

 private:
  double growth_;
  double band_;
  std::int64_t cap_;
  std::int64_t count_ = 0;
  std::optional<std::int64_t> last_;
  std::optional<std::array<int, kNumTasks>> bands_;
};

struct TrainHooks {
  std::function<void(const MetricRow&)> on_eval;
};

/// Train one run into `run_dir` (run.meta, metrics.csv, record.json,
/// ckpt/step_<N>.grkc). Divergence ends the run with status Diverged and
/// the partial record.
RunRecord train(const ModelConfig& model, const TrainConfig& cfg, const Split& data,
                const std::filesystem::path& run_dir, const TrainHooks& hooks = {});

/// Train with data generated from cfg.split_seed.
RunRecord train(const ModelConfig& model, const TrainConfig& cfg,
                const std::filesystem::path& run_dir, const TrainHooks& hooks = {});

struct Evaluation {
  std::array<double, kNumTasks> acc{};
  double loss = 0.0;
};
template <class T>
Evaluation evaluate(const ParamSet<T>& params, const Dataset& data);

struct SweepItem {
  std::string model_tag;
  double weight_decay = 0.0;
  std::filesystem::path run_dir;
  std::optional<RunRecord> record;
  std::string error;
};

/// One run per (model, weight decay) pair, in `out_dir/<model>_wd<lambda>`.
/// Failures are recorded per item and do not stop the sweep.
std::vector<SweepItem> sweep(std::span<const std::string> model_tags, std::span<const double> decays,
                             const TrainConfig& base, const std::filesystem::path& out_dir,
                             int jobs = 1, const TrainHooks& hooks = {});

std::string sweep_run_name(std::string_view model_tag, double weight_decay);

RunRecord load_run_record(const std::filesystem::path& run_dir);
std::vector<MetricRow> read_metrics(const std::filesystem::path& run_dir);

}  // namespace grok

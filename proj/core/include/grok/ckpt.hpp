#pragma once

// GRKC checkpoint files and trajectory loading. Byte layout is documented in
// docs/format.md; all integers and floats are little-endian.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "grok/linalg.hpp"
#include "grok/model.hpp"

namespace grok {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 1;

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CheckpointMeta {
  ModelConfig model;
  std::int64_t step = 0;
  std::uint64_t init_seed = 0;
  std::uint64_t split_seed = 0;
};

struct Checkpoint {
  ParamSet<float> params;
  CheckpointMeta meta;
};

void save_checkpoint(const std::filesystem::path& path, const ParamSet<float>& params,
                     const CheckpointMeta& meta);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, std::int64_t step);
/// Steps of every ckpt/step_<N>.grkc in the run, ascending.
std::vector<std::int64_t> list_checkpoints(const std::filesystem::path& run_dir);

struct Trajectory {
  ModelConfig model;
  std::vector<std::int64_t> steps;
  std::vector<double> init;   // full flattened step-0 parameters
  std::vector<double> final_params;  // full flattened parameters of the last step
  std::vector<Range> ranges;  // coordinates kept in `deltas`
  Mat deltas;                 // row i = (ckpt_i - ckpt_0) restricted to `ranges`
};

/// Rows ordered by step. `names` restricts columns to those tensors; `scope`
/// is used otherwise.
Trajectory load_trajectory(const std::filesystem::path& run_dir, Scope scope = Scope::Full);
Trajectory load_trajectory(const std::filesystem::path& run_dir,
                           const std::vector<std::string>& names);

}  // namespace grok

#pragma once

// Multi-task modular arithmetic data: every pair (x, y) in [0, P)^2 labelled
// by three functions, with one shared seeded train/test split.

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace grok {

enum class TaskId : int { Add = 0, Mul = 1, Quad = 2 };

inline constexpr int kNumTasks = 3;
inline constexpr std::array<TaskId, kNumTasks> kAllTasks{TaskId::Add, TaskId::Mul, TaskId::Quad};

std::string_view task_name(TaskId t);  // "add", "mul", "quad"
TaskId task_from_name(std::string_view name);
inline int index_of(TaskId t) { return static_cast<int>(t); }

/// Label of `task` on (x, y) modulo P. Throws std::out_of_range unless
/// 0 <= x, y < P.
int task_label(TaskId task, int x, int y, int modulus);

struct Pair {
  int x = 0;
  int y = 0;
  friend bool operator==(const Pair&, const Pair&) = default;
};

struct Dataset {
  int modulus = 0;
  std::vector<Pair> pairs;
  std::array<std::vector<int>, kNumTasks> labels;

  std::size_t size() const { return pairs.size(); }
  std::span<const int> labels_of(TaskId t) const { return labels[static_cast<std::size_t>(index_of(t))]; }
  /// Rows [begin, begin + count) as a new dataset.
  Dataset slice(std::size_t begin, std::size_t count) const;
  /// Rows at the given indices, in that order.
  Dataset subset(std::span<const std::size_t> rows) const;
};

struct Split {
  Dataset train;
  Dataset test;
};

/// All P^2 pairs, permuted with SplitMix64(split_seed) Fisher-Yates; the first
/// floor(P^2 / 2) go to train, the rest to test.
Split generate(int modulus, std::uint64_t split_seed);

/// Build a dataset from explicit pairs (labels computed).
Dataset make_dataset(int modulus, std::vector<Pair> pairs);

/// CSV with columns x,y,add,mul,quad,split.
void write_split_csv(const Split& split, const std::filesystem::path& path);

}  // namespace grok

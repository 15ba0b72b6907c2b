#pragma once

// Shared-trunk transformer for two-token inputs.
//
// Tokens x and y (positions 0 and 1) are embedded, passed through
// n_layers pre-norm encoder blocks (multi-head attention, then a ReLU
// feed-forward block, each with a residual connection), normalized by a
// final layer norm, averaged over the two positions and read out by one
// linear head per task.
//
// All parameters live in one flat vector. The canonical order is
//   tok_emb, pos_emb,
//   per layer l: layers.l.attn.{Wq,bq,Wk,bk,Wv,bv,Wo,bo}, layers.l.ln1.{gain,bias},
//                layers.l.ffn.{W1,b1,W2,b2}, layers.l.ln2.{gain,bias},
//   final_ln.{gain,bias},
//   per task t: heads.t.{W,b}
// with every tensor stored row-major. Linear weights are (in x out) so a
// layer computes y = x W + b.

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "grok/tasks.hpp"

namespace grok {

struct ModelConfig {
  int d_model = 128;
  int n_layers = 2;
  int n_heads = 4;
  int d_ff = 256;
  int P = 97;
  int n_tasks = kNumTasks;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// "baseline" (128/2/4/256), "medium" (128/4/4/256), "large" (256/4/8/512).
ModelConfig model_preset(std::string_view tag);
/// Preset tag matching `cfg`, or "custom".
std::string preset_name(const ModelConfig& cfg);

inline constexpr double kLayerNormEps = 1e-5;

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TensorGroup { Embedding, Trunk, Head };

struct TensorSpec {
  std::string name;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;
  std::size_t size = 0;
  TensorGroup group = TensorGroup::Trunk;
  int layer = -1;  // encoder layer index, -1 outside the encoder stack
  int task = -1;   // head index, -1 for shared tensors

  bool is_matrix() const { return shape.size() == 2; }
  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.size() == 2 ? shape[1] : 1; }
};

struct Range {
  std::size_t offset = 0;
  std::size_t size = 0;
  friend bool operator==(const Range&, const Range&) = default;
};

/// Which coordinates of the flat vector an operation touches.
enum class Scope {
  Full,   // every parameter
  Trunk,  // encoder layers + final layer norm (excludes embeddings and heads)
  Heads,  // task heads only
};
std::string_view scope_name(Scope s);
Scope scope_from_name(std::string_view name);

class ParamLayout {
 public:
  explicit ParamLayout(const ModelConfig& cfg);

  const ModelConfig& config() const { return config_; }
  std::span<const TensorSpec> tensors() const { return tensors_; }
  std::size_t total() const { return total_; }

  const TensorSpec& spec(std::string_view name) const;
  Range span_of(std::string_view name) const;
  bool contains(std::string_view name) const;

  bool in_scope(const TensorSpec& t, Scope s) const;
  /// Contiguous ranges of the scope, in canonical order (adjacent tensors merged).
  std::vector<Range> ranges(Scope s) const;
  std::vector<Range> ranges(std::span<const std::string> names) const;
  std::size_t count(Scope s) const;
  /// 2-D tensors within the scope, canonical order.
  std::vector<const TensorSpec*> matrices(Scope s) const;
  /// Everything belonging to encoder layer `layer`.
  std::vector<Range> layer_ranges(int layer) const;
  std::vector<Range> head_ranges(int task) const;

  struct LayerOffsets {
    std::size_t wq, bq, wk, bk, wv, bv, wo, bo;
    std::size_t ln1_g, ln1_b;
    std::size_t w1, b1, w2, b2;
    std::size_t ln2_g, ln2_b;
  };
  struct HeadOffsets {
    std::size_t w, b;
  };
  std::size_t tok_emb = 0;
  std::size_t pos_emb = 0;
  std::vector<LayerOffsets> layers;
  std::size_t lnf_g = 0;
  std::size_t lnf_b = 0;
  std::vector<HeadOffsets> heads;

 private:
  std::size_t add(std::string name, std::vector<std::size_t> shape, TensorGroup group, int layer,
                  int task);

  ModelConfig config_;
  std::vector<TensorSpec> tensors_;
  std::size_t total_ = 0;
};

std::size_t parameter_count(const ModelConfig& cfg);

/// Copy the coordinates in `ranges` into a packed vector, and back.
std::vector<double> gather(std::span<const double> flat, std::span<const Range> ranges);
void scatter(std::span<const double> packed, std::span<const Range> ranges, std::span<double> flat);
std::size_t total_size(std::span<const Range> ranges);

template <class T>
class ParamSet {
 public:
  ParamSet() = default;
  explicit ParamSet(const ModelConfig& cfg);
  ParamSet(const ModelConfig& cfg, std::vector<T> values);

  const ModelConfig& config() const { return layout_->config(); }
  const ParamLayout& layout() const { return *layout_; }
  std::shared_ptr<const ParamLayout> shared_layout() const { return layout_; }

  std::size_t size() const { return values_.size(); }
  std::span<T> values() { return values_; }
  std::span<const T> values() const { return values_; }
  T* data() { return values_.data(); }
  const T* data() const { return values_.data(); }

  std::span<T> tensor(std::string_view name);
  std::span<const T> tensor(std::string_view name) const;

  template <class U>
  ParamSet<U> cast() const {
    std::vector<U> v(values_.begin(), values_.end());
    return ParamSet<U>(layout_, std::move(v));
  }

  ParamSet(std::shared_ptr<const ParamLayout> layout, std::vector<T> values);

 private:
  std::shared_ptr<const ParamLayout> layout_;
  std::vector<T> values_;
};

/// Canonical flattening in double precision.
template <class T>
std::vector<double> flatten(const ParamSet<T>& p);
template <class T>
ParamSet<T> unflatten(std::span<const double> flat, const ModelConfig& cfg);

/// Seeded initialization: linear weights ~ N(0, 1/sqrt(fan_in)), embeddings
/// ~ 0.02 N(0, 1), biases 0, layer-norm gains 1.
ParamSet<float> init_params(const ModelConfig& cfg, std::uint64_t seed);

struct Batch {
  std::span<const Pair> inputs;
  std::array<std::span<const int>, kNumTasks> labels;
};
Batch batch_of(const Dataset& d);

/// Per-task logits, each batch x P row-major.
template <class T>
struct Logits {
  std::size_t batch = 0;
  std::size_t classes = 0;
  std::vector<std::vector<T>> per_task;
  std::span<const T> row(int task, std::size_t i) const {
    return {per_task[static_cast<std::size_t>(task)].data() + i * classes, classes};
  }
};

struct LossReport {
  double loss = 0.0;                        // the optimized objective
  std::array<double, kNumTasks> task_loss{};  // mean cross-entropy per task
  std::array<double, kNumTasks> task_acc{};   // argmax accuracy per task
};

/// Forward/backward engine with reusable activation buffers. Not thread-safe;
/// use one engine per thread.
template <class T>
class Engine {
 public:
  explicit Engine(const ModelConfig& cfg);
  ~Engine();
  Engine(Engine&&) noexcept;
  Engine& operator=(Engine&&) noexcept;

  Logits<T> forward(const ParamSet<T>& params, std::span<const Pair> inputs);

  /// Mean over tasks of mean-over-batch cross-entropy, or a single task's
  /// cross-entropy when `only` is set. `grads` is resized and overwritten.
  LossReport loss_and_grads(const ParamSet<T>& params, const Batch& batch, ParamSet<T>& grads,
                            std::optional<TaskId> only = std::nullopt);

  /// Loss and accuracy without gradients.
  LossReport evaluate(const ParamSet<T>& params, const Batch& batch);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

template <class T>
Logits<T> forward(const ParamSet<T>& params, std::span<const Pair> inputs);

template <class T>
LossReport loss_and_grads(const ParamSet<T>& params, const Batch& batch, ParamSet<T>& grads,
                          std::optional<TaskId> only = std::nullopt);

/// Argmax (lowest index on ties) accuracy per task.
template <class T>
std::array<double, kNumTasks> accuracy(const ParamSet<T>& params, const Dataset& data);

/// Argmax accuracy for precomputed logits.
template <class T>
std::array<double, kNumTasks> accuracy_of(const Logits<T>& logits, const Batch& batch);

double mean_of(const std::array<double, kNumTasks>& v);

}  // namespace grok

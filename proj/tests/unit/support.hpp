#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "grok/linalg.hpp"
#include "grok/model.hpp"
#include "grok/rng.hpp"
#include "grok/train.hpp"

namespace grok::test {

inline Mat random_mat(std::size_t r, std::size_t c, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Mat m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

inline double max_abs(const Mat& a, const Mat& b) {
  double w = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) w = std::max(w, std::abs(a.data()[i] - b.data()[i]));
  return w;
}

// Reference product, no BLAS.
inline Mat naive_mul(const Mat& a, const Mat& b) {
  Mat c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k)
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += a(i, k) * b(k, j);
  return c;
}

inline ModelConfig tiny_model() { return {8, 1, 2, 16, 7, kNumTasks}; }
inline ModelConfig small_model() { return {16, 1, 2, 32, 11, kNumTasks}; }

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

/// A short training run of small_model(), trained once per process and
/// shared read-only by the tests that need real checkpoints.
const std::filesystem::path& shared_run();
TrainConfig shared_run_config();

}  // namespace grok::test

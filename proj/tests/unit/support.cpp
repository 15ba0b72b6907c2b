#include "support.hpp"

#include <atomic>
#include <unistd.h>

namespace grok::test {

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("grok-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

TrainConfig shared_run_config() {
  TrainConfig cfg;
  cfg.max_steps = 400;
  cfg.eval_every = 20;
  cfg.weight_decay = 1.0;
  cfg.init_seed = 3;
  cfg.split_seed = 5;
  return cfg;
}

const std::filesystem::path& shared_run() {
  static TempDir dir("shared-run");
  static const std::filesystem::path run = [] {
    const auto p = dir / "run";
    train(small_model(), shared_run_config(), p);
    return p;
  }();
  return run;
}

}  // namespace grok::test

#include "grok/tasks.hpp"

#include <fstream>
#include <numeric>
#include <string>

#include "grok/rng.hpp"

namespace grok {

std::string_view task_name(TaskId t) {
  switch (t) {
    case TaskId::Add: return "add";
    case TaskId::Mul: return "mul";
    case TaskId::Quad: return "quad";
  }
  return "?";
}

TaskId task_from_name(std::string_view name) {
  for (TaskId t : kAllTasks)
    if (task_name(t) == name) return t;
  throw std::invalid_argument("unknown task '" + std::string(name) + "'");
}

int task_label(TaskId task, int x, int y, int modulus) {
  if (modulus < 1 || x < 0 || y < 0 || x >= modulus || y >= modulus) {
    throw std::out_of_range("task_label: (" + std::to_string(x) + ", " + std::to_string(y) +
                            ") outside [0, " + std::to_string(modulus) + ")");
  }
  const std::int64_t a = x;
  const std::int64_t b = y;
  switch (task) {
    case TaskId::Add: return static_cast<int>((a + b) % modulus);
    case TaskId::Mul: return static_cast<int>((a * b) % modulus);
    case TaskId::Quad: return static_cast<int>((a * a + b * b) % modulus);
  }
  throw std::invalid_argument("task_label: bad task id");
}

Dataset make_dataset(int modulus, std::vector<Pair> pairs) {
  Dataset d;
  d.modulus = modulus;
  d.pairs = std::move(pairs);
  for (TaskId t : kAllTasks) {
    auto& lab = d.labels[static_cast<std::size_t>(index_of(t))];
    lab.reserve(d.pairs.size());
    for (const Pair& p : d.pairs) lab.push_back(task_label(t, p.x, p.y, modulus));
  }
  return d;
}

Dataset Dataset::slice(std::size_t begin, std::size_t count) const {
  std::vector<std::size_t> rows(count);
  std::iota(rows.begin(), rows.end(), begin);
  return subset(rows);
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset d;
  d.modulus = modulus;
  d.pairs.reserve(rows.size());
  for (std::size_t r : rows) d.pairs.push_back(pairs.at(r));
  for (std::size_t t = 0; t < labels.size(); ++t) {
    d.labels[t].reserve(rows.size());
    for (std::size_t r : rows) d.labels[t].push_back(labels[t].at(r));
  }
  return d;
}

Split generate(int modulus, std::uint64_t split_seed) {
  if (modulus < 2) throw std::invalid_argument("generate: modulus must be >= 2");
  const auto p = static_cast<std::size_t>(modulus);
  std::vector<Pair> all;
  all.reserve(p * p);
  for (int x = 0; x < modulus; ++x)
    for (int y = 0; y < modulus; ++y) all.push_back({x, y});

  SplitMix64 rng(split_seed);
  for (std::size_t i = all.size() - 1; i > 0; --i) {
    const auto j = static_cast<std::size_t>(rng.below(i + 1));
    std::swap(all[i], all[j]);
  }
  const std::size_t n_train = all.size() / 2;
  std::vector<Pair> train(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<Pair> test(all.begin() + static_cast<std::ptrdiff_t>(n_train), all.end());
  return {make_dataset(modulus, std::move(train)), make_dataset(modulus, std::move(test))};
}

void write_split_csv(const Split& split, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "x,y,add,mul,quad,split\n";
  auto dump = [&](const Dataset& d, const char* tag) {
    for (std::size_t i = 0; i < d.size(); ++i) {
      out << d.pairs[i].x << ',' << d.pairs[i].y << ',' << d.labels[0][i] << ',' << d.labels[1][i]
          << ',' << d.labels[2][i] << ',' << tag << '\n';
    }
  };
  dump(split.train, "train");
  dump(split.test, "test");
}

}  // namespace grok

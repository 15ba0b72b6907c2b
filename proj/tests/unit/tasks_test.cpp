#include <gtest/gtest.h>

#include <set>

#include "grok/tasks.hpp"

namespace grok {
namespace {

TEST(Tasks, LabelsExhaustiveOverAllPairs) {
  const int P = 97;
  const Split s = generate(P, 0);
  ASSERT_EQ(s.train.size() + s.test.size(), 9409u);
  std::set<std::pair<int, int>> seen;
  for (const Dataset* d : {&s.train, &s.test}) {
    for (std::size_t i = 0; i < d->size(); ++i) {
      const auto [x, y] = d->pairs[i];
      seen.insert({x, y});
      // Direct arithmetic, independent of task_label.
      EXPECT_EQ(d->labels_of(TaskId::Add)[i], (x + y) % P);
      EXPECT_EQ(d->labels_of(TaskId::Mul)[i], (x * y) % P);
      EXPECT_EQ(d->labels_of(TaskId::Quad)[i], (x * x + y * y) % P);
    }
  }
  EXPECT_EQ(seen.size(), 9409u);
}

TEST(Tasks, SplitSizesFloorToTrain) {
  const Split s = generate(97, 1);
  EXPECT_EQ(s.train.size(), 4704u);
  EXPECT_EQ(s.test.size(), 4705u);
  const Split odd = generate(7, 1);
  EXPECT_EQ(odd.train.size(), 24u);
  EXPECT_EQ(odd.test.size(), 25u);
}

TEST(Tasks, SplitIsDeterministicPerSeed) {
  const Split a = generate(97, 42), b = generate(97, 42), c = generate(97, 43);
  EXPECT_EQ(a.train.pairs, b.train.pairs);
  EXPECT_EQ(a.test.pairs, b.test.pairs);
  EXPECT_NE(a.train.pairs, c.train.pairs);
}

TEST(Tasks, SplitIsSharedAcrossTasks) {
  const Split s = generate(11, 3);
  for (TaskId t : kAllTasks) EXPECT_EQ(s.train.labels_of(t).size(), s.train.size());
}

TEST(Tasks, LabelRangeChecked) {
  EXPECT_THROW(task_label(TaskId::Add, 97, 0, 97), std::out_of_range);
  EXPECT_THROW(task_label(TaskId::Mul, -1, 0, 97), std::out_of_range);
  EXPECT_EQ(task_label(TaskId::Quad, 96, 96, 97), (96 * 96 * 2) % 97);
}

TEST(Tasks, NamesRoundTrip) {
  for (TaskId t : kAllTasks) EXPECT_EQ(task_from_name(task_name(t)), t);
  EXPECT_ANY_THROW(task_from_name("sub"));
}

TEST(Tasks, SubsetAndSlice) {
  const Split s = generate(11, 0);
  const std::vector<std::size_t> rows{5, 0, 3};
  const Dataset sub = s.train.subset(rows);
  ASSERT_EQ(sub.size(), 3u);
  EXPECT_EQ(sub.pairs[0], s.train.pairs[5]);
  EXPECT_EQ(sub.labels_of(TaskId::Mul)[2], s.train.labels_of(TaskId::Mul)[3]);
  const Dataset sl = s.train.slice(2, 4);
  EXPECT_EQ(sl.pairs[0], s.train.pairs[2]);
  EXPECT_EQ(sl.size(), 4u);
}

}  // namespace
}  // namespace grok

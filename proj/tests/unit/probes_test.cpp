#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "grok/probes.hpp"
#include "support.hpp"

namespace grok {
namespace {

ParamSet<double> perturbed(const ModelConfig& cfg, std::uint64_t seed, double scale) {
  ParamSet<double> p = init_params(cfg, seed).cast<double>();
  SplitMix64 rng(seed + 1);
  for (double& v : p.values()) v += scale * rng.normal();
  return p;
}

TaskSubspace random_subspace(std::size_t dim, std::size_t k, std::uint64_t seed) {
  return {TaskId::Add, "model", orthonormalize_columns(test::random_mat(dim, k, seed)), {}};
}

TEST(Probes, SelectivityFormula) {
  EXPECT_DOUBLE_EQ(*selectivity_index(0.8, 0.0), 1.0);
  EXPECT_DOUBLE_EQ(*selectivity_index(0.3, 0.1), 0.5);
  EXPECT_DOUBLE_EQ(*selectivity_index(0.0, 0.4), -1.0);
  EXPECT_FALSE(selectivity_index(0.0, 0.0));
}

TEST(Probes, ReportFieldsFeedTheFormulaExactly) {
  const TaskAcc before{0.99, 0.98, 0.97}, after{0.20, 0.95, 0.99};
  const AblationReport r = make_report({TaskId::Add}, "add", 10, ProbeScope::FullVector, before, after);
  EXPECT_DOUBLE_EQ(r.self_damage, 0.99 - 0.20);
  // Gains are clamped: quad improved, so it contributes zero damage.
  EXPECT_DOUBLE_EQ(r.mean_collateral, ((0.98 - 0.95) + 0.0) / 2.0);
  ASSERT_TRUE(r.si);
  EXPECT_EQ(*r.si, *selectivity_index(r.self_damage, r.mean_collateral));
}

TEST(Probes, SymmetricDamageScoresZero) {
  const TaskAcc before{1.0, 1.0, 1.0}, after{0.5, 0.5, 0.5};
  const AblationReport r = make_report({TaskId::Mul}, "mul", 10, ProbeScope::FullVector, before, after);
  ASSERT_TRUE(r.si);
  EXPECT_DOUBLE_EQ(*r.si, 0.0);
  const AblationReport none = make_report({TaskId::Mul}, "mul", 10, ProbeScope::FullVector, before, before);
  EXPECT_FALSE(none.si);
}

TEST(Probes, OverlapExtremes) {
  const Mat a = orthonormalize_columns(test::random_mat(50, 10, 1));
  EXPECT_NEAR(layer_overlap(a, a), 1.0, 1e-12);
  Mat e(50, 5), f(50, 5);
  for (std::size_t i = 0; i < 5; ++i) {
    e(i, i) = 1.0;
    f(10 + i, i) = 1.0;
  }
  EXPECT_EQ(layer_overlap(e, f), 0.0);
  // Same span, rotated basis.
  Mat g(50, 5);
  for (std::size_t i = 0; i < 5; ++i) g(i, (i + 1) % 5) = -1.0;
  EXPECT_NEAR(layer_overlap(e, g), 1.0, 1e-12);
}

TEST(Probes, SampleIndicesAreDistinctAndSeeded) {
  const auto a = sample_indices(100, 40, 3);
  EXPECT_EQ(std::set<std::size_t>(a.begin(), a.end()).size(), 40u);
  for (std::size_t i : a) EXPECT_LT(i, 100u);
  EXPECT_EQ(a, sample_indices(100, 40, 3));
  EXPECT_NE(a, sample_indices(100, 40, 4));
  EXPECT_THROW(sample_indices(10, 11, 0), std::invalid_argument);
}

TEST(Probes, PerExampleGradientsAverageToBatchGradient) {
  const ModelConfig cfg = test::tiny_model();
  const ParamSet<double> p = perturbed(cfg, 2, 0.1);
  const Dataset train = generate(cfg.P, 0).train;
  const std::vector<Range> all = p.layout().ranges(Scope::Full);
  std::vector<std::size_t> idx(train.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (TaskId t : kAllTasks) {
    const Mat g = task_grad_sample(p, t, train, idx, all);
    ParamSet<double> full;
    loss_and_grads(p, batch_of(train), full, t);
    for (std::size_t j = 0; j < g.cols(); ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < g.rows(); ++i) mean += g(i, j);
      mean /= static_cast<double>(g.rows());
      ASSERT_NEAR(mean, full.values()[j], 1e-12) << task_name(t) << " coord " << j;
    }
  }
}

TEST(Probes, TaskGradientsVanishOnOtherHeads) {
  const ModelConfig cfg = test::tiny_model();
  const ParamSet<double> p = perturbed(cfg, 3, 0.1);
  const Dataset train = generate(cfg.P, 0).train;
  for (TaskId t : kAllTasks) {
    const Mat g = task_grad_sample(p, t, train, 8, 1, p.layout().ranges(Scope::Full));
    for (TaskId o : kAllTasks) {
      if (o == t) continue;
      for (const Range& r : p.layout().head_ranges(index_of(o)))
        for (std::size_t i = 0; i < g.rows(); ++i)
          for (std::size_t j = r.offset; j < r.offset + r.size; ++j) ASSERT_EQ(g(i, j), 0.0);
    }
  }
}

TEST(Probes, GramDirectionsMatchDenseCovariance) {
  const ModelConfig cfg = test::tiny_model();
  const ParamSet<double> p = perturbed(cfg, 4, 0.2);
  const Dataset train = generate(cfg.P, 0).train;
  const std::vector<std::string> names{"layers.0.attn.Wv", "layers.0.ffn.W1"};
  const std::vector<Range> ranges = p.layout().ranges(names);
  const Mat g = task_grad_sample(p, TaskId::Quad, train, 20, 5, ranges);
  const std::size_t k = 5;
  const TaskSubspace sub = top_directions(g, k, TaskId::Quad);
  // Dense uncentered covariance GᵀG, eigen-solved directly.
  const SymEig e = sym_eig(test::naive_mul(g.transposed(), g));
  for (std::size_t c = 0; c < k; ++c) {
    ASSERT_GT(e.values[c] - e.values[c + 1], 1e-6 * e.values[0]) << "eigenvalue gap too small to compare";
    EXPECT_NEAR(sub.s[c] * sub.s[c], e.values[c], 1e-8 * e.values[0]);
    double cos = 0.0;
    for (std::size_t i = 0; i < g.cols(); ++i) cos += sub.basis(i, c) * e.vectors(i, c);
    EXPECT_NEAR(std::abs(cos), 1.0, 1e-8);
  }
}

TEST(Probes, EmptyAblationIsIdentity) {
  const ModelConfig cfg = test::tiny_model();
  const ParamSet<double> init = init_params(cfg, 1).cast<double>(), fin = perturbed(cfg, 1, 0.3);
  const ParamSet<double> out = ablate(init, fin, {}, probe_ranges(fin.layout(), ProbeScope::FullVector));
  EXPECT_TRUE(std::equal(out.values().begin(), out.values().end(), fin.values().begin()));
}

TEST(Probes, AblationIsIdempotentAndSparesComplement) {
  const ModelConfig cfg = test::tiny_model();
  const ParamSet<double> init = init_params(cfg, 1).cast<double>(), fin = perturbed(cfg, 1, 0.3);
  for (ProbeScope scope : {ProbeScope::FullVector, ProbeScope::TrunkInterior}) {
    const std::vector<Range> ranges = probe_ranges(fin.layout(), scope);
    const std::size_t dim = total_size(ranges);
    const TaskSubspace a = random_subspace(dim, 4, 1), b = random_subspace(dim, 3, 2);
    const std::vector<const TaskSubspace*> subs{&a, &b};
    const ParamSet<double> once = ablate(init, fin, subs, ranges);
    const ParamSet<double> twice = ablate(init, once, subs, ranges);
    for (std::size_t i = 0; i < once.size(); ++i) ASSERT_NEAR(twice.values()[i], once.values()[i], 1e-10);

    const std::vector<double> fi(fin.values().begin(), fin.values().end());
    const std::vector<double> in(init.values().begin(), init.values().end());
    const std::vector<double> on(once.values().begin(), once.values().end());
    std::vector<double> d0 = gather(fi, ranges), d1 = gather(on, ranges);
    const std::vector<double> base = gather(in, ranges);
    for (std::size_t i = 0; i < dim; ++i) {
      d0[i] -= base[i];
      d1[i] -= base[i];
    }
    // The ablated delta has no component left in either subspace...
    for (const TaskSubspace* s : subs)
      for (double c : coefficients(d1, s->basis)) EXPECT_NEAR(c, 0.0, 1e-10);
    // ...and equals the original delta's projection onto the complement.
    const std::vector<Mat> blocks{a.basis, b.basis};
    const Mat joint = orthonormalize_columns(hcat(blocks));
    const std::vector<double> want = project_out(d0, joint);
    for (std::size_t i = 0; i < dim; ++i) ASSERT_NEAR(d1[i], want[i], 1e-10);
    // Out-of-scope coordinates are untouched.
    std::vector<double> mask(fi.size(), 0.0);
    scatter(std::vector<double>(dim, 1.0), ranges, mask);
    for (std::size_t i = 0; i < fi.size(); ++i)
      if (mask[i] == 0.0) {
        ASSERT_EQ(on[i], fi[i]);
      }
  }
}

TEST(Probes, ScopeNames) {
  EXPECT_EQ(probe_scope_from_name(probe_scope_name(ProbeScope::TrunkInterior)), ProbeScope::TrunkInterior);
  EXPECT_EQ(probe_scope_from_name("full"), ProbeScope::FullVector);
  EXPECT_THROW(probe_scope_from_name("heads"), std::invalid_argument);
}

TEST(Probes, ProbeRunWritesArtifacts) {
  const auto& run = test::shared_run();
  test::TempDir out("probe");
  ProbeOptions opt;
  opt.k = 3;
  opt.sample = 16;
  opt.scopes = {ProbeScope::FullVector, ProbeScope::TrunkInterior};
  const ProbeReport r = probe_run(run, out.path(), opt);
  EXPECT_EQ(r.selectivity.size(), 6u);
  EXPECT_GE(r.cross.size(), 4u);
  for (const char* f : {"selectivity.csv", "overlap.csv", "cross_ablation.csv", "probes.json"})
    EXPECT_TRUE(std::filesystem::exists(out / f)) << f;
  for (const auto& o : r.overlap) {
    EXPECT_GE(o.overlap, -1e-12);
    EXPECT_LE(o.overlap, 1.0 + 1e-12);
  }
}

}  // namespace
}  // namespace grok

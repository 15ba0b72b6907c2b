#include <gtest/gtest.h>

#include <cmath>

#include "grok/recon.hpp"
#include "support.hpp"

namespace grok {
namespace {

struct Pair2 {
  ParamSet<double> init, final_params;
};

// Random init and a random "trained" endpoint for `cfg`.
Pair2 random_endpoints(const ModelConfig& cfg, std::uint64_t seed) {
  ParamSet<double> init = init_params(cfg, seed).cast<double>();
  ParamSet<double> fin = init;
  SplitMix64 rng(seed + 100);
  for (double& v : fin.values()) v += 0.3 * rng.normal();
  return {init, fin};
}

double max_param_gap(const ParamSet<double>& a, const ParamSet<double>& b) {
  double w = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) w = std::max(w, std::abs(a.values()[i] - b.values()[i]));
  return w;
}

// Trajectory whose deltas are mixtures of `rank` fixed directions.
Trajectory synthetic_trajectory(const ParamSet<double>& init, std::size_t rank, std::size_t steps,
                                std::uint64_t seed, std::vector<double>* final_delta) {
  const std::size_t D = init.size();
  SplitMix64 rng(seed);
  std::vector<std::vector<double>> dirs(rank, std::vector<double>(D));
  for (auto& d : dirs)
    for (double& v : d) v = 0.05 * rng.normal();
  Trajectory tr;
  tr.model = init.config();
  tr.ranges = init.layout().ranges(Scope::Full);
  tr.deltas = Mat(steps + 1, D);
  for (std::size_t s = 1; s <= steps; ++s) {
    const double t = static_cast<double>(s) / static_cast<double>(steps);
    for (std::size_t r = 0; r < rank; ++r) {
      const double w = std::pow(t, static_cast<double>(r + 1)) + (r == 2 ? std::sin(5.0 * t) : 0.0);
      for (std::size_t i = 0; i < D; ++i) tr.deltas(s, i) += w * dirs[r][i];
    }
  }
  final_delta->assign(tr.deltas.row(steps).begin(), tr.deltas.row(steps).end());
  return tr;
}

TEST(Recon, PerMatrixFullRankIsLossless) {
  const auto [init, fin] = random_endpoints(test::small_model(), 1);
  const ParamSet<double> r = per_matrix_truncate(init, fin, 1000, Scope::Full);
  EXPECT_LT(max_param_gap(r, fin), 1e-12);
  Scorer sc(test::small_model(), generate(11, 0).test);
  const TaskAcc a = sc.accuracy(r), b = sc.accuracy(fin);
  for (int t = 0; t < kNumTasks; ++t) EXPECT_NEAR(a[t], b[t], 1e-6);
}

TEST(Recon, PerMatrixRankZeroRestoresInitInScope) {
  const auto [init, fin] = random_endpoints(test::small_model(), 2);
  const ParamSet<double> r = per_matrix_truncate(init, fin, 0, Scope::Trunk);
  for (const TensorSpec& t : r.layout().tensors()) {
    const auto got = r.tensor(t.name);
    const bool reset = t.is_matrix() && r.layout().in_scope(t, Scope::Trunk);
    const auto want = reset ? init.tensor(t.name) : fin.tensor(t.name);
    for (std::size_t i = 0; i < t.size; ++i) ASSERT_EQ(got[i], want[i]) << t.name;
  }
}

TEST(Recon, PerMatrixTruncationIsOptimalPerMatrix) {
  const auto [init, fin] = random_endpoints(test::small_model(), 3);
  const ParamSet<double> r = per_matrix_truncate(init, fin, 2, Scope::Trunk);
  for (const TensorSpec* t : r.layout().matrices(Scope::Trunk)) {
    const Mat d = delta_matrix(init, r, *t);
    const SvdResult f = svd(d);
    for (std::size_t i = 2; i < f.s.size(); ++i) EXPECT_LT(f.s[i], 1e-9) << t->name;
  }
}

TEST(Recon, JointFullRankIsLossless) {
  const auto [init, fin] = random_endpoints(test::small_model(), 4);
  const std::size_t n = trunk_matrices(init.layout()).size();
  EXPECT_EQ(n, 6u);
  EXPECT_LT(max_param_gap(joint_truncate(init, fin, n), fin), 1e-12);
  EXPECT_THROW(joint_truncate(init, fin, n + 1), std::invalid_argument);
}

TEST(Recon, TrajectoryAtRowRankIsLossless) {
  const ModelConfig cfg = test::small_model();
  const ParamSet<double> init = init_params(cfg, 5).cast<double>();
  std::vector<double> delta;
  const Trajectory tr = synthetic_trajectory(init, 3, 8, 6, &delta);
  const TrajectoryBasis b = trajectory_pca(tr, Scope::Full, 30);
  EXPECT_EQ(b.row_rank, 3u);
  EXPECT_EQ(b.k_max(), 3u);
  std::vector<double> f(init.values().begin(), init.values().end());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] += delta[i];
  const ParamSet<double> fin(init.shared_layout(), f);
  EXPECT_LT(max_param_gap(traj_reconstruct(init, fin, b, 3), fin), 1e-12);
  EXPECT_LT(max_param_gap(traj_reconstruct(init, fin, b, 0), init), 1e-15);
}

TEST(Recon, RankOneTrajectoryHasUnitPc1Fraction) {
  const ParamSet<double> init = init_params(test::small_model(), 7).cast<double>();
  std::vector<double> delta;
  const TrajectoryBasis b = trajectory_pca(synthetic_trajectory(init, 1, 6, 8, &delta), Scope::Full, 30);
  EXPECT_EQ(b.row_rank, 1u);
  EXPECT_NEAR(b.variance[0], 1.0, 1e-12);
}

TEST(Recon, PcRemovalProjectsOntoComplement) {
  const ParamSet<double> init = init_params(test::small_model(), 9).cast<double>();
  std::vector<double> delta;
  const Trajectory tr = synthetic_trajectory(init, 4, 10, 10, &delta);
  const TrajectoryBasis b = trajectory_pca(tr, Scope::Full, 30);
  ASSERT_EQ(b.k_max(), 4u);
  // A final point with components outside the trajectory span too.
  std::vector<double> f(init.values().begin(), init.values().end());
  SplitMix64 rng(3);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] += delta[i] + 0.01 * rng.normal();
  const ParamSet<double> fin(init.shared_layout(), f);
  std::vector<double> d(f.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = f[i] - init.values()[i];
  const std::vector<double> c = coefficients(d, b.dirs);
  for (std::size_t pc = 0; pc < b.k_max(); ++pc) {
    const ParamSet<double> removed = traj_reconstruct(init, remove_pc(init, fin, b, pc), b, b.k_max());
    for (std::size_t i = 0; i < d.size(); ++i) {
      double want = 0.0;
      for (std::size_t j = 0; j < b.k_max(); ++j)
        if (j != pc) want += c[j] * b.dirs(i, j);
      ASSERT_NEAR(removed.values()[i] - init.values()[i], want, 1e-10) << "pc " << pc;
    }
    // Removing twice changes nothing more.
    const ParamSet<double> once = remove_pc(init, fin, b, pc);
    EXPECT_LT(max_param_gap(remove_pc(init, once, b, pc), once), 1e-10);
  }
}

TEST(Recon, KStarIsFirstPassingRank) {
  const TaskAcc base{1.0, 0.9, 0.8};
  std::vector<TaskAcc> curve{{0.1, 0.1, 0.1}, {0.96, 0.5, 0.9}, {0.96, 0.86, 0.77}, {0.99, 0.9, 0.8}, {0.2, 0.2, 0.2}};
  EXPECT_EQ(kstar(curve, base, 0.95), 3u);
  EXPECT_EQ(kstar(curve, base, 0.99), 4u);
  EXPECT_FALSE(kstar(curve, base, 1.01));
  // A looser threshold never needs more components.
  for (double th = 0.5; th < 1.0; th += 0.05) {
    const auto a = kstar(curve, base, th), b = kstar(curve, base, th + 0.05);
    if (a && b) {
      EXPECT_LE(*a, *b);
    }
  }
}

TEST(Recon, EnergyRankOfDiagonal) {
  const std::vector<double> d{3.0, 1.0, 0.0};
  const EnergyRank e = energy_rank(Mat::diag(d), 0.90);
  EXPECT_EQ(e.k, 1u);
  EXPECT_NEAR(e.percent, 100.0 / 3.0, 1e-12);
  EXPECT_EQ(energy_rank(Mat::diag(d), 0.99).k, 2u);
  EXPECT_THROW(energy_rank(Mat(3, 3), 0.9), std::invalid_argument);
}

TEST(Recon, EntropyExtremes) {
  EXPECT_NEAR(spectral_entropy(std::vector<double>(8, 2.5), 8), 1.0, 1e-12);
  EXPECT_NEAR(spectral_entropy(std::vector<double>{4.0, 0.0, 0.0}, 3), 0.0, 1e-15);
  const Mat a = test::random_mat(6, 4, 1);
  const double h = spectral_entropy(a);
  EXPECT_GT(h, 0.0);
  EXPECT_LT(h, 1.0);
}

// Storage counts recomputed from the tensor shapes of the baseline.
TEST(Recon, StoredParameterCounts) {
  const ParamLayout L(model_preset("baseline"));
  const std::size_t d = 128, f = 256;
  auto pm = [&](std::size_t k) {
    std::size_t per_layer = 4 * std::min(k, d) * (d + d + 1) + 2 * std::min(k, d) * (d + f + 1);
    return 2 * per_layer;
  };
  for (std::size_t k : {1u, 8u, 64u, 128u, 500u}) EXPECT_EQ(per_matrix_params(L, Scope::Trunk, k), pm(k)) << k;
  EXPECT_EQ(per_matrix_params(L, Scope::Trunk, 64), 230144u);
  EXPECT_EQ(joint_params(L, 6), 6u * (12 + d * f + 1));
  EXPECT_EQ(trajectory_params(265216, 5), 5u * 265217);
}

TEST(Recon, RealRunTrajectoryCurveEndsAboveChance) {
  const auto& run = test::shared_run();
  const RunEndpoints ep = load_endpoints(run);
  const TrajectoryBasis b = trajectory_pca(run, Scope::Full, 30);
  EXPECT_GE(b.row_rank, 1u);
  double sum = 0.0;
  for (double v : b.variance) sum += v;
  EXPECT_NEAR(sum, 1.0, 1e-12);
  const RunRecord rec = load_run_record(run);
  Scorer sc(ep.init.config(), generate(ep.init.config().P, rec.train.split_seed).test);
  const TaskAcc full = sc.accuracy(traj_reconstruct(ep.init, ep.final_params, b, b.k_max()));
  const TaskAcc none = sc.accuracy(traj_reconstruct(ep.init, ep.final_params, b, 0));
  EXPECT_GE(mean_of(full), mean_of(none));
}

}  // namespace
}  // namespace grok

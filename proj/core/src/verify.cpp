#include "grok/verify.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "blas.hpp"
#include "grok/ckpt.hpp"
#include "grok/linalg.hpp"
#include "grok/model.hpp"
#include "grok/recon.hpp"
#include "grok/rng.hpp"
#include "grok/tasks.hpp"

namespace grok {

namespace {

std::string sci(double v) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << v;
  return os.str();
}

Mat random_mat(std::size_t r, std::size_t c, SplitMix64& rng) {
  Mat m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

double max_abs_diff(const Mat& a, const Mat& b) {
  double w = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) w = std::max(w, std::abs(a.data()[i] - b.data()[i]));
  return w;
}

double orthonormality_error(const Mat& cols) {
  const Mat g = matmul(cols.transposed(), cols);
  return max_abs_diff(g, Mat::identity(g.rows()));
}

CheckResult check_gradient(std::uint64_t seed) {
  CheckResult r{"gradient", "analytic vs central-difference gradients, d=8 1-layer P=7 (f64)", false, 0.0, 1e-4, {}};
  const ModelConfig cfg{8, 1, 2, 16, 7, kNumTasks};
  ParamSet<double> p = init_params(cfg, seed).cast<double>();
  SplitMix64 rng(derive_seed(seed, 1));
  for (double& v : p.values()) v += 0.1 * rng.normal();
  const Split split = generate(cfg.P, seed);
  const Batch batch = batch_of(split.train);
  Engine<double> engine(cfg);
  ParamSet<double> grads;

  const std::size_t samples = 240;
  const double h = 1e-4;
  double worst = 0.0;
  std::vector<std::optional<TaskId>> objectives{std::nullopt, TaskId::Add, TaskId::Mul, TaskId::Quad};
  for (std::size_t o = 0; o < objectives.size(); ++o) {
    engine.loss_and_grads(p, batch, grads, objectives[o]);
    const std::vector<double> g(grads.values().begin(), grads.values().end());
    auto loss_at = [&]() {
      ParamSet<double> scratch;
      return engine.loss_and_grads(p, batch, scratch, objectives[o]).loss;
    };
    for (std::size_t s = 0; s < samples / objectives.size(); ++s) {
      const std::size_t i = static_cast<std::size_t>(rng.below(p.size()));
      const double keep = p.values()[i];
      p.values()[i] = keep + h;
      const double up = loss_at();
      p.values()[i] = keep - h;
      const double down = loss_at();
      p.values()[i] = keep;
      const double fd = (up - down) / (2.0 * h);
      worst = std::max(worst, std::abs(fd - g[i]) / std::max(1e-6, std::abs(fd) + std::abs(g[i])));
    }
  }
  r.measured = worst;
  r.passed = worst < r.limit;
  r.detail = "max relative error " + sci(worst) + " over " + std::to_string(samples) + " coordinates";
  return r;
}

// Every transpose combination of both precisions against a naive triple loop,
// on shapes that exercise the small-matrix and blocked code paths.
CheckResult check_gemm(std::uint64_t seed) {
  CheckResult r{"gemm", "matrix-multiply kernels vs naive products", false, 0.0, 0.0, {}};
  SplitMix64 rng(derive_seed(seed, 6));
  const int shapes[][3] = {{8, 200, 128}, {100, 200, 100}, {128, 256, 128}, {194, 384, 128},
                           {97, 128, 256}, {3, 1000, 64}, {256, 97, 8}};
  double worst_d = 0.0, worst_s = 0.0;
  for (const auto& sh : shapes) {
    const int m = sh[0], n = sh[1], k = sh[2];
    for (int ta = 0; ta < 2; ++ta)
      for (int tb = 0; tb < 2; ++tb) {
        std::vector<double> a(static_cast<std::size_t>(m * k)), b(static_cast<std::size_t>(k * n));
        for (double& v : a) v = rng.normal();
        for (double& v : b) v = rng.normal();
        auto at = [&](int i, int p) { return ta ? a[static_cast<std::size_t>(p * m + i)] : a[static_cast<std::size_t>(i * k + p)]; };
        auto bt = [&](int p, int j) { return tb ? b[static_cast<std::size_t>(j * k + p)] : b[static_cast<std::size_t>(p * n + j)]; };
        std::vector<double> ref(static_cast<std::size_t>(m * n), 0.0), cd(ref.size());
        for (int i = 0; i < m; ++i)
          for (int p = 0; p < k; ++p)
            for (int j = 0; j < n; ++j) ref[static_cast<std::size_t>(i * n + j)] += at(i, p) * bt(p, j);
        detail::gemm(ta, tb, m, n, k, 1.0, a.data(), ta ? m : k, b.data(), tb ? k : n, 0.0, cd.data(), n);
        std::vector<float> af(a.begin(), a.end()), bf(b.begin(), b.end()), cf(ref.size());
        detail::gemm(ta, tb, m, n, k, 1.0f, af.data(), ta ? m : k, bf.data(), tb ? k : n, 0.0f, cf.data(), n);
        const double scale = std::sqrt(static_cast<double>(k));
        for (std::size_t i = 0; i < ref.size(); ++i) {
          worst_d = std::max(worst_d, std::abs(cd[i] - ref[i]) / scale);
          worst_s = std::max(worst_s, std::abs(cf[i] - ref[i]) / scale);
        }
      }
  }
  r.measured = worst_d;
  r.limit = 1e-12;
  r.passed = worst_d < 1e-12 && worst_s < 1e-4;
  r.detail = "max scaled error f64 " + sci(worst_d) + ", f32 " + sci(worst_s);
  return r;
}

CheckResult check_svd(std::uint64_t seed) {
  CheckResult r{"svd", "SVD reconstruction, orthonormality, Eckart-Young on random matrices up to 64x64", false,
                0.0, 1e-9, {}};
  SplitMix64 rng(derive_seed(seed, 2));
  std::vector<std::pair<std::size_t, std::size_t>> shapes{{1, 1}, {1, 17}, {23, 1}, {8, 5}, {5, 8}, {64, 64},
                                                          {64, 40}, {33, 64}, {16, 16}};
  for (int i = 0; i < 6; ++i)
    shapes.emplace_back(1 + rng.below(64), 1 + rng.below(64));
  double recon = 0.0, ortho = 0.0, ey = 0.0;
  for (auto [m, n] : shapes) {
    Mat a = random_mat(m, n, rng);
    const SvdResult f = svd(a);
    const double na = frobenius(a);
    recon = std::max(recon, frobenius([&] {
                              Mat d = reconstruct(f);
                              for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] -= a.data()[i];
                              return d;
                            }()) / na);
    ortho = std::max({ortho, orthonormality_error(f.u), orthonormality_error(f.vt.transposed())});
    for (std::size_t k = 0; k <= f.s.size(); ++k) {
      Mat d = low_rank(f, k);
      for (std::size_t i = 0; i < d.size(); ++i) d.data()[i] -= a.data()[i];
      double tail = 0.0;
      for (std::size_t i = k; i < f.s.size(); ++i) tail += f.s[i] * f.s[i];
      const double res = frobenius(d);
      ey = std::max(ey, std::abs(res * res - tail) / (na * na));
    }
  }
  r.measured = std::max(recon, ey);
  r.passed = recon < 1e-9 && ey < 1e-9 && ortho < 1e-10;
  r.detail = "reconstruction " + sci(recon) + ", orthonormality " + sci(ortho) + ", Eckart-Young " + sci(ey) +
             " over " + std::to_string(shapes.size()) + " matrices";
  return r;
}

CheckResult check_gram(std::uint64_t seed) {
  CheckResult r{"gram", "Gram-trick singular values vs direct SVD, m <= 32 rows", false, 0.0, 1e-8, {}};
  SplitMix64 rng(derive_seed(seed, 3));
  double worst = 0.0, ortho = 0.0;
  for (std::size_t m : {1u, 2u, 4u, 9u, 16u, 32u}) {
    const Mat a = random_mat(m, 400 + 37 * m, rng);
    const SvdResult f = svd(a);
    const GramDirections g = gram_top_dirs(a, m);
    for (std::size_t i = 0; i < m; ++i) worst = std::max(worst, std::abs(g.s[i] - f.s[i]) / f.s[i]);
    ortho = std::max(ortho, orthonormality_error(g.dirs));
  }
  r.measured = worst;
  r.passed = worst < r.limit && ortho < 1e-10;
  r.detail = "max relative singular-value gap " + sci(worst) + ", orthonormality " + sci(ortho);
  return r;
}

CheckResult check_counts() {
  CheckResult r{"counts", "parameter counts of the three presets", true, 0.0, 0.0, {}};
  const std::pair<const char*, std::size_t> want[] = {{"baseline", 315427}, {"medium", 580387}, {"large", 2209059}};
  for (auto [tag, n] : want) {
    const std::size_t got = parameter_count(model_preset(tag));
    r.detail += std::string(r.detail.empty() ? "" : ", ") + tag + "=" + std::to_string(got);
    if (got != n) {
      r.passed = false;
      r.detail += " (expected " + std::to_string(n) + ")";
    }
  }
  return r;
}

CheckResult check_lossless(std::uint64_t seed) {
  CheckResult r{"lossless", "per-matrix full rank, joint r=n, trajectory k=row-rank reproduce accuracy", false, 0.0,
                1e-6, {}};
  const ModelConfig cfg = model_preset("baseline");
  const ParamSet<double> init = init_params(cfg, seed).cast<double>();
  // A random "trained" endpoint along a short synthetic trajectory.
  SplitMix64 rng(derive_seed(seed, 4));
  const std::size_t D = init.size();
  const std::size_t steps = 6;
  Trajectory tr;
  tr.model = cfg;
  tr.ranges = init.layout().ranges(Scope::Full);
  tr.deltas = Mat(steps + 1, D);
  std::vector<double> dir_a(D), dir_b(D), dir_c(D);
  for (std::size_t i = 0; i < D; ++i) {
    dir_a[i] = 0.05 * rng.normal();
    dir_b[i] = 0.05 * rng.normal();
    dir_c[i] = 0.02 * rng.normal();
  }
  for (std::size_t s = 1; s <= steps; ++s) {
    const double t = static_cast<double>(s) / static_cast<double>(steps);
    auto row = tr.deltas.row(s);
    for (std::size_t i = 0; i < D; ++i) row[i] = t * dir_a[i] + t * t * dir_b[i] + std::sin(3.0 * t) * dir_c[i];
  }
  std::vector<double> fin(init.values().begin(), init.values().end());
  for (std::size_t i = 0; i < D; ++i) fin[i] += tr.deltas(steps, i);
  const ParamSet<double> final_params(init.shared_layout(), fin);

  Scorer scorer(cfg, generate(cfg.P, seed).test);
  const TaskAcc base = scorer.accuracy(final_params);
  auto gap = [&](const ParamSet<double>& p) {
    const TaskAcc a = scorer.accuracy(p);
    double g = 0.0;
    for (std::size_t t = 0; t < kNumTasks; ++t) g = std::max(g, std::abs(a[t] - base[t]));
    return g;
  };
  const double pm = gap(per_matrix_truncate(init, final_params, static_cast<std::size_t>(cfg.d_model) * 4, Scope::Full));
  const double joint = gap(joint_truncate(init, final_params, trunk_matrices(init.layout()).size()));
  const TrajectoryBasis basis = trajectory_pca(tr, Scope::Full, steps + 1);
  const double traj = gap(traj_reconstruct(init, final_params, basis, basis.row_rank));
  r.measured = std::max({pm, joint, traj});
  r.passed = r.measured <= r.limit && basis.row_rank == 3;
  r.detail = "accuracy gaps per-matrix " + sci(pm) + ", joint " + sci(joint) + ", trajectory " + sci(traj) +
             " (row rank " + std::to_string(basis.row_rank) + ")";
  return r;
}

CheckResult check_artifacts(const VerifyOptions& opt) {
  CheckResult r{"artifacts", "checkpoint round-trip, split determinism, exhaustive labels", true, 0.0, 0.0, {}};
  std::vector<std::string> notes;
  const auto dir = (opt.scratch.empty() ? std::filesystem::temp_directory_path() : opt.scratch) /
                   ("grok-verify-" + std::to_string(opt.seed));
  std::filesystem::create_directories(dir);
  const ModelConfig cfg = model_preset("baseline");
  ParamSet<float> p = init_params(cfg, opt.seed);
  SplitMix64 rng(derive_seed(opt.seed, 5));
  for (float& v : p.values()) v = static_cast<float>(rng.normal());
  const auto path = dir / "roundtrip.grkc";
  save_checkpoint(path, p, {cfg, 123, opt.seed, opt.seed});
  const Checkpoint back = load_checkpoint(path);
  const bool bitwise = back.params.size() == p.size() &&
                       std::memcmp(back.params.data(), p.data(), p.size() * sizeof(float)) == 0 &&
                       back.meta.step == 123 && back.meta.model == cfg;
  notes.push_back(std::string("round-trip ") + (bitwise ? "bitwise" : "MISMATCH"));
  r.passed = r.passed && bitwise;

  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('X');
  }
  bool rejected = false;
  try {
    load_checkpoint(path);
  } catch (const CheckpointError&) {
    rejected = true;
  }
  notes.push_back(std::string("bad magic ") + (rejected ? "rejected" : "ACCEPTED"));
  r.passed = r.passed && rejected;
  std::filesystem::remove_all(dir);

  const Split a = generate(97, opt.seed), b = generate(97, opt.seed), c = generate(97, opt.seed + 1);
  const bool same = a.train.pairs == b.train.pairs && a.test.pairs == b.test.pairs;
  const bool differs = a.train.pairs != c.train.pairs;
  notes.push_back(std::string("split ") + (same && differs ? "deterministic" : "NOT DETERMINISTIC"));
  r.passed = r.passed && same && differs && a.train.size() == 4704 && a.test.size() == 4705;

  std::vector<char> seen(97 * 97, 0);
  std::size_t bad = 0;
  for (const Dataset* d : {&a.train, &a.test}) {
    for (std::size_t i = 0; i < d->size(); ++i) {
      const auto [x, y] = d->pairs[i];
      ++seen[static_cast<std::size_t>(x * 97 + y)];
      bad += d->labels[0][i] != (x + y) % 97;
      bad += d->labels[1][i] != (x * y) % 97;
      bad += d->labels[2][i] != (x * x + y * y) % 97;
    }
  }
  const bool cover = std::all_of(seen.begin(), seen.end(), [](char s) { return s == 1; });
  notes.push_back("labels checked on 9409 pairs, " + std::to_string(bad) + " wrong" +
                  (cover ? "" : ", COVERAGE BROKEN"));
  r.passed = r.passed && bad == 0 && cover;
  for (const auto& n : notes) r.detail += (r.detail.empty() ? "" : "; ") + n;
  return r;
}

}  // namespace

std::vector<std::string> verify_check_ids() { return {"gemm", "gradient", "svd", "gram", "counts", "lossless", "artifacts"}; }

std::vector<CheckResult> run_verify(const VerifyOptions& opt, const std::function<void(const CheckResult&)>& on_result) {
  const std::vector<std::pair<std::string, std::function<CheckResult()>>> checks{
      {"gemm", [&] { return check_gemm(opt.seed); }},
      {"gradient", [&] { return check_gradient(opt.seed); }},
      {"svd", [&] { return check_svd(opt.seed); }},
      {"gram", [&] { return check_gram(opt.seed); }},
      {"counts", [] { return check_counts(); }},
      {"lossless", [&] { return check_lossless(opt.seed); }},
      {"artifacts", [&] { return check_artifacts(opt); }},
  };
  for (const auto& id : opt.only)
    if (std::none_of(checks.begin(), checks.end(), [&](const auto& c) { return c.first == id; }))
      throw std::invalid_argument("unknown check '" + id + "'");
  std::vector<CheckResult> out;
  for (const auto& [id, fn] : checks) {
    if (!opt.only.empty() && std::find(opt.only.begin(), opt.only.end(), id) == opt.only.end()) continue;
    CheckResult res;
    try {
      res = fn();
    } catch (const std::exception& e) {
      res = {id, id, false, 0.0, 0.0, std::string("threw: ") + e.what()};
    }
    if (on_result) on_result(res);
    out.push_back(std::move(res));
  }
  return out;
}

}  // namespace grok

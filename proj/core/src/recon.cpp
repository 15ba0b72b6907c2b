#include "grok/recon.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "grok/csv.hpp"
#include "json.hpp"

namespace grok {

namespace {

void check_pair(const ParamSet<double>& init, const ParamSet<double>& final_params) {
  if (init.config() != final_params.config())
    throw std::invalid_argument("reconstruction: initial and final parameters have different shapes");
}

void write_matrix(ParamSet<double>& out, const ParamSet<double>& init, const TensorSpec& t, const Mat& delta) {
  auto dst = out.tensor(t.name);
  auto base = init.tensor(t.name);
  const double* d = delta.data();
  for (std::size_t i = 0; i < t.size; ++i) dst[i] = base[i] + d[i];
}

std::size_t full_rank(const TensorSpec& t) { return std::min(t.rows(), t.cols()); }

}  // namespace

Mat delta_matrix(const ParamSet<double>& init, const ParamSet<double>& final_params, const TensorSpec& t) {
  if (!t.is_matrix()) throw std::invalid_argument(t.name + " is not a matrix");
  Mat m(t.rows(), t.cols());
  auto a = init.tensor(t.name);
  auto b = final_params.tensor(t.name);
  double* d = m.data();
  for (std::size_t i = 0; i < t.size; ++i) d[i] = b[i] - a[i];
  return m;
}

ParamSet<double> per_matrix_truncate(const ParamSet<double>& init, const ParamSet<double>& final_params,
                                     std::size_t k, Scope scope) {
  check_pair(init, final_params);
  ParamSet<double> out = final_params;
  for (const TensorSpec* t : final_params.layout().matrices(scope)) {
    const Mat delta = delta_matrix(init, final_params, *t);
    write_matrix(out, init, *t, low_rank(delta, std::min(k, full_rank(*t))));
  }
  return out;
}

std::vector<const TensorSpec*> trunk_matrices(const ParamLayout& layout) {
  std::vector<const TensorSpec*> out;
  for (const TensorSpec* t : layout.matrices(Scope::Trunk))
    if (t->layer >= 0) out.push_back(t);
  return out;
}

ParamSet<double> joint_truncate(const ParamSet<double>& init, const ParamSet<double>& final_params,
                                std::size_t r) {
  check_pair(init, final_params);
  const auto mats = trunk_matrices(final_params.layout());
  const std::size_t n = mats.size();
  if (r > n) {
    throw std::invalid_argument("joint_truncate: rank " + std::to_string(r) + " exceeds " + std::to_string(n) +
                                " trunk matrices");
  }
  std::size_t d_max = 0;
  for (const TensorSpec* t : mats) d_max = std::max(d_max, t->size);

  Mat stacked(n, d_max);
  for (std::size_t i = 0; i < n; ++i) {
    auto a = init.tensor(mats[i]->name);
    auto b = final_params.tensor(mats[i]->name);
    auto row = stacked.row(i);
    for (std::size_t j = 0; j < mats[i]->size; ++j) row[j] = b[j] - a[j];
  }
  const Mat approx = low_rank(stacked, r);

  ParamSet<double> out = final_params;
  for (std::size_t i = 0; i < n; ++i) {
    auto dst = out.tensor(mats[i]->name);
    auto base = init.tensor(mats[i]->name);
    auto row = approx.row(i);
    for (std::size_t j = 0; j < mats[i]->size; ++j) dst[j] = base[j] + row[j];
  }
  return out;
}

TrajectoryBasis trajectory_pca(const Trajectory& tr, Scope scope, std::size_t k_max) {
  if (tr.deltas.rows() < 3) throw std::invalid_argument("trajectory_pca: need at least 3 checkpoints");
  GramDirections g;
  try {
    g = gram_top_dirs(tr.deltas, std::min(k_max, tr.deltas.rows()));
  } catch (const LinalgError& e) {
    throw std::invalid_argument(std::string("trajectory_pca: degenerate trajectory: ") + e.what());
  }
  TrajectoryBasis b;
  b.scope = scope;
  b.ranges = tr.ranges;
  b.dirs = std::move(g.dirs);
  b.s = std::move(g.s);
  b.all_s = std::move(g.all_s);
  double total = 0.0;
  for (double s : b.all_s) total += s * s;
  const double floor = b.all_s.front() * b.all_s.front() * static_cast<double>(b.all_s.size()) *
                       std::numeric_limits<double>::epsilon();
  for (double s : b.all_s) {
    b.variance.push_back(s * s / total);
    if (s * s > floor) ++b.row_rank;
  }
  if (b.row_rank == 0) throw std::invalid_argument("trajectory_pca: trajectory never moves");
  if (b.dirs.cols() > b.row_rank) {
    Mat kept(b.dirs.rows(), b.row_rank);
    for (std::size_t i = 0; i < kept.rows(); ++i)
      std::copy_n(b.dirs.row(i).begin(), b.row_rank, kept.row(i).begin());
    b.dirs = std::move(kept);
    b.s.resize(b.row_rank);
  }
  return b;
}

TrajectoryBasis trajectory_pca(const std::filesystem::path& run_dir, Scope scope, std::size_t k_max) {
  return trajectory_pca(load_trajectory(run_dir, scope), scope, k_max);
}

namespace {

std::vector<double> scoped_delta(const ParamSet<double>& init, const ParamSet<double>& final_params,
                                 const TrajectoryBasis& basis) {
  check_pair(init, final_params);
  if (basis.ranges != final_params.layout().ranges(basis.scope) || total_size(basis.ranges) != basis.dirs.rows())
    throw std::invalid_argument("trajectory basis does not match the parameter layout");
  std::vector<double> delta(final_params.size());
  for (std::size_t i = 0; i < delta.size(); ++i) delta[i] = final_params.values()[i] - init.values()[i];
  return gather(delta, basis.ranges);
}

ParamSet<double> with_scoped_delta(const ParamSet<double>& init, const ParamSet<double>& final_params,
                                   const TrajectoryBasis& basis, const std::vector<double>& packed) {
  std::vector<double> flat(final_params.values().begin(), final_params.values().end());
  std::vector<double> base = gather(std::vector<double>(init.values().begin(), init.values().end()), basis.ranges);
  for (std::size_t i = 0; i < base.size(); ++i) base[i] += packed[i];
  scatter(base, basis.ranges, flat);
  return ParamSet<double>(final_params.shared_layout(), std::move(flat));
}

}  // namespace

std::vector<double> trajectory_coefficients(const ParamSet<double>& init, const ParamSet<double>& final_params,
                                            const TrajectoryBasis& basis) {
  return coefficients(scoped_delta(init, final_params, basis), basis.dirs);
}

ParamSet<double> traj_reconstruct(const ParamSet<double>& init, const ParamSet<double>& final_params,
                                  const TrajectoryBasis& basis, std::size_t k) {
  if (k > basis.k_max())
    throw std::invalid_argument("traj_reconstruct: k=" + std::to_string(k) + " exceeds basis size " +
                                std::to_string(basis.k_max()));
  const std::vector<double> c = trajectory_coefficients(init, final_params, basis);
  std::vector<double> packed(basis.dirs.rows(), 0.0);
  const std::size_t kk = basis.k_max();
  for (std::size_t i = 0; i < packed.size(); ++i) {
    const double* row = basis.dirs.data() + i * kk;
    double acc = 0.0;
    for (std::size_t j = 0; j < k; ++j) acc += row[j] * c[j];
    packed[i] = acc;
  }
  return with_scoped_delta(init, final_params, basis, packed);
}

ParamSet<double> remove_pc(const ParamSet<double>& init, const ParamSet<double>& final_params,
                           const TrajectoryBasis& basis, std::size_t pc) {
  if (pc >= basis.k_max())
    throw std::invalid_argument("remove_pc: index " + std::to_string(pc) + " outside basis of " +
                                std::to_string(basis.k_max()));
  std::vector<double> packed = scoped_delta(init, final_params, basis);
  const std::size_t kk = basis.k_max();
  double c = 0.0;
  for (std::size_t i = 0; i < packed.size(); ++i) c += basis.dirs.data()[i * kk + pc] * packed[i];
  for (std::size_t i = 0; i < packed.size(); ++i) packed[i] -= c * basis.dirs.data()[i * kk + pc];
  return with_scoped_delta(init, final_params, basis, packed);
}

std::optional<std::size_t> kstar(const std::vector<TaskAcc>& curve, const TaskAcc& baseline, double threshold) {
  for (std::size_t k = 0; k < curve.size(); ++k) {
    bool ok = true;
    for (std::size_t t = 0; t < kNumTasks; ++t) ok = ok && curve[k][t] >= threshold * baseline[t];
    if (ok) return k + 1;
  }
  return std::nullopt;
}

EnergyRank energy_rank(const std::vector<double>& s, double fraction, std::size_t full) {
  double total = 0.0;
  for (double v : s) total += v * v;
  if (!(total > 0.0)) throw std::invalid_argument("energy_rank: zero matrix");
  double acc = 0.0;
  std::size_t k = 0;
  while (k < s.size()) {
    acc += s[k] * s[k];
    ++k;
    if (acc >= fraction * total) break;
  }
  return {k, 100.0 * static_cast<double>(k) / static_cast<double>(full)};
}

EnergyRank energy_rank(const Mat& delta, double fraction) {
  return energy_rank(svd(delta, "delta").s, fraction, std::min(delta.rows(), delta.cols()));
}

double spectral_entropy(const std::vector<double>& s, std::size_t full) {
  double total = 0.0;
  for (double v : s) total += v * v;
  if (!(total > 0.0)) throw std::invalid_argument("spectral_entropy: zero matrix");
  if (full < 2) return 0.0;
  double h = 0.0;
  for (double v : s) {
    const double p = v * v / total;
    if (p > 0.0) h -= p * std::log(p);
  }
  return h / std::log(static_cast<double>(full));
}

double spectral_entropy(const Mat& delta) {
  return spectral_entropy(svd(delta, "delta").s, std::min(delta.rows(), delta.cols()));
}

std::size_t per_matrix_params(const ParamLayout& layout, Scope scope, std::size_t k) {
  std::size_t n = 0;
  for (const TensorSpec* t : layout.matrices(scope)) n += std::min(k, full_rank(*t)) * (t->rows() + t->cols() + 1);
  return n;
}

std::size_t joint_params(const ParamLayout& layout, std::size_t r) {
  const auto mats = trunk_matrices(layout);
  std::size_t d_max = 0;
  for (const TensorSpec* t : mats) d_max = std::max(d_max, t->size);
  return r * (mats.size() + d_max + 1);
}

std::size_t trajectory_params(std::size_t dim, std::size_t k) { return k * (dim + 1); }

Scorer::Scorer(const ModelConfig& cfg, Dataset test) : test_(std::move(test)), engine_(cfg) {}

TaskAcc Scorer::accuracy(const ParamSet<double>& params) {
  return engine_.evaluate(params, batch_of(test_)).task_acc;
}

RunEndpoints load_endpoints(const std::filesystem::path& run_dir) {
  RunEndpoints e;
  e.steps = list_checkpoints(run_dir);
  if (e.steps.empty() || e.steps.front() != 0)
    throw CheckpointError(run_dir.string() + ": missing step-0 checkpoint");
  if (e.steps.size() < 2) throw CheckpointError(run_dir.string() + ": need at least 2 checkpoints");
  Checkpoint first = load_checkpoint(checkpoint_path(run_dir, 0));
  Checkpoint last = load_checkpoint(checkpoint_path(run_dir, e.steps.back()));
  if (first.meta.model != last.meta.model)
    throw CheckpointError(run_dir.string() + ": initial and final checkpoints disagree on the model");
  e.init = first.params.cast<double>();
  e.final_params = last.params.cast<double>();
  e.meta = last.meta;
  return e;
}

namespace {

ReconResult scored(std::string method, Scope scope, std::size_t rank, const TaskAcc& acc, std::size_t params) {
  return {std::move(method), scope, rank, acc, mean_of(acc), params};
}

std::string kstar_text(const std::optional<std::size_t>& k, std::size_t cap) {
  return k ? std::to_string(*k) : ">" + std::to_string(cap);
}

}  // namespace

AnalysisReport analyze_run(const std::filesystem::path& run_dir, const std::filesystem::path& out_dir,
                           const AnalyzeOptions& opt) {
  RunEndpoints ends = load_endpoints(run_dir);
  const ParamLayout& layout = ends.final_params.layout();
  std::filesystem::create_directories(out_dir);

  AnalysisReport rep;
  rep.model = ends.meta.model;
  rep.final_step = ends.steps.back();
  rep.checkpoints = ends.steps.size();

  Scorer scorer(rep.model, generate(rep.model.P, ends.meta.split_seed).test);
  rep.baseline = scorer.accuracy(ends.final_params);
  rep.curve.push_back(scored("baseline", Scope::Full, 0, rep.baseline, layout.total()));

  // Per-matrix truncation on the comparison scope, and the heads-only diagnostic.
  const auto matrix_scope = opt.scope == Scope::Heads ? Scope::Trunk : opt.scope;
  for (std::size_t k : opt.ranks) {
    auto p = per_matrix_truncate(ends.init, ends.final_params, k, matrix_scope);
    rep.curve.push_back(scored("per_matrix", matrix_scope, k, scorer.accuracy(p),
                               per_matrix_params(layout, matrix_scope, k)));
  }
  for (std::size_t k : opt.ranks) {
    auto p = per_matrix_truncate(ends.init, ends.final_params, k, Scope::Heads);
    rep.curve.push_back(
        scored("heads_only", Scope::Heads, k, scorer.accuracy(p), per_matrix_params(layout, Scope::Heads, k)));
  }

  const std::size_t n_joint = trunk_matrices(layout).size();
  for (std::size_t r = 1; r <= n_joint; ++r) {
    auto p = joint_truncate(ends.init, ends.final_params, r);
    rep.curve.push_back(scored("joint", Scope::Trunk, r, scorer.accuracy(p), joint_params(layout, r)));
  }

  std::vector<Scope> traj_scopes{Scope::Full};
  if (opt.scope != Scope::Full) traj_scopes.push_back(opt.scope);
  for (Scope scope : traj_scopes) {
    TrajectoryBasis basis = trajectory_pca(run_dir, scope, opt.kmax);
    std::vector<TaskAcc> accs;
    for (std::size_t k = 1; k <= basis.k_max(); ++k) {
      const TaskAcc a = scorer.accuracy(traj_reconstruct(ends.init, ends.final_params, basis, k));
      accs.push_back(a);
      rep.curve.push_back(scored("trajectory", scope, k, a, trajectory_params(basis.dirs.rows(), k)));
    }
    for (double th : opt.kstar_thresholds) rep.kstar.push_back({scope, th, kstar(accs, rep.baseline, th)});
    if (scope == Scope::Full) {
      std::vector<std::size_t> pcs;
      for (std::size_t i = 0; i < std::min(opt.pc_removals, basis.k_max()); ++i) pcs.push_back(i);
      if (basis.k_max() > opt.pc_removals) pcs.push_back(basis.k_max() - 1);
      for (std::size_t pc : pcs) {
        const TaskAcc a = scorer.accuracy(remove_pc(ends.init, ends.final_params, basis, pc));
        rep.curve.push_back(scored("pc_removed", scope, pc + 1, a, 0));
      }
    }
    basis.dirs = Mat();  // only the spectrum is kept in the report
    rep.bases.push_back(std::move(basis));
  }

  std::size_t n_trunk = 0;
  for (const TensorSpec& t : layout.tensors()) {
    if (!t.is_matrix()) continue;
    const Mat delta = delta_matrix(ends.init, ends.final_params, t);
    MatrixSpectrum ms;
    ms.name = t.name;
    ms.group = t.group;
    ms.rows = t.rows();
    ms.cols = t.cols();
    ms.s = svd(delta, t.name).s;
    if (frobenius(delta) > 0.0) {
      ms.k90 = energy_rank(ms.s, 0.90, full_rank(t));
      ms.k99 = energy_rank(ms.s, 0.99, full_rank(t));
      ms.entropy = spectral_entropy(ms.s, full_rank(t));
    }
    if (t.layer >= 0) {
      rep.mean_k90_pct += ms.k90.percent;
      rep.mean_k99_pct += ms.k99.percent;
      rep.mean_entropy += ms.entropy;
      ++n_trunk;
    }
    rep.spectra.push_back(std::move(ms));
  }
  if (n_trunk) {
    rep.mean_k90_pct /= static_cast<double>(n_trunk);
    rep.mean_k99_pct /= static_cast<double>(n_trunk);
    rep.mean_entropy /= static_cast<double>(n_trunk);
  }

  {
    CsvWriter w(out_dir / "recon_curve.csv",
                {"method", "scope", "rank", "acc_add", "acc_mul", "acc_quad", "acc_mean", "params_used"});
    for (const auto& r : rep.curve)
      w.row({r.method, std::string(scope_name(r.scope)), std::to_string(r.rank), exact(r.acc[0]),
             exact(r.acc[1]), exact(r.acc[2]), exact(r.mean), std::to_string(r.params_used)});
  }
  {
    CsvWriter w(out_dir / "spectra.csv", {"matrix_name", "index", "singular_value"});
    for (const auto& ms : rep.spectra)
      for (std::size_t i = 0; i < ms.s.size(); ++i) w.row({ms.name, std::to_string(i + 1), exact(ms.s[i])});
  }
  {
    CsvWriter w(out_dir / "variance.csv", {"scope", "pc", "singular_value", "variance_fraction", "cumulative"});
    for (const auto& b : rep.bases) {
      double cum = 0.0;
      for (std::size_t i = 0; i < b.all_s.size(); ++i) {
        cum += b.variance[i];
        w.row({std::string(scope_name(b.scope)), std::to_string(i + 1), exact(b.all_s[i]), exact(b.variance[i]),
               exact(cum)});
      }
    }
  }
  {
    CsvWriter w(out_dir / "kstar.csv", {"scope", "threshold", "kstar", "k_cap"});
    for (const auto& k : rep.kstar)
      w.row({std::string(scope_name(k.scope)), fixed(k.threshold, 2), kstar_text(k.k, opt.kmax),
             std::to_string(opt.kmax)});
  }
  {
    CsvWriter w(out_dir / "entropy.csv",
                {"matrix_name", "group", "rows", "cols", "full_rank", "k90", "k99", "pct90", "pct99", "entropy"});
    for (const auto& ms : rep.spectra) {
      const char* group = ms.group == TensorGroup::Embedding ? "embedding"
                          : ms.group == TensorGroup::Head    ? "head"
                                                             : "trunk";
      w.row({ms.name, group, std::to_string(ms.rows), std::to_string(ms.cols),
             std::to_string(std::min(ms.rows, ms.cols)), std::to_string(ms.k90.k), std::to_string(ms.k99.k),
             exact(ms.k90.percent), exact(ms.k99.percent), exact(ms.entropy)});
    }
  }
  {
    nlohmann::json j;
    j["run_dir"] = std::filesystem::absolute(run_dir).lexically_normal().string();
    j["model_tag"] = preset_name(rep.model);
    j["final_step"] = rep.final_step;
    j["checkpoints"] = rep.checkpoints;
    j["baseline_acc"] = rep.baseline;
    j["baseline_mean"] = mean_of(rep.baseline);
    j["comparison_scope"] = std::string(scope_name(matrix_scope));
    j["mean_k90_pct_trunk"] = rep.mean_k90_pct;
    j["mean_k99_pct_trunk"] = rep.mean_k99_pct;
    j["mean_entropy_trunk"] = rep.mean_entropy;
    nlohmann::json pcs = nlohmann::json::object();
    for (const auto& b : rep.bases) {
      pcs[std::string(scope_name(b.scope))] = {
          {"pc1_fraction", b.variance.at(0)},
          {"top3_fraction", b.variance.at(0) + (b.variance.size() > 1 ? b.variance[1] : 0.0) +
                                (b.variance.size() > 2 ? b.variance[2] : 0.0)},
          {"row_rank", b.row_rank},
          {"dimension", total_size(b.ranges)}};
    }
    j["trajectory"] = pcs;
    j["params_used_convention"] =
        "per_matrix: k(m+n+1) per matrix with k capped at min(m,n); joint: r(n+d_max+1); trajectory: k(D+1)";
    std::ofstream(out_dir / "analysis.json") << j.dump(2) << '\n';
  }
  return rep;
}

}  // namespace grok

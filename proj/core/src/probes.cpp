#include "grok/probes.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "grok/csv.hpp"
#include "grok/rng.hpp"
#include "json.hpp"

namespace grok {

std::string_view probe_scope_name(ProbeScope s) {
  return s == ProbeScope::FullVector ? "full" : "trunk-interior";
}

ProbeScope probe_scope_from_name(std::string_view name) {
  if (name == "full" || name == "full-vector") return ProbeScope::FullVector;
  if (name == "trunk-interior" || name == "trunk") return ProbeScope::TrunkInterior;
  throw std::invalid_argument("unknown probe scope '" + std::string(name) + "'");
}

std::vector<Range> probe_ranges(const ParamLayout& layout, ProbeScope s) {
  return layout.ranges(s == ProbeScope::FullVector ? Scope::Full : Scope::Trunk);
}

std::vector<std::size_t> sample_indices(std::size_t n, std::size_t m, std::uint64_t seed) {
  if (m > n) throw std::invalid_argument("sample of " + std::to_string(m) + " from " + std::to_string(n) + " examples");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  SplitMix64 rng(seed);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(m);
  return idx;
}

Mat task_grad_sample(const ParamSet<double>& params, TaskId task, const Dataset& data,
                     const std::vector<std::size_t>& indices, const std::vector<Range>& ranges) {
  const std::size_t cols = total_size(ranges);
  Mat out(indices.size(), cols);
  Engine<double> engine(params.config());
  ParamSet<double> grads(params.config());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t i = indices[r];
    if (i >= data.size()) throw std::out_of_range("example index out of range");
    Batch b;
    b.inputs = std::span<const Pair>(data.pairs).subspan(i, 1);
    for (std::size_t t = 0; t < kNumTasks; ++t) b.labels[t] = std::span<const int>(data.labels[t]).subspan(i, 1);
    engine.loss_and_grads(params, b, grads, task);
    auto row = out.row(r);
    std::size_t at = 0;
    for (const Range& rg : ranges)
      for (std::size_t j = 0; j < rg.size; ++j) row[at++] = grads.values()[rg.offset + j];
  }
  if (!out.all_finite()) throw std::runtime_error("non-finite per-example gradients for task " +
                                                  std::string(task_name(task)));
  return out;
}

Mat task_grad_sample(const ParamSet<double>& params, TaskId task, const Dataset& data, std::size_t m,
                     std::uint64_t seed, const std::vector<Range>& ranges) {
  return task_grad_sample(params, task, data, sample_indices(data.size(), m, seed), ranges);
}

TaskSubspace top_directions(const Mat& grads, std::size_t k, TaskId task, std::string tag, bool center) {
  if (k > grads.rows())
    throw std::invalid_argument("top_directions: k=" + std::to_string(k) + " exceeds sample size " +
                                std::to_string(grads.rows()));
  GramDirections g;
  if (center) {
    Mat c = grads;
    for (std::size_t j = 0; j < c.cols(); ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < c.rows(); ++i) mean += c(i, j);
      mean /= static_cast<double>(c.rows());
      for (std::size_t i = 0; i < c.rows(); ++i) c(i, j) -= mean;
    }
    g = gram_top_dirs(c, k);
  } else {
    g = gram_top_dirs(grads, k);
  }
  return {task, std::move(tag), std::move(g.dirs), std::move(g.s)};
}

ParamSet<double> ablate(const ParamSet<double>& init, const ParamSet<double>& final_params,
                        const std::vector<const TaskSubspace*>& subspaces, const std::vector<Range>& ranges,
                        bool raw) {
  if (init.config() != final_params.config()) throw std::invalid_argument("ablate: parameter shapes differ");
  const std::size_t dim = total_size(ranges);
  std::vector<Mat> blocks;
  for (const TaskSubspace* s : subspaces) {
    if (s->basis.rows() != dim)
      throw std::invalid_argument("ablate: subspace dimension " + std::to_string(s->basis.rows()) +
                                  " does not match scope dimension " + std::to_string(dim));
    blocks.push_back(s->basis);
  }
  if (blocks.empty()) return final_params;
  const Mat basis = orthonormalize_columns(hcat(blocks), 1e-12);

  const std::vector<double> fin(final_params.values().begin(), final_params.values().end());
  const std::vector<double> ini(init.values().begin(), init.values().end());
  std::vector<double> v = gather(fin, ranges);
  const std::vector<double> base = raw ? std::vector<double>(dim, 0.0) : gather(ini, ranges);
  for (std::size_t i = 0; i < dim; ++i) v[i] -= base[i];
  std::vector<double> kept = project_out(v, basis);
  for (std::size_t i = 0; i < dim; ++i) kept[i] += base[i];
  std::vector<double> out = fin;
  scatter(kept, ranges, out);
  return ParamSet<double>(final_params.shared_layout(), std::move(out));
}

std::optional<double> selectivity_index(double self_damage, double mean_collateral) {
  const double den = self_damage + mean_collateral;
  if (den == 0.0) return std::nullopt;
  return (self_damage - mean_collateral) / den;
}

double layer_overlap(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("layer_overlap: k mismatch");
  if (a.rows() != b.rows()) throw std::invalid_argument("layer_overlap: dimension mismatch");
  if (a.cols() == 0) throw std::invalid_argument("layer_overlap: empty subspaces");
  const Mat c = matmul(a.transposed(), b);
  const double f = frobenius(c);
  return f * f / static_cast<double>(a.cols());
}

AblationReport make_report(std::vector<TaskId> removed, std::string label, std::size_t k, ProbeScope scope,
                           const TaskAcc& before, const TaskAcc& after) {
  AblationReport r;
  r.removed = std::move(removed);
  r.label = std::move(label);
  r.k = k;
  r.scope = scope;
  r.before = before;
  r.after = after;
  double self = 0.0, coll = 0.0;
  std::size_t n_self = 0, n_coll = 0;
  for (TaskId t : kAllTasks) {
    const auto i = static_cast<std::size_t>(index_of(t));
    const double drop = std::max(0.0, before[i] - after[i]);
    if (std::find(r.removed.begin(), r.removed.end(), t) != r.removed.end()) {
      self += drop;
      ++n_self;
    } else {
      coll += drop;
      ++n_coll;
    }
  }
  r.self_damage = n_self ? self / static_cast<double>(n_self) : 0.0;
  r.mean_collateral = n_coll ? coll / static_cast<double>(n_coll) : 0.0;
  if (n_self && n_coll) r.si = selectivity_index(r.self_damage, r.mean_collateral);
  return r;
}

std::optional<double> ProbeReport::mean_si(ProbeScope scope) const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : selectivity)
    if (r.scope == scope && r.si) {
      sum += *r.si;
      ++n;
    }
  if (!n) return std::nullopt;
  return sum / static_cast<double>(n);
}

double ProbeReport::mean_overlap() const {
  if (overlap.empty()) return std::nan("");
  double sum = 0.0;
  for (const auto& o : overlap) sum += o.overlap;
  return sum / static_cast<double>(overlap.size());
}

namespace {

std::string removed_label(const std::vector<TaskId>& tasks) {
  std::string s;
  for (TaskId t : tasks) s += (s.empty() ? "" : "+") + std::string(task_name(t));
  return s;
}

TaskSubspace random_subspace(std::size_t dim, std::size_t k, std::uint64_t seed) {
  SplitMix64 rng(seed);
  Mat g(dim, k);
  for (std::size_t i = 0; i < dim; ++i)
    for (std::size_t j = 0; j < k; ++j) g(i, j) = rng.normal();
  return {TaskId::Add, "random", orthonormalize_columns(g), {}};
}

Mat columns_of(const Mat& full, const std::vector<Range>& all, const std::vector<Range>& pick) {
  // Maps flat-vector ranges onto column offsets of `full`, whose columns are `all` packed.
  std::vector<std::size_t> cols;
  for (const Range& p : pick) {
    for (std::size_t off = p.offset; off < p.offset + p.size; ++off) {
      std::size_t at = 0;
      bool found = false;
      for (const Range& a : all) {
        if (off >= a.offset && off < a.offset + a.size) {
          cols.push_back(at + (off - a.offset));
          found = true;
          break;
        }
        at += a.size;
      }
      if (!found) throw std::logic_error("columns_of: coordinate outside the sampled ranges");
    }
  }
  Mat out(full.rows(), cols.size());
  for (std::size_t i = 0; i < full.rows(); ++i) {
    auto src = full.row(i);
    auto dst = out.row(i);
    for (std::size_t j = 0; j < cols.size(); ++j) dst[j] = src[cols[j]];
  }
  return out;
}

}  // namespace

ProbeReport probe_run(const std::filesystem::path& run_dir, const std::filesystem::path& out_dir,
                      const ProbeOptions& opt) {
  if (opt.scopes.empty()) throw std::invalid_argument("probe: no scope requested");
  RunEndpoints ends = load_endpoints(run_dir);
  const ParamLayout& layout = ends.final_params.layout();
  const Split split = generate(ends.meta.model.P, ends.meta.split_seed);
  Scorer scorer(ends.meta.model, split.test);
  std::filesystem::create_directories(out_dir);

  ProbeReport rep;
  rep.baseline = scorer.accuracy(ends.final_params);

  const std::vector<std::size_t> idx = sample_indices(split.train.size(), opt.sample, opt.seed);
  const std::vector<Range> full = layout.ranges(Scope::Full);
  const int n_layers = ends.meta.model.n_layers;

  // subspaces[scope][task]; per-layer subspaces for overlap
  std::vector<std::array<TaskSubspace, kNumTasks>> model_sub(opt.scopes.size());
  std::vector<std::array<TaskSubspace, kNumTasks>> layer_sub(static_cast<std::size_t>(n_layers));
  for (TaskId t : kAllTasks) {
    const auto ti = static_cast<std::size_t>(index_of(t));
    const Mat g = task_grad_sample(ends.final_params, t, split.train, idx, full);
    for (std::size_t s = 0; s < opt.scopes.size(); ++s) {
      const auto ranges = probe_ranges(layout, opt.scopes[s]);
      model_sub[s][ti] = top_directions(columns_of(g, full, ranges), opt.k, t, "model", opt.center);
    }
    for (int l = 0; l < n_layers; ++l) {
      const Mat gl = columns_of(g, full, layout.layer_ranges(l));
      layer_sub[static_cast<std::size_t>(l)][ti] =
          top_directions(gl, opt.k, t, "layers." + std::to_string(l), opt.center);
    }
  }

  for (std::size_t s = 0; s < opt.scopes.size(); ++s) {
    const ProbeScope scope = opt.scopes[s];
    const auto ranges = probe_ranges(layout, scope);
    auto run = [&](std::vector<TaskId> removed, std::vector<const TaskSubspace*> subs, std::string label) {
      const TaskAcc after =
          scorer.accuracy(ablate(ends.init, ends.final_params, subs, ranges, opt.raw));
      return make_report(std::move(removed), std::move(label), opt.k, scope, rep.baseline, after);
    };
    for (TaskId t : kAllTasks) {
      const auto ti = static_cast<std::size_t>(index_of(t));
      rep.selectivity.push_back(run({t}, {&model_sub[s][ti]}, std::string(task_name(t))));
    }
    const std::vector<std::vector<TaskId>> groups{{TaskId::Add, TaskId::Mul},
                                                  {TaskId::Add, TaskId::Quad},
                                                  {TaskId::Mul, TaskId::Quad},
                                                  {TaskId::Add, TaskId::Mul, TaskId::Quad}};
    for (const auto& grp : groups) {
      std::vector<const TaskSubspace*> subs;
      for (TaskId t : grp) subs.push_back(&model_sub[s][static_cast<std::size_t>(index_of(t))]);
      rep.cross.push_back(run(grp, subs, removed_label(grp)));
    }
    const TaskSubspace rnd = random_subspace(total_size(ranges), opt.k, derive_seed(opt.seed, 0x52414e44));
    rep.cross.push_back(run({}, {&rnd}, "random"));
  }

  for (int l = 0; l < n_layers; ++l) {
    const auto& ls = layer_sub[static_cast<std::size_t>(l)];
    for (std::size_t a = 0; a < kNumTasks; ++a)
      for (std::size_t b = a + 1; b < kNumTasks; ++b)
        rep.overlap.push_back({"layers." + std::to_string(l), kAllTasks[a], kAllTasks[b],
                               layer_overlap(ls[a].basis, ls[b].basis)});
  }

  auto acc_fields = [](const TaskAcc& a) {
    return std::vector<std::string>{exact(a[0]), exact(a[1]), exact(a[2])};
  };
  auto si_text = [](const std::optional<double>& si) { return si ? exact(*si) : std::string("missing"); };
  {
    CsvWriter w(out_dir / "selectivity.csv",
                {"scope", "task", "k", "before_add", "before_mul", "before_quad", "after_add", "after_mul",
                 "after_quad", "self_damage", "mean_collateral", "si"});
    for (const auto& r : rep.selectivity) {
      std::vector<std::string> f{std::string(probe_scope_name(r.scope)), r.label, std::to_string(r.k)};
      for (auto& x : acc_fields(r.before)) f.push_back(x);
      for (auto& x : acc_fields(r.after)) f.push_back(x);
      f.push_back(exact(r.self_damage));
      f.push_back(exact(r.mean_collateral));
      f.push_back(si_text(r.si));
      w.row(f);
    }
  }
  {
    CsvWriter w(out_dir / "overlap.csv", {"layer", "task_pair", "overlap"});
    for (const auto& o : rep.overlap)
      w.row({o.layer, std::string(task_name(o.a)) + "-" + std::string(task_name(o.b)), exact(o.overlap)});
  }
  {
    CsvWriter w(out_dir / "cross_ablation.csv",
                {"scope", "removed", "k", "after_add", "after_mul", "after_quad", "drop_add", "drop_mul",
                 "drop_quad", "self_damage", "mean_collateral", "si"});
    for (const auto& r : rep.cross) {
      std::vector<std::string> f{std::string(probe_scope_name(r.scope)), r.label, std::to_string(r.k)};
      for (auto& x : acc_fields(r.after)) f.push_back(x);
      for (std::size_t t = 0; t < kNumTasks; ++t) f.push_back(exact(r.before[t] - r.after[t]));
      f.push_back(exact(r.self_damage));
      f.push_back(exact(r.mean_collateral));
      f.push_back(si_text(r.si));
      w.row(f);
    }
  }
  {
    nlohmann::json j;
    j["run_dir"] = std::filesystem::absolute(run_dir).lexically_normal().string();
    j["baseline_acc"] = rep.baseline;
    j["k"] = opt.k;
    j["sample"] = opt.sample;
    j["seed"] = opt.seed;
    j["covariance"] = opt.center ? "centered" : "uncentered";
    j["ablation_target"] = opt.raw ? "final_vector" : "delta";
    j["per_layer_k"] = opt.k;
    nlohmann::json si = nlohmann::json::object();
    for (ProbeScope s : opt.scopes) {
      const auto m = rep.mean_si(s);
      si[std::string(probe_scope_name(s))] = m ? nlohmann::json(*m) : nlohmann::json(nullptr);
    }
    j["mean_si"] = si;
    j["mean_overlap"] = rep.mean_overlap();
    std::ofstream(out_dir / "probes.json") << j.dump(2) << '\n';
  }
  return rep;
}

}  // namespace grok

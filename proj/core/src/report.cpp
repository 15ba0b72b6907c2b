#include "grok/report.hpp"

#include <algorithm>
#include <fstream>

#include "grok/csv.hpp"
#include "grok/train.hpp"
#include "json.hpp"

namespace grok {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr const char* kCurve = "analysis/recon_curve.csv";
constexpr const char* kKstar = "analysis/kstar.csv";
constexpr const char* kAnalysis = "analysis/analysis.json";
constexpr const char* kSelectivity = "probes/selectivity.csv";
constexpr const char* kOverlap = "probes/overlap.csv";
constexpr const char* kRecord = "record.json";

Cell number(double v, const char* source) { return {v, source, {}}; }

std::optional<CsvTable> table_if(const fs::path& p) {
  if (!fs::exists(p)) return std::nullopt;
  return read_csv(p);
}

std::optional<json> json_if(const fs::path& p) {
  if (!fs::exists(p)) return std::nullopt;
  std::ifstream in(p);
  return json::parse(in);
}

Cell curve_cell(const std::optional<CsvTable>& t, std::string_view method, std::string_view scope,
                std::size_t rank) {
  if (!t) return {};
  const auto m = t->require("method"), s = t->require("scope"), r = t->require("rank"),
             v = t->require("acc_mean");
  for (const auto& row : t->rows)
    if (row[m] == method && row[s] == scope && row[r] == std::to_string(rank))
      return number(std::stod(row[v]), kCurve);
  return {};
}

Cell kstar_cell(const std::optional<CsvTable>& t, std::string_view scope, std::string_view threshold) {
  if (!t) return {};
  const auto s = t->require("scope"), th = t->require("threshold"), k = t->require("kstar");
  for (const auto& row : t->rows) {
    if (row[s] != scope || row[th] != threshold) continue;
    if (!row[k].empty() && row[k][0] == '>') return {std::nullopt, kKstar, row[k]};
    return number(std::stod(row[k]), kKstar);
  }
  return {};
}

Cell mean_si_cell(const std::optional<CsvTable>& t, std::string_view scope) {
  if (!t) return {};
  const auto s = t->require("scope"), si = t->require("si");
  double sum = 0.0;
  int n = 0;
  for (const auto& row : t->rows) {
    if (row[s] != scope || row[si] == "missing") continue;
    sum += std::stod(row[si]);
    ++n;
  }
  if (!n) return {};
  return number(sum / n, kSelectivity);
}

int model_rank(const std::string& tag) {
  if (tag == "baseline") return 0;
  if (tag == "medium") return 1;
  if (tag == "large") return 2;
  return 3;
}

std::string acc4(const Cell& c) {
  if (c.value) return fixed(*c.value, 4);
  return c.text.empty() ? "missing" : c.text;
}
std::string pct1(const Cell& c) { return c.value ? fixed(*c.value, 1) : "missing"; }
std::string integer(const Cell& c) {
  if (c.value) return std::to_string(static_cast<long long>(*c.value));
  return c.text.empty() ? "missing" : c.text;
}
std::string src(const Cell& c) { return c.present() ? c.source : ""; }

}  // namespace

ConditionSummary summarize(const fs::path& run_dir) {
  ConditionSummary s;
  s.run_dir = run_dir;
  const RunRecord rec = load_run_record(run_dir);
  s.model_tag = preset_name(rec.model);
  s.weight_decay = rec.train.weight_decay;
  if (rec.grok_step) s.grok_step = number(static_cast<double>(*rec.grok_step), kRecord);
  else s.grok_step = {std::nullopt, kRecord, "none"};

  const auto curve = table_if(run_dir / kCurve);
  const auto kst = table_if(run_dir / kKstar);
  const auto analysis = json_if(run_dir / kAnalysis);
  const auto sel = table_if(run_dir / kSelectivity);
  const auto ovl = table_if(run_dir / kOverlap);

  if (curve) {
    const auto m = curve->require("method");
    const char* cols[] = {"acc_add", "acc_mul", "acc_quad"};
    for (const auto& row : curve->rows) {
      if (row[m] != "baseline") continue;
      for (std::size_t t = 0; t < kNumTasks; ++t) s.baseline[t] = number(std::stod(row[curve->require(cols[t])]), kCurve);
    }
  }
  s.baseline_mean = curve_cell(curve, "baseline", "full", 0);
  s.pm64 = curve_cell(curve, "per_matrix", "trunk", 64);
  const std::size_t n_trunk = static_cast<std::size_t>(6 * rec.model.n_layers);
  s.joint_half = curve_cell(curve, "joint", "trunk", n_trunk / 2);
  s.joint_full = curve_cell(curve, "joint", "trunk", n_trunk);
  s.traj3 = curve_cell(curve, "trajectory", "trunk", 3);
  s.traj5 = curve_cell(curve, "trajectory", "trunk", 5);
  s.kstar95 = kstar_cell(kst, "full", "0.95");
  s.kstar99 = kstar_cell(kst, "full", "0.99");
  if (analysis) {
    s.k90_pct = number(analysis->at("mean_k90_pct_trunk").get<double>(), kAnalysis);
    s.k99_pct = number(analysis->at("mean_k99_pct_trunk").get<double>(), kAnalysis);
    s.entropy = number(analysis->at("mean_entropy_trunk").get<double>(), kAnalysis);
  }
  s.mean_si = mean_si_cell(sel, "full");
  s.mean_si_trunk = mean_si_cell(sel, "trunk-interior");
  if (ovl && !ovl->rows.empty()) {
    const auto v = ovl->require("overlap");
    double sum = 0.0;
    for (const auto& row : ovl->rows) sum += std::stod(row[v]);
    s.mean_overlap = number(sum / static_cast<double>(ovl->rows.size()), kOverlap);
  }
  return s;
}

std::vector<fs::path> collect_runs(const std::vector<fs::path>& dirs) {
  std::vector<fs::path> runs;
  for (const auto& d : dirs) {
    if (!fs::is_directory(d)) throw std::runtime_error("not a directory: " + d.string());
    if (fs::exists(d / kRecord)) {
      runs.push_back(d);
      continue;
    }
    std::vector<fs::path> children;
    for (const auto& e : fs::directory_iterator(d))
      if (e.is_directory() && fs::exists(e.path() / kRecord)) children.push_back(e.path());
    if (children.empty()) throw std::runtime_error("no runs under " + d.string());
    std::sort(children.begin(), children.end());
    runs.insert(runs.end(), children.begin(), children.end());
  }
  return runs;
}

void emit_tables(std::vector<ConditionSummary> rows, const fs::path& out_dir) {
  std::stable_sort(rows.begin(), rows.end(), [](const ConditionSummary& a, const ConditionSummary& b) {
    if (model_rank(a.model_tag) != model_rank(b.model_tag)) return model_rank(a.model_tag) < model_rank(b.model_tag);
    if (a.model_tag != b.model_tag) return a.model_tag < b.model_tag;
    return a.weight_decay < b.weight_decay;
  });
  fs::create_directories(out_dir / "tables");
  auto key = [](const ConditionSummary& s) {
    return std::vector<std::string>{s.model_tag, fixed(s.weight_decay, 2), s.run_dir.filename().string()};
  };
  auto with = [](std::vector<std::string> head, const std::vector<std::string>& tail) {
    head.insert(head.end(), tail.begin(), tail.end());
    return head;
  };
  const std::vector<std::string> id{"model", "weight_decay", "run"};

  {
    CsvWriter w(out_dir / "summary.csv",
                with(id, {"grok_step", "grok_step_src", "acc_add", "acc_mul", "acc_quad", "baseline_src", "kstar95",
                          "kstar99", "kstar_src", "pm_r64", "joint_half", "joint_full", "traj_k3", "traj_k5",
                          "baseline_mean", "recon_src", "k90_pct", "k99_pct", "entropy", "spectral_src", "mean_si",
                          "mean_si_trunk", "si_src", "mean_overlap", "overlap_src"}));
    for (const auto& s : rows)
      w.row(with(key(s), {integer(s.grok_step), src(s.grok_step), acc4(s.baseline[0]), acc4(s.baseline[1]),
                          acc4(s.baseline[2]), src(s.baseline[0]), integer(s.kstar95), integer(s.kstar99),
                          src(s.kstar95), acc4(s.pm64), acc4(s.joint_half), acc4(s.joint_full), acc4(s.traj3),
                          acc4(s.traj5), acc4(s.baseline_mean), src(s.baseline_mean), pct1(s.k90_pct),
                          pct1(s.k99_pct), acc4(s.entropy), src(s.k90_pct), acc4(s.mean_si),
                          acc4(s.mean_si_trunk), src(s.mean_si), acc4(s.mean_overlap), src(s.mean_overlap)}));
  }
  {
    CsvWriter w(out_dir / "tables/table2.csv", with(id, {"kstar95", "kstar99", "source"}));
    for (const auto& s : rows) w.row(with(key(s), {integer(s.kstar95), integer(s.kstar99), src(s.kstar95)}));
  }
  {
    CsvWriter w(out_dir / "tables/table3.csv", with(id, {"k90_pct", "k99_pct", "source"}));
    for (const auto& s : rows) w.row(with(key(s), {pct1(s.k90_pct), pct1(s.k99_pct), src(s.k90_pct)}));
  }
  {
    CsvWriter w(out_dir / "tables/table4.csv", with(id, {"mean_si", "source"}));
    for (const auto& s : rows) w.row(with(key(s), {acc4(s.mean_si), src(s.mean_si)}));
  }
  {
    CsvWriter w(out_dir / "tables/table5.csv",
                with(id, {"pm_r64", "joint_half", "joint_full", "traj_k3", "traj_k5", "baseline", "source"}));
    for (const auto& s : rows)
      w.row(with(key(s), {acc4(s.pm64), acc4(s.joint_half), acc4(s.joint_full), acc4(s.traj3), acc4(s.traj5),
                          acc4(s.baseline_mean), src(s.baseline_mean)}));
  }
  {
    CsvWriter w(out_dir / "tables/table6.csv", with(id, {"mean_overlap", "source"}));
    for (const auto& s : rows) w.row(with(key(s), {acc4(s.mean_overlap), src(s.mean_overlap)}));
  }
}

}  // namespace grok

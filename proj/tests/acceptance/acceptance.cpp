// Acceptance gate: property suites A1-A6 and the desk-scale baseline run
// B7-B15 (2 layers, d=128, weight decay 1.0). Prints one line per criterion
// and exits non-zero if any fails.
//
// The run directory comes from GROK_ACCEPT_RUN or the configured default.
// A missing run is trained first; missing analysis/ and probes/ outputs are
// produced with default options. A run that is still in progress is not
// touched and its criteria fail.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "grok/csv.hpp"
#include "grok/probes.hpp"
#include "grok/recon.hpp"
#include "grok/train.hpp"
#include "grok/verify.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::int64_t kMaxGrokSteps = 100000;

struct Line {
  std::string id;
  bool passed = false;
  std::string text;
};

std::vector<Line> g_lines;

void report(const std::string& id, bool passed, const std::string& text) {
  g_lines.push_back({id, passed, text});
  std::printf("%-4s %s  %s\n", id.c_str(), passed ? "PASS" : "FAIL", text.c_str());
  std::fflush(stdout);
}

std::string num(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string sci(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2e", v);
  return buf;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return json::parse(in);
}

// Property suites map one-to-one onto verify checks.
void property_suites() {
  const std::vector<std::pair<std::string, std::string>> ids{
      {"A1", "gradient"}, {"A2", "svd"}, {"A3", "gram"}, {"A4", "counts"}, {"A5", "lossless"}, {"A6", "artifacts"}};
  grok::VerifyOptions opt;
  for (const auto& [id, check] : ids) opt.only.push_back(check);
  std::map<std::string, grok::CheckResult> got;
  for (const auto& r : grok::run_verify(opt)) got[r.id] = r;
  for (const auto& [id, check] : ids) {
    const auto it = got.find(check);
    if (it == got.end()) {
      report(id, false, check + ": not run");
      continue;
    }
    report(id, it->second.passed, check + ": " + it->second.detail);
  }
}

struct Curve {
  struct Row {
    std::string method, scope;
    std::size_t rank = 0;
    grok::TaskAcc acc{};
    double mean = 0.0;
  };
  std::vector<Row> rows;

  std::optional<Row> find(const std::string& method, const std::string& scope, std::size_t rank) const {
    for (const auto& r : rows)
      if (r.method == method && r.scope == scope && r.rank == rank) return r;
    return std::nullopt;
  }
};

Curve read_curve(const fs::path& p) {
  const grok::CsvTable t = grok::read_csv(p);
  Curve c;
  const std::size_t m = t.require("method"), s = t.require("scope"), k = t.require("rank");
  const std::size_t a = t.require("acc_add"), b = t.require("acc_mul"), q = t.require("acc_quad"),
                    mean = t.require("acc_mean");
  for (const auto& row : t.rows)
    c.rows.push_back({row[m], row[s], std::stoul(row[k]), {std::stod(row[a]), std::stod(row[b]), std::stod(row[q])},
                      std::stod(row[mean])});
  return c;
}

std::string accs(const grok::TaskAcc& a) { return num(a[0]) + "/" + num(a[1]) + "/" + num(a[2]); }

void fail_run_criteria(const std::string& why) {
  for (const char* id : {"B7", "B8", "B9", "B10", "B11", "B12", "B13", "B14", "B15"}) report(id, false, why);
}

void desk_run(const fs::path& run) {
  if (!fs::exists(run / "record.json")) {
    std::fprintf(stderr, "training %s (this takes a while)\n", run.string().c_str());
    grok::TrainConfig cfg;
    cfg.weight_decay = 1.0;
    cfg.max_steps = kMaxGrokSteps;
    grok::train(grok::model_preset("baseline"), cfg, run);
  }
  const grok::RunRecord rec = grok::load_run_record(run);
  if (rec.model != grok::model_preset("baseline") || rec.train.weight_decay != 1.0) {
    fail_run_criteria("run at " + run.string() + " is not the baseline model at weight decay 1.0");
    return;
  }
  if (rec.status == grok::RunStatus::Running) {
    fail_run_criteria("run at " + run.string() + " has not finished");
    return;
  }

  // B7: grokking within the step budget.
  {
    const bool ok = rec.status == grok::RunStatus::Grokked && rec.grok_step && *rec.grok_step <= kMaxGrokSteps;
    std::string text = "grok step ";
    text += rec.grok_step ? std::to_string(*rec.grok_step) : std::string("none");
    text += " (limit " + std::to_string(kMaxGrokSteps) + ", status " + std::string(grok::status_name(rec.status));
    if (!rec.metrics.empty()) text += ", final test " + accs(rec.metrics.back().test_acc);
    report("B7", ok, text + ")");
    if (!rec.grok_step) {
      for (const char* id : {"B8", "B9", "B10", "B11", "B12", "B13", "B14", "B15"})
        report(id, false, "no grokked endpoint to analyze");
      return;
    }
  }

  const fs::path adir = run / "analysis", pdir = run / "probes";
  if (!fs::exists(adir / "analysis.json")) {
    std::fprintf(stderr, "analyzing %s\n", run.string().c_str());
    grok::analyze_run(run, adir);
  }
  if (!fs::exists(pdir / "probes.json")) {
    std::fprintf(stderr, "probing %s\n", run.string().c_str());
    grok::probe_run(run, pdir);
  }
  const json aj = read_json(adir / "analysis.json");
  const json pj = read_json(pdir / "probes.json");
  const Curve curve = read_curve(adir / "recon_curve.csv");
  const auto base = curve.find("baseline", "full", 0);
  if (!base) throw std::runtime_error("recon_curve.csv has no baseline row");

  // B8: trajectory PCA.
  {
    const grok::CsvTable ks = grok::read_csv(adir / "kstar.csv");
    std::optional<std::size_t> k95;
    for (const auto& row : ks.rows)
      if (row[ks.require("scope")] == "full" && std::abs(std::stod(row[ks.require("threshold")]) - 0.95) < 1e-9 &&
          row[ks.require("kstar")].front() != '>')
        k95 = std::stoul(row[ks.require("kstar")]);
    const auto t5 = curve.find("trajectory", "trunk", 5);
    const auto t5f = curve.find("trajectory", "full", 5);
    const double pc1 = aj["trajectory"]["full"]["pc1_fraction"].get<double>();
    const bool ok = k95 && *k95 <= 8 && t5 && t5->mean >= 0.90 && pc1 >= 0.85 && pc1 <= 0.99;
    report("B8", ok,
           "k*(95%) " + (k95 ? std::to_string(*k95) : std::string("none")) + " (<= 8); k=5 mean " +
               (t5 ? num(t5->mean) : std::string("missing")) + " trunk (>= 0.90), " +
               (t5f ? num(t5f->mean) : std::string("missing")) + " full; PC1 fraction " + num(pc1) +
               " (in [0.85, 0.99])");
  }

  // B9: per-matrix trunk truncation at rank 64 fails.
  {
    const auto r = curve.find("per_matrix", "trunk", 64);
    report("B9", r && r->mean < 0.20,
           "trunk rank-64 mean " + (r ? num(r->mean) + " (" + accs(r->acc) + ")" : std::string("missing")) +
               " (< 0.20)");
  }

  // B10: joint SVD fails at n/2 and is exact at n.
  {
    const std::size_t n = grok::trunk_matrices(grok::ParamLayout(rec.model)).size();
    const auto half = curve.find("joint", "trunk", n / 2);
    const auto full = curve.find("joint", "trunk", n);
    double gap = INFINITY;
    if (full) {
      gap = 0.0;
      for (int t = 0; t < grok::kNumTasks; ++t) gap = std::max(gap, std::abs(full->acc[t] - base->acc[t]));
    }
    report("B10", half && half->mean < 0.20 && gap <= 1e-6,
           "r=" + std::to_string(n / 2) + " mean " + (half ? num(half->mean) : std::string("missing")) +
               " (< 0.20); r=" + std::to_string(n) + " max gap to baseline " + sci(gap) + " (<= 1e-6)");
  }

  // B11: heads compress.
  {
    const auto r = curve.find("heads_only", "heads", 64);
    report("B11", r && r->mean >= 0.99 * base->mean,
           "heads rank-64 mean " + (r ? num(r->mean) : std::string("missing")) + " vs 0.99 x baseline " +
               num(0.99 * base->mean));
  }

  // B12: energy ranks and entropy of trunk weight deltas.
  {
    const double k90 = aj["mean_k90_pct_trunk"].get<double>();
    const double h = aj["mean_entropy_trunk"].get<double>();
    report("B12", k90 >= 35.0 && k90 <= 65.0 && h >= 0.80 && h <= 0.95,
           "mean k90 " + num(k90, 1) + "% (in [35, 65]); entropy " + num(h) + " (in [0.80, 0.95])");
  }

  // B13: selectivity and cross-ablation.
  {
    const bool right_k = pj["k"].get<std::size_t>() == 10;
    std::optional<double> si;
    if (pj["mean_si"].contains("full") && pj["mean_si"]["full"].is_number()) si = pj["mean_si"]["full"].get<double>();
    const grok::CsvTable cx = grok::read_csv(pdir / "cross_ablation.csv");
    double worst = 0.0;
    int pairs = 0;
    const std::vector<std::pair<std::string, int>> third{{"add+mul", 2}, {"add+quad", 1}, {"mul+quad", 0}};
    const char* drops[] = {"drop_add", "drop_mul", "drop_quad"};
    for (const auto& row : cx.rows) {
      if (row[cx.require("scope")] != "full") continue;
      for (const auto& [label, t] : third)
        if (row[cx.require("removed")] == label) {
          worst = std::max(worst, std::abs(std::stod(row[cx.require(drops[t])])));
          ++pairs;
        }
    }
    report("B13", right_k && si && *si >= 0.90 && pairs == 3 && worst < 0.03,
           "mean SI " + (si ? num(*si) : std::string("missing")) + " at k=" + std::to_string(pj["k"].get<int>()) +
               " (>= 0.90); worst third-task change " + num(100.0 * worst, 2) + " points over " +
               std::to_string(pairs) + " pairs (< 3)");
  }

  // B14: task subspaces barely overlap.
  {
    const double ov = pj["mean_overlap"].get<double>();
    report("B14", ov < 0.20, "mean pairwise overlap " + num(ov) + " (< 0.20)");
  }

  // B15: the first trajectory component carries every task.
  {
    const auto r = curve.find("pc_removed", "full", 1);
    double least = INFINITY;
    if (r)
      for (int t = 0; t < grok::kNumTasks; ++t) least = std::min(least, base->acc[t] - r->acc[t]);
    report("B15", r && least > 0.50,
           "PC1 removed " + (r ? accs(r->acc) : std::string("missing")) + " from " + accs(base->acc) +
               "; smallest drop " + num(100.0 * least, 1) + " points (> 50)");
  }
}

}  // namespace

int main() {
  const char* env = std::getenv("GROK_ACCEPT_RUN");
  const fs::path run = env && *env ? fs::path(env) : fs::path(GROK_ACCEPT_DEFAULT_RUN);
  std::printf("acceptance run directory: %s\n", run.string().c_str());
  try {
    property_suites();
  } catch (const std::exception& e) {
    report("A*", false, std::string("property suites aborted: ") + e.what());
  }
  try {
    desk_run(run);
  } catch (const std::exception& e) {
    report("B*", false, std::string("desk-scale run aborted: ") + e.what());
  }
  int failed = 0;
  for (const auto& l : g_lines) failed += l.passed ? 0 : 1;
  std::printf("%zu criteria, %d failed\n", g_lines.size(), failed);
  return failed == 0 ? 0 : 1;
}

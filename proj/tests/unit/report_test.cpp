#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "grok/csv.hpp"
#include "grok/probes.hpp"
#include "grok/recon.hpp"
#include "grok/report.hpp"
#include "support.hpp"

namespace grok {
namespace {

namespace fs = std::filesystem;

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// A copy of the shared run with analysis and probe outputs, built once.
const fs::path& analyzed_run() {
  static test::TempDir dir("report");
  static const fs::path run = [] {
    const fs::path p = dir / "small_wd1.0";
    fs::copy(test::shared_run(), p, fs::copy_options::recursive);
    AnalyzeOptions a;
    a.ranks = {1, 2, 4, 8, 16, 64};
    a.kmax = 10;
    analyze_run(p, p / "analysis", a);
    ProbeOptions o;
    o.k = 3;
    o.sample = 16;
    probe_run(p, p / "probes", o);
    return p;
  }();
  return run;
}

TEST(Csv, FixedAndExactRendering) {
  EXPECT_EQ(fixed(0.12345, 4), "0.1235");
  EXPECT_EQ(fixed(50.0, 1), "50.0");
  EXPECT_EQ(fixed(std::nan(""), 2), "nan");
  for (double v : {0.1, 1.0 / 3.0, 1e-300, 123456.789}) EXPECT_EQ(std::stod(exact(v)), v);
}

TEST(Csv, WriterChecksWidthAndReaderRoundTrips) {
  test::TempDir dir("csv");
  {
    CsvWriter w(dir / "t.csv", {"a", "b"});
    w.row({"1", "x"});
    EXPECT_ANY_THROW(w.row({"1"}));
  }
  const CsvTable t = read_csv(dir / "t.csv");
  EXPECT_EQ(t.require("b"), 1u);
  EXPECT_EQ(t.rows.at(0).at(1), "x");
  EXPECT_FALSE(t.column("c"));
  EXPECT_ANY_THROW(t.require("c"));
}

TEST(Report, AnalysisArtifactsExist) {
  const fs::path run = analyzed_run();
  for (const char* f : {"recon_curve.csv", "spectra.csv", "variance.csv", "kstar.csv", "entropy.csv", "analysis.json"})
    EXPECT_TRUE(fs::exists(run / "analysis" / f)) << f;
}

TEST(Report, SummaryCarriesProvenance) {
  const ConditionSummary s = summarize(analyzed_run());
  EXPECT_EQ(s.weight_decay, 1.0);
  for (const Cell& c : s.baseline) {
    ASSERT_TRUE(c.value);
    EXPECT_FALSE(c.source.empty());
  }
  EXPECT_TRUE(s.entropy.value);
  EXPECT_TRUE(s.mean_si.present());
  EXPECT_TRUE(s.joint_full.value);
  // The full joint reconstruction reproduces the baseline.
  double base = 0.0;
  for (const Cell& c : s.baseline) base += *c.value / 3.0;
  EXPECT_NEAR(*s.joint_full.value, base, 1e-6);
}

TEST(Report, EmissionIsDeterministic) {
  test::TempDir a("emit"), b("emit");
  const std::vector<fs::path> dirs{analyzed_run().parent_path()};
  const auto runs = collect_runs(dirs);
  ASSERT_EQ(runs.size(), 1u);
  std::vector<ConditionSummary> s1, s2;
  for (const auto& r : runs) s1.push_back(summarize(r));
  for (const auto& r : runs) s2.push_back(summarize(r));
  emit_tables(s1, a.path());
  emit_tables(s2, b.path());
  for (const char* f : {"summary.csv", "tables/table2.csv", "tables/table3.csv", "tables/table4.csv",
                        "tables/table5.csv", "tables/table6.csv"}) {
    const std::string x = read_text(a / f);
    EXPECT_FALSE(x.empty()) << f;
    EXPECT_EQ(x, read_text(b / f)) << f;
  }
}

TEST(Report, AnalysisIsIdempotent) {
  const fs::path run = analyzed_run();
  test::TempDir again("again");
  AnalyzeOptions a;
  a.ranks = {1, 2, 4, 8, 16, 64};
  a.kmax = 10;
  analyze_run(run, again.path(), a);
  for (const char* f : {"recon_curve.csv", "spectra.csv", "variance.csv", "kstar.csv", "entropy.csv"})
    EXPECT_EQ(read_text(run / "analysis" / f), read_text(again / f)) << f;
}

TEST(Report, MissingArtifactsStayMissing) {
  test::TempDir dir("bare");
  const fs::path run = dir / "bare_run";
  fs::create_directories(run);
  for (const char* f : {"record.json", "run.meta", "metrics.csv"}) fs::copy_file(test::shared_run() / f, run / f);
  const ConditionSummary s = summarize(run);
  EXPECT_FALSE(s.kstar95.present());
  EXPECT_FALSE(s.mean_si.present());
  EXPECT_TRUE(s.mean_si.source.empty());
  emit_tables({s}, dir / "out");
  const CsvTable t = read_csv(dir / "out" / "summary.csv");
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.rows[0][t.require("mean_si")], "missing");
  EXPECT_EQ(t.rows[0][t.require("pm_r64")], "missing");
}

}  // namespace
}  // namespace grok

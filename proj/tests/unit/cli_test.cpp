#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <string>
#include <sys/wait.h>

#include "support.hpp"

namespace {

struct Result {
  int code = -1;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(GROK_CLI_PATH) + " " + args + " 2>&1";
  Result r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  while (std::fgets(buf, sizeof buf, p)) r.out += buf;
  const int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

TEST(Cli, UnknownFlagIsUsageError) {
  const Result r = run("train --model baseline --bogus 1 --out /tmp/x");
  EXPECT_EQ(r.code, 2) << r.out;
}

TEST(Cli, BadValueIsUsageError) {
  EXPECT_EQ(run("train --model baseline --wd notanumber --out /tmp/x").code, 2);
  EXPECT_EQ(run("probe /tmp --scope sideways").code, 2);
}

TEST(Cli, RunDirectoryProblems) {
  grok::test::TempDir dir("cli");
  EXPECT_EQ(run("analyze " + (dir / "absent").string()).code, 2);
  const Result r = run("analyze " + dir.path().string());
  EXPECT_EQ(r.code, 1) << r.out;
  EXPECT_NE(r.out.find("error"), std::string::npos);
}

TEST(Cli, VersionAndHelp) {
  EXPECT_EQ(run("--help").code, 0);
  const Result v = run("--version");
  EXPECT_EQ(v.code, 0);
  EXPECT_NE(v.out.find("0.1.0"), std::string::npos);
}

TEST(Cli, VerifySubsetPasses) {
  const Result r = run("verify --only counts,artifacts");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("PASS counts"), std::string::npos) << r.out;
}

TEST(Cli, TrainAnalyzeProbeReportPipeline) {
  grok::test::TempDir dir("pipe");
  const std::string cfg = (dir / "c.json").string();
  {
    std::FILE* f = std::fopen(cfg.c_str(), "w");
    std::fputs(R"({"d_model": 16, "n_layers": 1, "n_heads": 2, "d_ff": 32, "P": 11, "eval_every": 20})", f);
    std::fclose(f);
  }
  const std::string run_dir = (dir / "r").string();
  ASSERT_EQ(run("train --config " + cfg + " --max-steps 120 --quiet --out " + run_dir).code, 0);
  ASSERT_EQ(run("analyze " + run_dir + " --ranks 1,2,4 --kmax 5").code, 0);
  ASSERT_EQ(run("probe " + run_dir + " --k 2 --sample 8").code, 0);
  const Result rep = run("report " + run_dir + " --out " + (dir / "rep").string());
  EXPECT_EQ(rep.code, 0) << rep.out;
  EXPECT_TRUE(std::filesystem::exists(dir / "rep" / "summary.csv"));
}

}  // namespace

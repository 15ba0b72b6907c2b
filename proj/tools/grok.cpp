// grok: train, sweep, analyze, probe, report and verify over run directories.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "grok/ckpt.hpp"
#include "grok/config.hpp"
#include "grok/probes.hpp"
#include "grok/recon.hpp"
#include "grok/report.hpp"
#include "grok/runtime.hpp"
#include "grok/train.hpp"
#include "grok/verify.hpp"

namespace {

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainFlags {
  std::string config;
  std::string model;
  std::optional<double> wd;
  std::optional<std::int64_t> max_steps;
  std::optional<std::uint64_t> init_seed;
  std::optional<std::uint64_t> split_seed;
  bool quiet = false;
};

void add_train_flags(CLI::App* cmd, TrainFlags& f) {
  cmd->add_option("--config", f.config, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--model", f.model, "model preset (baseline, medium, large)");
  cmd->add_option("--max-steps", f.max_steps, "override max_steps");
  cmd->add_option("--init-seed", f.init_seed, "override init_seed");
  cmd->add_option("--split-seed", f.split_seed, "override split_seed");
  cmd->add_flag("--quiet", f.quiet, "no progress lines");
}

grok::RunConfig resolve(const TrainFlags& f) {
  grok::RunConfig cfg = f.config.empty() ? grok::parse_run_config("{}") : grok::load_run_config(f.config);
  if (!f.model.empty()) cfg.model = grok::model_preset(f.model);
  if (f.wd) cfg.train.weight_decay = *f.wd;
  if (f.max_steps) cfg.train.max_steps = *f.max_steps;
  if (f.init_seed) cfg.train.init_seed = *f.init_seed;
  if (f.split_seed) cfg.train.split_seed = *f.split_seed;
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

grok::TrainHooks progress(bool quiet, const std::string& label) {
  grok::TrainHooks h;
  if (quiet) return h;
  h.on_eval = [label](const grok::MetricRow& m) {
    if (m.step % 1000 != 0) return;
    std::fprintf(stderr, "%s step %lld loss %.4f train %.3f/%.3f/%.3f test %.3f/%.3f/%.3f\n", label.c_str(),
                 static_cast<long long>(m.step), m.loss, m.train_acc[0], m.train_acc[1], m.train_acc[2],
                 m.test_acc[0], m.test_acc[1], m.test_acc[2]);
  };
  return h;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    if (used != item.size()) throw CLI::ValidationError("--wd", "not a number: " + item);
    out.push_back(v);
  }
  return out;
}

std::vector<std::string> split_names(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

int cmd_train(const TrainFlags& f, const std::string& out) {
  const grok::RunConfig cfg = resolve(f);
  const grok::RunRecord r = grok::train(cfg.model, cfg.train, out, progress(f.quiet, out));
  std::printf("status=%s grok_step=%s checkpoints=%zu run=%s\n", std::string(grok::status_name(r.status)).c_str(),
              r.grok_step ? std::to_string(*r.grok_step).c_str() : "none", r.checkpoints.size(), out.c_str());
  if (r.status == grok::RunStatus::Diverged) throw Failure("training diverged: " + r.error);
  return 0;
}

int cmd_sweep(const TrainFlags& f, const std::string& wd, const std::string& models, const std::string& out,
              int jobs) {
  const grok::RunConfig cfg = resolve(f);
  const std::vector<double> decays = parse_list(wd);
  const std::vector<std::string> tags = split_names(models);
  for (const auto& t : tags) grok::model_preset(t);
  const auto items = grok::sweep(tags, decays, cfg.train, out, jobs, progress(f.quiet, "sweep"));
  int failed = 0;
  for (const auto& it : items) {
    if (!it.error.empty()) {
      ++failed;
      std::printf("run=%s status=failed error=\"%s\"\n", it.run_dir.string().c_str(), it.error.c_str());
    } else {
      std::printf("run=%s status=%s grok_step=%s\n", it.run_dir.string().c_str(),
                  std::string(grok::status_name(it.record->status)).c_str(),
                  it.record->grok_step ? std::to_string(*it.record->grok_step).c_str() : "none");
    }
  }
  if (failed) throw Failure(std::to_string(failed) + " of " + std::to_string(items.size()) + " runs failed");
  return 0;
}

std::vector<std::size_t> parse_ranks(const std::string& s) {
  std::vector<std::size_t> out;
  for (double v : parse_list(s)) {
    if (v < 1 || v != std::floor(v)) throw std::invalid_argument("--ranks: not a positive integer");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

void require_run(const std::string& run) {
  if (grok::list_checkpoints(run).empty()) throw Failure("no checkpoints in " + run);
}

int cmd_analyze(const std::string& run, const std::string& out, const std::string& scope, const std::string& ranks,
                std::size_t kmax) {
  require_run(run);
  grok::AnalyzeOptions opt;
  opt.scope = grok::scope_from_name(scope);
  if (!ranks.empty()) opt.ranks = parse_ranks(ranks);
  opt.kmax = kmax;
  const std::string dir = out.empty() ? (std::filesystem::path(run) / "analysis").string() : out;
  const grok::AnalysisReport rep = grok::analyze_run(run, dir, opt);
  std::printf("baseline_mean=%.4f", grok::mean_of(rep.baseline));
  for (const auto& k : rep.kstar)
    std::printf(" kstar_%s_%.2f=%s", std::string(grok::scope_name(k.scope)).c_str(), k.threshold,
                k.k ? std::to_string(*k.k).c_str() : ">kmax");
  std::printf(" pc1_fraction=%.4f k90_pct=%.1f entropy=%.4f out=%s\n", rep.bases.front().variance.front(),
              rep.mean_k90_pct, rep.mean_entropy, dir.c_str());
  return 0;
}

int cmd_probe(const std::string& run, const std::string& out, const std::string& scope, std::size_t k,
              std::size_t sample, std::uint64_t seed, bool center, bool raw) {
  require_run(run);
  grok::ProbeOptions opt;
  opt.k = k;
  opt.sample = sample;
  opt.seed = seed;
  opt.center = center;
  opt.raw = raw;
  if (scope == "all") opt.scopes = {grok::ProbeScope::FullVector, grok::ProbeScope::TrunkInterior};
  else opt.scopes = {grok::probe_scope_from_name(scope)};
  const std::string dir = out.empty() ? (std::filesystem::path(run) / "probes").string() : out;
  const grok::ProbeReport rep = grok::probe_run(run, dir, opt);
  for (auto s : opt.scopes) {
    const auto si = rep.mean_si(s);
    std::printf("mean_si_%s=%s ", std::string(grok::probe_scope_name(s)).c_str(),
                si ? std::to_string(*si).c_str() : "missing");
  }
  std::printf("mean_overlap=%.4f out=%s\n", rep.mean_overlap(), dir.c_str());
  return 0;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& out) {
  std::vector<std::filesystem::path> in(dirs.begin(), dirs.end());
  const auto runs = grok::collect_runs(in);
  std::vector<grok::ConditionSummary> rows;
  for (const auto& r : runs) rows.push_back(grok::summarize(r));
  const std::string dir = out.empty() ? dirs.front() : out;
  grok::emit_tables(rows, dir);
  std::printf("runs=%zu out=%s\n", rows.size(), dir.c_str());
  return 0;
}

int cmd_verify(const std::vector<std::string>& only, std::uint64_t seed) {
  grok::VerifyOptions opt;
  opt.only = only;
  opt.seed = seed;
  int failed = 0;
  grok::run_verify(opt, [&](const grok::CheckResult& r) {
    std::printf("%s %-10s %s\n", r.passed ? "PASS" : "FAIL", r.id.c_str(), r.detail.c_str());
    std::fflush(stdout);
    failed += !r.passed;
  });
  if (failed) throw Failure(std::to_string(failed) + " verification check(s) failed");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"grok: multi-task grokking runs and their low-rank analysis"};
  app.require_subcommand(1);
  app.set_version_flag("--version", grok::version());

  TrainFlags tf;
  std::string train_out;
  auto* train = app.add_subcommand("train", "train one run into a run directory");
  add_train_flags(train, tf);
  train->add_option("--wd", tf.wd, "override weight_decay");
  train->add_option("--out", train_out, "run directory")->required();

  TrainFlags sf;
  std::string sweep_out, sweep_wd = "0.1,0.2,0.3,0.5,1.0", sweep_models = "baseline";
  int jobs = 1;
  auto* sw = app.add_subcommand("sweep", "one run per (model, weight decay)");
  add_train_flags(sw, sf);
  sw->add_option("--wd", sweep_wd, "comma-separated weight decays");
  sw->add_option("--models", sweep_models, "comma-separated model presets");
  sw->add_option("--jobs", jobs, "concurrent runs")->check(CLI::PositiveNumber);
  sw->add_option("--out", sweep_out, "output directory")->required();

  std::string an_run, an_out, an_scope = "trunk", an_ranks;
  std::size_t an_kmax = 30;
  auto* analyze = app.add_subcommand("analyze", "reconstruction and spectral analysis of a run");
  analyze->add_option("run_dir", an_run, "run directory")->required()->check(CLI::ExistingDirectory);
  analyze->add_option("--scope", an_scope, "comparison scope: trunk or full")
      ->check(CLI::IsMember({"trunk", "full"}));
  analyze->add_option("--ranks", an_ranks, "comma-separated per-matrix ranks");
  analyze->add_option("--kmax", an_kmax, "largest trajectory k")->check(CLI::PositiveNumber);
  analyze->add_option("--out", an_out, "output directory (default <run_dir>/analysis)");

  std::string pr_run, pr_out, pr_scope = "full";
  std::size_t pr_k = 10, pr_sample = 256;
  std::uint64_t pr_seed = 0;
  bool pr_center = false, pr_raw = false;
  auto* probe = app.add_subcommand("probe", "gradient-subspace ablation probes of a run");
  probe->add_option("run_dir", pr_run, "run directory")->required()->check(CLI::ExistingDirectory);
  probe->add_option("--k", pr_k, "directions per task")->check(CLI::PositiveNumber);
  probe->add_option("--scope", pr_scope, "full, trunk-interior or all")
      ->check(CLI::IsMember({"full", "trunk-interior", "all"}));
  probe->add_option("--sample", pr_sample, "training examples per task")->check(CLI::PositiveNumber);
  probe->add_option("--seed", pr_seed, "sampling seed");
  probe->add_flag("--center", pr_center, "center the gradient covariance");
  probe->add_flag("--raw", pr_raw, "ablate the final vector instead of the delta");
  probe->add_option("--out", pr_out, "output directory (default <run_dir>/probes)");

  std::vector<std::string> rep_dirs;
  std::string rep_out;
  auto* report = app.add_subcommand("report", "summary and table CSVs over analyzed runs");
  report->add_option("dirs", rep_dirs, "run or sweep directories")->required()->check(CLI::ExistingDirectory);
  report->add_option("--out", rep_out, "output directory (default: first input)");

  std::vector<std::string> ver_only;
  std::uint64_t ver_seed = 0;
  auto* verify = app.add_subcommand("verify", "training-free numerical self-checks");
  verify->add_option("--only", ver_only, "check ids to run")->delimiter(',');
  verify->add_option("--seed", ver_seed, "seed for random inputs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::fprintf(stderr, "error: usage: %s\n", e.what());
    std::cerr << app.help();
    return 2;
  }

  grok::set_threads(grok::configured_threads());
  try {
    if (*train) return cmd_train(tf, train_out);
    if (*sw) return cmd_sweep(sf, sweep_wd, sweep_models, sweep_out, jobs);
    if (*analyze) return cmd_analyze(an_run, an_out, an_scope, an_ranks, an_kmax);
    if (*probe) return cmd_probe(pr_run, pr_out, pr_scope, pr_k, pr_sample, pr_seed, pr_center, pr_raw);
    if (*report) return cmd_report(rep_dirs, rep_out);
    if (*verify) return cmd_verify(ver_only, ver_seed);
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: usage: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}

#include "grok/train.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "grok/ckpt.hpp"
#include "grok/config.hpp"
#include "grok/csv.hpp"
#include "grok/runtime.hpp"
#include "json.hpp"

namespace grok {

using nlohmann::json;

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("train config: " + what); };
  if (!(lr > 0.0)) fail("lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) fail("beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) fail("beta2 must lie in [0, 1)");
  if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (!(grok_threshold > 0.0 && grok_threshold < 1.0)) fail("grok_threshold must lie in (0, 1)");
  if (max_steps < 0) fail("max_steps must be non-negative");
  if (eval_every < 1) fail("eval_every must be at least 1");
  if (!(ckpt_growth > 1.0)) fail("ckpt_growth must exceed 1");
  if (!(ckpt_band > 0.0 && ckpt_band <= 1.0)) fail("ckpt_band must lie in (0, 1]");
  if (max_checkpoints < 2) fail("max_checkpoints must be at least 2");
}

AdamW::AdamW(const TrainConfig& cfg, std::vector<float> decay_scale)
    : cfg_(cfg), decay_scale_(std::move(decay_scale)), m_(decay_scale_.size(), 0.0f),
      v_(decay_scale_.size(), 0.0f) {}

void AdamW::step(std::span<float> params, std::span<const float> grads) {
  const std::size_t n = decay_scale_.size();
  if (params.size() != n || grads.size() != n) throw TrainError("AdamW: size mismatch");
  ++t_;
  const double b1 = cfg_.beta1;
  const double b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double lr = cfg_.lr;
  const double lr_wd = cfg_.lr * cfg_.weight_decay;
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads[i];
    const double m = b1 * m_[i] + (1.0 - b1) * g;
    const double v = b2 * v_[i] + (1.0 - b2) * g * g;
    m_[i] = static_cast<float>(m);
    v_[i] = static_cast<float>(v);
    const double mhat = m / c1;
    const double vhat = v / c2;
    const double theta = params[i];
    params[i] = static_cast<float>(theta * (1.0 - lr_wd * decay_scale_[i]) -
                                   lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps));
  }
}

std::vector<float> decay_scale_for(const ParamLayout& layout, bool decay_norms_and_biases) {
  std::vector<float> s(layout.total(), 1.0f);
  if (decay_norms_and_biases) return s;
  for (const TensorSpec& t : layout.tensors())
    if (t.shape.size() == 1) std::fill_n(s.begin() + static_cast<std::ptrdiff_t>(t.offset), t.size, 0.0f);
  return s;
}

std::string_view status_name(RunStatus s) {
  switch (s) {
    case RunStatus::Grokked: return "grokked";
    case RunStatus::MaxSteps: return "max_steps";
    case RunStatus::Diverged: return "diverged";
    case RunStatus::Running: return "running";
  }
  return "unknown";
}

namespace {

RunStatus status_from_name(std::string_view s) {
  for (RunStatus r : {RunStatus::Grokked, RunStatus::MaxSteps, RunStatus::Diverged, RunStatus::Running})
    if (status_name(r) == s) return r;
  throw std::runtime_error("unknown run status '" + std::string(s) + "'");
}

}  // namespace

CheckpointSchedule::CheckpointSchedule(double growth, double band, std::int64_t cap)
    : growth_(growth), band_(band), cap_(cap) {}

bool CheckpointSchedule::want(std::int64_t step,
                              const std::optional<std::array<double, kNumTasks>>& test_acc) {
  bool crossed = false;
  if (test_acc) {
    std::array<int, kNumTasks> bands{};
    for (int t = 0; t < kNumTasks; ++t)
      bands[static_cast<std::size_t>(t)] = static_cast<int>(std::floor((*test_acc)[static_cast<std::size_t>(t)] / band_));
    crossed = bands_ && *bands_ != bands;
    bands_ = bands;
  }
  if (!last_) return true;
  if (step <= *last_) return false;
  // One slot stays reserved for the final step.
  if (count_ >= cap_ - 1) return false;
  return crossed || static_cast<double>(step) >= growth_ * static_cast<double>(*last_);
}

void CheckpointSchedule::captured(std::int64_t step) {
  last_ = step;
  ++count_;
}

namespace {

const std::vector<std::string> kMetricHeader = {
    "step",         "loss",        "acc_add_train", "acc_mul_train",
    "acc_quad_train", "acc_add_test", "acc_mul_test",  "acc_quad_test"};

json record_json(const RunRecord& r) {
  json j;
  j["model"] = json::parse(model_config_json(r.model));
  j["model_tag"] = preset_name(r.model);
  j["train"] = json::parse(train_config_json(r.train));
  j["status"] = std::string(status_name(r.status));
  j["grok_step"] = r.grok_step ? json(*r.grok_step) : json(nullptr);
  json per = json::object();
  for (TaskId t : kAllTasks) {
    const auto& g = r.task_grok_step[index_of(t)];
    per[std::string(task_name(t))] = g ? json(*g) : json(nullptr);
  }
  j["task_grok_step"] = per;
  j["checkpoints"] = r.checkpoints;
  j["final_step"] = r.metrics.empty() ? json(nullptr) : json(r.metrics.back().step);
  if (!r.error.empty()) j["error"] = r.error;
  return j;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw TrainError("cannot write " + tmp.string());
    out << text << '\n';
  }
  std::filesystem::rename(tmp, path);
}

void write_run_meta(const std::filesystem::path& run_dir, const ModelConfig& model, const TrainConfig& cfg) {
  json j;
  j["config"] = json::parse(to_json_text(RunConfig{model, cfg}));
  j["model_tag"] = preset_name(model);
  j["init_seed"] = cfg.init_seed;
  j["split_seed"] = cfg.split_seed;
  j["parameter_count"] = parameter_count(model);
  j["version"] = version();
  j["threads"] = configured_threads();
  j["checkpoint_format"] = kCheckpointVersion;
  write_text_atomic(run_dir / "run.meta", j.dump(2));
}

std::vector<std::string> metric_fields(const MetricRow& m) {
  std::vector<std::string> f{std::to_string(m.step), exact(m.loss)};
  for (double a : m.train_acc) f.push_back(exact(a));
  for (double a : m.test_acc) f.push_back(exact(a));
  return f;
}

}  // namespace

RunRecord train(const ModelConfig& model, const TrainConfig& cfg, const Split& data,
                const std::filesystem::path& run_dir, const TrainHooks& hooks) {
  model.validate();
  cfg.validate();
  if (data.train.modulus != model.P || data.test.modulus != model.P)
    throw TrainError("dataset modulus does not match model P");

  std::filesystem::create_directories(run_dir / "ckpt");
  write_run_meta(run_dir, model, cfg);

  RunRecord rec;
  rec.model = model;
  rec.train = cfg;

  ParamSet<float> params = init_params(model, cfg.init_seed);
  ParamSet<float> grads(model);
  AdamW opt(cfg, decay_scale_for(params.layout(), cfg.decay_norms_and_biases));
  Engine<float> train_engine(model);
  Engine<float> test_engine(model);
  const Batch train_batch = batch_of(data.train);
  const Batch test_batch = batch_of(data.test);
  CheckpointSchedule schedule(cfg.ckpt_growth, cfg.ckpt_band, cfg.max_checkpoints);
  CsvWriter metrics(run_dir / "metrics.csv", kMetricHeader);

  auto save = [&](std::int64_t step) {
    save_checkpoint(checkpoint_path(run_dir, step), params,
                    CheckpointMeta{model, step, cfg.init_seed, cfg.split_seed});
    schedule.captured(step);
    rec.checkpoints.push_back(step);
  };

  std::int64_t step = 0;
  try {
    for (;; ++step) {
      const LossReport rep = train_engine.loss_and_grads(params, train_batch, grads);
      if (!std::isfinite(rep.loss))
        throw ModelError("non-finite loss at step " + std::to_string(step));

      std::optional<std::array<double, kNumTasks>> test_acc;
      bool grokked = false;
      if (step % cfg.eval_every == 0 || step == cfg.max_steps) {
        const LossReport test = test_engine.evaluate(params, test_batch);
        test_acc = test.task_acc;
        MetricRow row{step, rep.loss, rep.task_acc, test.task_acc};
        rec.metrics.push_back(row);
        metrics.row(metric_fields(row));
        metrics.flush();
        grokked = true;
        for (std::size_t t = 0; t < kNumTasks; ++t) {
          const bool above = test.task_acc[t] > cfg.grok_threshold;
          if (above && !rec.task_grok_step[t]) rec.task_grok_step[t] = step;
          grokked = grokked && above;
        }
        if (grokked) rec.grok_step = step;
        if (hooks.on_eval) hooks.on_eval(row);
      }

      const bool last = grokked || step == cfg.max_steps;
      if (last || schedule.want(step, test_acc)) save(step);
      if (last) {
        rec.status = grokked ? RunStatus::Grokked : RunStatus::MaxSteps;
        break;
      }
      if (test_acc) write_text_atomic(run_dir / "record.json", record_json(rec).dump(2));
      opt.step(params.values(), grads.values());
    }
  } catch (const ModelError& e) {
    rec.status = RunStatus::Diverged;
    rec.error = e.what();
  }
  write_text_atomic(run_dir / "record.json", record_json(rec).dump(2));
  return rec;
}

RunRecord train(const ModelConfig& model, const TrainConfig& cfg, const std::filesystem::path& run_dir,
                const TrainHooks& hooks) {
  return train(model, cfg, generate(model.P, cfg.split_seed), run_dir, hooks);
}

template <class T>
Evaluation evaluate(const ParamSet<T>& params, const Dataset& data) {
  Engine<T> engine(params.config());
  const LossReport rep = engine.evaluate(params, batch_of(data));
  return {rep.task_acc, rep.loss};
}

template Evaluation evaluate(const ParamSet<float>&, const Dataset&);
template Evaluation evaluate(const ParamSet<double>&, const Dataset&);

std::string sweep_run_name(std::string_view model_tag, double weight_decay) {
  char buf[32];
  if (weight_decay == std::floor(weight_decay))
    std::snprintf(buf, sizeof buf, "%.1f", weight_decay);
  else
    std::snprintf(buf, sizeof buf, "%g", weight_decay);
  return std::string(model_tag) + "_wd" + buf;
}

std::vector<SweepItem> sweep(std::span<const std::string> model_tags, std::span<const double> decays,
                             const TrainConfig& base, const std::filesystem::path& out_dir, int jobs,
                             const TrainHooks& hooks) {
  std::vector<SweepItem> items;
  for (const std::string& tag : model_tags)
    for (double wd : decays) {
      SweepItem it;
      it.model_tag = tag;
      it.weight_decay = wd;
      it.run_dir = out_dir / sweep_run_name(tag, wd);
      items.push_back(std::move(it));
    }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < items.size(); i = next++) {
      SweepItem& it = items[i];
      try {
        TrainConfig cfg = base;
        cfg.weight_decay = it.weight_decay;
        it.record = train(model_preset(it.model_tag), cfg, it.run_dir, hooks);
        if (it.record->status == RunStatus::Diverged) it.error = it.record->error;
      } catch (const std::exception& e) {
        it.error = e.what();
      }
    }
  };
  const std::size_t n_workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(jobs, 1)), items.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  return items;
}

std::vector<MetricRow> read_metrics(const std::filesystem::path& run_dir) {
  const CsvTable t = read_csv(run_dir / "metrics.csv");
  std::vector<std::size_t> cols;
  for (const auto& h : kMetricHeader) cols.push_back(t.require(h));
  std::vector<MetricRow> rows;
  for (const auto& r : t.rows) {
    MetricRow m;
    m.step = std::stoll(r[cols[0]]);
    m.loss = std::stod(r[cols[1]]);
    for (std::size_t k = 0; k < kNumTasks; ++k) {
      m.train_acc[k] = std::stod(r[cols[2 + k]]);
      m.test_acc[k] = std::stod(r[cols[5 + k]]);
    }
    rows.push_back(m);
  }
  return rows;
}

RunRecord load_run_record(const std::filesystem::path& run_dir) {
  std::ifstream in(run_dir / "record.json");
  if (!in) throw TrainError(run_dir.string() + ": no record.json");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw TrainError(run_dir.string() + "/record.json: " + e.what());
  }
  RunRecord r;
  r.model = model_config_from_json(j.at("model").dump());
  r.train = train_config_from_json(j.at("train").dump());
  r.status = status_from_name(j.at("status").get<std::string>());
  if (!j.at("grok_step").is_null()) r.grok_step = j.at("grok_step").get<std::int64_t>();
  for (TaskId t : kAllTasks) {
    const auto& v = j.at("task_grok_step").at(std::string(task_name(t)));
    if (!v.is_null()) r.task_grok_step[index_of(t)] = v.get<std::int64_t>();
  }
  r.checkpoints = j.at("checkpoints").get<std::vector<std::int64_t>>();
  r.error = j.value("error", std::string());
  r.metrics = read_metrics(run_dir);
  return r;
}

}  // namespace grok

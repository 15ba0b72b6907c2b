#include "grok/config.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace grok {

using nlohmann::json;

namespace {

json model_to_json(const ModelConfig& m) {
  return json{{"d_model", m.d_model}, {"n_layers", m.n_layers}, {"n_heads", m.n_heads},
              {"d_ff", m.d_ff},       {"P", m.P},               {"n_tasks", m.n_tasks}};
}

json train_to_json(const TrainConfig& t) {
  return json{{"lr", t.lr},
              {"beta1", t.beta1},
              {"beta2", t.beta2},
              {"adam_eps", t.adam_eps},
              {"weight_decay", t.weight_decay},
              {"decay_norms_and_biases", t.decay_norms_and_biases},
              {"max_steps", t.max_steps},
              {"grok_threshold", t.grok_threshold},
              {"eval_every", t.eval_every},
              {"ckpt_growth", t.ckpt_growth},
              {"ckpt_band", t.ckpt_band},
              {"max_checkpoints", t.max_checkpoints},
              {"init_seed", t.init_seed},
              {"split_seed", t.split_seed}};
}

template <class V>
void take(const json& j, const char* key, V& dst) {
  if (j.contains(key)) dst = j.at(key).get<V>();
}

void apply_model(const json& j, ModelConfig& m) {
  take(j, "d_model", m.d_model);
  take(j, "n_layers", m.n_layers);
  take(j, "n_heads", m.n_heads);
  take(j, "d_ff", m.d_ff);
  take(j, "P", m.P);
  take(j, "n_tasks", m.n_tasks);
}

void apply_train(const json& j, TrainConfig& t) {
  take(j, "lr", t.lr);
  take(j, "beta1", t.beta1);
  take(j, "beta2", t.beta2);
  take(j, "adam_eps", t.adam_eps);
  take(j, "weight_decay", t.weight_decay);
  take(j, "decay_norms_and_biases", t.decay_norms_and_biases);
  take(j, "max_steps", t.max_steps);
  take(j, "grok_threshold", t.grok_threshold);
  take(j, "eval_every", t.eval_every);
  take(j, "ckpt_growth", t.ckpt_growth);
  take(j, "ckpt_band", t.ckpt_band);
  take(j, "max_checkpoints", t.max_checkpoints);
  take(j, "init_seed", t.init_seed);
  take(j, "split_seed", t.split_seed);
}

const char* const kKnownKeys[] = {
    "model", "d_model", "n_layers", "n_heads", "d_ff", "P", "n_tasks", "lr", "beta1", "beta2",
    "adam_eps", "weight_decay", "decay_norms_and_biases", "max_steps", "grok_threshold",
    "eval_every", "ckpt_growth", "ckpt_band", "max_checkpoints", "init_seed", "split_seed"};

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  for (const auto& [key, value] : j.items()) {
    bool known = false;
    for (const char* k : kKnownKeys) known = known || key == k;
    if (!known) throw std::invalid_argument("config: unknown key '" + key + "'");
  }
  RunConfig cfg;
  try {
    if (j.contains("model")) cfg.model = model_preset(j.at("model").get<std::string>());
    apply_model(j, cfg.model);
    apply_train(j, cfg.train);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  cfg.model.validate();
  cfg.train.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string to_json_text(const RunConfig& cfg) {
  json j = model_to_json(cfg.model);
  j.update(train_to_json(cfg.train));
  return j.dump(2);
}

std::string model_config_json(const ModelConfig& cfg) { return model_to_json(cfg).dump(); }

ModelConfig model_config_from_json(const std::string& text) {
  ModelConfig m;
  apply_model(json::parse(text), m);
  m.validate();
  return m;
}

std::string train_config_json(const TrainConfig& cfg) { return train_to_json(cfg).dump(); }

TrainConfig train_config_from_json(const std::string& text) {
  TrainConfig t;
  apply_train(json::parse(text), t);
  t.validate();
  return t;
}

}  // namespace grok

#include "grok/ckpt.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <functional>
#include <regex>

#include "grok/config.hpp"
#include "json.hpp"

namespace grok {

static_assert(std::endian::native == std::endian::little, "GRKC I/O assumes a little-endian host");

namespace {

constexpr char kMagic[4] = {'G', 'R', 'K', 'C'};

template <class U>
U to_le(U v) {
  return v;
}

class Writer {
 public:
  explicit Writer(std::ofstream& out) : out_(out) {}
  template <class U>
  void put(U v) {
    v = to_le(v);
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void bytes(const void* p, std::size_t n) { out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n)); }

 private:
  std::ofstream& out_;
};

class Reader {
 public:
  Reader(std::vector<char> buf, std::string label) : buf_(std::move(buf)), label_(std::move(label)) {}
  template <class U>
  U get() {
    U v;
    need(sizeof v);
    std::memcpy(&v, buf_.data() + pos_, sizeof v);
    pos_ += sizeof v;
    return to_le(v);
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  const char* take(std::size_t n) {
    need(n);
    const char* p = buf_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw CheckpointError(label_ + ": truncated file");
  }
  std::vector<char> buf_;
  std::string label_;
  std::size_t pos_ = 0;
};

std::string meta_text(const CheckpointMeta& m) {
  nlohmann::json j;
  j["model"] = nlohmann::json::parse(model_config_json(m.model));
  j["step"] = m.step;
  j["init_seed"] = m.init_seed;
  j["split_seed"] = m.split_seed;
  return j.dump();
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamSet<float>& params,
                     const CheckpointMeta& meta) {
  if (params.config() != meta.model) throw CheckpointError("save: metadata config differs from params");
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("save: cannot open " + tmp.string());
    Writer w(out);
    w.bytes(kMagic, 4);
    w.put<std::uint32_t>(kCheckpointVersion);
    const std::string text = meta_text(meta);
    w.put<std::uint64_t>(text.size());
    w.bytes(text.data(), text.size());
    const auto tensors = params.layout().tensors();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
    for (const TensorSpec& t : tensors) {
      w.put<std::uint32_t>(static_cast<std::uint32_t>(t.name.size()));
      w.bytes(t.name.data(), t.name.size());
      w.put<std::uint8_t>(kDtypeF32);
      w.put<std::uint32_t>(static_cast<std::uint32_t>(t.shape.size()));
      for (std::size_t dim : t.shape) w.put<std::uint64_t>(dim);
      const float* src = params.data() + t.offset;
      w.bytes(src, t.size * sizeof(float));
    }
    if (!out) throw CheckpointError("save: write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const std::string label = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(label + ": cannot open");
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(std::move(buf), label);

  if (r.str(4) != std::string(kMagic, 4)) throw CheckpointError(label + ": bad magic");
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(label + ": unsupported format version " + std::to_string(version));
  }
  const auto meta_len = r.get<std::uint64_t>();
  const std::string text = r.str(meta_len);

  CheckpointMeta meta;
  try {
    const auto j = nlohmann::json::parse(text);
    meta.model = model_config_from_json(j.at("model").dump());
    meta.step = j.at("step").get<std::int64_t>();
    meta.init_seed = j.value("init_seed", std::uint64_t{0});
    meta.split_seed = j.value("split_seed", std::uint64_t{0});
  } catch (const std::exception& e) {
    throw CheckpointError(label + ": bad metadata: " + e.what());
  }

  ParamSet<float> params(meta.model);
  const auto tensors = params.layout().tensors();
  const auto count = r.get<std::uint32_t>();
  if (count != tensors.size()) {
    throw CheckpointError(label + ": " + std::to_string(count) + " tensors, config implies " +
                          std::to_string(tensors.size()));
  }
  for (const TensorSpec& t : tensors) {
    const auto name_len = r.get<std::uint32_t>();
    const std::string name = r.str(name_len);
    if (name != t.name) throw CheckpointError(label + ": expected tensor '" + t.name + "', found '" + name + "'");
    const auto dtype = r.get<std::uint8_t>();
    if (dtype != kDtypeF32) throw CheckpointError(label + ": unknown dtype tag " + std::to_string(dtype));
    const auto rank = r.get<std::uint32_t>();
    std::vector<std::size_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.get<std::uint64_t>());
    if (shape != t.shape) throw CheckpointError(label + ": shape mismatch for '" + name + "'");
    float* dst = params.data() + t.offset;
    std::memcpy(dst, r.take(t.size * sizeof(float)), t.size * sizeof(float));
  }
  if (!r.done()) throw CheckpointError(label + ": trailing bytes after last tensor");
  return {std::move(params), meta};
}

std::filesystem::path checkpoint_path(const std::filesystem::path& run_dir, std::int64_t step) {
  return run_dir / "ckpt" / ("step_" + std::to_string(step) + ".grkc");
}

std::vector<std::int64_t> list_checkpoints(const std::filesystem::path& run_dir) {
  std::vector<std::int64_t> steps;
  const auto dir = run_dir / "ckpt";
  if (!std::filesystem::is_directory(dir)) return steps;
  static const std::regex pattern(R"(step_(\d+)\.grkc)");
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) steps.push_back(std::stoll(m[1].str()));
  }
  std::sort(steps.begin(), steps.end());
  return steps;
}

namespace {

Trajectory load_with(const std::filesystem::path& run_dir,
                     const std::function<std::vector<Range>(const ParamLayout&)>& pick) {
  Trajectory tr;
  tr.steps = list_checkpoints(run_dir);
  if (tr.steps.empty() || tr.steps.front() != 0)
    throw CheckpointError(run_dir.string() + ": missing step-0 checkpoint");
  if (tr.steps.size() < 2) throw CheckpointError(run_dir.string() + ": need at least 2 checkpoints");

  Checkpoint first = load_checkpoint(checkpoint_path(run_dir, 0));
  tr.model = first.meta.model;
  tr.ranges = pick(first.params.layout());
  tr.init = flatten(first.params);
  const std::vector<double> init_sub = gather(tr.init, tr.ranges);
  const std::size_t cols = init_sub.size();
  tr.deltas = Mat(tr.steps.size(), cols);
  for (std::size_t i = 1; i < tr.steps.size(); ++i) {
    Checkpoint c = load_checkpoint(checkpoint_path(run_dir, tr.steps[i]));
    if (c.meta.model != tr.model) {
      throw CheckpointError(run_dir.string() + ": checkpoint at step " + std::to_string(tr.steps[i]) +
                            " has a different model config");
    }
    const std::vector<double> flat = flatten(c.params);
    const std::vector<double> sub = gather(flat, tr.ranges);
    auto row = tr.deltas.row(i);
    for (std::size_t j = 0; j < cols; ++j) row[j] = sub[j] - init_sub[j];
    if (i + 1 == tr.steps.size()) tr.final_params = flat;
  }
  return tr;
}

}  // namespace

Trajectory load_trajectory(const std::filesystem::path& run_dir, Scope scope) {
  return load_with(run_dir, [scope](const ParamLayout& l) { return l.ranges(scope); });
}

Trajectory load_trajectory(const std::filesystem::path& run_dir,
                           const std::vector<std::string>& names) {
  return load_with(run_dir, [&names](const ParamLayout& l) { return l.ranges(names); });
}

}  // namespace grok

#include "grok/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "blas.hpp"
#include "grok/rng.hpp"

namespace grok {

// ---------------------------------------------------------------------------
// Configuration and layout

void ModelConfig::validate() const {
  if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0 || P < 2)
    throw ModelError("model config: all dimensions must be positive and P >= 2");
  if (d_model % n_heads != 0)
    throw ModelError("model config: d_model " + std::to_string(d_model) +
                     " not divisible by n_heads " + std::to_string(n_heads));
  if (n_tasks != kNumTasks)
    throw ModelError("model config: n_tasks must be " + std::to_string(kNumTasks));
}

ModelConfig model_preset(std::string_view tag) {
  if (tag == "baseline") return {128, 2, 4, 256, 97, kNumTasks};
  if (tag == "medium") return {128, 4, 4, 256, 97, kNumTasks};
  if (tag == "large") return {256, 4, 8, 512, 97, kNumTasks};
  throw ModelError("unknown model preset '" + std::string(tag) + "'");
}

std::string preset_name(const ModelConfig& cfg) {
  for (const char* tag : {"baseline", "medium", "large"})
    if (model_preset(tag) == cfg) return tag;
  return "custom";
}

std::string_view scope_name(Scope s) {
  switch (s) {
    case Scope::Full: return "full";
    case Scope::Trunk: return "trunk";
    case Scope::Heads: return "heads";
  }
  return "?";
}

Scope scope_from_name(std::string_view name) {
  if (name == "full" || name == "all" || name == "full-vector") return Scope::Full;
  if (name == "trunk" || name == "trunk-only" || name == "trunk-interior") return Scope::Trunk;
  if (name == "heads" || name == "heads-only") return Scope::Heads;
  throw ModelError("unknown scope '" + std::string(name) + "'");
}

std::size_t ParamLayout::add(std::string name, std::vector<std::size_t> shape, TensorGroup group,
                             int layer, int task) {
  TensorSpec t;
  t.name = std::move(name);
  t.size = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
  t.shape = std::move(shape);
  t.offset = total_;
  t.group = group;
  t.layer = layer;
  t.task = task;
  total_ += t.size;
  tensors_.push_back(std::move(t));
  return tensors_.back().offset;
}

ParamLayout::ParamLayout(const ModelConfig& cfg) : config_(cfg) {
  cfg.validate();
  const auto d = static_cast<std::size_t>(cfg.d_model);
  const auto ff = static_cast<std::size_t>(cfg.d_ff);
  const auto p = static_cast<std::size_t>(cfg.P);
  tok_emb = add("tok_emb", {p, d}, TensorGroup::Embedding, -1, -1);
  pos_emb = add("pos_emb", {2, d}, TensorGroup::Embedding, -1, -1);
  for (int l = 0; l < cfg.n_layers; ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    auto T = TensorGroup::Trunk;
    LayerOffsets o{};
    o.wq = add(pre + "attn.Wq", {d, d}, T, l, -1);
    o.bq = add(pre + "attn.bq", {d}, T, l, -1);
    o.wk = add(pre + "attn.Wk", {d, d}, T, l, -1);
    o.bk = add(pre + "attn.bk", {d}, T, l, -1);
    o.wv = add(pre + "attn.Wv", {d, d}, T, l, -1);
    o.bv = add(pre + "attn.bv", {d}, T, l, -1);
    o.wo = add(pre + "attn.Wo", {d, d}, T, l, -1);
    o.bo = add(pre + "attn.bo", {d}, T, l, -1);
    o.ln1_g = add(pre + "ln1.gain", {d}, T, l, -1);
    o.ln1_b = add(pre + "ln1.bias", {d}, T, l, -1);
    o.w1 = add(pre + "ffn.W1", {d, ff}, T, l, -1);
    o.b1 = add(pre + "ffn.b1", {ff}, T, l, -1);
    o.w2 = add(pre + "ffn.W2", {ff, d}, T, l, -1);
    o.b2 = add(pre + "ffn.b2", {d}, T, l, -1);
    o.ln2_g = add(pre + "ln2.gain", {d}, T, l, -1);
    o.ln2_b = add(pre + "ln2.bias", {d}, T, l, -1);
    layers.push_back(o);
  }
  lnf_g = add("final_ln.gain", {d}, TensorGroup::Trunk, -1, -1);
  lnf_b = add("final_ln.bias", {d}, TensorGroup::Trunk, -1, -1);
  for (int t = 0; t < cfg.n_tasks; ++t) {
    const std::string pre = "heads." + std::to_string(t) + ".";
    HeadOffsets h{};
    h.w = add(pre + "W", {d, p}, TensorGroup::Head, -1, t);
    h.b = add(pre + "b", {p}, TensorGroup::Head, -1, t);
    heads.push_back(h);
  }
}

const TensorSpec& ParamLayout::spec(std::string_view name) const {
  for (const TensorSpec& t : tensors_)
    if (t.name == name) return t;
  throw std::out_of_range("unknown tensor '" + std::string(name) + "'");
}

Range ParamLayout::span_of(std::string_view name) const {
  const TensorSpec& t = spec(name);
  return {t.offset, t.size};
}

bool ParamLayout::contains(std::string_view name) const {
  return std::any_of(tensors_.begin(), tensors_.end(),
                     [&](const TensorSpec& t) { return t.name == name; });
}

bool ParamLayout::in_scope(const TensorSpec& t, Scope s) const {
  switch (s) {
    case Scope::Full: return true;
    case Scope::Trunk: return t.group == TensorGroup::Trunk;
    case Scope::Heads: return t.group == TensorGroup::Head;
  }
  return false;
}

namespace {

void append_merged(std::vector<Range>& out, Range r) {
  if (!out.empty() && out.back().offset + out.back().size == r.offset)
    out.back().size += r.size;
  else
    out.push_back(r);
}

}  // namespace

std::vector<Range> ParamLayout::ranges(Scope s) const {
  std::vector<Range> out;
  for (const TensorSpec& t : tensors_)
    if (in_scope(t, s)) append_merged(out, {t.offset, t.size});
  return out;
}

std::vector<Range> ParamLayout::ranges(std::span<const std::string> names) const {
  for (const std::string& n : names) (void)spec(n);
  std::vector<Range> out;
  for (const TensorSpec& t : tensors_)
    if (std::find(names.begin(), names.end(), t.name) != names.end())
      append_merged(out, {t.offset, t.size});
  return out;
}

std::size_t ParamLayout::count(Scope s) const { return total_size(ranges(s)); }

std::vector<const TensorSpec*> ParamLayout::matrices(Scope s) const {
  std::vector<const TensorSpec*> out;
  for (const TensorSpec& t : tensors_)
    if (t.is_matrix() && in_scope(t, s)) out.push_back(&t);
  return out;
}

std::vector<Range> ParamLayout::layer_ranges(int layer) const {
  std::vector<Range> out;
  for (const TensorSpec& t : tensors_)
    if (t.layer == layer && t.group == TensorGroup::Trunk) append_merged(out, {t.offset, t.size});
  if (out.empty()) throw std::out_of_range("no encoder layer " + std::to_string(layer));
  return out;
}

std::vector<Range> ParamLayout::head_ranges(int task) const {
  std::vector<Range> out;
  for (const TensorSpec& t : tensors_)
    if (t.task == task) append_merged(out, {t.offset, t.size});
  if (out.empty()) throw std::out_of_range("no head " + std::to_string(task));
  return out;
}

std::size_t parameter_count(const ModelConfig& cfg) { return ParamLayout(cfg).total(); }

std::size_t total_size(std::span<const Range> ranges) {
  std::size_t n = 0;
  for (const Range& r : ranges) n += r.size;
  return n;
}

std::vector<double> gather(std::span<const double> flat, std::span<const Range> ranges) {
  std::vector<double> out;
  out.reserve(total_size(ranges));
  for (const Range& r : ranges) {
    if (r.offset + r.size > flat.size()) throw std::out_of_range("gather: range past end");
    out.insert(out.end(), flat.begin() + static_cast<std::ptrdiff_t>(r.offset),
               flat.begin() + static_cast<std::ptrdiff_t>(r.offset + r.size));
  }
  return out;
}

void scatter(std::span<const double> packed, std::span<const Range> ranges, std::span<double> flat) {
  if (packed.size() != total_size(ranges)) throw std::invalid_argument("scatter: size mismatch");
  std::size_t pos = 0;
  for (const Range& r : ranges) {
    if (r.offset + r.size > flat.size()) throw std::out_of_range("scatter: range past end");
    std::copy_n(packed.begin() + static_cast<std::ptrdiff_t>(pos), r.size,
                flat.begin() + static_cast<std::ptrdiff_t>(r.offset));
    pos += r.size;
  }
}

// ---------------------------------------------------------------------------
// ParamSet

template <class T>
ParamSet<T>::ParamSet(const ModelConfig& cfg)
    : layout_(std::make_shared<const ParamLayout>(cfg)), values_(layout_->total(), T{0}) {}

template <class T>
ParamSet<T>::ParamSet(const ModelConfig& cfg, std::vector<T> values)
    : ParamSet(std::make_shared<const ParamLayout>(cfg), std::move(values)) {}

template <class T>
ParamSet<T>::ParamSet(std::shared_ptr<const ParamLayout> layout, std::vector<T> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (values_.size() != layout_->total()) {
    throw ModelError("parameter vector has " + std::to_string(values_.size()) +
                     " entries, layout expects " + std::to_string(layout_->total()));
  }
}

template <class T>
std::span<T> ParamSet<T>::tensor(std::string_view name) {
  const Range r = layout_->span_of(name);
  return {values_.data() + r.offset, r.size};
}

template <class T>
std::span<const T> ParamSet<T>::tensor(std::string_view name) const {
  const Range r = layout_->span_of(name);
  return {values_.data() + r.offset, r.size};
}

template <class T>
std::vector<double> flatten(const ParamSet<T>& p) {
  return std::vector<double>(p.values().begin(), p.values().end());
}

template <class T>
ParamSet<T> unflatten(std::span<const double> flat, const ModelConfig& cfg) {
  return ParamSet<T>(cfg, std::vector<T>(flat.begin(), flat.end()));
}

ParamSet<float> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ParamSet<float> p(cfg);
  SplitMix64 rng(seed);
  for (const TensorSpec& t : p.layout().tensors()) {
    float* dst = p.data() + t.offset;
    const bool gain = t.name.ends_with(".gain");
    if (t.group == TensorGroup::Embedding) {
      for (std::size_t i = 0; i < t.size; ++i) dst[i] = static_cast<float>(0.02 * rng.normal());
    } else if (t.is_matrix()) {
      const double sd = 1.0 / std::sqrt(static_cast<double>(t.rows()));
      for (std::size_t i = 0; i < t.size; ++i) dst[i] = static_cast<float>(sd * rng.normal());
    } else {
      std::fill_n(dst, t.size, gain ? 1.0f : 0.0f);
    }
  }
  return p;
}

Batch batch_of(const Dataset& d) {
  Batch b;
  b.inputs = d.pairs;
  for (TaskId t : kAllTasks) b.labels[static_cast<std::size_t>(index_of(t))] = d.labels_of(t);
  return b;
}

double mean_of(const std::array<double, kNumTasks>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------
// Engine

namespace {

template <class T>
void resize(std::vector<T>& v, std::size_t n) {
  if (v.size() != n) v.assign(n, T{0});
}

template <class T>
void check_finite(std::span<const T> x, const std::string& where) {
  double acc = 0.0;
  for (T v : x) acc += static_cast<double>(v);
  if (!std::isfinite(acc)) throw ModelError("non-finite activations after " + where);
}

// y = x W + b for `rows` rows.
template <class T>
void linear(const T* x, const T* w, const T* b, T* y, std::size_t rows, std::size_t in,
            std::size_t out) {
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(b, out, y + r * out);
  detail::gemm(false, false, static_cast<int>(rows), static_cast<int>(out), static_cast<int>(in),
               T{1}, x, static_cast<int>(in), w, static_cast<int>(out), T{1}, y,
               static_cast<int>(out));
}

// dW = xᵀ dy, db = colsum(dy), dx (+)= dy Wᵀ.
template <class T>
void linear_backward(const T* x, const T* w, const T* dy, T* dw, T* db, T* dx, bool accumulate_dx,
                     std::size_t rows, std::size_t in, std::size_t out) {
  detail::gemm(true, false, static_cast<int>(in), static_cast<int>(out), static_cast<int>(rows),
               T{1}, x, static_cast<int>(in), dy, static_cast<int>(out), T{0}, dw,
               static_cast<int>(out));
  std::vector<double> acc(out, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = dy + r * out;
    for (std::size_t j = 0; j < out; ++j) acc[j] += static_cast<double>(row[j]);
  }
  for (std::size_t j = 0; j < out; ++j) db[j] = static_cast<T>(acc[j]);
  if (dx != nullptr) {
    detail::gemm(false, true, static_cast<int>(rows), static_cast<int>(in), static_cast<int>(out),
                 T{1}, dy, static_cast<int>(out), w, static_cast<int>(out),
                 accumulate_dx ? T{1} : T{0}, dx, static_cast<int>(in));
  }
}

template <class T>
void layer_norm(const T* x, const T* gain, const T* bias, T* xhat, double* rstd, T* y,
                std::size_t rows, std::size_t d) {
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x + r * d;
    double mean = 0.0;
    for (std::size_t i = 0; i < d; ++i) mean += static_cast<double>(xr[i]);
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double c = static_cast<double>(xr[i]) - mean;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + kLayerNormEps);
    rstd[r] = rs;
    T* xh = xhat + r * d;
    T* yr = y + r * d;
    for (std::size_t i = 0; i < d; ++i) {
      const double h = (static_cast<double>(xr[i]) - mean) * rs;
      xh[i] = static_cast<T>(h);
      yr[i] = static_cast<T>(h * static_cast<double>(gain[i]) + static_cast<double>(bias[i]));
    }
  }
}

// dx += LN'(dy); writes gain and bias gradients.
template <class T>
void layer_norm_backward(const T* dy, const T* xhat, const double* rstd, const T* gain, T* dgain,
                         T* dbias, T* dx, std::size_t rows, std::size_t d) {
  std::vector<double> gacc(d, 0.0);
  std::vector<double> bacc(d, 0.0);
  std::vector<double> dxh(d);
  const double inv_d = 1.0 / static_cast<double>(d);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* dyr = dy + r * d;
    const T* xh = xhat + r * d;
    double s1 = 0.0;
    double s2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double g = static_cast<double>(dyr[i]);
      gacc[i] += g * static_cast<double>(xh[i]);
      bacc[i] += g;
      dxh[i] = g * static_cast<double>(gain[i]);
      s1 += dxh[i];
      s2 += dxh[i] * static_cast<double>(xh[i]);
    }
    T* dxr = dx + r * d;
    for (std::size_t i = 0; i < d; ++i) {
      const double v = rstd[r] * (dxh[i] - s1 * inv_d - static_cast<double>(xh[i]) * s2 * inv_d);
      dxr[i] = static_cast<T>(static_cast<double>(dxr[i]) + v);
    }
  }
  for (std::size_t i = 0; i < d; ++i) {
    dgain[i] = static_cast<T>(gacc[i]);
    dbias[i] = static_cast<T>(bacc[i]);
  }
}

template <class T>
double dotd(const T* a, const T* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

}  // namespace

template <class T>
struct Engine<T>::Impl {
  struct LayerCache {
    std::vector<T> h_in, xhat1, a1, q, k, v, probs, o, h_mid, xhat2, c, u, r;
    std::vector<double> rstd1, rstd2;
  };

  ModelConfig cfg;
  std::size_t B = 0;
  std::size_t N = 0;
  std::vector<LayerCache> layers;
  std::vector<T> h_final, xhatf, z, pooled, tmp;
  std::vector<double> rstdf;
  std::vector<std::vector<T>> logits;

  std::vector<T> dh, da, dq, dk, dv, d_o, dc, du, dz, dpooled;
  std::vector<std::vector<T>> dlogits;

  // Layer 0 sees only 2P distinct input rows (token x position); its first
  // layer norm and Q/K/V projections run on those rows and are gathered.
  std::vector<T> u_h, u_xhat, u_a, u_q, u_k, u_v, u_dq, u_dk, u_dv, u_da, u_dh;
  std::vector<double> u_rstd;
  std::vector<std::size_t> row_of;  // input row n -> unique row
  std::vector<double> exps;

  explicit Impl(const ModelConfig& c) : cfg(c), layers(static_cast<std::size_t>(c.n_layers)) {
    cfg.validate();
  }

  std::size_t d() const { return static_cast<std::size_t>(cfg.d_model); }
  std::size_t ff() const { return static_cast<std::size_t>(cfg.d_ff); }
  std::size_t classes() const { return static_cast<std::size_t>(cfg.P); }
  std::size_t heads() const { return static_cast<std::size_t>(cfg.n_heads); }

  void reserve(std::size_t batch) {
    if (batch == B) return;
    B = batch;
    N = 2 * batch;
    const std::size_t nd = N * d();
    for (LayerCache& L : layers) {
      for (auto* v : {&L.h_in, &L.xhat1, &L.a1, &L.q, &L.k, &L.v, &L.o, &L.h_mid, &L.xhat2, &L.c})
        resize(*v, nd);
      resize(L.u, N * ff());
      resize(L.r, N * ff());
      resize(L.probs, B * heads() * 4);
      resize(L.rstd1, N);
      resize(L.rstd2, N);
    }
    for (auto* v : {&h_final, &xhatf, &z, &tmp, &dh, &da, &dq, &dk, &dv, &d_o, &dc, &dz})
      resize(*v, nd);
    resize(du, N * ff());
    resize(rstdf, N);
    const std::size_t U = 2 * classes();
    for (auto* v : {&u_h, &u_xhat, &u_a, &u_q, &u_k, &u_v, &u_dq, &u_dk, &u_dv, &u_da, &u_dh})
      resize(*v, U * d());
    resize(u_rstd, U);
    resize(row_of, N);
    resize(exps, classes());
    resize(pooled, B * d());
    resize(dpooled, B * d());
    logits.resize(static_cast<std::size_t>(cfg.n_tasks));
    dlogits.resize(static_cast<std::size_t>(cfg.n_tasks));
    for (auto& l : logits) resize(l, B * classes());
    for (auto& l : dlogits) resize(l, B * classes());
  }

  // dst[row_of[n]] = sum of src rows mapping there.
  void sum_rows_into(const std::vector<T>& src, std::vector<T>& dst, std::size_t unique) {
    const std::size_t D = d();
    std::vector<double> acc(unique * D, 0.0);
    for (std::size_t n = 0; n < N; ++n) {
      const T* s = src.data() + n * D;
      double* a = acc.data() + row_of[n] * D;
      for (std::size_t i = 0; i < D; ++i) a[i] += static_cast<double>(s[i]);
    }
    for (std::size_t i = 0; i < unique * D; ++i) dst[i] = static_cast<T>(acc[i]);
  }

  void attention(LayerCache& L) {
    const std::size_t D = d();
    const std::size_t H = heads();
    const std::size_t dh_ = D / H;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh_));
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t r0 = (2 * b) * D + h * dh_;
        const std::size_t r1 = r0 + D;
        const T* q0 = L.q.data() + r0;
        const T* q1 = L.q.data() + r1;
        const T* k0 = L.k.data() + r0;
        const T* k1 = L.k.data() + r1;
        const T* v0 = L.v.data() + r0;
        const T* v1 = L.v.data() + r1;
        double p[4];
        for (int i = 0; i < 2; ++i) {
          const T* qi = i == 0 ? q0 : q1;
          const double s0 = scale * dotd(qi, k0, dh_);
          const double s1 = scale * dotd(qi, k1, dh_);
          const double m = std::max(s0, s1);
          const double e0 = std::exp(s0 - m);
          const double e1 = std::exp(s1 - m);
          p[2 * i] = e0 / (e0 + e1);
          p[2 * i + 1] = e1 / (e0 + e1);
        }
        T* pr = L.probs.data() + (b * H + h) * 4;
        for (int i = 0; i < 4; ++i) pr[i] = static_cast<T>(p[i]);
        T* o0 = L.o.data() + r0;
        T* o1 = L.o.data() + r1;
        for (std::size_t j = 0; j < dh_; ++j) {
          const double a = static_cast<double>(v0[j]);
          const double c = static_cast<double>(v1[j]);
          o0[j] = static_cast<T>(p[0] * a + p[1] * c);
          o1[j] = static_cast<T>(p[2] * a + p[3] * c);
        }
      }
    }
  }

  void attention_backward(const LayerCache& L) {
    const std::size_t D = d();
    const std::size_t H = heads();
    const std::size_t dh_ = D / H;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh_));
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t h = 0; h < H; ++h) {
        const std::size_t r0 = (2 * b) * D + h * dh_;
        const std::size_t r1 = r0 + D;
        const T* q0 = L.q.data() + r0;
        const T* q1 = L.q.data() + r1;
        const T* k0 = L.k.data() + r0;
        const T* k1 = L.k.data() + r1;
        const T* v0 = L.v.data() + r0;
        const T* v1 = L.v.data() + r1;
        const T* g0 = d_o.data() + r0;
        const T* g1 = d_o.data() + r1;
        const T* pr = L.probs.data() + (b * H + h) * 4;
        const double p00 = pr[0], p01 = pr[1], p10 = pr[2], p11 = pr[3];
        const double dp00 = dotd(g0, v0, dh_);
        const double dp01 = dotd(g0, v1, dh_);
        const double dp10 = dotd(g1, v0, dh_);
        const double dp11 = dotd(g1, v1, dh_);
        const double m0 = p00 * dp00 + p01 * dp01;
        const double m1 = p10 * dp10 + p11 * dp11;
        const double ds00 = p00 * (dp00 - m0) * scale;
        const double ds01 = p01 * (dp01 - m0) * scale;
        const double ds10 = p10 * (dp10 - m1) * scale;
        const double ds11 = p11 * (dp11 - m1) * scale;
        T* dq0 = dq.data() + r0;
        T* dq1 = dq.data() + r1;
        T* dk0 = dk.data() + r0;
        T* dk1 = dk.data() + r1;
        T* dv0 = dv.data() + r0;
        T* dv1 = dv.data() + r1;
        for (std::size_t j = 0; j < dh_; ++j) {
          const double a0 = static_cast<double>(g0[j]);
          const double a1 = static_cast<double>(g1[j]);
          const double kk0 = static_cast<double>(k0[j]);
          const double kk1 = static_cast<double>(k1[j]);
          const double qq0 = static_cast<double>(q0[j]);
          const double qq1 = static_cast<double>(q1[j]);
          dv0[j] = static_cast<T>(p00 * a0 + p10 * a1);
          dv1[j] = static_cast<T>(p01 * a0 + p11 * a1);
          dq0[j] = static_cast<T>(ds00 * kk0 + ds01 * kk1);
          dq1[j] = static_cast<T>(ds10 * kk0 + ds11 * kk1);
          dk0[j] = static_cast<T>(ds00 * qq0 + ds10 * qq1);
          dk1[j] = static_cast<T>(ds01 * qq0 + ds11 * qq1);
        }
      }
    }
  }

  void run_forward(const ParamSet<T>& params, std::span<const Pair> inputs) {
    if (params.config() != cfg) throw ModelError("forward: parameter config does not match engine");
    reserve(inputs.size());
    const ParamLayout& lay = params.layout();
    const T* P = params.data();
    const std::size_t D = d();
    const std::size_t F = ff();

    const std::size_t C = classes();
    for (std::size_t pos = 0; pos < 2; ++pos) {
      for (std::size_t tok = 0; tok < C; ++tok) {
        const T* te = P + lay.tok_emb + tok * D;
        const T* pe = P + lay.pos_emb + pos * D;
        T* row = u_h.data() + (pos * C + tok) * D;
        for (std::size_t i = 0; i < D; ++i) row[i] = te[i] + pe[i];
      }
    }
    T* h0 = layers.empty() ? h_final.data() : layers[0].h_in.data();
    for (std::size_t b = 0; b < B; ++b) {
      const Pair pr = inputs[b];
      if (pr.x < 0 || pr.y < 0 || pr.x >= cfg.P || pr.y >= cfg.P)
        throw ModelError("forward: token id outside [0, P)");
      row_of[2 * b] = static_cast<std::size_t>(pr.x);
      row_of[2 * b + 1] = C + static_cast<std::size_t>(pr.y);
      for (std::size_t pos = 0; pos < 2; ++pos)
        std::copy_n(u_h.data() + row_of[2 * b + pos] * D, D, h0 + (2 * b + pos) * D);
    }

    for (std::size_t l = 0; l < layers.size(); ++l) {
      LayerCache& L = layers[l];
      const auto& o = lay.layers[l];
      if (l == 0) {
        const std::size_t U = 2 * C;
        layer_norm(u_h.data(), P + o.ln1_g, P + o.ln1_b, u_xhat.data(), u_rstd.data(), u_a.data(),
                   U, D);
        linear(u_a.data(), P + o.wq, P + o.bq, u_q.data(), U, D, D);
        linear(u_a.data(), P + o.wk, P + o.bk, u_k.data(), U, D, D);
        linear(u_a.data(), P + o.wv, P + o.bv, u_v.data(), U, D, D);
        for (std::size_t n = 0; n < N; ++n) {
          const std::size_t src = row_of[n] * D;
          std::copy_n(u_q.data() + src, D, L.q.data() + n * D);
          std::copy_n(u_k.data() + src, D, L.k.data() + n * D);
          std::copy_n(u_v.data() + src, D, L.v.data() + n * D);
        }
      } else {
        layer_norm(L.h_in.data(), P + o.ln1_g, P + o.ln1_b, L.xhat1.data(), L.rstd1.data(),
                   L.a1.data(), N, D);
        linear(L.a1.data(), P + o.wq, P + o.bq, L.q.data(), N, D, D);
        linear(L.a1.data(), P + o.wk, P + o.bk, L.k.data(), N, D, D);
        linear(L.a1.data(), P + o.wv, P + o.bv, L.v.data(), N, D, D);
      }
      attention(L);
      linear(L.o.data(), P + o.wo, P + o.bo, tmp.data(), N, D, D);
      for (std::size_t i = 0; i < N * D; ++i) L.h_mid[i] = L.h_in[i] + tmp[i];
      layer_norm(L.h_mid.data(), P + o.ln2_g, P + o.ln2_b, L.xhat2.data(), L.rstd2.data(),
                 L.c.data(), N, D);
      linear(L.c.data(), P + o.w1, P + o.b1, L.u.data(), N, D, F);
      for (std::size_t i = 0; i < N * F; ++i) L.r[i] = L.u[i] > T{0} ? L.u[i] : T{0};
      linear(L.r.data(), P + o.w2, P + o.b2, tmp.data(), N, F, D);
      T* next = l + 1 < layers.size() ? layers[l + 1].h_in.data() : h_final.data();
      for (std::size_t i = 0; i < N * D; ++i) next[i] = L.h_mid[i] + tmp[i];
      check_finite(std::span<const T>(next, N * D), "layers." + std::to_string(l));
    }

    layer_norm(h_final.data(), P + lay.lnf_g, P + lay.lnf_b, xhatf.data(), rstdf.data(), z.data(),
               N, D);
    for (std::size_t b = 0; b < B; ++b) {
      const T* z0 = z.data() + (2 * b) * D;
      const T* z1 = z0 + D;
      T* pb = pooled.data() + b * D;
      for (std::size_t i = 0; i < D; ++i)
        pb[i] = static_cast<T>(0.5 * (static_cast<double>(z0[i]) + static_cast<double>(z1[i])));
    }
    for (std::size_t t = 0; t < logits.size(); ++t) {
      const auto& h = lay.heads[t];
      linear(pooled.data(), P + h.w, P + h.b, logits[t].data(), B, D, classes());
      check_finite(std::span<const T>(logits[t]), "heads." + std::to_string(t));
    }
  }

  // Cross-entropy per selected task; fills dlogits scaled by weight / B.
  LossReport compute_loss(const Batch& batch, std::optional<TaskId> only, bool want_grad) {
    LossReport rep;
    const std::size_t C = classes();
    const double n_sel = only ? 1.0 : static_cast<double>(cfg.n_tasks);
    for (std::size_t t = 0; t < logits.size(); ++t) {
      const bool selected = !only || static_cast<std::size_t>(index_of(*only)) == t;
      const auto labels = batch.labels[t];
      if (labels.size() != B) throw ModelError("loss: label count does not match batch");
      const double w = selected ? 1.0 / (n_sel * static_cast<double>(B)) : 0.0;
      double loss = 0.0;
      std::size_t correct = 0;
      for (std::size_t i = 0; i < B; ++i) {
        const T* row = logits[t].data() + i * C;
        T* grow = dlogits[t].data() + i * C;
        std::size_t arg = 0;
        for (std::size_t c = 1; c < C; ++c)
          if (row[c] > row[arg]) arg = c;
        const double mx = static_cast<double>(row[arg]);
        double sum = 0.0;
        for (std::size_t c = 0; c < C; ++c) {
          exps[c] = std::exp(static_cast<double>(row[c]) - mx);
          sum += exps[c];
        }
        const auto y = static_cast<std::size_t>(labels[i]);
        if (y >= C) throw ModelError("loss: label outside [0, P)");
        loss += mx + std::log(sum) - static_cast<double>(row[y]);
        if (arg == y) ++correct;
        if (want_grad) {
          for (std::size_t c = 0; c < C; ++c) {
            const double pc = exps[c] / sum;
            grow[c] = static_cast<T>(w * (pc - (c == y ? 1.0 : 0.0)));
          }
        }
      }
      rep.task_loss[t] = loss / static_cast<double>(B);
      rep.task_acc[t] = static_cast<double>(correct) / static_cast<double>(B);
    }
    if (only) {
      rep.loss = rep.task_loss[static_cast<std::size_t>(index_of(*only))];
    } else {
      rep.loss = mean_of(rep.task_loss);
    }
    return rep;
  }

  void run_backward(const ParamSet<T>& params, std::span<const Pair> inputs, ParamSet<T>& grads,
                    std::optional<TaskId> only) {
    const ParamLayout& lay = params.layout();
    const T* P = params.data();
    T* G = grads.data();
    std::fill(grads.values().begin(), grads.values().end(), T{0});
    const std::size_t D = d();
    const std::size_t F = ff();
    const std::size_t C = classes();

    std::fill(dpooled.begin(), dpooled.end(), T{0});
    for (std::size_t t = 0; t < logits.size(); ++t) {
      if (only && static_cast<std::size_t>(index_of(*only)) != t) continue;
      const auto& h = lay.heads[t];
      detail::gemm(true, false, static_cast<int>(D), static_cast<int>(C), static_cast<int>(B), T{1},
                   pooled.data(), static_cast<int>(D), dlogits[t].data(), static_cast<int>(C),
                   T{0}, G + h.w, static_cast<int>(C));
      std::vector<double> acc(C, 0.0);
      for (std::size_t i = 0; i < B; ++i)
        for (std::size_t c = 0; c < C; ++c) acc[c] += static_cast<double>(dlogits[t][i * C + c]);
      for (std::size_t c = 0; c < C; ++c) G[h.b + c] = static_cast<T>(acc[c]);
      detail::gemm(false, true, static_cast<int>(B), static_cast<int>(D), static_cast<int>(C), T{1},
                   dlogits[t].data(), static_cast<int>(C), P + h.w, static_cast<int>(C), T{1},
                   dpooled.data(), static_cast<int>(D));
    }
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t i = 0; i < D; ++i) {
        const T g = static_cast<T>(0.5 * static_cast<double>(dpooled[b * D + i]));
        dz[(2 * b) * D + i] = g;
        dz[(2 * b + 1) * D + i] = g;
      }
    }
    std::fill(dh.begin(), dh.end(), T{0});
    layer_norm_backward(dz.data(), xhatf.data(), rstdf.data(), P + lay.lnf_g, G + lay.lnf_g,
                        G + lay.lnf_b, dh.data(), N, D);

    for (std::size_t li = layers.size(); li-- > 0;) {
      const LayerCache& L = layers[li];
      const auto& o = lay.layers[li];
      // Feed-forward block; dh holds the gradient at the block output.
      linear_backward(L.r.data(), P + o.w2, dh.data(), G + o.w2, G + o.b2, du.data(), false, N, F,
                      D);
      for (std::size_t i = 0; i < N * F; ++i)
        if (!(L.u[i] > T{0})) du[i] = T{0};
      linear_backward(L.c.data(), P + o.w1, du.data(), G + o.w1, G + o.b1, dc.data(), false, N, D,
                      F);
      layer_norm_backward(dc.data(), L.xhat2.data(), L.rstd2.data(), P + o.ln2_g, G + o.ln2_g,
                          G + o.ln2_b, dh.data(), N, D);
      // Attention block; dh now holds the gradient at h_mid.
      linear_backward(L.o.data(), P + o.wo, dh.data(), G + o.wo, G + o.bo, d_o.data(), false, N, D,
                      D);
      attention_backward(L);
      if (li == 0) {
        const std::size_t U = 2 * C;
        sum_rows_into(dq, u_dq, U);
        sum_rows_into(dk, u_dk, U);
        sum_rows_into(dv, u_dv, U);
        linear_backward(u_a.data(), P + o.wq, u_dq.data(), G + o.wq, G + o.bq, u_da.data(), false, U,
                        D, D);
        linear_backward(u_a.data(), P + o.wk, u_dk.data(), G + o.wk, G + o.bk, u_da.data(), true, U,
                        D, D);
        linear_backward(u_a.data(), P + o.wv, u_dv.data(), G + o.wv, G + o.bv, u_da.data(), true, U,
                        D, D);
        std::fill(u_dh.begin(), u_dh.end(), T{0});
        layer_norm_backward(u_da.data(), u_xhat.data(), u_rstd.data(), P + o.ln1_g, G + o.ln1_g,
                            G + o.ln1_b, u_dh.data(), U, D);
      } else {
        linear_backward(L.a1.data(), P + o.wq, dq.data(), G + o.wq, G + o.bq, da.data(), false, N, D,
                        D);
        linear_backward(L.a1.data(), P + o.wk, dk.data(), G + o.wk, G + o.bk, da.data(), true, N, D,
                        D);
        linear_backward(L.a1.data(), P + o.wv, dv.data(), G + o.wv, G + o.bv, da.data(), true, N, D,
                        D);
        layer_norm_backward(da.data(), L.xhat1.data(), L.rstd1.data(), P + o.ln1_g, G + o.ln1_g,
                            G + o.ln1_b, dh.data(), N, D);
      }
    }

    const std::size_t V = C;
    std::vector<double> tok(V * D, 0.0);
    std::vector<double> pos(2 * D, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
      for (std::size_t p = 0; p < 2; ++p) {
        const auto id = static_cast<std::size_t>(p == 0 ? inputs[b].x : inputs[b].y);
        const T* g = dh.data() + (2 * b + p) * D;
        for (std::size_t i = 0; i < D; ++i) {
          tok[id * D + i] += static_cast<double>(g[i]);
          pos[p * D + i] += static_cast<double>(g[i]);
        }
      }
    }
    if (!layers.empty()) {
      for (std::size_t p = 0; p < 2; ++p) {
        for (std::size_t id = 0; id < V; ++id) {
          const T* g = u_dh.data() + (p * V + id) * D;
          for (std::size_t i = 0; i < D; ++i) {
            tok[id * D + i] += static_cast<double>(g[i]);
            pos[p * D + i] += static_cast<double>(g[i]);
          }
        }
      }
    }
    for (std::size_t i = 0; i < V * D; ++i) G[lay.tok_emb + i] = static_cast<T>(tok[i]);
    for (std::size_t i = 0; i < 2 * D; ++i) G[lay.pos_emb + i] = static_cast<T>(pos[i]);
  }

  Logits<T> collect_logits() const {
    Logits<T> out;
    out.batch = B;
    out.classes = classes();
    out.per_task = logits;
    return out;
  }
};

template <class T>
Engine<T>::Engine(const ModelConfig& cfg) : impl_(std::make_unique<Impl>(cfg)) {}
template <class T>
Engine<T>::~Engine() = default;
template <class T>
Engine<T>::Engine(Engine&&) noexcept = default;
template <class T>
Engine<T>& Engine<T>::operator=(Engine&&) noexcept = default;

template <class T>
Logits<T> Engine<T>::forward(const ParamSet<T>& params, std::span<const Pair> inputs) {
  impl_->run_forward(params, inputs);
  return impl_->collect_logits();
}

template <class T>
LossReport Engine<T>::loss_and_grads(const ParamSet<T>& params, const Batch& batch,
                                     ParamSet<T>& grads, std::optional<TaskId> only) {
  impl_->run_forward(params, batch.inputs);
  LossReport rep = impl_->compute_loss(batch, only, true);
  if (grads.size() != params.size()) grads = ParamSet<T>(params.shared_layout(), std::vector<T>(params.size()));
  impl_->run_backward(params, batch.inputs, grads, only);
  return rep;
}

template <class T>
LossReport Engine<T>::evaluate(const ParamSet<T>& params, const Batch& batch) {
  impl_->run_forward(params, batch.inputs);
  return impl_->compute_loss(batch, std::nullopt, false);
}

template <class T>
Logits<T> forward(const ParamSet<T>& params, std::span<const Pair> inputs) {
  Engine<T> e(params.config());
  return e.forward(params, inputs);
}

template <class T>
LossReport loss_and_grads(const ParamSet<T>& params, const Batch& batch, ParamSet<T>& grads,
                          std::optional<TaskId> only) {
  Engine<T> e(params.config());
  return e.loss_and_grads(params, batch, grads, only);
}

template <class T>
std::array<double, kNumTasks> accuracy_of(const Logits<T>& logits, const Batch& batch) {
  std::array<double, kNumTasks> acc{};
  for (std::size_t t = 0; t < logits.per_task.size(); ++t) {
    std::size_t correct = 0;
    for (std::size_t i = 0; i < logits.batch; ++i) {
      const auto row = logits.row(static_cast<int>(t), i);
      const auto arg = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      if (arg == static_cast<std::size_t>(batch.labels[t][i])) ++correct;
    }
    acc[t] = logits.batch == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(logits.batch);
  }
  return acc;
}

template <class T>
std::array<double, kNumTasks> accuracy(const ParamSet<T>& params, const Dataset& data) {
  Engine<T> e(params.config());
  return e.evaluate(params, batch_of(data)).task_acc;
}

#define GROK_INSTANTIATE(T)                                                                    \
  template class ParamSet<T>;                                                                  \
  template class Engine<T>;                                                                    \
  template std::vector<double> flatten<T>(const ParamSet<T>&);                                 \
  template ParamSet<T> unflatten<T>(std::span<const double>, const ModelConfig&);              \
  template Logits<T> forward<T>(const ParamSet<T>&, std::span<const Pair>);                    \
  template LossReport loss_and_grads<T>(const ParamSet<T>&, const Batch&, ParamSet<T>&,        \
                                        std::optional<TaskId>);                                \
  template std::array<double, kNumTasks> accuracy_of<T>(const Logits<T>&, const Batch&);       \
  template std::array<double, kNumTasks> accuracy<T>(const ParamSet<T>&, const Dataset&);

GROK_INSTANTIATE(float)
GROK_INSTANTIATE(double)

#undef GROK_INSTANTIATE

}  // namespace grok

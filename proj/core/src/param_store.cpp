#include "automoe/param_store.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "automoe/errors.hpp"
#include "internal.hpp"

namespace automoe {
namespace {

using Sz = std::size_t;

void add_ln(std::vector<ParamSpec>& out, const std::string& prefix, int d) {
  out.push_back({prefix + ".g", {Sz(d)}});
  out.push_back({prefix + ".b", {Sz(d)}});
}

void add_proj(std::vector<ParamSpec>& out, const std::string& prefix, int out_dim, int in_dim) {
  out.push_back({prefix + ".w", {Sz(out_dim), Sz(in_dim)}});
  out.push_back({prefix + ".b", {Sz(out_dim)}});
}

void add_moe(std::vector<ParamSpec>& out, const std::string& prefix, int d, const std::vector<int>& widths) {
  const int e = static_cast<int>(widths.size());
  if (e > 1) out.push_back({prefix + ".router", {Sz(e), Sz(d)}});
  for (int j = 0; j < e; ++j) {
    const std::string p = prefix + ".experts." + std::to_string(j);
    out.push_back({p + ".w_in", {Sz(widths[j]), Sz(d)}});
    out.push_back({p + ".w_out", {Sz(d), Sz(widths[j])}});
  }
}

bool ends_with(const std::string& s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::vector<ParamSpec> parameter_layout(const Gene& g, const ModelDims& dims) {
  if (dims.vocab <= 0 || dims.max_positions <= 0) throw ConfigError("vocab and max_positions must be positive");
  std::vector<ParamSpec> out;
  const int de = g.embed_dim_enc, dd = g.embed_dim_dec, q = g.qkv_dim;
  out.push_back({"enc.embed", {Sz(dims.vocab), Sz(de)}});
  out.push_back({"enc.pos", {Sz(dims.max_positions), Sz(de)}});
  for (int l = 0; l < g.num_enc_layers; ++l) {
    const std::string p = "enc.layers." + std::to_string(l);
    add_ln(out, p + ".ln1", de);
    for (const char* n : {".attn.q", ".attn.k", ".attn.v"}) add_proj(out, p + n, q, de);
    add_proj(out, p + ".attn.o", de, q);
    add_ln(out, p + ".ln2", de);
    add_moe(out, p + ".moe", de, g.enc_expert_ffn_dims.at(Sz(l)));
  }
  add_ln(out, "enc.ln_final", de);

  out.push_back({"dec.embed", {Sz(dims.vocab), Sz(dd)}});
  out.push_back({"dec.pos", {Sz(dims.max_positions), Sz(dd)}});
  for (int l = 0; l < g.num_dec_layers; ++l) {
    const std::string p = "dec.layers." + std::to_string(l);
    add_ln(out, p + ".ln1", dd);
    for (const char* n : {".self_attn.q", ".self_attn.k", ".self_attn.v"}) add_proj(out, p + n, q, dd);
    add_proj(out, p + ".self_attn.o", dd, q);
    add_ln(out, p + ".ln2", dd);
    add_proj(out, p + ".cross_attn.q", q, dd);
    add_proj(out, p + ".cross_attn.k", q, de);
    add_proj(out, p + ".cross_attn.v", q, de);
    add_proj(out, p + ".cross_attn.o", dd, q);
    add_ln(out, p + ".ln3", dd);
    add_moe(out, p + ".moe", dd, g.dec_expert_ffn_dims.at(Sz(l)));
  }
  add_ln(out, "dec.ln_final", dd);
  out.push_back({"dec.output.w", {Sz(dims.vocab), Sz(dd)}});
  return out;
}

ParamStore ParamStore::initialized(const std::vector<ParamSpec>& layout, std::uint64_t seed) {
  ParamStore store;
  for (const auto& spec : layout) {
    Tensor t(spec.shape);
    if (ends_with(spec.name, ".g")) {
      t.fill(Real(1));
    } else if (spec.shape.size() == 2) {
      // Xavier-uniform on the stored shape.
      Rng rng(seed ^ detail::fnv1a(spec.name));
      const double fan = static_cast<double>(spec.shape[0] + spec.shape[1]);
      std::uniform_real_distribution<double> dist(-std::sqrt(6.0 / fan), std::sqrt(6.0 / fan));
      for (auto& v : t.values()) v = static_cast<Real>(dist(rng));
    }
    // Remaining vectors (biases, layernorm shifts) start at zero.
    store.add(spec.name, std::move(t));
  }
  return store;
}

void ParamStore::add(const std::string& name, Tensor value) {
  if (contains(name)) throw ConfigError("duplicate parameter " + name);
  order_.push_back(name);
  Entry e;
  e.grad = Tensor(value.shape(), Real(0));
  e.value = std::move(value);
  index_.emplace(name, std::move(e));
}

ParamStore::Entry& ParamStore::entry(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw DimensionError("unknown parameter " + name);
  return it->second;
}

const ParamStore::Entry& ParamStore::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw DimensionError("unknown parameter " + name);
  return it->second;
}

Tensor& ParamStore::value(const std::string& name) { return entry(name).value; }
const Tensor& ParamStore::value(const std::string& name) const { return entry(name).value; }
Tensor& ParamStore::grad(const std::string& name) { return entry(name).grad; }

std::size_t ParamStore::num_elements() const {
  std::size_t n = 0;
  for (const auto& [_, e] : index_) n += e.value.size();
  return n;
}

void ParamStore::touch(const std::string& name, std::size_t rows, std::size_t cols) {
  Entry& e = entry(name);
  e.touched_rows = std::max(e.touched_rows, rows);
  e.touched_cols = std::max(e.touched_cols, cols);
}

std::pair<std::size_t, std::size_t> ParamStore::touched(const std::string& name) const {
  const Entry& e = entry(name);
  return {e.touched_rows, e.touched_cols};
}

void ParamStore::clear_touched() {
  for (auto& [_, e] : index_) e.touched_rows = e.touched_cols = 0;
}

std::vector<NamedTensor> ParamStore::to_named() const {
  std::vector<NamedTensor> out;
  for (const auto& n : order_) out.push_back({n, index_.at(n).value});
  return out;
}

ParamStore ParamStore::from_named(std::vector<NamedTensor> tensors) {
  ParamStore store;
  for (auto& nt : tensors) store.add(nt.name, std::move(nt.tensor));
  return store;
}

bool ParamStore::all_finite() const {
  return std::all_of(index_.begin(), index_.end(), [](const auto& kv) { return kv.second.value.all_finite(); });
}

Var BoundWeights::operator()(const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw DimensionError("parameter not bound: " + name);
  return it->second;
}

namespace {

// Front extents of a slice as (rows, cols); a vector is a single row.
std::pair<std::size_t, std::size_t> extents(const Shape& s) {
  return s.size() == 2 ? std::pair{s[0], s[1]} : std::pair{std::size_t(1), s[0]};
}

Tensor slice_of(const Tensor& src, const ParamSpec& spec) {
  if (src.rank() != spec.shape.size()) {
    throw DimensionError("slice " + spec.name + " " + shape_str(spec.shape) + " does not match stored rank " +
                         shape_str(src.shape()));
  }
  if (src.shape() == spec.shape) return src;
  return spec.shape.size() == 2 ? front_block(src, spec.shape[0], spec.shape[1]) : front_block(src, spec.shape[0], 0);
}

}  // namespace

BoundWeights bind_weights(Tape& tape, ParamStore& store, const std::vector<ParamSpec>& slices, bool trainable) {
  if (!trainable || !tape.recording()) return bind_weights(tape, static_cast<const ParamStore&>(store), slices);
  BoundWeights w;
  for (const auto& spec : slices) {
    Tensor value = slice_of(store.value(spec.name), spec);
    const auto [rows, cols] = extents(spec.shape);
    std::string name = spec.name;
    w.set(spec.name, tape.external(std::move(value), [&store, name, rows = rows, cols = cols](const Tensor& g) {
      Tensor& dst = store.grad(name);
      const std::size_t stride = dst.rank() == 2 ? dst.cols() : 0;
      for (std::size_t r = 0; r < rows; ++r) {
        Real* d = dst.data() + r * stride;
        const Real* s = g.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) d[c] += s[c];
      }
      store.touch(name, rows, cols);
    }));
  }
  return w;
}

BoundWeights bind_weights(Tape& tape, const ParamStore& store, const std::vector<ParamSpec>& slices) {
  BoundWeights w;
  for (const auto& spec : slices) w.set(spec.name, tape.constant(slice_of(store.value(spec.name), spec)));
  return w;
}

void Adam::step(ParamStore& store, Real lr) {
  for (const auto& name : store.names()) {
    const auto [rows, cols] = store.touched(name);
    if (rows == 0 || cols == 0) continue;
    Tensor& p = store.value(name);
    Tensor& g = store.grad(name);
    State& s = state_[name];
    if (s.m.empty()) {
      s.m.assign(p.size(), Real(0));
      s.v.assign(p.size(), Real(0));
      s.t.assign(p.size(), 0);
    }
    const std::size_t stride = p.rank() == 2 ? p.cols() : 0;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * stride + c;
        const std::uint32_t t = ++s.t[i];
        s.m[i] = opt_.beta1 * s.m[i] + (Real(1) - opt_.beta1) * g[i];
        s.v[i] = opt_.beta2 * s.v[i] + (Real(1) - opt_.beta2) * g[i] * g[i];
        const Real mhat = s.m[i] / (Real(1) - static_cast<Real>(std::pow(opt_.beta1, t)));
        const Real vhat = s.v[i] / (Real(1) - static_cast<Real>(std::pow(opt_.beta2, t)));
        p[i] -= lr * mhat / (std::sqrt(vhat) + opt_.eps);
        g[i] = Real(0);
      }
    }
  }
  store.clear_touched();
}

}  // namespace automoe

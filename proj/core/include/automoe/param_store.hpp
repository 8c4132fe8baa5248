#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "automoe/autodiff.hpp"
#include "automoe/checkpoint.hpp"
#include "automoe/search_space.hpp"
#include "automoe/tensor.hpp"

namespace automoe {

/// Vocabulary size and longest position a model must embed.
struct ModelDims {
  int vocab = 0;
  int max_positions = 0;

  bool operator==(const ModelDims&) const = default;
};

/// A named tensor shape. Used both for a model's full parameter list and for
/// the front block of a larger stored tensor that a subnet reads.
struct ParamSpec {
  std::string name;
  Shape shape;
};

/// Every parameter of the model described by `gene`, in a fixed order.
/// Layers with a single expert have no router.
std::vector<ParamSpec> parameter_layout(const Gene& gene, const ModelDims& dims);

/// Named parameters with gradient buffers and, per tensor, the front extents
/// touched by backward since the last optimizer step.
class ParamStore {
 public:
  ParamStore() = default;

  /// Deterministic init: each tensor draws from its own generator seeded with
  /// seed ^ fnv1a(name), so a tensor's values depend only on (seed, name, shape).
  static ParamStore initialized(const std::vector<ParamSpec>& layout, std::uint64_t seed);

  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& value(const std::string& name);
  const Tensor& value(const std::string& name) const;
  Tensor& grad(const std::string& name);
  const std::vector<std::string>& names() const noexcept { return order_; }
  std::size_t num_elements() const;

  /// Grows the touched front extent of `name` to cover rows×cols.
  void touch(const std::string& name, std::size_t rows, std::size_t cols);
  /// Front extent (rows, cols) touched since the last clear; (0,0) if none.
  std::pair<std::size_t, std::size_t> touched(const std::string& name) const;
  void clear_touched();

  std::vector<NamedTensor> to_named() const;
  static ParamStore from_named(std::vector<NamedTensor> tensors);

  bool all_finite() const;

 private:
  struct Entry {
    Tensor value;
    Tensor grad;
    std::size_t touched_rows = 0;
    std::size_t touched_cols = 0;
  };
  Entry& entry(const std::string& name);
  const Entry& entry(const std::string& name) const;

  std::vector<std::string> order_;
  std::unordered_map<std::string, Entry> index_;
};

/// Tape leaves for the parameters one forward pass reads.
class BoundWeights {
 public:
  Var operator()(const std::string& name) const;
  bool contains(const std::string& name) const { return vars_.count(name) != 0; }
  void set(const std::string& name, Var v) { vars_[name] = v; }

 private:
  std::unordered_map<std::string, Var> vars_;
};

/// Binds the front block `spec.shape` of every listed store tensor onto `tape`.
/// With `trainable` (and a recording tape) each leaf writes its gradient back
/// into the same front block of the store's gradient buffer and marks it touched.
BoundWeights bind_weights(Tape& tape, ParamStore& store, const std::vector<ParamSpec>& slices, bool trainable);
BoundWeights bind_weights(Tape& tape, const ParamStore& store, const std::vector<ParamSpec>& slices);

/// Adam with per-element state at store shape. step() only visits the touched
/// front extents, so untouched elements keep both their value and their
/// moment estimates; the bias correction uses each element's own step count.
class Adam {
 public:
  struct Options {
    Real beta1 = Real(0.9);
    Real beta2 = Real(0.98);
    Real eps = Real(1e-9);
  };

  Adam() = default;
  explicit Adam(Options opt) : opt_(opt) {}

  /// Applies one update to every touched region, then zeroes those grads and
  /// clears the touched marks.
  void step(ParamStore& store, Real lr);

 private:
  struct State {
    std::vector<Real> m, v;
    std::vector<std::uint32_t> t;
  };
  Options opt_;
  std::unordered_map<std::string, State> state_;
};

}  // namespace automoe

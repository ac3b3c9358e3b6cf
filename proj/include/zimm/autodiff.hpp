#pragma once

// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every primitive applied to Vars created from it. Values are
// computed eagerly; backward() replays the tape in reverse and accumulates
// gradients into the parameter leaves. A tape is confined to one thread and
// supports a single backward pass.

#include <cstddef>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "zimm/param_store.hpp"
#include "zimm/rng.hpp"
#include "zimm/tensor.hpp"

namespace zimm::ad {

class Tape;

/// Handle to a node on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class BackwardContext;
using BackwardFn = std::function<void(BackwardContext&)>;

class Tape {
 public:
  explicit Tape(bool record_gradients = true) : recording_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var constant(Tensor value);
  /// Leaf bound to a store entry. The store must outlive the tape and must
  /// not be mutated while the tape is alive. Repeated calls share one node.
  Var parameter(const ParamStore& store, const std::string& name);

  /// Appends a node. `fn` is dropped when the tape is not recording.
  Var record(Tensor value, std::vector<Var> inputs, BackwardFn fn, const char* op);

  const Tensor& value(std::size_t id) const;

  /// Gradients for every parameter leaf reached from `loss`.
  Gradients backward(Var loss);
  /// Same, with zero tensors for store entries the graph never reached.
  Gradients backward(Var loss, const ParamStore& store);

 private:
  friend class BackwardContext;
  struct Node {
    Tensor owned;
    const Tensor* external = nullptr;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    const std::string* param = nullptr;
  };

  const Tensor& node_value(const Node& n) const { return n.external ? *n.external : n.owned; }

  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> param_nodes_;
  std::vector<Tensor> grads_;
  bool recording_;
  bool consumed_ = false;
};

/// View handed to a node's backward function.
class BackwardContext {
 public:
  BackwardContext(Tape& tape, std::size_t node) : tape_(tape), node_(node) {}
  const Tensor& out() const;
  const Tensor& gout() const;
  const Tensor& input(std::size_t i) const;
  /// Gradient accumulator for input i, zero-initialized on first use.
  Tensor& grad(std::size_t i);

 private:
  Tape& tape_;
  std::size_t node_;
};

// ---- primitives -----------------------------------------------------------

/// Matrix product. Rank-1 operands act as a row (left) or column (right)
/// vector and that dimension is dropped from the result.
Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
/// m{n,h} + v{h} broadcast over rows.
Var add_rows(Var m, Var v);
/// scale * x + shift, elementwise.
Var affine(Var x, double scale, double shift);
Var tanh(Var x);
Var sigmoid(Var x);
Var softmax(Var x, std::size_t axis = 0);
Var log_softmax(Var x, std::size_t axis = 0);
/// Rows of `table` selected by ids, shape {ids.size(), dim}.
Var embedding_lookup(Var table, const std::vector<std::size_t>& ids);
/// Concatenation along `axis`. Scalars concatenate as length-1 vectors.
Var concat(const std::vector<Var>& parts, std::size_t axis = 0);
/// Elements [begin, begin+len) of a vector, or rows of a matrix.
Var slice(Var x, std::size_t begin, std::size_t len);
Var transpose(Var x);
Var reshape(Var x, Shape shape);
/// Normalizes along the last axis to zero mean and unit variance.
Var layer_norm(Var x, double eps);
/// Elementwise product with a constant mask.
Var mask_apply(Var x, const Tensor& mask);
/// Inverted dropout. Returns `x` itself when not training or rate == 0.
Var dropout(Var x, double rate, RngStream& rng, bool training);
/// Multiplicative N(1, rate/(1-rate)) noise. Identity when not training.
Var gaussian_dropout(Var x, double rate, RngStream& rng, bool training);
Var sum(Var x);
/// sum_i w_i * x_i with constant weights, as a scalar.
Var weighted_sum(Var x, const Tensor& weights);
Var add_n(const std::vector<Var>& xs);

}  // namespace zimm::ad

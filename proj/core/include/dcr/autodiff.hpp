#pragma once

// Define-by-run reverse-mode differentiation over dense double tensors.
//
// A Graph is an append-only tape: nodes are created in evaluation order, so
// the insertion index is already a topological order and backward simply walks
// it in reverse. Graphs are cheap and are rebuilt for every training step.

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dcr/tensor.hpp"

namespace dcr {

// A named trainable tensor with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad = Tensor(value.shape()); }
};

class Graph;

// Lightweight handle to a node in a Graph.
struct Var {
  Graph* graph = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const;
};

class Graph {
 public:
  struct BackwardArgs {
    const Graph& graph;
    const Tensor& out;
    const Tensor& out_grad;
    // One slot per input; null when that input does not need a gradient.
    std::span<Tensor* const> in_grads;
  };
  using BackwardFn = std::function<void(const BackwardArgs&)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var input(Tensor value, bool requires_grad = false, std::string name = {});
  Var constant(Tensor value) { return input(std::move(value), false); }
  // Binds an external parameter as a leaf. When trainable, backward adds into p.grad.
  Var parameter(Parameter& p, bool trainable);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  // Accumulated gradient of a leaf (zeros before any backward pass).
  const Tensor& grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::optional<Var> find(std::string_view name);
  std::size_t size() const { return nodes_.size(); }
  const std::string& op_name(Var v) const { return nodes_[v.id].op; }

  // Seeds d(output)/d(output) = 1 and accumulates into every trainable leaf.
  // Leaf gradients add up across calls until zero_grad().
  void backward(Var output);
  void zero_grad();

  // Used by op implementations.
  Var emit(std::string op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward);

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
    bool leaf = false;
    std::string name;
    Tensor leaf_grad;
    Parameter* param = nullptr;
  };
  std::vector<Node> nodes_;
};

// ---- primitives -----------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var neg(Var a);
// a is m x n, bias has n elements; bias is added to every row.
Var add_row(Var a, Var bias);

Var matmul(Var a, Var b);
Var transpose(Var a);

Var relu(Var a);
// tanh approximation of GELU.
Var gelu(Var a);
Var exp(Var a);
Var log(Var a);

Var reshape(Var a, Shape shape);
// axis 0 stacks rows, axis 1 joins columns. Rank-1 inputs concatenate end to end.
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var gather_rows(Var a, std::vector<std::size_t> rows);

Var sum(Var a);
Var sum(Var a, std::size_t axis);
Var mean(Var a);
Var mean(Var a, std::size_t axis);

Var logsumexp(Var a);
// Row-wise log-sum-exp of an m x n matrix. mask (m*n, row-major) selects the
// entries that take part; every row must keep at least one entry.
Var logsumexp_rows(Var a, const std::vector<unsigned char>* mask = nullptr);
Var softmax_rows(Var a);

Var l2norm(Var a);
Var l2norm_rows(Var a);
Var normalize_rows(Var a);

// Cosine similarity with a fused gradient. The norm product is clamped below
// by kCosineEps.
inline constexpr double kCosineEps = 1e-12;
Var cosine_similarity(Var u, Var v);
Var cosine_similarity_rows(Var a, Var b);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(Var a, double s) { return scale(a, s); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator-(Var a) { return neg(a); }

// ---- evaluation helpers ---------------------------------------------------

using Bindings = std::map<std::string, Tensor>;
using VarMap = std::map<std::string, Var>;
using GraphFn = std::function<Var(Graph&, const VarMap&)>;

// Builds fn on a fresh graph with every binding as an input and returns the output value.
Tensor evaluate(const GraphFn& fn, const Bindings& inputs);

// Gradient of a scalar fn with respect to every binding.
Bindings gradients(const GraphFn& fn, const Bindings& inputs);

struct GradCheckReport {
  // Worst coordinate error per input name.
  std::map<std::string, double> max_rel_error;
  double worst() const;
};

// Compares backward against central differences (f(x+e) - f(x-e)) / 2e.
// The error of a coordinate is |analytic - numeric| / max(|analytic|, |numeric|, floor).
GradCheckReport grad_check(const GraphFn& fn, const Bindings& inputs, double epsilon = 1e-5, double floor = 1e-3);

}  // namespace dcr

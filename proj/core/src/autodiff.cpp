#include "dcr/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

namespace dcr {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;

MapC as_mat(const Tensor& t) {
  return MapC(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}
Map as_mat(Tensor& t) {
  return Map(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

void check_same_graph(Var a, Var b, const char* op) {
  if (a.graph == nullptr || a.graph != b.graph) throw ValueError(std::string(op) + ": operands belong to different graphs");
}

void require_same_shape(Var a, Var b, const char* op) {
  check_same_graph(a, b, op);
  if (a.shape() != b.shape()) throw ShapeError(op, {a.shape(), b.shape()});
}

void require_matrix(Var a, const char* op) {
  if (a.shape().size() != 2) throw ShapeError(op, {a.shape()}, "expected a rank-2 tensor");
}

void accumulate(Tensor* dst, const Tensor& src) {
  if (dst == nullptr) return;
  auto d = dst->data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
}

template <typename F>
Tensor map_values(const Tensor& x, F f) {
  Tensor out(x.shape());
  auto src = x.data();
  auto dst = out.data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

// Elementwise unary op: forward f(x), backward gout * df(x, y).
template <typename F, typename DF>
Var unary(Var a, const char* op, F f, DF df) {
  Tensor out = map_values(a.value(), f);
  return a.graph->emit(op, std::move(out), {a.id}, [df, id = a.id](const Graph::BackwardArgs& args) {
    Tensor* gin = args.in_grads[0];
    if (!gin) return;
    auto x = args.graph.value(id).data();
    auto y = args.out.data();
    auto g = args.out_grad.data();
    auto d = gin->data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * df(x[i], y[i]);
  });
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
constexpr double kNormEps = 1e-12;

}  // namespace

const Tensor& Var::value() const { return graph->value(*this); }
const Shape& Var::shape() const { return graph->value(*this).shape(); }

Var Graph::input(Tensor value, bool requires_grad, std::string name) {
  Node n;
  n.op = "input";
  n.leaf = true;
  n.requires_grad = requires_grad;
  n.name = std::move(name);
  if (requires_grad) n.leaf_grad = Tensor(value.shape());
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

Var Graph::parameter(Parameter& p, bool trainable) {
  Var v = input(p.value, trainable, p.name);
  if (trainable) {
    nodes_[v.id].param = &p;
    if (p.grad.shape() != p.value.shape()) p.zero_grad();
  }
  return v;
}

const Tensor& Graph::grad(Var v) const {
  const Node& n = nodes_[v.id];
  if (!n.leaf || !n.requires_grad) throw ValueError("grad: node " + std::to_string(v.id) + " is not a trainable leaf");
  return n.leaf_grad;
}

std::optional<Var> Graph::find(std::string_view name) {
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    if (nodes_[i].leaf && nodes_[i].name == name) return Var{this, i};
  }
  return std::nullopt;
}

Var Graph::emit(std::string op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  for (std::size_t in : inputs) n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  n.inputs = std::move(inputs);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{this, nodes_.size() - 1};
}

void Graph::backward(Var output) {
  if (output.graph != this) throw ValueError("backward: output belongs to another graph");
  const Node& out = nodes_[output.id];
  if (out.value.numel() != 1) throw ShapeError("backward", {out.value.shape()}, "output must be a scalar");
  if (!out.requires_grad) return;

  std::vector<Tensor> grads(output.id + 1);
  grads[output.id] = Tensor(out.value.shape(), 1.0);
  std::vector<Tensor*> slots;
  for (std::size_t id = output.id + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || grads[id].empty()) continue;
    if (n.leaf) {
      accumulate(&n.leaf_grad, grads[id]);
      if (n.param) accumulate(&n.param->grad, grads[id]);
      continue;
    }
    slots.assign(n.inputs.size(), nullptr);
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      const std::size_t in = n.inputs[k];
      if (!nodes_[in].requires_grad) continue;
      if (grads[in].empty()) grads[in] = Tensor(nodes_[in].value.shape());
      slots[k] = &grads[in];
    }
    n.backward(BackwardArgs{*this, n.value, grads[id], slots});
    grads[id] = Tensor();
  }
}

void Graph::zero_grad() {
  for (Node& n : nodes_) {
    if (n.leaf && n.requires_grad) n.leaf_grad.fill(0.0);
  }
}

// ---- elementwise ----------------------------------------------------------

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  accumulate(&out, b.value());
  return a.graph->emit("add", std::move(out), {a.id, b.id}, [](const Graph::BackwardArgs& args) {
    accumulate(args.in_grads[0], args.out_grad);
    accumulate(args.in_grads[1], args.out_grad);
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return a.graph->emit("sub", std::move(out), {a.id, b.id}, [](const Graph::BackwardArgs& args) {
    accumulate(args.in_grads[0], args.out_grad);
    if (Tensor* gb = args.in_grads[1]) {
      auto d = gb->data();
      auto g = args.out_grad.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] -= g[i];
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return a.graph->emit("mul", std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](const Graph::BackwardArgs& args) {
    auto g = args.out_grad.data();
    auto av = args.graph.value(ia).data();
    auto bv2 = args.graph.value(ib).data();
    if (Tensor* ga = args.in_grads[0]) {
      auto d = ga->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * bv2[i];
    }
    if (Tensor* gb = args.in_grads[1]) {
      auto d = gb->data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * av[i];
    }
  });
}

Var scale(Var a, double s) {
  return unary(
      a, "scale", [s](double x) { return s * x; }, [s](double, double) { return s; });
}

Var add_scalar(Var a, double s) {
  return unary(
      a, "add_scalar", [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var add_row(Var a, Var bias) {
  check_same_graph(a, bias, "add_row");
  require_matrix(a, "add_row");
  const std::size_t m = a.value().rows(), n = a.value().cols();
  if (bias.value().numel() != n) throw ShapeError("add_row", {a.shape(), bias.shape()});
  Tensor out = a.value();
  auto bv = bias.value().data();
  for (std::size_t r = 0; r < m; ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < n; ++c) row[c] += bv[c];
  }
  return a.graph->emit("add_row", std::move(out), {a.id, bias.id}, [m, n](const Graph::BackwardArgs& args) {
    accumulate(args.in_grads[0], args.out_grad);
    if (Tensor* gb = args.in_grads[1]) {
      auto d = gb->data();
      for (std::size_t r = 0; r < m; ++r) {
        auto g = args.out_grad.row(r);
        for (std::size_t c = 0; c < n; ++c) d[c] += g[c];
      }
    }
  });
}

// ---- linear algebra -------------------------------------------------------

Var matmul(Var a, Var b) {
  check_same_graph(a, b, "matmul");
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.value().cols() != b.value().rows()) throw ShapeError("matmul", {a.shape(), b.shape()});
  Tensor out(Shape{a.value().rows(), b.value().cols()});
  as_mat(out).noalias() = as_mat(a.value()) * as_mat(b.value());
  return a.graph->emit("matmul", std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](const Graph::BackwardArgs& args) {
    const auto g = as_mat(args.out_grad);
    if (Tensor* ga = args.in_grads[0]) as_mat(*ga).noalias() += g * as_mat(args.graph.value(ib)).transpose();
    if (Tensor* gb = args.in_grads[1]) as_mat(*gb).noalias() += as_mat(args.graph.value(ia)).transpose() * g;
  });
}

Var transpose(Var a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.value().rows(), n = a.value().cols();
  Tensor out(Shape{n, m});
  as_mat(out) = as_mat(a.value()).transpose();
  return a.graph->emit("transpose", std::move(out), {a.id}, [](const Graph::BackwardArgs& args) {
    if (Tensor* ga = args.in_grads[0]) as_mat(*ga) += as_mat(args.out_grad).transpose();
  });
}

// ---- pointwise nonlinearities ---------------------------------------------

Var relu(Var a) {
  return unary(
      a, "relu", [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var gelu(Var a) {
  return unary(
      a, "gelu",
      [](double x) { return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + kGeluA * x * x * x))); },
      [](double x, double) {
        const double th = std::tanh(kGeluC * (x + kGeluA * x * x * x));
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * kGeluA * x * x);
      });
}

Var exp(Var a) {
  return unary(
      a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  for (double x : a.value().data()) {
    if (!(x > 0.0)) throw ValueError("log: non-positive input " + std::to_string(x));
  }
  return unary(
      a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

// ---- structure ------------------------------------------------------------

Var reshape(Var a, Shape shape) {
  if (shape_numel(shape) != a.value().numel()) throw ShapeError("reshape", {a.shape(), shape});
  Tensor out = a.value().reshaped(std::move(shape));
  return a.graph->emit("reshape", std::move(out), {a.id}, [](const Graph::BackwardArgs& args) {
    accumulate(args.in_grads[0], args.out_grad);
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ValueError("concat: no inputs");
  Graph* g = parts.front().graph;
  std::vector<std::size_t> ids;
  std::vector<Shape> shapes;
  for (Var p : parts) {
    check_same_graph(parts.front(), p, "concat");
    ids.push_back(p.id);
    shapes.push_back(p.shape());
  }
  const bool vectors = parts.front().shape().size() == 1;
  if (vectors) {
    std::vector<double> data;
    std::vector<std::size_t> offsets;
    for (Var p : parts) {
      if (p.shape().size() != 1) throw ShapeError("concat", shapes, "mixed ranks");
      offsets.push_back(data.size());
      data.insert(data.end(), p.value().data().begin(), p.value().data().end());
    }
    return g->emit("concat", Tensor::vector(std::move(data)), ids, [offsets](const Graph::BackwardArgs& args) {
      auto go = args.out_grad.data();
      for (std::size_t k = 0; k < args.in_grads.size(); ++k) {
        Tensor* gi = args.in_grads[k];
        if (!gi) continue;
        auto d = gi->data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += go[offsets[k] + i];
      }
    });
  }
  for (const Shape& s : shapes) {
    if (s.size() != 2) throw ShapeError("concat", shapes, "expected rank-2 inputs");
  }
  if (axis == 0) {
    const std::size_t n = shapes.front()[1];
    std::size_t m = 0;
    for (const Shape& s : shapes) {
      if (s[1] != n) throw ShapeError("concat", shapes, "column counts differ");
      m += s[0];
    }
    std::vector<double> data;
    data.reserve(m * n);
    std::vector<std::size_t> offsets;
    for (Var p : parts) {
      offsets.push_back(data.size());
      data.insert(data.end(), p.value().data().begin(), p.value().data().end());
    }
    return g->emit("concat", Tensor(Shape{m, n}, std::move(data)), ids, [offsets](const Graph::BackwardArgs& args) {
      auto go = args.out_grad.data();
      for (std::size_t k = 0; k < args.in_grads.size(); ++k) {
        Tensor* gi = args.in_grads[k];
        if (!gi) continue;
        auto d = gi->data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += go[offsets[k] + i];
      }
    });
  }
  if (axis != 1) throw ShapeError("concat", shapes, "axis must be 0 or 1");
  const std::size_t m = shapes.front()[0];
  std::size_t n = 0;
  std::vector<std::size_t> col_offsets;
  for (const Shape& s : shapes) {
    if (s[0] != m) throw ShapeError("concat", shapes, "row counts differ");
    col_offsets.push_back(n);
    n += s[1];
  }
  Tensor out(Shape{m, n});
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& v = parts[k].value();
    for (std::size_t r = 0; r < m; ++r) std::copy(v.row(r).begin(), v.row(r).end(), out.row(r).begin() + col_offsets[k]);
  }
  return g->emit("concat", std::move(out), ids, [col_offsets, m](const Graph::BackwardArgs& args) {
    for (std::size_t k = 0; k < args.in_grads.size(); ++k) {
      Tensor* gi = args.in_grads[k];
      if (!gi) continue;
      const std::size_t w = gi->cols();
      for (std::size_t r = 0; r < m; ++r) {
        auto src = args.out_grad.row(r);
        auto dst = gi->row(r);
        for (std::size_t c = 0; c < w; ++c) dst[c] += src[col_offsets[k] + c];
      }
    }
  });
}

Var gather_rows(Var a, std::vector<std::size_t> rows) {
  require_matrix(a, "gather_rows");
  const std::size_t m = a.value().rows(), n = a.value().cols();
  Tensor out(Shape{rows.size(), n});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= m) throw ShapeError("gather_rows", {a.shape()}, "row index " + std::to_string(rows[r]) + " out of range");
    std::copy(a.value().row(rows[r]).begin(), a.value().row(rows[r]).end(), out.row(r).begin());
  }
  return a.graph->emit("gather_rows", std::move(out), {a.id}, [rows = std::move(rows), n](const Graph::BackwardArgs& args) {
    Tensor* gi = args.in_grads[0];
    if (!gi) return;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      auto src = args.out_grad.row(r);
      auto dst = gi->row(rows[r]);
      for (std::size_t c = 0; c < n; ++c) dst[c] += src[c];
    }
  });
}

// ---- reductions -----------------------------------------------------------

Var sum(Var a) {
  double s = 0.0;
  for (double x : a.value().data()) s += x;
  return a.graph->emit("sum", Tensor::scalar(s), {a.id}, [](const Graph::BackwardArgs& args) {
    Tensor* gi = args.in_grads[0];
    if (!gi) return;
    const double g = args.out_grad[0];
    for (double& d : gi->data()) d += g;
  });
}

Var sum(Var a, std::size_t axis) {
  require_matrix(a, "sum");
  if (axis > 1) throw ShapeError("sum", {a.shape()}, "axis must be 0 or 1");
  const std::size_t m = a.value().rows(), n = a.value().cols();
  Tensor out(Shape{axis == 0 ? n : m});
  for (std::size_t r = 0; r < m; ++r) {
    auto row = a.value().row(r);
    for (std::size_t c = 0; c < n; ++c) out[axis == 0 ? c : r] += row[c];
  }
  return a.graph->emit("sum_axis", std::move(out), {a.id}, [axis, m, n](const Graph::BackwardArgs& args) {
    Tensor* gi = args.in_grads[0];
    if (!gi) return;
    for (std::size_t r = 0; r < m; ++r) {
      auto dst = gi->row(r);
      for (std::size_t c = 0; c < n; ++c) dst[c] += args.out_grad[axis == 0 ? c : r];
    }
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().numel());
  if (n == 0) throw ShapeError("mean", {a.shape()}, "empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var mean(Var a, std::size_t axis) {
  require_matrix(a, "mean");
  const double n = static_cast<double>(axis == 0 ? a.value().rows() : a.value().cols());
  return scale(sum(a, axis), 1.0 / n);
}

Var logsumexp(Var a) {
  if (a.value().numel() == 0) throw ShapeError("logsumexp", {a.shape()}, "empty tensor");
  return logsumexp_rows(reshape(a, Shape{1, a.value().numel()}));
}

Var logsumexp_rows(Var a, const std::vector<unsigned char>* mask) {
  require_matrix(a, "logsumexp_rows");
  const std::size_t m = a.value().rows(), n = a.value().cols();
  if (mask && mask->size() != m * n) throw ShapeError("logsumexp_rows", {a.shape()}, "mask size mismatch");
  auto keep = [mask, n](std::size_t r, std::size_t c) { return !mask || (*mask)[r * n + c] != 0; };
  Tensor out(Shape{m});
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < m; ++r) {
    auto row = a.value().row(r);
    double mx = kNegInf;
    for (std::size_t c = 0; c < n; ++c) {
      if (keep(r, c)) mx = std::max(mx, row[c]);
    }
    if (mx == kNegInf) throw ValueError("logsumexp_rows: row " + std::to_string(r) + " has no finite entries");
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
      if (keep(r, c)) s += std::exp(row[c] - mx);
    }
    out[r] = mx + std::log(s);
  }
  std::vector<unsigned char> mask_copy = mask ? *mask : std::vector<unsigned char>{};
  return a.graph->emit("logsumexp_rows", std::move(out), {a.id},
                       [id = a.id, m, n, mask_copy = std::move(mask_copy)](const Graph::BackwardArgs& args) {
                         Tensor* gi = args.in_grads[0];
                         if (!gi) return;
                         const Tensor& x = args.graph.value(id);
                         for (std::size_t r = 0; r < m; ++r) {
                           auto row = x.row(r);
                           auto dst = gi->row(r);
                           const double lse = args.out[r];
                           const double g = args.out_grad[r];
                           for (std::size_t c = 0; c < n; ++c) {
                             if (!mask_copy.empty() && mask_copy[r * n + c] == 0) continue;
                             dst[c] += g * std::exp(row[c] - lse);
                           }
                         }
                       });
}

Var softmax_rows(Var a) {
  require_matrix(a, "softmax_rows");
  const std::size_t m = a.value().rows(), n = a.value().cols();
  Tensor out(a.shape());
  for (std::size_t r = 0; r < m; ++r) {
    auto row = a.value().row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    auto dst = out.row(r);
    for (std::size_t c = 0; c < n; ++c) s += (dst[c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < n; ++c) dst[c] /= s;
  }
  return a.graph->emit("softmax_rows", std::move(out), {a.id}, [m, n](const Graph::BackwardArgs& args) {
    Tensor* gi = args.in_grads[0];
    if (!gi) return;
    for (std::size_t r = 0; r < m; ++r) {
      auto y = args.out.row(r);
      auto g = args.out_grad.row(r);
      const double yg = dot(y, g);
      auto dst = gi->row(r);
      for (std::size_t c = 0; c < n; ++c) dst[c] += y[c] * (g[c] - yg);
    }
  });
}

// ---- norms and cosine similarity ------------------------------------------

Var l2norm(Var a) {
  const double nrm = std::sqrt(squared_norm(a.value().data()));
  return a.graph->emit("l2norm", Tensor::scalar(nrm), {a.id}, [id = a.id](const Graph::BackwardArgs& args) {
    Tensor* gi = args.in_grads[0];
    if (!gi) return;
    const double nrm2 = std::max(args.out[0], kNormEps);
    const double g = args.out_grad[0];
    auto x = args.graph.value(id).data();
    auto d = gi->data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * x[i] / nrm2;
  });
}

Var l2norm_rows(Var a) {
  require_matrix(a, "l2norm_rows");
  const std::size_t m = a.value().rows(), n = a.value().cols();
  Tensor out(Shape{m});
  for (std::size_t r = 0; r < m; ++r) out[r] = std::sqrt(squared_norm(a.value().row(r)));
  return a.graph->emit("l2norm_rows", std::move(out), {a.id}, [id = a.id, m, n](const Graph::BackwardArgs& args) {
    Tensor* gi = args.in_grads[0];
    if (!gi) return;
    const Tensor& x = args.graph.value(id);
    for (std::size_t r = 0; r < m; ++r) {
      const double s = args.out_grad[r] / std::max(args.out[r], kNormEps);
      auto src = x.row(r);
      auto dst = gi->row(r);
      for (std::size_t c = 0; c < n; ++c) dst[c] += s * src[c];
    }
  });
}

Var normalize_rows(Var a) {
  require_matrix(a, "normalize_rows");
  const std::size_t m = a.value().rows(), n = a.value().cols();
  Tensor out(a.shape());
  std::vector<double> norms(m);
  for (std::size_t r = 0; r < m; ++r) {
    norms[r] = std::max(std::sqrt(squared_norm(a.value().row(r))), kNormEps);
    auto src = a.value().row(r);
    auto dst = out.row(r);
    for (std::size_t c = 0; c < n; ++c) dst[c] = src[c] / norms[r];
  }
  return a.graph->emit("normalize_rows", std::move(out), {a.id}, [norms = std::move(norms), m, n](const Graph::BackwardArgs& args) {
    Tensor* gi = args.in_grads[0];
    if (!gi) return;
    for (std::size_t r = 0; r < m; ++r) {
      auto y = args.out.row(r);
      auto g = args.out_grad.row(r);
      const double yg = dot(y, g);
      auto dst = gi->row(r);
      for (std::size_t c = 0; c < n; ++c) dst[c] += (g[c] - y[c] * yg) / norms[r];
    }
  });
}

namespace {

struct CosineParts {
  double sim;
  double na;
  double nb;
  double denom;
  bool clamped;
};

CosineParts cosine_parts(std::span<const double> a, std::span<const double> b) {
  CosineParts p{};
  p.na = std::sqrt(squared_norm(a));
  p.nb = std::sqrt(squared_norm(b));
  p.denom = p.na * p.nb;
  p.clamped = p.denom < kCosineEps;
  if (p.clamped) p.denom = kCosineEps;
  p.sim = dot(a, b) / p.denom;
  return p;
}

// Adds g * d(sim)/d(a) into da and g * d(sim)/d(b) into db.
void cosine_backward(std::span<const double> a, std::span<const double> b, const CosineParts& p, double g, double* da,
                     double* db) {
  const std::size_t n = a.size();
  if (p.clamped) {
    for (std::size_t i = 0; i < n; ++i) {
      if (da) da[i] += g * b[i] / p.denom;
      if (db) db[i] += g * a[i] / p.denom;
    }
    return;
  }
  const double inv = 1.0 / p.denom;
  const double sa = p.sim / (p.na * p.na);
  const double sb = p.sim / (p.nb * p.nb);
  for (std::size_t i = 0; i < n; ++i) {
    if (da) da[i] += g * (b[i] * inv - sa * a[i]);
    if (db) db[i] += g * (a[i] * inv - sb * b[i]);
  }
}

}  // namespace

Var cosine_similarity(Var u, Var v) {
  require_same_shape(u, v, "cosine_similarity");
  const CosineParts p = cosine_parts(u.value().data(), v.value().data());
  return u.graph->emit("cosine_similarity", Tensor::scalar(p.sim), {u.id, v.id},
                       [iu = u.id, iv = v.id, p](const Graph::BackwardArgs& args) {
                         Tensor* gu = args.in_grads[0];
                         Tensor* gv = args.in_grads[1];
                         cosine_backward(args.graph.value(iu).data(), args.graph.value(iv).data(), p, args.out_grad[0],
                                         gu ? gu->data().data() : nullptr, gv ? gv->data().data() : nullptr);
                       });
}

Var cosine_similarity_rows(Var a, Var b) {
  require_same_shape(a, b, "cosine_similarity_rows");
  require_matrix(a, "cosine_similarity_rows");
  const std::size_t m = a.value().rows();
  std::vector<CosineParts> parts(m);
  Tensor out(Shape{m});
  for (std::size_t r = 0; r < m; ++r) {
    parts[r] = cosine_parts(a.value().row(r), b.value().row(r));
    out[r] = parts[r].sim;
  }
  return a.graph->emit("cosine_similarity_rows", std::move(out), {a.id, b.id},
                       [ia = a.id, ib = b.id, parts = std::move(parts)](const Graph::BackwardArgs& args) {
                         const Tensor& av = args.graph.value(ia);
                         const Tensor& bv = args.graph.value(ib);
                         Tensor* ga = args.in_grads[0];
                         Tensor* gb = args.in_grads[1];
                         for (std::size_t r = 0; r < parts.size(); ++r) {
                           cosine_backward(av.row(r), bv.row(r), parts[r], args.out_grad[r],
                                           ga ? ga->row(r).data() : nullptr, gb ? gb->row(r).data() : nullptr);
                         }
                       });
}

// ---- evaluation helpers ---------------------------------------------------

Tensor evaluate(const GraphFn& fn, const Bindings& inputs) {
  Graph g;
  VarMap vars;
  for (const auto& [name, t] : inputs) vars.emplace(name, g.input(t, false, name));
  return fn(g, vars).value();
}

Bindings gradients(const GraphFn& fn, const Bindings& inputs) {
  Graph g;
  VarMap vars;
  for (const auto& [name, t] : inputs) vars.emplace(name, g.input(t, true, name));
  Var out = fn(g, vars);
  g.backward(out);
  Bindings grads;
  for (const auto& [name, v] : vars) grads.emplace(name, g.grad(v));
  return grads;
}

double GradCheckReport::worst() const {
  double w = 0.0;
  for (const auto& [name, e] : max_rel_error) w = std::max(w, e);
  return w;
}

GradCheckReport grad_check(const GraphFn& fn, const Bindings& inputs, double epsilon, double floor) {
  if (!(epsilon > 0.0 && epsilon <= 1e-2)) throw ValueError("grad_check: epsilon must lie in (0, 1e-2]");
  const Bindings analytic = gradients(fn, inputs);
  GradCheckReport report;
  Bindings probe = inputs;
  for (const auto& [name, t] : inputs) {
    double worst = 0.0;
    Tensor& x = probe.at(name);
    const Tensor& ga = analytic.at(name);
    for (std::size_t i = 0; i < t.numel(); ++i) {
      const double orig = x[i];
      x[i] = orig + epsilon;
      const double fp = evaluate(fn, probe).item();
      x[i] = orig - epsilon;
      const double fm = evaluate(fn, probe).item();
      x[i] = orig;
      const double numeric = (fp - fm) / (2.0 * epsilon);
      const double denom = std::max({std::abs(ga[i]), std::abs(numeric), floor});
      worst = std::max(worst, std::abs(ga[i] - numeric) / denom);
    }
    report.max_rel_error[name] = worst;
  }
  return report;
}

}  // namespace dcr

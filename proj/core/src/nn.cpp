#include "dcr/nn.hpp"

#include <cmath>
#include <cstring>

namespace dcr {

Activation activation_from_string(const std::string& s) {
  if (s == "gelu") return Activation::kGelu;
  if (s == "relu") return Activation::kRelu;
  if (s == "linear") return Activation::kLinear;
  throw ValueError("unknown activation '" + s + "' (expected gelu, relu or linear)");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kGelu:
      return "gelu";
    case Activation::kRelu:
      return "relu";
    case Activation::kLinear:
      return "linear";
  }
  return "gelu";
}

Var activate(Var x, Activation a) {
  switch (a) {
    case Activation::kGelu:
      return gelu(x);
    case Activation::kRelu:
      return relu(x);
    case Activation::kLinear:
      return x;
  }
  return x;
}

Linear make_linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Tensor w(Shape{in, out});
  for (double& x : w.data()) x = u(rng);
  Tensor b(Shape{out});
  for (double& x : b.data()) x = u(rng);
  return Linear{Parameter(name + ".weight", std::move(w)), Parameter(name + ".bias", std::move(b))};
}

Var linear(Graph& g, Linear& layer, Var x, bool trainable) {
  return add_row(matmul(x, g.parameter(layer.weight, trainable)), g.parameter(layer.bias, trainable));
}

Mlp::Mlp(const std::string& name, const std::vector<std::size_t>& widths, Activation act, Rng& rng)
    : widths_(widths), act_(act) {
  if (widths.size() < 2) throw ValueError("Mlp: need at least an input and an output width");
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    layers_.push_back(make_linear(name + ".l" + std::to_string(i), widths[i], widths[i + 1], rng));
  }
}

Var Mlp::forward(Graph& g, Var x, bool trainable) {
  if (x.shape().size() != 2 || x.shape()[1] != in_dim()) {
    throw ShapeError("mlp", {x.shape(), Shape{0, in_dim()}}, "input width must be " + std::to_string(in_dim()));
  }
  Var h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = linear(g, layers_[i], h, trainable);
    if (i + 1 < layers_.size()) h = activate(h, act_);
  }
  return h;
}

Tensor Mlp::apply(const Tensor& x) {
  Graph g;
  return forward(g, g.input(x), false).value();
}

std::vector<Parameter*> Mlp::parameters() {
  std::vector<Parameter*> out;
  for (auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::vector<const Parameter*> Mlp::parameters() const {
  std::vector<const Parameter*> out;
  for (const auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  return out;
}

std::uint64_t checksum(std::span<const Parameter* const> params) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  for (const Parameter* p : params) {
    mix(p->name.data(), p->name.size());
    for (std::size_t d : p->value.shape()) mix(&d, sizeof d);
    mix(p->value.data().data(), p->value.numel() * sizeof(double));
  }
  return h;
}

void zero_grads(std::span<Parameter* const> params) {
  for (Parameter* p : params) p->zero_grad();
}

}  // namespace dcr

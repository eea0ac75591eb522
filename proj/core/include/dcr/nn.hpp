#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dcr/autodiff.hpp"
#include "dcr/rng.hpp"

namespace dcr {

enum class Activation { kGelu, kRelu, kLinear };

Activation activation_from_string(const std::string& s);
std::string to_string(Activation a);
Var activate(Var x, Activation a);

// Fully connected layer y = x W + b with W stored in x out.
struct Linear {
  Parameter weight;
  Parameter bias;
};

// Uniform(-1/sqrt(in), 1/sqrt(in)) for both weight and bias.
Linear make_linear(const std::string& name, std::size_t in, std::size_t out, Rng& rng);
Var linear(Graph& g, Linear& layer, Var x, bool trainable);

// Stack of Linear layers with the activation between layers (none after the last).
class Mlp {
 public:
  Mlp() = default;
  Mlp(const std::string& name, const std::vector<std::size_t>& widths, Activation act, Rng& rng);

  Var forward(Graph& g, Var x, bool trainable);
  Tensor apply(const Tensor& x);

  std::size_t in_dim() const { return widths_.front(); }
  std::size_t out_dim() const { return widths_.back(); }
  Activation activation() const { return act_; }
  std::vector<Linear>& layers() { return layers_; }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

 private:
  std::vector<std::size_t> widths_;
  Activation act_ = Activation::kGelu;
  std::vector<Linear> layers_;
};

// FNV-1a over names, shapes and raw bytes of every parameter.
std::uint64_t checksum(std::span<const Parameter* const> params);
void zero_grads(std::span<Parameter* const> params);

}  // namespace dcr

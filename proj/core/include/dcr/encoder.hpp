#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dcr/nn.hpp"

namespace dcr {

struct EncoderConfig {
  std::size_t image_dim = 256;
  std::size_t hidden = 128;
  std::size_t feature_dim = 32;
};

struct ProjectorConfig {
  std::size_t feature_dim = 32;
  std::size_t hidden = 32;
  std::size_t cond_dim = 32;
  Activation activation = Activation::kGelu;
};

// f: flattened image -> feature z, two GELU hidden layers.
class Encoder {
 public:
  Encoder() = default;
  Encoder(const EncoderConfig& cfg, std::uint64_t seed, std::uint64_t stream = streams::kEncoderInit);

  const EncoderConfig& config() const { return cfg_; }
  // x: n x image_dim -> n x feature_dim. Parameters join the graph as trainable unless frozen.
  Var encode(Graph& g, Var x);
  Tensor encode(const Tensor& x);

  std::vector<Parameter*> parameters() { return net_.parameters(); }
  std::vector<const Parameter*> parameters() const { return std::as_const(net_).parameters(); }
  Mlp& net() { return net_; }

  bool frozen = false;

 private:
  EncoderConfig cfg_;
  Mlp net_;
};

// h: feature z -> condition c, a two-layer MLP.
class Projector {
 public:
  Projector() = default;
  Projector(const ProjectorConfig& cfg, std::uint64_t seed, std::uint64_t stream = streams::kProjectorInit,
            const std::string& name = "projector");
  // Square projector with identity weights and zero biases.
  static Projector identity(std::size_t dim, Activation act = Activation::kLinear);

  const ProjectorConfig& config() const { return cfg_; }
  Var project(Graph& g, Var z);
  Tensor project(const Tensor& z);

  std::vector<Parameter*> parameters() { return net_.parameters(); }
  std::vector<const Parameter*> parameters() const { return std::as_const(net_).parameters(); }

  bool frozen = false;

 private:
  ProjectorConfig cfg_;
  Mlp net_;
};

}  // namespace dcr

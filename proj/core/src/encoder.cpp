#include "dcr/encoder.hpp"

namespace dcr {

Encoder::Encoder(const EncoderConfig& cfg, std::uint64_t seed, std::uint64_t stream) : cfg_(cfg) {
  Rng rng = make_rng(seed, stream);
  net_ = Mlp("encoder", {cfg.image_dim, cfg.hidden, cfg.hidden, cfg.feature_dim}, Activation::kGelu, rng);
}

Var Encoder::encode(Graph& g, Var x) {
  if (x.shape().size() != 2 || x.shape()[1] != cfg_.image_dim) {
    throw ShapeError("encode", {x.shape(), Shape{0, cfg_.image_dim}}, "image dimension mismatch");
  }
  return net_.forward(g, x, !frozen);
}

Tensor Encoder::encode(const Tensor& x) {
  Graph g;
  return encode(g, g.input(x)).value();
}

Projector::Projector(const ProjectorConfig& cfg, std::uint64_t seed, std::uint64_t stream, const std::string& name)
    : cfg_(cfg) {
  Rng rng = make_rng(seed, stream);
  net_ = Mlp(name, {cfg.feature_dim, cfg.hidden, cfg.cond_dim}, cfg.activation, rng);
}

Projector Projector::identity(std::size_t dim, Activation act) {
  Projector p(ProjectorConfig{dim, dim, dim, act}, 0);
  for (Linear& l : p.net_.layers()) {
    l.bias.value.fill(0.0);
    l.weight.value.fill(0.0);
    for (std::size_t i = 0; i < dim; ++i) l.weight.value.at(i, i) = 1.0;
  }
  return p;
}

Var Projector::project(Graph& g, Var z) {
  if (z.shape().size() != 2 || z.shape()[1] != cfg_.feature_dim) {
    throw ShapeError("project", {z.shape(), Shape{0, cfg_.feature_dim}}, "feature dimension mismatch");
  }
  return net_.forward(g, z, !frozen);
}

Tensor Projector::project(const Tensor& z) {
  Graph g;
  return project(g, g.input(z)).value();
}

}  // namespace dcr

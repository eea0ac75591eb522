#include "dcr/optim.hpp"

#include <cmath>

namespace dcr {

AdamW::AdamW(std::vector<Parameter*> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0 && cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) {
    throw ValueError("AdamW: betas must lie in [0, 1)");
  }
  if (!(cfg.eps > 0.0) || !(cfg.weight_decay >= 0.0)) throw ValueError("AdamW: need eps > 0 and weight_decay >= 0");
  for (const Parameter* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void AdamW::step(double lr) {
  if (!(lr > 0.0)) throw ValueError("AdamW: learning rate must be positive");
  for (const Parameter* p : params_) {
    if (p->grad.shape() != p->value.shape()) throw ShapeError("adamw_step", {p->value.shape(), p->grad.shape()}, p->name);
    if (!all_finite(p->grad.data())) throw ValueError("non-finite gradient in parameter '" + p->name + "'");
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  const double decay = 1.0 - lr * cfg_.weight_decay;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto theta = params_[i]->value.data();
    auto g = params_[i]->grad.data();
    auto m = m_[i].data();
    auto v = v_[i].data();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * g[j];
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * g[j] * g[j];
      theta[j] = theta[j] * decay - lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + cfg_.eps);
    }
  }
}

void AdamW::zero_grad() {
  for (Parameter* p : params_) p->zero_grad();
}

}  // namespace dcr

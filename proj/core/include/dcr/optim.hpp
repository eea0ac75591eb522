#pragma once

#include <cstddef>
#include <vector>

#include "dcr/autodiff.hpp"

namespace dcr {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// AdamW with decoupled weight decay:
//   theta <- theta * (1 - lr * wd)
//   theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
// Gradients are read from each Parameter's grad slot.
class AdamW {
 public:
  AdamW() = default;
  AdamW(std::vector<Parameter*> params, AdamWConfig cfg = {});

  // Throws ValueError naming the parameter if any gradient is not finite; in
  // that case no parameter is modified.
  void step(double lr);
  void zero_grad();

  std::size_t steps() const { return steps_; }
  const AdamWConfig& config() const { return cfg_; }
  const std::vector<Parameter*>& parameters() const { return params_; }
  const Tensor& first_moment(std::size_t i) const { return m_.at(i); }
  const Tensor& second_moment(std::size_t i) const { return v_.at(i); }

 private:
  std::vector<Parameter*> params_;
  AdamWConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::size_t steps_ = 0;
};

}  // namespace dcr

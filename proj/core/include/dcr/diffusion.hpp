#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dcr/autodiff.hpp"
#include "dcr/nn.hpp"

namespace dcr {

enum class VarianceChoice {
  kBeta,       // sigma_t^2 = beta_t
  kPosterior,  // sigma_t^2 = (1 - abar_{t-1}) / (1 - abar_t) * beta_t
};

VarianceChoice variance_from_string(const std::string& s);
std::string to_string(VarianceChoice v);

// Per-step noise schedule. Vectors are indexed by t - 1 for t in [1, T];
// the accessors take the 1-based step.
struct DiffusionSchedule {
  std::size_t steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;
  std::vector<double> sigma_sq;
  VarianceChoice variance = VarianceChoice::kBeta;

  double beta_at(std::size_t t) const { return beta.at(t - 1); }
  double alpha_at(std::size_t t) const { return alpha.at(t - 1); }
  double alpha_bar_at(std::size_t t) const { return alpha_bar.at(t - 1); }
  double sigma_sq_at(std::size_t t) const { return sigma_sq.at(t - 1); }
  void check_step(std::size_t t) const;
};

// Linear betas from beta_start to beta_end; abar is the exact running product.
DiffusionSchedule build_schedule(std::size_t steps, double beta_start, double beta_end,
                                 VarianceChoice variance = VarianceChoice::kBeta);
DiffusionSchedule schedule_from_betas(std::vector<double> betas, VarianceChoice variance = VarianceChoice::kBeta);

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, no clamping.
Tensor forward_noise(const Tensor& x0, std::size_t t, const Tensor& eps, const DiffusionSchedule& sched);
Tensor forward_noise(const Tensor& x0, const Tensor& eps, double alpha_bar);

// mu = (x_t - beta / sqrt(1 - abar) * eps_hat) / sqrt(alpha)
Tensor posterior_mean(const Tensor& x_t, const Tensor& eps_hat, double alpha, double alpha_bar, double beta);

// x_{t-1} = mu + sigma_t * noise. noise is required for t > 1 and forbidden at t = 1.
Tensor reverse_step(const Tensor& x_t, const Tensor& eps_hat, std::size_t t, const DiffusionSchedule& sched,
                    const Tensor* noise);

struct DenoiserConfig {
  std::size_t image_dim = 256;
  std::size_t cond_dim = 32;
  std::size_t time_dim = 32;
  std::size_t hidden = 256;
  std::size_t max_timestep = 100;
};

// Sinusoidal embedding of a timestep: (sin(t w_i), cos(t w_i)) with w_i = 10000^(-2i/d).
Tensor time_embedding(std::size_t t, std::size_t dim);

// One (noisy image row, condition row) combination for predict_pairs.
struct NoisePair {
  std::size_t x_row;
  std::size_t cond_row;
};

// Conditional noise predictor: a 2-hidden-layer GELU network on the
// concatenation [x_t, embed(t), c]. The first layer's weight is kept as three
// row blocks (x, time, condition); the product with the concatenated input is
// the sum of the block products, which lets predict_pairs reuse the x and c
// halves across many combinations.
class Denoiser {
 public:
  Denoiser() = default;
  Denoiser(const DenoiserConfig& cfg, std::uint64_t seed);
  static Denoiser zeros(const DenoiserConfig& cfg);

  const DenoiserConfig& config() const { return cfg_; }

  // x_t: n x image_dim, t: n steps, c: n x cond_dim.
  Var predict(Graph& g, Var x_t, std::span<const std::size_t> t, Var c, bool trainable);
  // Rows follow pairs: row r predicts noise for x_t[pairs[r].x_row] at t[pairs[r].x_row]
  // under condition conds[pairs[r].cond_row].
  Var predict_pairs(Graph& g, Var x_t, std::span<const std::size_t> t, Var conds, std::span<const NoisePair> pairs,
                    bool trainable);
  // Single-image convenience; x_t and c are flat vectors.
  Tensor predict(const Tensor& x_t, std::size_t t, const Tensor& c);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  bool frozen = false;

 private:
  void check_inputs(Var x_t, std::span<const std::size_t> t, Var c, std::size_t c_rows) const;
  Var hidden_to_output(Graph& g, Var pre1, bool trainable);

  DenoiserConfig cfg_;
  Parameter w_x_, w_t_, w_c_, b1_;
  Linear l2_, l3_;
};

// Full reverse chain from a seeded Gaussian x_T. c is a flat condition vector.
Tensor sample(Denoiser& denoiser, const Tensor& c, const DiffusionSchedule& sched, std::uint64_t seed);

}  // namespace dcr

#include "dcr/diffusion.hpp"

#include <cmath>

namespace dcr {

VarianceChoice variance_from_string(const std::string& s) {
  if (s == "beta") return VarianceChoice::kBeta;
  if (s == "posterior") return VarianceChoice::kPosterior;
  throw ValueError("unknown variance choice '" + s + "' (expected beta or posterior)");
}

std::string to_string(VarianceChoice v) { return v == VarianceChoice::kBeta ? "beta" : "posterior"; }

void DiffusionSchedule::check_step(std::size_t t) const {
  if (t < 1 || t > steps) {
    throw ValueError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps) + "]");
  }
}

DiffusionSchedule schedule_from_betas(std::vector<double> betas, VarianceChoice variance) {
  if (betas.empty()) throw ValueError("schedule: need at least one step");
  DiffusionSchedule s;
  s.steps = betas.size();
  s.variance = variance;
  s.beta = std::move(betas);
  double running = 1.0;
  for (std::size_t i = 0; i < s.steps; ++i) {
    const double b = s.beta[i];
    if (!(b > 0.0 && b < 1.0)) throw ValueError("schedule: beta must lie in (0, 1), got " + std::to_string(b));
    const double a = 1.0 - b;
    const double prev = running;
    running *= a;
    s.alpha.push_back(a);
    s.alpha_bar.push_back(running);
    s.sigma_sq.push_back(variance == VarianceChoice::kBeta ? b : (1.0 - prev) / (1.0 - running) * b);
  }
  return s;
}

DiffusionSchedule build_schedule(std::size_t steps, double beta_start, double beta_end, VarianceChoice variance) {
  if (steps < 1) throw ValueError("schedule: T must be at least 1");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw ValueError("schedule: need 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(steps - 1);
    betas[i] = beta_start + (beta_end - beta_start) * frac;
  }
  return schedule_from_betas(std::move(betas), variance);
}

Tensor forward_noise(const Tensor& x0, const Tensor& eps, double alpha_bar) {
  if (x0.shape() != eps.shape()) throw ShapeError("forward_noise", {x0.shape(), eps.shape()});
  const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

Tensor forward_noise(const Tensor& x0, std::size_t t, const Tensor& eps, const DiffusionSchedule& sched) {
  sched.check_step(t);
  return forward_noise(x0, eps, sched.alpha_bar_at(t));
}

Tensor posterior_mean(const Tensor& x_t, const Tensor& eps_hat, double alpha, double alpha_bar, double beta) {
  if (x_t.shape() != eps_hat.shape()) throw ShapeError("posterior_mean", {x_t.shape(), eps_hat.shape()});
  const double coef = beta / std::sqrt(1.0 - alpha_bar);
  const double inv = 1.0 / std::sqrt(alpha);
  Tensor out(x_t.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = inv * (x_t[i] - coef * eps_hat[i]);
  return out;
}

Tensor reverse_step(const Tensor& x_t, const Tensor& eps_hat, std::size_t t, const DiffusionSchedule& sched,
                    const Tensor* noise) {
  sched.check_step(t);
  if (t > 1 && noise == nullptr) throw ValueError("reverse_step: noise is required for t > 1");
  if (t == 1 && noise != nullptr) throw ValueError("reverse_step: noise must be omitted at t = 1");
  Tensor mu = posterior_mean(x_t, eps_hat, sched.alpha_at(t), sched.alpha_bar_at(t), sched.beta_at(t));
  if (noise) {
    if (noise->shape() != mu.shape()) throw ShapeError("reverse_step", {mu.shape(), noise->shape()});
    const double sigma = std::sqrt(sched.sigma_sq_at(t));
    for (std::size_t i = 0; i < mu.numel(); ++i) mu[i] += sigma * (*noise)[i];
  }
  return mu;
}

Tensor time_embedding(std::size_t t, std::size_t dim) {
  Tensor out(Shape{dim});
  const double tt = static_cast<double>(t);
  for (std::size_t i = 0; 2 * i < dim; ++i) {
    const double w = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
    out[2 * i] = std::sin(tt * w);
    if (2 * i + 1 < dim) out[2 * i + 1] = std::cos(tt * w);
  }
  return out;
}

Denoiser::Denoiser(const DenoiserConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.image_dim == 0 || cfg.cond_dim == 0 || cfg.time_dim == 0 || cfg.hidden == 0) {
    throw ValueError("denoiser: all dimensions must be positive");
  }
  Rng rng = make_rng(seed, streams::kDenoiserInit);
  const std::size_t fan_in = cfg.image_dim + cfg.time_dim + cfg.cond_dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-bound, bound);
  auto block = [&](const char* name, std::size_t rows) {
    Tensor w(Shape{rows, cfg.hidden});
    for (double& x : w.data()) x = u(rng);
    return Parameter(std::string("denoiser.") + name, std::move(w));
  };
  w_x_ = block("w_x", cfg.image_dim);
  w_t_ = block("w_t", cfg.time_dim);
  w_c_ = block("w_c", cfg.cond_dim);
  Tensor b(Shape{cfg.hidden});
  for (double& x : b.data()) x = u(rng);
  b1_ = Parameter("denoiser.b1", std::move(b));
  l2_ = make_linear("denoiser.l2", cfg.hidden, cfg.hidden, rng);
  l3_ = make_linear("denoiser.l3", cfg.hidden, cfg.image_dim, rng);
}

Denoiser Denoiser::zeros(const DenoiserConfig& cfg) {
  Denoiser d(cfg, 0);
  for (Parameter* p : d.parameters()) p->value.fill(0.0);
  return d;
}

std::vector<Parameter*> Denoiser::parameters() {
  return {&w_x_, &w_t_, &w_c_, &b1_, &l2_.weight, &l2_.bias, &l3_.weight, &l3_.bias};
}

std::vector<const Parameter*> Denoiser::parameters() const {
  return {&w_x_, &w_t_, &w_c_, &b1_, &l2_.weight, &l2_.bias, &l3_.weight, &l3_.bias};
}

void Denoiser::check_inputs(Var x_t, std::span<const std::size_t> t, Var c, std::size_t c_rows) const {
  const Shape& xs = x_t.shape();
  if (xs.size() != 2 || xs[1] != cfg_.image_dim) {
    throw ShapeError("predict_noise", {xs, Shape{xs.empty() ? 0 : xs[0], cfg_.image_dim}}, "x_t width");
  }
  const Shape& cs = c.shape();
  if (cs.size() != 2 || cs[1] != cfg_.cond_dim || (c_rows != 0 && cs[0] != c_rows)) {
    throw ShapeError("predict_noise", {cs, Shape{c_rows, cfg_.cond_dim}}, "condition dimension");
  }
  if (t.size() != xs[0]) throw ValueError("predict_noise: need one timestep per x_t row");
  for (std::size_t s : t) {
    if (s < 1 || s > cfg_.max_timestep) {
      throw ValueError("predict_noise: timestep " + std::to_string(s) + " outside [1, " + std::to_string(cfg_.max_timestep) + "]");
    }
  }
}

Var Denoiser::hidden_to_output(Graph& g, Var pre1, bool trainable) {
  Var h = gelu(add_row(pre1, g.parameter(b1_, trainable)));
  h = gelu(linear(g, l2_, h, trainable));
  return linear(g, l3_, h, trainable);
}

namespace {

Tensor embeddings(std::span<const std::size_t> t, std::size_t dim) {
  Tensor out(Shape{t.size(), dim});
  for (std::size_t r = 0; r < t.size(); ++r) {
    const Tensor e = time_embedding(t[r], dim);
    std::copy(e.data().begin(), e.data().end(), out.row(r).begin());
  }
  return out;
}

}  // namespace

Var Denoiser::predict(Graph& g, Var x_t, std::span<const std::size_t> t, Var c, bool trainable) {
  check_inputs(x_t, t, c, x_t.shape()[0]);
  Var temb = g.constant(embeddings(t, cfg_.time_dim));
  Var pre = matmul(x_t, g.parameter(w_x_, trainable)) + matmul(temb, g.parameter(w_t_, trainable)) +
            matmul(c, g.parameter(w_c_, trainable));
  return hidden_to_output(g, pre, trainable);
}

Var Denoiser::predict_pairs(Graph& g, Var x_t, std::span<const std::size_t> t, Var conds,
                            std::span<const NoisePair> pairs, bool trainable) {
  check_inputs(x_t, t, conds, 0);
  std::vector<std::size_t> x_rows, c_rows;
  x_rows.reserve(pairs.size());
  c_rows.reserve(pairs.size());
  for (const NoisePair& p : pairs) {
    x_rows.push_back(p.x_row);
    c_rows.push_back(p.cond_row);
  }
  Var temb = g.constant(embeddings(t, cfg_.time_dim));
  Var x_part = matmul(x_t, g.parameter(w_x_, trainable)) + matmul(temb, g.parameter(w_t_, trainable));
  Var c_part = matmul(conds, g.parameter(w_c_, trainable));
  Var pre = gather_rows(x_part, std::move(x_rows)) + gather_rows(c_part, std::move(c_rows));
  return hidden_to_output(g, pre, trainable);
}

Tensor Denoiser::predict(const Tensor& x_t, std::size_t t, const Tensor& c) {
  Graph g;
  Var x = g.input(x_t.reshaped(Shape{1, x_t.numel()}));
  Var cv = g.input(c.reshaped(Shape{1, c.numel()}));
  const std::size_t ts[1] = {t};
  return predict(g, x, ts, cv, false).value().reshaped(x_t.shape());
}

Tensor sample(Denoiser& denoiser, const Tensor& c, const DiffusionSchedule& sched, std::uint64_t seed) {
  Rng rng = make_rng(seed, streams::kSample);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t d = denoiser.config().image_dim;
  Tensor x(Shape{d});
  for (double& v : x.data()) v = normal(rng);
  for (std::size_t t = sched.steps; t >= 1; --t) {
    const Tensor eps_hat = denoiser.predict(x, t, c);
    if (t > 1) {
      Tensor z(Shape{d});
      for (double& v : z.data()) v = normal(rng);
      x = reverse_step(x, eps_hat, t, sched, &z);
    } else {
      x = reverse_step(x, eps_hat, t, sched, nullptr);
    }
  }
  return x;
}

}  // namespace dcr

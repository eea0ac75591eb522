#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dcr/diffusion.hpp"
#include "dcr/encoder.hpp"
#include "test_util.hpp"

namespace dcr {
namespace {

using testing::gaussian_tensor;
using testing::param_grad_check;
using testing::random_tensor;

DenoiserConfig small_denoiser() { return {12, 5, 6, 16, 10}; }

TEST(Schedule, SingleStep) {
  const auto s = build_schedule(1, 0.5, 0.5);
  EXPECT_EQ(s.alpha_at(1), 0.5);
  EXPECT_EQ(s.alpha_bar_at(1), 0.5);
}

TEST(Schedule, TwoStepProducts) {
  const auto s = schedule_from_betas({0.1, 0.2});
  EXPECT_NEAR(s.alpha_bar_at(1), 0.9, 1e-15);
  EXPECT_NEAR(s.alpha_bar_at(2), 0.72, 1e-15);
  const auto lin = build_schedule(2, 0.1, 0.2);
  EXPECT_EQ(lin.alpha_bar, s.alpha_bar);
}

TEST(Schedule, RecursionIsExactAndMonotone) {
  const auto s = build_schedule(100, 1e-4, 0.02);
  EXPECT_DOUBLE_EQ(s.beta_at(1), 1e-4);
  EXPECT_DOUBLE_EQ(s.beta_at(100), 0.02);
  EXPECT_EQ(s.alpha_bar_at(1), s.alpha_at(1));
  for (std::size_t t = 2; t <= 100; ++t) {
    EXPECT_EQ(s.alpha_bar_at(t), s.alpha_bar_at(t - 1) * s.alpha_at(t));
    EXPECT_LT(s.alpha_bar_at(t), s.alpha_bar_at(t - 1));
  }
}

TEST(Schedule, PosteriorVariance) {
  const auto s = schedule_from_betas({0.1, 0.2}, VarianceChoice::kPosterior);
  EXPECT_EQ(s.sigma_sq_at(1), 0.0);
  EXPECT_NEAR(s.sigma_sq_at(2), (1 - 0.9) / (1 - 0.72) * 0.2, 1e-15);
  EXPECT_EQ(build_schedule(3, 0.1, 0.2).sigma_sq, build_schedule(3, 0.1, 0.2).beta);
}

TEST(Schedule, RejectsInvalidRanges) {
  EXPECT_THROW(build_schedule(0, 0.1, 0.2), ValueError);
  EXPECT_THROW(build_schedule(10, 0.0, 0.2), ValueError);
  EXPECT_THROW(build_schedule(10, 0.3, 0.2), ValueError);
  EXPECT_THROW(build_schedule(10, 0.1, 1.0), ValueError);
  EXPECT_THROW(variance_from_string("sigma"), ValueError);
}

TEST(ForwardNoise, ScalarCase) {
  const Tensor x = forward_noise(Tensor::vector({2.0}), Tensor::vector({1.0}), 0.25);
  EXPECT_NEAR(x[0], 0.5 * 2.0 + std::sqrt(0.75), 1e-15);
  EXPECT_NEAR(x[0], 1.866025, 1e-6);
}

TEST(ForwardNoise, Endpoints) {
  std::mt19937_64 rng(1);
  const Tensor x0 = random_tensor(rng, {7}), eps = random_tensor(rng, {7});
  EXPECT_EQ(forward_noise(x0, eps, 1.0), x0);
  EXPECT_EQ(forward_noise(x0, eps, 0.0), eps);
}

Tensor lincomb(double sa, const Tensor& a, double sb, const Tensor& b) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = sa * a[i] + sb * b[i];
  return out;
}

TEST(ForwardNoise, Superposition) {
  std::mt19937_64 rng(2);
  const auto s = build_schedule(100, 1e-4, 0.02);
  const Tensor a = random_tensor(rng, {9}), b = random_tensor(rng, {9});
  const Tensor e = random_tensor(rng, {9}), f = random_tensor(rng, {9});
  const Tensor lhs = forward_noise(lincomb(2.0, a, -0.5, b), 40, lincomb(2.0, e, -0.5, f), s);
  const Tensor rhs = lincomb(2.0, forward_noise(a, 40, e, s), -0.5, forward_noise(b, 40, f, s));
  for (std::size_t i = 0; i < 9; ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-14);
}

TEST(ForwardNoise, Errors) {
  const auto s = build_schedule(10, 1e-4, 0.02);
  EXPECT_THROW(forward_noise(Tensor(Shape{3}), 1, Tensor(Shape{4}), s), ShapeError);
  EXPECT_THROW(forward_noise(Tensor(Shape{3}), 0, Tensor(Shape{3}), s), ValueError);
  EXPECT_THROW(forward_noise(Tensor(Shape{3}), 11, Tensor(Shape{3}), s), ValueError);
}

TEST(ReverseStep, ZeroPredictedNoise) {
  const auto s = schedule_from_betas({0.1, 0.2});
  const Tensor x = Tensor::vector({1.0, -2.0});
  const Tensor mu = reverse_step(x, Tensor(Shape{2}), 1, s, nullptr);
  EXPECT_NEAR(mu[0], 1.0 / std::sqrt(0.9), 1e-15);
  EXPECT_NEAR(mu[1], -2.0 / std::sqrt(0.9), 1e-15);
}

TEST(ReverseStep, ScalarPosteriorMean) {
  const Tensor mu = posterior_mean(Tensor::vector({1.0}), Tensor::vector({1.0}), 0.99, 0.5, 0.01);
  EXPECT_NEAR(mu[0], (1.0 - 0.01 / std::sqrt(0.5)) / std::sqrt(0.99), 1e-15);
  EXPECT_NEAR(mu[0], 0.990824, 1e-6);
}

TEST(ReverseStep, SmallBetaIsNearIdentity) {
  const Tensor x = Tensor::vector({0.7});
  const Tensor mu = posterior_mean(x, Tensor::vector({1.0}), 1.0 - 1e-12, 0.5, 1e-12);
  EXPECT_NEAR(mu[0], 0.7, 1e-11);
}

TEST(ReverseStep, NoiseRule) {
  const auto s = schedule_from_betas({0.1, 0.2});
  const Tensor x = Tensor::vector({1.0}), e = Tensor::vector({0.5}), z = Tensor::vector({2.0});
  EXPECT_THROW(reverse_step(x, e, 2, s, nullptr), ValueError);
  EXPECT_THROW(reverse_step(x, e, 1, s, &z), ValueError);
  const Tensor out = reverse_step(x, e, 2, s, &z);
  const Tensor mu = posterior_mean(x, e, 0.8, 0.72, 0.2);
  EXPECT_NEAR(out[0], mu[0] + std::sqrt(0.2) * 2.0, 1e-15);
}

TEST(TimeEmbedding, SinCosPairs) {
  const Tensor e = time_embedding(3, 6);
  for (std::size_t i = 0; i < 3; ++i) {
    const double w = std::pow(10000.0, -2.0 * i / 6.0);
    EXPECT_DOUBLE_EQ(e[2 * i], std::sin(3 * w));
    EXPECT_DOUBLE_EQ(e[2 * i + 1], std::cos(3 * w));
  }
}

TEST(Denoiser, ZeroParametersGiveBiasPattern) {
  Denoiser d = Denoiser::zeros(small_denoiser());
  Parameter* out_bias = d.parameters().back();
  for (std::size_t i = 0; i < out_bias->value.numel(); ++i) out_bias->value[i] = 0.1 * static_cast<double>(i);
  std::mt19937_64 rng(3);
  const Tensor x = random_tensor(rng, {12});
  const Tensor a = d.predict(x, 4, random_tensor(rng, {5}));
  const Tensor b = d.predict(x, 7, random_tensor(rng, {5}));
  EXPECT_EQ(a, out_bias->value);
  EXPECT_EQ(b, out_bias->value);
}

TEST(Denoiser, DeterministicAndSeedDependent) {
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor(rng, {12}), c = random_tensor(rng, {5});
  Denoiser a(small_denoiser(), 9), b(small_denoiser(), 9), other(small_denoiser(), 10);
  EXPECT_EQ(a.predict(x, 3, c), a.predict(x, 3, c));
  EXPECT_EQ(a.predict(x, 3, c), b.predict(x, 3, c));
  EXPECT_NE(a.predict(x, 3, c), other.predict(x, 3, c));
}

TEST(Denoiser, ConditionGradientMatchesFiniteDifferences) {
  Denoiser d(small_denoiser(), 1);
  std::mt19937_64 rng(5);
  for (int rep = 0; rep < 20; ++rep) {
    Bindings in{{"x", random_tensor(rng, {3, 12})}, {"c", random_tensor(rng, {3, 5})}};
    const std::vector<std::size_t> t{1, 5, 10};
    GraphFn f = [&](Graph& g, const VarMap& v) {
      Var e = d.predict(g, v.at("x"), t, v.at("c"), false);
      return sum(e * e);
    };
    EXPECT_LT(grad_check(f, in).worst(), 1e-5);
  }
}

TEST(Denoiser, ParameterGradientsMatchFiniteDifferences) {
  Denoiser d(small_denoiser(), 2);
  std::mt19937_64 rng(6);
  const Tensor x = random_tensor(rng, {3, 12}), c = random_tensor(rng, {3, 5});
  const std::vector<std::size_t> t{2, 3, 9};
  auto build = [&](Graph& g) {
    Var e = d.predict(g, g.constant(x), t, g.constant(c), true);
    return mean(e * e);
  };
  EXPECT_LT(param_grad_check(build, d.parameters()), 1e-5);
}

TEST(Denoiser, PairsMatchDirectPrediction) {
  Denoiser d(small_denoiser(), 3);
  std::mt19937_64 rng(7);
  const Tensor x = random_tensor(rng, {2, 12}), c = random_tensor(rng, {3, 5});
  const std::vector<std::size_t> t{4, 8};
  const std::vector<NoisePair> pairs{{0, 2}, {1, 0}, {0, 1}};
  Graph g;
  const Tensor got = d.predict_pairs(g, g.constant(x), t, g.constant(c), pairs, false).value();
  for (std::size_t r = 0; r < pairs.size(); ++r) {
    Tensor xr(Shape{12}), cr(Shape{5});
    std::copy(x.row(pairs[r].x_row).begin(), x.row(pairs[r].x_row).end(), xr.data().begin());
    std::copy(c.row(pairs[r].cond_row).begin(), c.row(pairs[r].cond_row).end(), cr.data().begin());
    const Tensor want = d.predict(xr, t[pairs[r].x_row], cr);
    for (std::size_t j = 0; j < 12; ++j) EXPECT_NEAR(got.at(r, j), want[j], 1e-13);
  }
}

TEST(Denoiser, RejectsBadInputs) {
  Denoiser d(small_denoiser(), 1);
  EXPECT_THROW(d.predict(Tensor(Shape{12}), 1, Tensor(Shape{4})), ShapeError);
  EXPECT_THROW(d.predict(Tensor(Shape{11}), 1, Tensor(Shape{5})), ShapeError);
  EXPECT_THROW(d.predict(Tensor(Shape{12}), 0, Tensor(Shape{5})), ValueError);
  EXPECT_THROW(d.predict(Tensor(Shape{12}), 11, Tensor(Shape{5})), ValueError);
}

TEST(Sample, DeterministicWithConfiguredShape) {
  Denoiser d(small_denoiser(), 4);
  const auto s = build_schedule(10, 1e-4, 0.02);
  const Tensor c = Tensor::vector({0.1, 0.2, -0.3, 0.0, 1.0});
  const Tensor a = sample(d, c, s, 5);
  EXPECT_EQ(a.shape(), Shape{12});
  EXPECT_EQ(a, sample(d, c, s, 5));
  EXPECT_NE(a, sample(d, c, s, 6));
}

// Trains the denoiser on a single prototype and checks that samples move towards it.
TEST(Sample, TrainingOnOneImageApproachesThePrototype) {
  DenoiserConfig cfg{8, 2, 8, 32, 20};
  Denoiser d(cfg, 1);
  const auto s = build_schedule(20, 1e-3, 0.2);
  Tensor proto(Shape{8});
  for (std::size_t i = 0; i < 8; ++i) proto[i] = i % 2 ? 0.8 : -0.6;
  const Tensor c = Tensor::vector({1.0, 0.0});
  auto sample_error = [&] {
    double err = 0.0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Tensor x = sample(d, c, s, seed);
      for (std::size_t i = 0; i < 8; ++i) err += std::abs(x[i] - proto[i]) / 160.0;
    }
    return err;
  };
  const double before = sample_error();
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<std::size_t> step(1, 20);
  const double lr = 3e-3;
  std::vector<Tensor> m1, m2;
  for (Parameter* p : d.parameters()) {
    m1.emplace_back(p->value.shape());
    m2.emplace_back(p->value.shape());
  }
  for (int it = 1; it <= 1500; ++it) {
    std::vector<std::size_t> t(16);
    Tensor x0(Shape{16, 8}), cs(Shape{16, 2});
    for (std::size_t r = 0; r < 16; ++r) {
      t[r] = step(rng);
      std::copy(proto.data().begin(), proto.data().end(), x0.row(r).begin());
      cs.at(r, 0) = 1.0;
    }
    const Tensor eps = gaussian_tensor(rng, {16, 8});
    Tensor xt(Shape{16, 8});
    for (std::size_t r = 0; r < 16; ++r) {
      const double ab = s.alpha_bar_at(t[r]);
      for (std::size_t j = 0; j < 8; ++j) xt.at(r, j) = std::sqrt(ab) * x0.at(r, j) + std::sqrt(1 - ab) * eps.at(r, j);
    }
    for (Parameter* p : d.parameters()) p->zero_grad();
    Graph g;
    Var diff = d.predict(g, g.constant(xt), t, g.constant(cs), true) - g.constant(eps);
    g.backward(mean(diff * diff));
    // Plain Adam, kept local so this test only depends on the diffusion module.
    const auto params = d.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      for (std::size_t i = 0; i < params[k]->value.numel(); ++i) {
        const double gr = params[k]->grad[i];
        m1[k][i] = 0.9 * m1[k][i] + 0.1 * gr;
        m2[k][i] = 0.999 * m2[k][i] + 0.001 * gr * gr;
        const double mh = m1[k][i] / (1 - std::pow(0.9, it)), vh = m2[k][i] / (1 - std::pow(0.999, it));
        params[k]->value[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
      }
    }
  }
  const double after = sample_error();
  EXPECT_LT(after, before);
}

TEST(Encoder, ZeroInputThroughZeroFinalLayerGivesBias) {
  Encoder e({6, 8, 4}, 1);
  Linear& last = e.net().layers().back();
  last.weight.value.fill(0.0);
  const Tensor z = e.encode(Tensor(Shape{1, 6}));
  for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(z.at(0, j), last.bias.value[j]);
}

TEST(Encoder, DeterministicAndBatchConsistent) {
  Encoder e({6, 8, 4}, 2);
  std::mt19937_64 rng(9);
  const Tensor x = random_tensor(rng, {5, 6});
  const Tensor z = e.encode(x);
  EXPECT_EQ(z, e.encode(x));
  for (std::size_t r = 0; r < 5; ++r) {
    Tensor one(Shape{1, 6});
    std::copy(x.row(r).begin(), x.row(r).end(), one.data().begin());
    const Tensor zr = e.encode(one);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(zr.at(0, j), z.at(r, j), 1e-14);
  }
}

TEST(Encoder, ParameterGradientsOfSquaredNorm) {
  Encoder e({6, 8, 4}, 3);
  std::mt19937_64 rng(10);
  for (int rep = 0; rep < 5; ++rep) {
    const Tensor x = random_tensor(rng, {3, 6});
    auto build = [&](Graph& g) {
      Var z = e.encode(g, g.constant(x));
      return sum(z * z);
    };
    EXPECT_LT(param_grad_check(build, e.parameters()), 1e-5);
  }
}

TEST(Encoder, RejectsWrongWidth) {
  Encoder e({6, 8, 4}, 1);
  EXPECT_THROW(e.encode(Tensor(Shape{2, 5})), ShapeError);
}

TEST(Projector, IdentityLinearIsExact) {
  Projector p = Projector::identity(4);
  std::mt19937_64 rng(11);
  const Tensor z = random_tensor(rng, {3, 4});
  EXPECT_EQ(p.project(z), z);
}

TEST(Projector, GradientWithRespectToFeatures) {
  Projector p({4, 6, 3, Activation::kGelu}, 5);
  std::mt19937_64 rng(12);
  for (int rep = 0; rep < 20; ++rep) {
    Bindings in{{"z", random_tensor(rng, {3, 4})}};
    GraphFn f = [&](Graph& g, const VarMap& v) {
      Var c = p.project(g, v.at("z"));
      return sum(c * c * c);
    };
    EXPECT_LT(grad_check(f, in).worst(), 1e-5);
  }
}

TEST(Projector, BatchedMatchesPerItem) {
  Projector p({4, 6, 3, Activation::kGelu}, 6);
  std::mt19937_64 rng(13);
  const Tensor z = random_tensor(rng, {4, 4});
  const Tensor all = p.project(z);
  for (std::size_t r = 0; r < 4; ++r) {
    Tensor one(Shape{1, 4});
    std::copy(z.row(r).begin(), z.row(r).end(), one.data().begin());
    const Tensor c = p.project(one);
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(c.at(0, j), all.at(r, j), 1e-14);
  }
}

TEST(Composition, ImageToNoiseGradientThroughEveryModule) {
  Encoder e({6, 8, 4}, 1);
  Projector p({4, 5, 5, Activation::kGelu}, 2);
  Denoiser d({6, 5, 4, 8, 10}, 3);
  std::mt19937_64 rng(14);
  const Tensor x_t = random_tensor(rng, {2, 6});
  const std::vector<std::size_t> t{3, 7};
  Bindings in{{"x", random_tensor(rng, {2, 6})}};
  GraphFn f = [&](Graph& g, const VarMap& v) {
    Var eps = d.predict(g, g.constant(x_t), t, p.project(g, e.encode(g, v.at("x"))), false);
    return sum(eps * eps);
  };
  EXPECT_LT(grad_check(f, in).worst(), 1e-5);
  std::vector<Parameter*> params = e.parameters();
  for (Parameter* q : p.parameters()) params.push_back(q);
  const Tensor x = in.at("x");
  auto build = [&](Graph& g) {
    Var eps = d.predict(g, g.constant(x_t), t, p.project(g, e.encode(g, g.constant(x))), false);
    return sum(eps * eps);
  };
  EXPECT_LT(param_grad_check(build, params), 1e-5);
}

TEST(Composition, FrozenModulesLeaveParameterGradientsUntouched) {
  Encoder e({6, 8, 4}, 1);
  Projector p({4, 5, 5, Activation::kGelu}, 2);
  e.frozen = true;
  std::mt19937_64 rng(15);
  const Tensor x = random_tensor(rng, {2, 6});
  for (Parameter* q : e.parameters()) q->zero_grad();
  for (Parameter* q : p.parameters()) q->zero_grad();
  Graph g;
  Var c = p.project(g, e.encode(g, g.constant(x)));
  g.backward(sum(c * c));
  for (Parameter* q : e.parameters()) {
    for (double v : q->grad.data()) EXPECT_EQ(v, 0.0);
  }
  double total = 0.0;
  for (Parameter* q : p.parameters()) {
    for (double v : q->grad.data()) total += std::abs(v);
  }
  EXPECT_GT(total, 0.0);
}

}  // namespace
}  // namespace dcr

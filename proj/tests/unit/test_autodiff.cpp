#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dcr/autodiff.hpp"
#include "test_util.hpp"

namespace dcr {
namespace {

using testing::random_tensor;

TEST(Autodiff, SquareValueAndGradient) {
  Graph g;
  Var x = g.input(Tensor::scalar(3.0), true, "x");
  Var y = x * x;
  EXPECT_DOUBLE_EQ(y.value().item(), 9.0);
  g.backward(y);
  EXPECT_DOUBLE_EQ(g.grad(x).item(), 6.0);
}

TEST(Autodiff, LogSumExpOfZerosIsLn2AndGradientIsSoftmax) {
  Graph g;
  Var s = g.input(Tensor::vector({0.0, 0.0}), true);
  Var y = logsumexp(s);
  EXPECT_NEAR(y.value().item(), std::log(2.0), 1e-15);
  g.backward(y);
  EXPECT_DOUBLE_EQ(g.grad(s)[0], 0.5);
  EXPECT_DOUBLE_EQ(g.grad(s)[1], 0.5);

  Graph g2;
  Var s2 = g2.input(Tensor::vector({0.3, -1.2, 2.0, 0.7}), true);
  g2.backward(logsumexp(s2));
  double total = 0.0;
  for (double v : g2.grad(s2).data()) total += v;
  EXPECT_NEAR(total, 1.0, 1e-15);
}

TEST(Autodiff, CosineOfOrthogonalVectorsIsZero) {
  Graph g;
  Var u = g.input(Tensor::vector({1.0, 0.0}));
  Var v = g.input(Tensor::vector({0.0, 1.0}));
  EXPECT_DOUBLE_EQ(cosine_similarity(u, v).value().item(), 0.0);
}

TEST(Autodiff, CosineGradientMatchesCentralDifferences) {
  const double r = 1.0 / std::sqrt(2.0);
  Bindings in{{"u", Tensor::vector({1.0, 0.0})}, {"v", Tensor::vector({r, r})}};
  GraphFn f = [](Graph&, const VarMap& v) { return cosine_similarity(v.at("u"), v.at("v")); };
  const Bindings grads = gradients(f, in);
  // d cos / du at u = e1, v = (1,1)/sqrt2 is (0, 1/sqrt2).
  EXPECT_NEAR(grads.at("u")[0], 0.0, 1e-15);
  EXPECT_NEAR(grads.at("u")[1], r, 1e-15);
  const double eps = 1e-6;
  for (std::size_t i = 0; i < 2; ++i) {
    Bindings p = in, m = in;
    p.at("u")[i] += eps;
    m.at("u")[i] -= eps;
    const double numeric = (evaluate(f, p).item() - evaluate(f, m).item()) / (2 * eps);
    EXPECT_LE(std::abs(numeric - grads.at("u")[i]), 1e-6 * std::max(1.0, std::abs(numeric)));
  }
}

TEST(Autodiff, GradCheckLinearLayerWithMeanSquare) {
  std::mt19937_64 rng(11);
  Bindings in{{"x", random_tensor(rng, {5, 4})}, {"w", random_tensor(rng, {4, 3})}, {"b", random_tensor(rng, {3})}};
  GraphFn f = [](Graph&, const VarMap& v) {
    Var h = add_row(matmul(v.at("x"), v.at("w")), v.at("b"));
    return mean(h * h);
  };
  EXPECT_LT(grad_check(f, in, 1e-5).worst(), 1e-5);
}

TEST(Autodiff, GradCheckConstantFunctionIsZero) {
  Bindings in{{"x", Tensor::vector({1.0, -2.0, 0.5})}};
  GraphFn f = [](Graph& g, const VarMap&) { return g.constant(Tensor::scalar(4.0)); };
  const Bindings grads = gradients(f, in);
  for (double v : grads.at("x").data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(grad_check(f, in, 1e-5).worst(), 0.0);
}

TEST(Autodiff, GradCheckSoftmaxLogSum) {
  std::mt19937_64 rng(5);
  Bindings in{{"s", random_tensor(rng, {3, 5})}, {"w", random_tensor(rng, {3, 5})}};
  GraphFn f = [](Graph&, const VarMap& v) { return sum(log(softmax_rows(v.at("s"))) * v.at("w")); };
  EXPECT_LT(grad_check(f, in, 1e-5).worst(), 1e-5);
}

TEST(Autodiff, GradCheckEveryPrimitive) {
  std::mt19937_64 rng(2024);
  struct Case {
    const char* name;
    GraphFn fn;
    Shape a;
    Shape b;
    bool positive = false;
  };
  const std::vector<Case> cases = {
      {"add", [](Graph&, const VarMap& v) { return sum((v.at("a") + v.at("b")) * v.at("a")); }, {3, 4}, {3, 4}},
      {"sub", [](Graph&, const VarMap& v) { return sum((v.at("a") - v.at("b")) * v.at("a")); }, {3, 4}, {3, 4}},
      {"mul", [](Graph&, const VarMap& v) { return sum(v.at("a") * v.at("b")); }, {3, 4}, {3, 4}},
      {"matmul", [](Graph&, const VarMap& v) { return sum(exp(scale(matmul(v.at("a"), v.at("b")), 0.2))); }, {3, 4}, {4, 2}},
      {"transpose", [](Graph&, const VarMap& v) { return sum(matmul(transpose(v.at("a")), v.at("b"))); }, {3, 4}, {3, 2}},
      {"add_row", [](Graph&, const VarMap& v) { Var h = add_row(v.at("a"), v.at("b")); return sum(h * h); }, {3, 4}, {4}},
      {"relu", [](Graph&, const VarMap& v) { return sum(relu(v.at("a")) * v.at("b")); }, {3, 4}, {3, 4}},
      {"gelu", [](Graph&, const VarMap& v) { return sum(gelu(v.at("a")) * v.at("b")); }, {3, 4}, {3, 4}},
      {"exp", [](Graph&, const VarMap& v) { return sum(exp(v.at("a")) * v.at("b")); }, {3, 4}, {3, 4}},
      {"log", [](Graph&, const VarMap& v) { return sum(log(v.at("a")) * v.at("b")); }, {3, 4}, {3, 4}, true},
      {"reshape", [](Graph&, const VarMap& v) { return sum(reshape(v.at("a"), {4, 3}) * v.at("b")); }, {3, 4}, {4, 3}},
      {"concat0", [](Graph&, const VarMap& v) { Var c = concat({v.at("a"), v.at("b")}, 0); return sum(c * c * c); }, {3, 4}, {2, 4}},
      {"concat1", [](Graph&, const VarMap& v) { Var c = concat({v.at("a"), v.at("b")}, 1); return sum(c * c * c); }, {3, 4}, {3, 2}},
      {"gather", [](Graph&, const VarMap& v) { return sum(gather_rows(v.at("a"), {2, 0, 2, 1}) * v.at("b")); }, {3, 4}, {4, 4}},
      {"sum_axis0", [](Graph&, const VarMap& v) { Var s = sum(v.at("a"), 0); return sum(s * s * v.at("b")); }, {3, 4}, {4}},
      {"mean_axis1", [](Graph&, const VarMap& v) { Var s = mean(v.at("a"), 1); return sum(s * s * v.at("b")); }, {3, 4}, {3}},
      {"logsumexp_rows", [](Graph&, const VarMap& v) { return sum(logsumexp_rows(v.at("a")) * v.at("b")); }, {3, 4}, {3}},
      {"softmax_rows", [](Graph&, const VarMap& v) { return sum(softmax_rows(v.at("a")) * v.at("b")); }, {3, 4}, {3, 4}},
      {"l2norm", [](Graph&, const VarMap& v) { return l2norm(v.at("a")) * l2norm(v.at("b")); }, {3, 4}, {5}},
      {"l2norm_rows", [](Graph&, const VarMap& v) { return sum(l2norm_rows(v.at("a")) * v.at("b")); }, {3, 4}, {3}},
      {"normalize_rows", [](Graph&, const VarMap& v) { return sum(normalize_rows(v.at("a")) * v.at("b")); }, {3, 4}, {3, 4}},
      {"cosine", [](Graph&, const VarMap& v) { return cosine_similarity(v.at("a"), v.at("b")); }, {6}, {6}},
      {"cosine_rows", [](Graph&, const VarMap& v) { return sum(exp(cosine_similarity_rows(v.at("a"), v.at("b")))); }, {3, 4}, {3, 4}},
  };
  for (const Case& c : cases) {
    for (int rep = 0; rep < 3; ++rep) {
      Bindings in{{"a", c.positive ? random_tensor(rng, c.a, 0.2, 2.0) : random_tensor(rng, c.a)},
                  {"b", random_tensor(rng, c.b)}};
      EXPECT_LT(grad_check(c.fn, in, 1e-5).worst(), 1e-5) << c.name;
    }
  }
}

TEST(Autodiff, BackwardTwiceDoublesLeafGradients) {
  std::mt19937_64 rng(3);
  Graph g;
  Var a = g.input(random_tensor(rng, {2, 3}), true);
  Var w = g.input(random_tensor(rng, {3, 2}), true);
  Var y = sum(gelu(matmul(a, w)));
  g.backward(y);
  const Tensor once = g.grad(a);
  g.backward(y);
  for (std::size_t i = 0; i < once.numel(); ++i) EXPECT_EQ(g.grad(a)[i], 2.0 * once[i]);
  g.zero_grad();
  for (double v : g.grad(a).data()) EXPECT_EQ(v, 0.0);
}

TEST(Autodiff, ParameterLeafAccumulatesIntoParameterGrad) {
  Parameter p("w", Tensor::vector({1.0, 2.0}));
  Graph g;
  Var w = g.parameter(p, true);
  g.backward(sum(w * w));
  EXPECT_DOUBLE_EQ(p.grad[0], 2.0);
  EXPECT_DOUBLE_EQ(p.grad[1], 4.0);

  Parameter frozen("f", Tensor::vector({1.0}));
  Graph g2;
  Var f = g2.parameter(frozen, false);
  EXPECT_FALSE(g2.requires_grad(f));
}

TEST(Autodiff, EvaluationIsBitIdentical) {
  std::mt19937_64 rng(9);
  Bindings in{{"x", random_tensor(rng, {4, 6})}, {"w", random_tensor(rng, {6, 5})}};
  GraphFn f = [](Graph&, const VarMap& v) { return softmax_rows(gelu(matmul(v.at("x"), v.at("w")))); };
  const Tensor a = evaluate(f, in);
  const Tensor b = evaluate(f, in);
  EXPECT_EQ(a, b);
}

TEST(Autodiff, ShapeMismatchNamesOpAndShapes) {
  Graph g;
  Var a = g.input(Tensor(Shape{2, 3}));
  Var b = g.input(Tensor(Shape{2, 2}));
  try {
    matmul(a, b);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_EQ(e.op(), "matmul");
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[2x2]"), std::string::npos);
  }
  EXPECT_THROW(add(a, b), ShapeError);
}

TEST(Autodiff, BackwardRejectsNonScalarOutput) {
  Graph g;
  Var a = g.input(Tensor::vector({1.0, 2.0}), true);
  EXPECT_THROW(g.backward(a * a), ShapeError);
}

TEST(Autodiff, GradCheckRejectsBadEpsilon) {
  GraphFn f = [](Graph&, const VarMap& v) { return sum(v.at("x")); };
  Bindings in{{"x", Tensor::vector({1.0})}};
  EXPECT_THROW(grad_check(f, in, 0.0), ValueError);
  EXPECT_THROW(grad_check(f, in, 0.05), ValueError);
}

TEST(Autodiff, MaskedLogSumExpIgnoresMaskedEntries) {
  Graph g;
  Var a = g.input(Tensor::matrix(1, 3, {0.0, 100.0, 0.0}), true);
  std::vector<unsigned char> mask{1, 0, 1};
  Var y = logsumexp_rows(a, &mask);
  EXPECT_NEAR(y.value()[0], std::log(2.0), 1e-15);
  g.backward(sum(y));
  EXPECT_DOUBLE_EQ(g.grad(a)[1], 0.0);
}

TEST(Autodiff, CosineClampsTinyNorms) {
  Graph g;
  Var u = g.input(Tensor::vector({0.0, 0.0}), true);
  Var v = g.input(Tensor::vector({1.0, 0.0}), true);
  Var s = cosine_similarity(u, v);
  EXPECT_EQ(s.value().item(), 0.0);
  g.backward(s);
  EXPECT_TRUE(all_finite(g.grad(u).data()));
}

}  // namespace
}  // namespace dcr

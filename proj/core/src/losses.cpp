#include "dcr/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace dcr {

void LossWeights::validate() const {
  if (!(lambda_con >= 0.0) || !(lambda_rec >= 0.0)) throw ValueError("loss weights must be nonnegative");
  if (lambda_con == 0.0 && lambda_rec == 0.0) throw ValueError("loss weights cannot both be zero");
}

namespace {

void check_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw ValueError("temperature must be positive, got " + std::to_string(tau));
}

}  // namespace

Var info_nce(Var features, std::span<const int> groups, double tau) {
  check_tau(tau);
  const Shape& s = features.shape();
  if (s.size() != 2) throw ShapeError("info_nce", {s}, "features must be a matrix");
  const std::size_t n = s[0];
  if (groups.size() != n) throw ShapeError("info_nce", {s, Shape{groups.size()}}, "one group id per row");
  if (n < 2) throw ValueError("info_nce: need at least two features");
  std::vector<std::size_t> anchors;
  for (std::size_t i = 0; i < n; ++i) {
    if (groups[i] >= 0) anchors.push_back(i);
  }
  if (anchors.empty()) throw ValueError("info_nce: no anchors (every group id is negative)");
  const std::size_t m = anchors.size();
  std::vector<unsigned char> pos(m * n, 0), all(m * n, 0);
  for (std::size_t a = 0; a < m; ++a) {
    const std::size_t i = anchors[a];
    bool any = false;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      all[a * n + j] = 1;
      if (groups[i] == groups[j]) pos[a * n + j] = any = true;
    }
    if (!any) throw ValueError("info_nce: anchor " + std::to_string(i) + " has no positive");
  }
  Var u = normalize_rows(features);
  Var logits = matmul(gather_rows(u, std::move(anchors)), transpose(u)) * (1.0 / tau);
  return mean(logsumexp_rows(logits, &all) - logsumexp_rows(logits, &pos));
}

Var reconstruction_loss(Var eps_hat, Var eps_gt) {
  if (eps_hat.shape() != eps_gt.shape()) throw ShapeError("reconstruction_loss", {eps_hat.shape(), eps_gt.shape()});
  Var d = eps_hat - eps_gt;
  return mean(d * d);
}

double reconstruction_loss(const Tensor& eps_hat, const Tensor& eps_gt) {
  if (eps_hat.shape() != eps_gt.shape()) throw ShapeError("reconstruction_loss", {eps_hat.shape(), eps_gt.shape()});
  if (eps_hat.numel() == 0) return 0.0;
  return squared_distance(eps_hat.data(), eps_gt.data()) / static_cast<double>(eps_hat.numel());
}

Var joint_loss(Var l_con, Var l_rec, const LossWeights& w) {
  w.validate();
  return l_con * w.lambda_con + l_rec * w.lambda_rec;
}

double joint_loss(double l_con, double l_rec, const LossWeights& w) {
  w.validate();
  return w.lambda_con * l_con + w.lambda_rec * l_rec;
}

Var dcr_loss_from_similarities(Var sims, double tau, const std::vector<unsigned char>* mask) {
  check_tau(tau);
  const Shape& s = sims.shape();
  if (s.size() != 2 || s[1] < 3) throw ShapeError("dcr_loss", {s}, "need two positives and at least one negative per row");
  Tensor pick(s);
  for (std::size_t r = 0; r < s[0]; ++r) pick.at(r, 0) = pick.at(r, 1) = -0.5 / tau;
  Graph& g = *sims.graph;
  Var positive = sum(sims * g.constant(std::move(pick)), 1);
  return mean(positive + logsumexp_rows(sims * (1.0 / tau), mask));
}

namespace {

// Softmax of s / tau with max subtraction; -inf entries get mass 0.
std::vector<double> softmax(std::span<const double> sims, double tau, double* lse) {
  const double mx = *std::max_element(sims.begin(), sims.end()) / tau;
  std::vector<double> p(sims.size());
  double z = 0.0;
  for (std::size_t i = 0; i < sims.size(); ++i) z += p[i] = std::exp(sims[i] / tau - mx);
  for (double& v : p) v /= z;
  if (lse) *lse = mx + std::log(z);
  return p;
}

void check_sims(std::span<const double> sims, double tau) {
  check_tau(tau);
  if (sims.size() < 3) throw ValueError("dcr_loss: need two positives and at least one negative");
}

}  // namespace

double dcr_loss_from_similarities(std::span<const double> sims, double tau) {
  check_sims(sims, tau);
  double lse = 0.0;
  softmax(sims, tau, &lse);
  return -(sims[0] + sims[1]) / (2.0 * tau) + lse;
}

std::vector<double> dcr_sim_gradient(std::span<const double> sims, double tau) {
  check_sims(sims, tau);
  std::vector<double> p = softmax(sims, tau, nullptr);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = i < 2 ? -(1.0 - 2.0 * p[i]) / (2.0 * tau) : p[i] / tau;
  return p;
}

Var dcr_loss(Var anchor, Var positives, Var negatives, double tau) {
  const std::size_t d = anchor.value().numel();
  if (positives.shape().size() != 2 || positives.shape()[0] != 2 || positives.shape()[1] != d) {
    throw ShapeError("dcr_loss", {anchor.shape(), positives.shape()}, "positives must be 2 x D");
  }
  if (negatives.shape().size() != 2 || negatives.shape()[0] < 1 || negatives.shape()[1] != d) {
    throw ShapeError("dcr_loss", {anchor.shape(), negatives.shape()}, "negatives must be k x D with k >= 1");
  }
  const std::size_t k = 2 + negatives.shape()[0];
  Var a = anchor.shape().size() == 1 ? reshape(anchor, Shape{1, d}) : anchor;
  Var members = concat({positives, negatives}, 0);
  Var sims = cosine_similarity_rows(gather_rows(a, std::vector<std::size_t>(k, 0)), members);
  return dcr_loss_from_similarities(reshape(sims, Shape{1, k}), tau);
}

void ContrastiveSet::validate() const {
  check_tau(tau);
  if (negatives.empty()) throw ValueError("contrastive set needs at least one negative");
  const std::size_t d = anchor.numel();
  auto check = [d](const Tensor& t, const char* what) {
    if (t.numel() != d) throw ShapeError("dcr_loss", {Shape{d}, t.shape()}, std::string(what) + " dimension differs from anchor");
    const double n = squared_norm(t.data());
    if (!(n > 0.0) || !std::isfinite(n)) throw ValueError(std::string("dcr_loss: ") + what + " has zero or non-finite norm");
  };
  check(anchor, "anchor");
  for (const Tensor& p : positives) check(p, "positive");
  for (const Tensor& n : negatives) check(n, "negative");
}

std::vector<double> ContrastiveSet::similarities() const {
  validate();
  std::vector<double> s;
  s.reserve(size());
  const double na = std::sqrt(squared_norm(anchor.data()));
  auto cos = [&](const Tensor& q) {
    return dot(anchor.data(), q.data()) / std::max(na * std::sqrt(squared_norm(q.data())), kCosineEps);
  };
  for (const Tensor& p : positives) s.push_back(cos(p));
  for (const Tensor& n : negatives) s.push_back(cos(n));
  return s;
}

double dcr_loss(const ContrastiveSet& set) { return dcr_loss_from_similarities(set.similarities(), set.tau); }

std::vector<double> dcr_sim_gradient(const ContrastiveSet& set) { return dcr_sim_gradient(set.similarities(), set.tau); }

}  // namespace dcr

#pragma once

#include <array>
#include <span>
#include <vector>

#include "dcr/autodiff.hpp"

namespace dcr {

inline constexpr double kDefaultTau = 0.07;

struct LossWeights {
  double lambda_con = 1.0;
  double lambda_rec = 1.0;
  void validate() const;
  bool operator==(const LossWeights&) const = default;
};

// Mean over rows i of -log( sum_{j in P(i)} e^{s_ij/tau} / sum_{k != i} e^{s_ik/tau} ),
// with s the cosine similarity between rows of features and P(i) the other rows
// sharing row i's group id. Rows with a negative group id are never anchors or
// positives; they only enter the denominators.
Var info_nce(Var features, std::span<const int> groups, double tau = kDefaultTau);

// Mean over elements of (eps_hat - eps_gt)^2.
Var reconstruction_loss(Var eps_hat, Var eps_gt);
double reconstruction_loss(const Tensor& eps_hat, const Tensor& eps_gt);

Var joint_loss(Var l_con, Var l_rec, const LossWeights& w);
double joint_loss(double l_con, double l_rec, const LossWeights& w);

// sims is m x k; each row holds one anchor's similarities with columns 0 and 1
// the two positives and the rest negatives. Returns the mean over rows of
//   -(s_0 + s_1) / (2 tau) + logsumexp(s / tau).
// A mask (m*k, row-major) drops entries from the log-sum-exp.
Var dcr_loss_from_similarities(Var sims, double tau, const std::vector<unsigned char>* mask = nullptr);
double dcr_loss_from_similarities(std::span<const double> sims, double tau);
// Closed form of d loss / d s for one row: -(1 - 2p)/(2 tau) on positives, p/tau on negatives.
std::vector<double> dcr_sim_gradient(std::span<const double> sims, double tau);

// Anchor 1 x D or D, positives 2 x D, negatives k x D.
Var dcr_loss(Var anchor, Var positives, Var negatives, double tau);

// One anchor with its positive pair {augmented-view prediction, ground truth}
// and negatives. Vectors are flattened noise tensors.
struct ContrastiveSet {
  Tensor anchor;
  std::array<Tensor, 2> positives;
  std::vector<Tensor> negatives;
  double tau = kDefaultTau;

  void validate() const;
  // Cosine similarities of the anchor with positives then negatives.
  std::vector<double> similarities() const;
  std::size_t size() const { return 2 + negatives.size(); }
};

double dcr_loss(const ContrastiveSet& set);
std::vector<double> dcr_sim_gradient(const ContrastiveSet& set);

}  // namespace dcr

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dcr/clustering.hpp"
#include "dcr/datasets.hpp"
#include "dcr/losses.hpp"
#include "dcr/model.hpp"

namespace dcr {

// Class-conditional scatter of row vectors:
//   S_inner = mean over classes y of mean_{z in y} ||z - mu_y||^2
//   S_inter = mean over ordered pairs y != y' of ||mu_y - mu_y'||^2
struct ScatterReport {
  double s_inner = 0.0;
  double s_inter = 0.0;
  std::vector<int> classes;       // sorted class ids present
  Tensor means;                   // one row per class, same order
  std::vector<double> inner_per_class;
};

ScatterReport scatter(const Tensor& features, std::span<const int> labels);
// Same statistics on predicted noise vectors.
inline ScatterReport noise_scatter(const Tensor& eps_hats, std::span<const int> labels) {
  return scatter(eps_hats, labels);
}

// sum_i ||e_i - mean||^2 against (1/2n) sum_i sum_j ||e_i - e_j||^2, both
// accumulated with compensated summation.
struct VarianceIdentity {
  double lhs = 0.0;
  double rhs = 0.0;
  double abs_diff = 0.0;
};
VarianceIdentity variance_identity_check(const Tensor& vectors);

// Batched map from condition-space points (n x d) to noise vectors (n x D).
using PointMap = std::function<Tensor(const Tensor&)>;

struct BiLipschitzEstimate {
  double m = 0.0;
  double L = 0.0;
  double kappa = 0.0;  // 1 / (2 L^2)
  double eta = 0.0;    // 4 / m^2
  std::size_t points = 0;
  std::size_t pairs = 0;
};

// Ratios ||T(z1) - T(z2)|| / ||z1 - z2|| over all distinct pairs of the given
// points. Pairs closer than 1e-9 are an error.
BiLipschitzEstimate estimate_bilipschitz(const PointMap& T, const Tensor& points);
BiLipschitzEstimate estimate_bilipschitz(const Tensor& points, const Tensor& images);

// Feature rows plus the class means, skipping means that coincide with a
// feature (singleton classes).
Tensor with_class_means(const Tensor& features, const ScatterReport& report);

struct Theorem1Check {
  bool pass = false;
  double inner_lhs = 0.0;  // S_inner
  double inner_rhs = 0.0;  // S_inner^eps / m^2
  double inter_lhs = 0.0;  // S_inter
  double inter_rhs = 0.0;  // kappa S_inter^eps - eta S_inner^eps
  double inner_margin = 0.0;
  double inter_margin = 0.0;
};

// Both inequalities with tolerance slack * max(1, |rhs|).
Theorem1Check verify_theorem1(const ScatterReport& features, const ScatterReport& noise, const BiLipschitzEstimate& est,
                              double slack = 1e-9);

struct SandwichConstants {
  double tau = kDefaultTau;
  double alpha = 1.0;
  double beta = 1.0;
  double Delta = 1.0;
  double B = 1.0;
  double delta = 0.0;   // B exp(-Delta / tau)
  double C_neg = 0.0;   // ln(1 + delta)
  double lambda_min = 0.0;  // 1 / (4 tau beta^2)
  double lambda_max = 0.0;  // 1 / (4 tau alpha^2)
  double c_min = 0.0;   // -5 / (2 tau)
  double c_max = 0.0;   // ln 2 + 1 / tau
};

SandwichConstants make_sandwich_constants(double alpha, double beta, double Delta, std::size_t B, double tau);

struct SandwichCheck {
  bool admissible = false;
  std::string reason;  // why an instance was rejected
  bool pass = false;
  double loss = 0.0;
  double mse = 0.0;    // ||eps_hat - eps_gt||^2 (sum of squares)
  double lower = 0.0;
  double upper = 0.0;
};

// Rejects instances that violate the preconditions (norms outside [alpha,
// beta], more than B negatives, a negative within Delta of sim(eps_hat, eps_gt)).
SandwichCheck verify_theorem2_sandwich(const ContrastiveSet& set, const SandwichConstants& k, double slack = 1e-9);

// Tightest admissible constants for one instance: alpha/beta from the member
// norms, Delta from the closest negative, B = |N|. Delta <= 0 leaves it inadmissible.
SandwichConstants fitted_sandwich_constants(const ContrastiveSet& set);

// Random instance that satisfies the preconditions of its returned constants.
std::pair<ContrastiveSet, SandwichConstants> random_sandwich_instance(Rng& rng);

// Mean over the images of the per-element squared error between predicted and
// drawn noise, with (t, eps) drawn from a stream fixed by the seed.
double recon_probe(Model& model, const Dataset& eval, std::uint64_t seed, std::size_t limit = 0);

struct EvalReport {
  double nmi = 0.0;
  double acc = 0.0;
  double ari = 0.0;
  double s_inner = 0.0;
  double s_inter = 0.0;
  double recon_mse = 0.0;
};

struct EvalOptions {
  std::size_t kmeans_restarts = 5;
  std::size_t kmeans_max_iter = 100;
  std::size_t probe_size = 0;
};

// Features of every eval image, clustered into num_classes groups.
EvalReport evaluate_model(Model& model, const Dataset& eval, std::uint64_t seed, const EvalOptions& opt = {});
Tensor encode_dataset(Model& model, const Dataset& ds);

}  // namespace dcr

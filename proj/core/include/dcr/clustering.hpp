#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dcr/tensor.hpp"

namespace dcr {

struct KMeansResult {
  std::vector<int> assignments;
  Tensor centers;  // k x d
  double inertia = 0.0;
  std::size_t iterations = 0;
};

// k-means++ seeding followed by Lloyd iterations until the assignment stops
// changing or max_iter is reached. With restarts > 1 the lowest-inertia run
// wins. Deterministic in the seed.
KMeansResult kmeans(const Tensor& features, std::size_t k, std::uint64_t seed, std::size_t max_iter = 100,
                    std::size_t restarts = 1);

// Minimum-cost perfect matching on a square cost matrix (row-major n x n).
// Returns the column assigned to each row.
std::vector<std::size_t> hungarian(const std::vector<double>& cost, std::size_t n);

struct ClusteringScores {
  double nmi = 0.0;
  double acc = 0.0;
  double ari = 0.0;
};

// NMI normalized by the arithmetic mean of the two entropies (1 when both are
// zero); ACC under the best one-to-one cluster-to-class mapping; ARI with the
// usual chance correction (1 when the expected index equals the maximum).
ClusteringScores clustering_metrics(std::span<const int> pred, std::span<const int> truth);

}  // namespace dcr

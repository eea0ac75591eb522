#include "dcr/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>

#include "dcr/rng.hpp"

namespace dcr {

namespace {

double row_distance(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j) {
  return squared_distance(a.row(i), b.row(j));
}

KMeansResult kmeans_once(const Tensor& x, std::size_t k, Rng& rng, std::size_t max_iter) {
  const std::size_t n = x.rows(), d = x.cols();
  KMeansResult r;
  r.centers = Tensor(Shape{k, d});
  auto set_center = [&](std::size_t c, std::size_t i) {
    std::copy(x.row(i).begin(), x.row(i).end(), r.centers.row(c).begin());
  };

  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  set_center(0, pick(rng));
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  for (std::size_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], row_distance(x, i, r.centers, c - 1));
      total += nearest[i];
    }
    std::size_t chosen = 0;
    if (total > 0.0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (chosen = 0; chosen + 1 < n; ++chosen) {
        if ((u -= nearest[chosen]) < 0.0 && nearest[chosen] > 0.0) break;
      }
    } else {
      chosen = pick(rng);
    }
    set_center(c, chosen);
  }

  r.assignments.assign(n, -1);
  for (r.iterations = 1; r.iterations <= max_iter; ++r.iterations) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double dist = row_distance(x, i, r.centers, c);
        if (dist < best_d) {
          best_d = dist;
          best = static_cast<int>(c);
        }
      }
      if (r.assignments[i] != best) {
        r.assignments[i] = best;
        changed = true;
      }
    }
    if (!changed) break;
    Tensor sums(Shape{k, d});
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(r.assignments[i]);
      ++counts[c];
      for (std::size_t j = 0; j < d; ++j) sums.at(c, j) += x.at(i, j);
    }
    for (std::size_t c = 0; c < k; ++c) {
      // An emptied cluster keeps its previous center.
      if (counts[c] == 0) continue;
      for (std::size_t j = 0; j < d; ++j) r.centers.at(c, j) = sums.at(c, j) / static_cast<double>(counts[c]);
    }
  }
  r.iterations = std::min(r.iterations, max_iter);
  r.inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) r.inertia += row_distance(x, i, r.centers, static_cast<std::size_t>(r.assignments[i]));
  return r;
}

}  // namespace

KMeansResult kmeans(const Tensor& features, std::size_t k, std::uint64_t seed, std::size_t max_iter,
                    std::size_t restarts) {
  if (features.shape().size() != 2) throw ShapeError("kmeans", {features.shape()}, "features must be a matrix");
  if (k == 0 || k > features.rows()) {
    throw ValueError("kmeans: k = " + std::to_string(k) + " must lie in [1, n = " + std::to_string(features.rows()) + "]");
  }
  if (max_iter == 0 || restarts == 0) throw ValueError("kmeans: max_iter and restarts must be at least 1");
  Rng rng = make_rng(seed, streams::kKMeans);
  KMeansResult best;
  for (std::size_t r = 0; r < restarts; ++r) {
    KMeansResult cur = kmeans_once(features, k, rng, max_iter);
    if (r == 0 || cur.inertia < best.inertia) best = std::move(cur);
  }
  return best;
}

std::vector<std::size_t> hungarian(const std::vector<double>& cost, std::size_t n) {
  if (cost.size() != n * n) throw ShapeError("hungarian", {Shape{cost.size()}, Shape{n, n}});
  // Shortest augmenting path with potentials; 1-based with a virtual column 0.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> row_to_col(n);
  for (std::size_t j = 1; j <= n; ++j) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

namespace {

// Relabels arbitrary ids to 0..k-1 in order of first appearance.
std::vector<std::size_t> compact(std::span<const int> labels, std::size_t& k) {
  std::map<int, std::size_t> ids;
  std::vector<std::size_t> out;
  out.reserve(labels.size());
  for (int l : labels) out.push_back(ids.emplace(l, ids.size()).first->second);
  k = ids.size();
  return out;
}

double comb2(double x) { return x * (x - 1.0) / 2.0; }

}  // namespace

ClusteringScores clustering_metrics(std::span<const int> pred, std::span<const int> truth) {
  if (pred.size() != truth.size()) {
    throw ShapeError("clustering_metrics", {Shape{pred.size()}, Shape{truth.size()}}, "label vectors differ in length");
  }
  if (pred.empty()) throw ValueError("clustering_metrics: need at least one point");
  std::size_t kp = 0, kt = 0;
  const auto p = compact(pred, kp);
  const auto t = compact(truth, kt);
  const std::size_t n = p.size();
  std::vector<double> table(kp * kt, 0.0), a(kp, 0.0), b(kt, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    table[p[i] * kt + t[i]] += 1.0;
    a[p[i]] += 1.0;
    b[t[i]] += 1.0;
  }
  const double N = static_cast<double>(n);

  ClusteringScores s;
  double mi = 0.0, hp = 0.0, ht = 0.0;
  for (std::size_t i = 0; i < kp; ++i) {
    for (std::size_t j = 0; j < kt; ++j) {
      const double nij = table[i * kt + j];
      if (nij > 0.0) mi += nij / N * std::log(N * nij / (a[i] * b[j]));
    }
  }
  for (double x : a) hp -= x / N * std::log(x / N);
  for (double x : b) ht -= x / N * std::log(x / N);
  const double denom = 0.5 * (hp + ht);
  s.nmi = denom > 0.0 ? std::max(0.0, mi / denom) : 1.0;

  const std::size_t m = std::max(kp, kt);
  std::vector<double> cost(m * m, 0.0);
  for (std::size_t i = 0; i < kp; ++i) {
    for (std::size_t j = 0; j < kt; ++j) cost[i * m + j] = -table[i * kt + j];
  }
  const auto match = hungarian(cost, m);
  double hits = 0.0;
  for (std::size_t i = 0; i < kp; ++i) {
    if (match[i] < kt) hits += table[i * kt + match[i]];
  }
  s.acc = hits / N;

  double sum_ij = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (double x : table) sum_ij += comb2(x);
  for (double x : a) sum_a += comb2(x);
  for (double x : b) sum_b += comb2(x);
  const double total = comb2(N);
  const double expected = total > 0.0 ? sum_a * sum_b / total : 0.0;
  const double max_index = 0.5 * (sum_a + sum_b);
  s.ari = max_index == expected ? 1.0 : (sum_ij - expected) / (max_index - expected);
  return s;
}

}  // namespace dcr

#include "dcr/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "dcr/training.hpp"

namespace dcr {

namespace {

// Neumaier compensated sum.
class Accumulator {
 public:
  void add(double x) {
    const double t = sum_ + x;
    comp_ += std::abs(sum_) >= std::abs(x) ? (sum_ - t) + x : (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

double row_dist(const Tensor& a, std::size_t i, std::size_t j) { return std::sqrt(squared_distance(a.row(i), a.row(j))); }

}  // namespace

ScatterReport scatter(const Tensor& features, std::span<const int> labels) {
  if (features.shape().size() != 2) throw ShapeError("scatter", {features.shape()}, "features must be a matrix");
  if (labels.size() != features.rows()) {
    throw ShapeError("scatter", {features.shape(), Shape{labels.size()}}, "one label per feature row");
  }
  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < labels.size(); ++i) members[labels[i]].push_back(i);
  if (members.size() < 2) throw ValueError("scatter: S_inter needs at least two classes");

  const std::size_t d = features.cols(), k = members.size();
  ScatterReport r;
  r.means = Tensor(Shape{k, d});
  std::size_t c = 0;
  for (const auto& [label, rows] : members) {
    r.classes.push_back(label);
    auto mu = r.means.row(c);
    for (std::size_t j = 0; j < d; ++j) {
      Accumulator acc;
      for (std::size_t i : rows) acc.add(features.at(i, j));
      mu[j] = acc.value() / static_cast<double>(rows.size());
    }
    Accumulator dev;
    for (std::size_t i : rows) dev.add(squared_distance(features.row(i), mu));
    r.inner_per_class.push_back(dev.value() / static_cast<double>(rows.size()));
    ++c;
  }
  Accumulator inner, inter;
  for (double v : r.inner_per_class) inner.add(v);
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < k; ++b) {
      if (a != b) inter.add(squared_distance(r.means.row(a), r.means.row(b)));
    }
  }
  r.s_inner = inner.value() / static_cast<double>(k);
  r.s_inter = inter.value() / static_cast<double>(k * (k - 1));
  return r;
}

VarianceIdentity variance_identity_check(const Tensor& vectors) {
  const Tensor v = vectors.shape().size() == 1 ? vectors.reshaped(Shape{1, vectors.numel()}) : vectors;
  const std::size_t n = v.rows(), d = v.cols();
  VarianceIdentity out;
  if (n == 0) return out;
  std::vector<double> mean(d);
  for (std::size_t j = 0; j < d; ++j) {
    Accumulator acc;
    for (std::size_t i = 0; i < n; ++i) acc.add(v.at(i, j));
    mean[j] = acc.value() / static_cast<double>(n);
  }
  Accumulator lhs, rhs;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double e = v.at(i, j) - mean[j];
      lhs.add(e * e);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      if (i == k) continue;
      for (std::size_t j = 0; j < d; ++j) {
        const double e = v.at(i, j) - v.at(k, j);
        rhs.add(e * e);
      }
    }
  }
  out.lhs = lhs.value();
  out.rhs = rhs.value() / (2.0 * static_cast<double>(n));
  out.abs_diff = std::abs(out.lhs - out.rhs);
  return out;
}

BiLipschitzEstimate estimate_bilipschitz(const Tensor& points, const Tensor& images) {
  if (points.shape().size() != 2 || images.shape().size() != 2 || points.rows() != images.rows()) {
    throw ShapeError("estimate_bilipschitz", {points.shape(), images.shape()}, "one image per point");
  }
  const std::size_t n = points.rows();
  if (n < 2) throw ValueError("estimate_bilipschitz: need at least two points");
  BiLipschitzEstimate e;
  e.points = n;
  e.m = std::numeric_limits<double>::infinity();
  e.L = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dz = row_dist(points, i, j);
      if (dz <= 1e-9) {
        throw ValueError("estimate_bilipschitz: points " + std::to_string(i) + " and " + std::to_string(j) + " coincide");
      }
      const double ratio = row_dist(images, i, j) / dz;
      e.m = std::min(e.m, ratio);
      e.L = std::max(e.L, ratio);
      ++e.pairs;
    }
  }
  e.kappa = 1.0 / (2.0 * e.L * e.L);
  e.eta = 4.0 / (e.m * e.m);
  return e;
}

BiLipschitzEstimate estimate_bilipschitz(const PointMap& T, const Tensor& points) {
  return estimate_bilipschitz(points, T(points));
}

Tensor with_class_means(const Tensor& features, const ScatterReport& report) {
  std::vector<double> data(features.storage());
  std::size_t rows = features.rows();
  for (std::size_t c = 0; c < report.means.rows(); ++c) {
    bool duplicate = false;
    for (std::size_t i = 0; i < features.rows() && !duplicate; ++i) {
      duplicate = squared_distance(features.row(i), report.means.row(c)) <= 1e-18;
    }
    if (duplicate) continue;
    data.insert(data.end(), report.means.row(c).begin(), report.means.row(c).end());
    ++rows;
  }
  return Tensor(Shape{rows, features.cols()}, std::move(data));
}

Theorem1Check verify_theorem1(const ScatterReport& features, const ScatterReport& noise, const BiLipschitzEstimate& est,
                              double slack) {
  Theorem1Check c;
  c.inner_lhs = features.s_inner;
  c.inner_rhs = noise.s_inner / (est.m * est.m);
  c.inter_lhs = features.s_inter;
  c.inter_rhs = est.kappa * noise.s_inter - est.eta * noise.s_inner;
  c.inner_margin = c.inner_rhs - c.inner_lhs;
  c.inter_margin = c.inter_lhs - c.inter_rhs;
  const bool inner_ok = c.inner_margin >= -slack * std::max(1.0, std::abs(c.inner_rhs));
  const bool inter_ok = c.inter_margin >= -slack * std::max(1.0, std::abs(c.inter_rhs));
  c.pass = inner_ok && inter_ok;
  return c;
}

SandwichConstants make_sandwich_constants(double alpha, double beta, double Delta, std::size_t B, double tau) {
  if (!(alpha > 0.0 && alpha <= beta)) throw ValueError("sandwich: need 0 < alpha <= beta");
  if (!(Delta > 0.0)) throw ValueError("sandwich: need Delta > 0");
  if (!(tau > 0.0)) throw ValueError("sandwich: need tau > 0");
  SandwichConstants k;
  k.tau = tau;
  k.alpha = alpha;
  k.beta = beta;
  k.Delta = Delta;
  k.B = static_cast<double>(B);
  k.delta = k.B * std::exp(-Delta / tau);
  k.C_neg = std::log1p(k.delta);
  k.lambda_min = 1.0 / (4.0 * tau * beta * beta);
  k.lambda_max = 1.0 / (4.0 * tau * alpha * alpha);
  // Lower: two-term log-sum-exp >= its max, and d^2 in [0, 4] bounds the scaled
  // squared distance by 1/tau; C~_min = -2/tau less the 1/(2 tau) offset.
  k.c_min = -5.0 / (2.0 * tau);
  // Upper: log-sum-exp <= max + ln 2, and the positive gap is at most 1/tau.
  k.c_max = std::log(2.0) + 1.0 / tau;
  return k;
}

SandwichCheck verify_theorem2_sandwich(const ContrastiveSet& set, const SandwichConstants& k, double slack) {
  SandwichCheck c;
  const std::vector<double> sims = set.similarities();
  auto norm = [](const Tensor& t) { return std::sqrt(squared_norm(t.data())); };
  std::vector<const Tensor*> members{&set.anchor, &set.positives[0], &set.positives[1]};
  for (const Tensor& n : set.negatives) members.push_back(&n);
  for (const Tensor* t : members) {
    const double r = norm(*t);
    if (r < k.alpha || r > k.beta) {
      c.reason = "member norm " + std::to_string(r) + " outside [alpha, beta]";
      return c;
    }
  }
  if (static_cast<double>(set.negatives.size()) > k.B) {
    c.reason = "more than B negatives";
    return c;
  }
  const double u = sims[1];
  for (std::size_t i = 2; i < sims.size(); ++i) {
    if (sims[i] > u - k.Delta) {
      c.reason = "negative " + std::to_string(i - 2) + " within Delta of sim(eps_hat, eps_gt)";
      return c;
    }
  }
  c.admissible = true;
  c.loss = dcr_loss_from_similarities(sims, set.tau);
  c.mse = squared_distance(set.anchor.data(), set.positives[1].data());
  c.lower = k.lambda_min * c.mse + k.c_min;
  c.upper = k.lambda_max * c.mse + k.c_max + k.C_neg;
  c.pass = c.loss >= c.lower - slack * std::max(1.0, std::abs(c.lower)) &&
           c.loss <= c.upper + slack * std::max(1.0, std::abs(c.upper));
  return c;
}

SandwichConstants fitted_sandwich_constants(const ContrastiveSet& set) {
  const std::vector<double> sims = set.similarities();
  auto norm = [](const Tensor& t) { return std::sqrt(squared_norm(t.data())); };
  double lo = norm(set.anchor), hi = lo;
  for (const Tensor& p : set.positives) lo = std::min(lo, norm(p)), hi = std::max(hi, norm(p));
  for (const Tensor& n : set.negatives) lo = std::min(lo, norm(n)), hi = std::max(hi, norm(n));
  double worst = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 2; i < sims.size(); ++i) worst = std::max(worst, sims[i]);
  double Delta = sims[1] - worst;
  // Round down until the admissibility test sees the worst negative at or below u - Delta.
  while (Delta > 0.0 && sims[1] - Delta < worst) Delta = std::nextafter(Delta, 0.0);
  SandwichConstants k = make_sandwich_constants(lo, hi, Delta > 0.0 ? Delta : 1.0, set.negatives.size(), set.tau);
  k.Delta = Delta;
  return k;
}

namespace {

// Vector of the given norm whose cosine with the unit vector a is s.
Tensor at_cosine(const Tensor& a, double s, double norm, Rng& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor w(a.shape());
  for (double& x : w.data()) x = normal(rng);
  const double proj = dot(w.data(), a.data());
  for (std::size_t i = 0; i < w.numel(); ++i) w[i] -= proj * a[i];
  const double wn = std::sqrt(squared_norm(w.data()));
  const double c = std::sqrt(std::max(0.0, 1.0 - s * s));
  Tensor v(a.shape());
  for (std::size_t i = 0; i < v.numel(); ++i) v[i] = norm * (s * a[i] + c * w[i] / wn);
  return v;
}

}  // namespace

std::pair<ContrastiveSet, SandwichConstants> random_sandwich_instance(Rng& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const std::size_t d = 4 + static_cast<std::size_t>(u01(rng) * 29.0);
  const std::size_t n_neg = 1 + static_cast<std::size_t>(u01(rng) * 8.0);
  ContrastiveSet set;
  set.tau = 0.05 + 0.95 * u01(rng);
  const double alpha = 0.1 + 1.9 * u01(rng);
  const double beta = alpha * (1.0 + 3.0 * u01(rng));
  auto radius = [&] { return alpha + (beta - alpha) * u01(rng); };

  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor a(Shape{d});
  for (double& x : a.data()) x = normal(rng);
  const double an = std::sqrt(squared_norm(a.data()));
  for (double& x : a.data()) x /= an;

  const double gap = 0.01 + 0.99 * u01(rng);
  const double u = -1.0 + gap + (2.0 - gap) * u01(rng);
  const double s_pos = -1.0 + 2.0 * u01(rng);
  set.anchor = a;
  const double r = radius();
  for (double& x : set.anchor.data()) x *= r;
  set.positives = {at_cosine(a, s_pos, radius(), rng), at_cosine(a, u, radius(), rng)};
  for (std::size_t i = 0; i < n_neg; ++i) {
    const double s = -1.0 + (u - gap + 1.0) * u01(rng);
    set.negatives.push_back(at_cosine(a, s, radius(), rng));
  }

  // Loosen the tight constants so every precondition holds with room to spare.
  SandwichConstants tight = fitted_sandwich_constants(set);
  const double Delta = tight.Delta * (0.5 + 0.5 * u01(rng));
  const std::size_t B = n_neg + static_cast<std::size_t>(u01(rng) * 4.0);
  return {set, make_sandwich_constants(tight.alpha * (0.5 + 0.5 * u01(rng)), tight.beta * (1.0 + u01(rng)), Delta, B,
                                       set.tau)};
}

Tensor encode_dataset(Model& model, const Dataset& ds) {
  std::vector<std::size_t> idx(ds.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return model.encoder.encode(stack_pixels(ds, idx));
}

double recon_probe(Model& model, const Dataset& eval, std::uint64_t seed, std::size_t limit) {
  const std::size_t n = limit == 0 ? eval.size() : std::min(limit, eval.size());
  if (n == 0) throw ValueError("recon_probe: empty evaluation set");
  const std::size_t D = eval.image_dim();
  Rng rng = make_rng(seed, streams::kReconProbe);
  std::uniform_int_distribution<std::size_t> step(1, model.schedule.steps);
  std::normal_distribution<double> normal(0.0, 1.0);
  Accumulator total;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t rows = std::min(kChunk, n - start);
    Tensor x(Shape{rows, D}), x_t(Shape{rows, D}), eps(Shape{rows, D});
    std::vector<std::size_t> t(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const Tensor& px = eval.images[start + r].pixels;
      t[r] = step(rng);
      const double ab = model.schedule.alpha_bar_at(t[r]);
      const double a = std::sqrt(ab), s = std::sqrt(1.0 - ab);
      for (std::size_t j = 0; j < D; ++j) {
        x.at(r, j) = px[j];
        eps.at(r, j) = normal(rng);
        x_t.at(r, j) = a * px[j] + s * eps.at(r, j);
      }
    }
    Graph g;
    Var c = model.projector.project(g, model.encoder.encode(g, g.constant(x)));
    const Tensor pred = model.denoiser.predict(g, g.constant(x_t), t, c, false).value();
    for (std::size_t k = 0; k < pred.numel(); ++k) {
      const double e = pred[k] - eps[k];
      total.add(e * e);
    }
  }
  return total.value() / static_cast<double>(n * D);
}

EvalReport evaluate_model(Model& model, const Dataset& eval, std::uint64_t seed, const EvalOptions& opt) {
  const Tensor z = encode_dataset(model, eval);
  std::vector<int> labels;
  for (const LabeledImage& im : eval.images) labels.push_back(static_cast<int>(im.label));
  std::size_t k = 0;
  {
    std::vector<int> sorted = labels;
    std::sort(sorted.begin(), sorted.end());
    k = static_cast<std::size_t>(std::unique(sorted.begin(), sorted.end()) - sorted.begin());
  }
  const KMeansResult km = kmeans(z, k, seed, opt.kmeans_max_iter, opt.kmeans_restarts);
  const ClusteringScores cs = clustering_metrics(km.assignments, labels);
  const ScatterReport sr = scatter(z, labels);
  EvalReport r;
  r.nmi = cs.nmi;
  r.acc = cs.acc;
  r.ari = cs.ari;
  r.s_inner = sr.s_inner;
  r.s_inter = sr.s_inter;
  r.recon_mse = recon_probe(model, eval, seed, opt.probe_size);
  return r;
}

}  // namespace dcr

#include "dcr/verify.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace dcr {

PointMap noise_map(Model& model, const Tensor& x_t, std::size_t t) {
  return [&model, x_t, t](const Tensor& z) {
    const std::size_t n = z.rows(), D = x_t.numel();
    Tensor xs(Shape{n, D});
    for (std::size_t r = 0; r < n; ++r) std::copy(x_t.data().begin(), x_t.data().end(), xs.row(r).begin());
    const std::vector<std::size_t> ts(n, t);
    Graph g;
    Var c = model.projector.project(g, g.constant(z));
    return model.denoiser.predict(g, g.constant(std::move(xs)), ts, c, false).value();
  };
}

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

VerifyReport verify_model(Model& model, const Dataset& ds, const VerifyOptions& opt, std::uint64_t seed) {
  if (ds.size() < 2) throw ValueError("verify: dataset needs at least two images");
  VerifyReport rep;
  rep.sandwich_min_lower_margin = rep.sandwich_min_upper_margin = std::numeric_limits<double>::infinity();
  Rng rng = make_rng(seed, streams::kVerify);
  const std::size_t bs = std::min(opt.batch_size, ds.size());

  auto record_sandwich = [&](const SandwichCheck& c, const std::string& where) {
    if (!c.admissible) {
      ++rep.sandwich_rejected;
      return;
    }
    ++rep.sandwich_checked;
    rep.sandwich_min_lower_margin = std::min(rep.sandwich_min_lower_margin, c.loss - c.lower);
    rep.sandwich_min_upper_margin = std::min(rep.sandwich_min_upper_margin, c.upper - c.loss);
    if (!c.pass) {
      ++rep.sandwich_violations;
      rep.violations.push_back("theorem2 " + where + ": loss " + fmt(c.loss) + " outside [" + fmt(c.lower) + ", " +
                               fmt(c.upper) + "]");
    }
  };

  for (std::size_t batch = 0; batch < opt.batches; ++batch) {
    // Redraw until the batch holds at least two classes.
    std::vector<std::size_t> idx;
    for (int attempt = 0; attempt < 100; ++attempt) {
      const auto order = batches(ds.size(), bs, rng(), 0);
      idx = order.front();
      std::set<std::size_t> classes;
      for (std::size_t i : idx) classes.insert(ds.images[i].label);
      if (classes.size() >= 2) break;
    }
    const TrainBatch b = make_batch(ds, idx, opt.augment, model.schedule, rng);
    const Tensor z = model.encoder.encode(b.x);

    const std::size_t t = b.t[0];
    Tensor x_t(Shape{ds.image_dim()});
    std::copy(b.x_t.row(0).begin(), b.x_t.row(0).end(), x_t.data().begin());
    const PointMap T = noise_map(model, x_t, t);
    const Tensor eps_hat = T(z);

    for (const Tensor* v : {&z, &eps_hat}) {
      rep.lemma1_max_diff = std::max(rep.lemma1_max_diff, variance_identity_check(*v).abs_diff);
      ++rep.lemma1_sets;
    }

    const ScatterReport fs = scatter(z, b.labels);
    const ScatterReport ns = noise_scatter(eps_hat, b.labels);
    const BiLipschitzEstimate est = estimate_bilipschitz(T, with_class_means(z, fs));
    const Theorem1Check chk = verify_theorem1(fs, ns, est);
    rep.theorem1.push_back({batch, t, est, chk});
    if (!chk.pass) {
      ++rep.theorem1_violations;
      rep.violations.push_back("theorem1 batch " + std::to_string(batch) + ": S_inner " + fmt(chk.inner_lhs) +
                               " vs bound " + fmt(chk.inner_rhs) + ", S_inter " + fmt(chk.inter_lhs) + " vs bound " +
                               fmt(chk.inter_rhs));
    }

    // Model-derived contrastive sets: row i of pred holds anchor i's predictions
    // under every condition in the batch, then the augmented view's.
    const std::size_t B = b.size();
    Graph g;
    Var c = model.projector.project(g, model.encoder.encode(g, g.constant(concat_rows(b.x, b.x_aug))));
    std::vector<NoisePair> pairs;
    for (std::size_t i = 0; i < B; ++i) {
      for (std::size_t j = 0; j < B; ++j) pairs.push_back({i, j});
      pairs.push_back({i, B + i});
    }
    const Tensor pred = model.denoiser.predict_pairs(g, g.constant(b.x_t), b.t, c, pairs, false).value();
    const std::size_t D = ds.image_dim();
    auto row = [&](const Tensor& m, std::size_t r) {
      Tensor out(Shape{D});
      std::copy(m.row(r).begin(), m.row(r).end(), out.data().begin());
      return out;
    };
    for (std::size_t i = 0; i < B; ++i) {
      ContrastiveSet set;
      set.tau = opt.tau;
      const std::size_t base = i * (B + 1);
      set.anchor = row(pred, base + i);
      set.positives = {row(pred, base + B), row(b.eps, i)};
      for (std::size_t j = 0; j < B; ++j) {
        if (j != i) set.negatives.push_back(row(pred, base + j));
      }
      const SandwichConstants k = fitted_sandwich_constants(set);
      if (!(k.Delta > 0.0)) {
        ++rep.sandwich_rejected;
        continue;
      }
      record_sandwich(verify_theorem2_sandwich(set, k), "batch " + std::to_string(batch) + " anchor " + std::to_string(i));
    }
  }

  Rng srng = make_rng(seed, streams::kSandwich);
  for (std::size_t i = 0; i < opt.sandwich_instances; ++i) {
    auto [set, k] = random_sandwich_instance(srng);
    record_sandwich(verify_theorem2_sandwich(set, k), "random instance " + std::to_string(i));
  }
  return rep;
}

}  // namespace dcr

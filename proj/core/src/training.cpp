#include "dcr/training.hpp"

#include <cmath>
#include <numeric>

namespace dcr {

PositiveMode positive_mode_from_string(const std::string& s) {
  if (s == "augmented") return PositiveMode::kAugmented;
  if (s == "labels") return PositiveMode::kLabels;
  throw ValueError("unknown positive mode '" + s + "' (expected augmented or labels)");
}

std::string to_string(PositiveMode m) { return m == PositiveMode::kAugmented ? "augmented" : "labels"; }

StageSchedule stage_schedule_from_string(const std::string& s) {
  if (s == "two_stage") return StageSchedule::kTwoStage;
  if (s == "end_to_end") return StageSchedule::kEndToEnd;
  throw ValueError("unknown schedule '" + s + "' (expected two_stage or end_to_end)");
}

std::string to_string(StageSchedule s) { return s == StageSchedule::kTwoStage ? "two_stage" : "end_to_end"; }

void TrainConfig::validate() const {
  if (batch_size < 2) throw ValueError("batch_size must be at least 2 (DCR needs a negative)");
  for (double lr : {lr_stage0, lr_stage1, lr_stage2, lr_naive}) {
    if (!(lr > 0.0)) throw ValueError("learning rates must be positive");
  }
  if (!(weight_decay >= 0.0)) throw ValueError("weight_decay must be nonnegative");
  if (!(tau > 0.0)) throw ValueError("tau must be positive");
  weights.validate();
}

TrainBatch make_batch(const Dataset& ds, std::span<const std::size_t> idx, const AugmentConfig& aug,
                      const DiffusionSchedule& sched, Rng& rng) {
  const std::size_t n = idx.size(), d = ds.image_dim();
  TrainBatch b;
  b.x = Tensor(Shape{n, d});
  b.x_aug = Tensor(Shape{n, d});
  b.eps = Tensor(Shape{n, d});
  b.x_t = Tensor(Shape{n, d});
  std::uniform_int_distribution<std::size_t> step(1, sched.steps);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (std::size_t r = 0; r < n; ++r) {
    const LabeledImage& im = ds.images.at(idx[r]);
    const std::uint64_t aug_seed = rng();
    const LabeledImage view = augment(im, aug, ds.height, ds.width, ds.channels, aug_seed);
    const std::size_t t = step(rng);
    const double a = std::sqrt(sched.alpha_bar_at(t)), s = std::sqrt(1.0 - sched.alpha_bar_at(t));
    auto x = b.x.row(r), xa = b.x_aug.row(r), e = b.eps.row(r), xt = b.x_t.row(r);
    for (std::size_t j = 0; j < d; ++j) {
      x[j] = im.pixels[j];
      xa[j] = view.pixels[j];
      e[j] = normal(rng);
      xt[j] = a * x[j] + s * e[j];
    }
    b.t.push_back(t);
    b.labels.push_back(static_cast<int>(im.label));
  }
  return b;
}

Var dcr_batch_loss(Graph& g, Model& m, Var x, Var x_aug, const TrainBatch& b, double tau) {
  const std::size_t B = b.size();
  if (B < 2) throw ValueError("dcr loss needs a batch of at least 2 (no negatives otherwise)");
  Var z = m.encoder.encode(g, concat({x, x_aug}, 0));
  Var c = m.projector.project(g, z);

  // Per anchor i, K = B + 1 predictions: own condition, augmented view, then
  // every other item's condition.
  const std::size_t K = B + 1;
  std::vector<NoisePair> pairs;
  pairs.reserve(B * K);
  for (std::size_t i = 0; i < B; ++i) {
    pairs.push_back({i, i});
    pairs.push_back({i, B + i});
    for (std::size_t j = 0; j < B; ++j) {
      if (j != i) pairs.push_back({i, j});
    }
  }
  Var pred = m.denoiser.predict_pairs(g, g.constant(b.x_t), b.t, c, pairs, !m.denoiser.frozen);
  Var all = concat({pred, g.constant(b.eps)}, 0);

  // Similarity columns per anchor: [augmented positive, ground truth, negatives...].
  std::vector<std::size_t> anchor_rows, member_rows;
  anchor_rows.reserve(B * K);
  member_rows.reserve(B * K);
  for (std::size_t i = 0; i < B; ++i) {
    member_rows.push_back(i * K + 1);
    member_rows.push_back(B * K + i);
    for (std::size_t j = 2; j < K; ++j) member_rows.push_back(i * K + j);
    anchor_rows.insert(anchor_rows.end(), K, i * K);
  }
  Var sims = cosine_similarity_rows(gather_rows(all, std::move(anchor_rows)), gather_rows(all, std::move(member_rows)));
  return dcr_loss_from_similarities(reshape(sims, Shape{B, K}), tau);
}

double dcr_batch_loss(Model& m, const TrainBatch& b, double tau) {
  Graph g;
  return dcr_batch_loss(g, m, g.constant(b.x), g.constant(b.x_aug), b, tau).value().item();
}

Var denoising_loss(Graph& g, Model& m, Projector& projector, Var x, const TrainBatch& b) {
  Var c = projector.project(g, m.encoder.encode(g, x));
  Var pred = m.denoiser.predict(g, g.constant(b.x_t), b.t, c, !m.denoiser.frozen);
  return reconstruction_loss(pred, g.constant(b.eps));
}

double gradient_conflict(std::span<const double> g_con, std::span<const double> g_rec) {
  if (g_con.size() != g_rec.size()) {
    throw ShapeError("gradient_conflict", {Shape{g_con.size()}, Shape{g_rec.size()}}, "gradient lengths differ");
  }
  const double nc = std::sqrt(squared_norm(g_con)), nr = std::sqrt(squared_norm(g_rec));
  if (nc == 0.0 || nr == 0.0) throw ValueError("gradient_conflict: zero gradient vector");
  return std::clamp(dot(g_con, g_rec) / (nc * nr), -1.0, 1.0);
}

NaiveStepResult naive_step_gradients(Model& m, const TrainBatch& b, const TrainConfig& cfg) {
  const std::size_t B = b.size();
  Graph g;
  Var z = m.encoder.encode(g, g.constant(concat_rows(b.x, b.x_aug)));
  const Tensor& zv = z.value();
  const std::size_t dz = zv.cols();

  std::vector<int> groups(2 * B);
  for (std::size_t i = 0; i < B; ++i) {
    const int id = cfg.positives == PositiveMode::kAugmented ? static_cast<int>(i) : b.labels[i];
    groups[i] = groups[B + i] = id;
  }

  NaiveStepResult r;
  Tensor g_con_all;
  {
    Graph gc;
    Var leaf = gc.input(zv, true, "z");
    Var l = info_nce(leaf, groups, cfg.tau);
    gc.backward(l);
    r.l_con = l.value().item();
    g_con_all = gc.grad(leaf);
  }
  {
    Graph gr;
    Tensor z_clean(Shape{B, dz});
    std::copy(zv.data().begin(), zv.data().begin() + static_cast<std::ptrdiff_t>(B * dz), z_clean.data().begin());
    Var leaf = gr.input(std::move(z_clean), true, "z");
    Var c = m.projector.project(gr, leaf);
    Var pred = m.denoiser.predict(gr, gr.constant(b.x_t), b.t, c, !m.denoiser.frozen);
    Var l = reconstruction_loss(pred, gr.constant(b.eps));
    gr.backward(l);
    r.l_rec = l.value().item();
    r.g_rec = gr.grad(leaf);
  }
  // The projector only sees the reconstruction term.
  if (!m.projector.frozen) {
    for (Parameter* p : m.projector.parameters()) {
      for (double& v : p->grad.data()) v *= cfg.weights.lambda_rec;
    }
  }

  r.g_con = Tensor(Shape{B, dz});
  std::copy(g_con_all.data().begin(), g_con_all.data().begin() + static_cast<std::ptrdiff_t>(B * dz), r.g_con.data().begin());
  r.cos = gradient_conflict(r.g_con.data(), r.g_rec.data());

  // Pull the weighted feature gradient back through the encoder.
  Tensor combined(zv.shape());
  for (std::size_t k = 0; k < combined.numel(); ++k) {
    combined[k] = cfg.weights.lambda_con * g_con_all[k] + (k < B * dz ? cfg.weights.lambda_rec * r.g_rec[k] : 0.0);
  }
  if (!m.encoder.frozen) g.backward(sum(z * g.constant(std::move(combined))));
  return r;
}

TrainBatch held_out_batch(const Dataset& eval, const TrainConfig& cfg, const DiffusionSchedule& sched) {
  if (eval.size() < 2) throw ValueError("held-out split needs at least two images");
  const std::size_t bs = std::min(cfg.batch_size, eval.size());
  Rng rng = make_rng(cfg.seed, streams::kProbe);
  const auto order = batches(eval.size(), bs, cfg.seed ^ 0x9e3779b97f4a7c15ull, 0);
  return make_batch(eval, order.front(), cfg.augment, sched, rng);
}

Trainer::Trainer(Model& model, const Dataset& train, const Dataset& eval, const TrainConfig& cfg, RunLog& log)
    : m_(model), train_(train), eval_(eval), cfg_(cfg), log_(log) {
  cfg_.validate();
  cfg_.augment.validate(train.height, train.width);
  if (train.image_dim() != model.config.image_dim() || eval.image_dim() != model.config.image_dim()) {
    throw ShapeError("trainer", {Shape{train.height, train.width, train.channels},
                                 Shape{model.config.height, model.config.width, model.config.channels}},
                     "dataset image shape differs from the model's");
  }
  if (train.size() < cfg_.batch_size) {
    throw ValueError("batch_size " + std::to_string(cfg_.batch_size) + " exceeds training set size " +
                     std::to_string(train.size()));
  }
}

std::vector<std::size_t> Trainer::next_indices(std::size_t& epoch, std::size_t& cursor,
                                               std::vector<std::vector<std::size_t>>& order, std::uint64_t stream) {
  if (cursor >= order.size()) {
    order = batches(train_.size(), cfg_.batch_size, cfg_.seed * 1000003ull + stream, epoch++);
    cursor = 0;
  }
  return order[cursor++];
}

void Trainer::evaluate(const std::string& stage, std::size_t step, const std::string& key, double value) {
  log_.append({"eval", stage, step, {{key, value}}, {}});
}

namespace {

void check_finite(double loss, const std::string& stage, std::size_t step) {
  if (!std::isfinite(loss)) {
    throw Error("loss diverged (" + std::to_string(loss) + ") in " + stage + " at step " + std::to_string(step));
  }
}

}  // namespace

StageResult Trainer::pretrain_denoiser() {
  if (cfg_.stage0_steps == 0) throw ValueError("stage0_steps must be positive");
  m_.encoder.frozen = true;
  m_.denoiser.frozen = false;
  m_.reference_projector.frozen = false;

  std::vector<Parameter*> params = m_.denoiser.parameters();
  for (Parameter* p : m_.reference_projector.parameters()) params.push_back(p);
  AdamW opt(params, {0.9, 0.999, 1e-8, cfg_.weight_decay});
  opt.zero_grad();

  const TrainBatch held = held_out_batch(eval_, cfg_, m_.schedule);
  auto held_loss = [&] {
    Graph g;
    return denoising_loss(g, m_, m_.reference_projector, g.constant(held.x), held).value().item();
  };

  StageResult res;
  res.eval_before = held_loss();
  evaluate("stage0", 0, "loss_mse", res.eval_before);

  Rng rng = make_rng(cfg_.seed, streams::kStage0);
  std::size_t epoch = 0, cursor = 0;
  std::vector<std::vector<std::size_t>> order;
  for (std::size_t step = 1; step <= cfg_.stage0_steps; ++step) {
    const auto idx = next_indices(epoch, cursor, order, streams::kStage0);
    const TrainBatch b = make_batch(train_, idx, cfg_.augment, m_.schedule, rng);
    Graph g;
    Var loss = denoising_loss(g, m_, m_.reference_projector, g.constant(b.x), b);
    check_finite(loss.value().item(), "stage0", step);
    g.backward(loss);
    opt.step(cfg_.lr_stage0);
    opt.zero_grad();
    log_.append({"step", "stage0", step, {{"loss_mse", loss.value().item()}}, b.t});
    if (cfg_.eval_every && step % cfg_.eval_every == 0 && step != cfg_.stage0_steps) evaluate("stage0", step, "loss_mse", held_loss());
    if (on_step) on_step("stage0", step);
  }
  res.steps = cfg_.stage0_steps;
  res.eval_after = held_loss();
  evaluate("stage0", cfg_.stage0_steps, "loss_mse", res.eval_after);

  m_.denoiser.frozen = true;
  m_.reference_projector.frozen = true;
  return res;
}

StageResult Trainer::run_dcr(const std::string& stage, std::size_t steps, bool train_encoder, bool train_projector) {
  if (!m_.denoiser.frozen) throw ValueError(stage + ": the denoiser must be pretrained and frozen first");
  m_.encoder.frozen = !train_encoder;
  m_.projector.frozen = !train_projector;

  const AdamWConfig oc{0.9, 0.999, 1e-8, cfg_.weight_decay};
  AdamW enc_opt(train_encoder ? m_.encoder.parameters() : std::vector<Parameter*>{}, oc);
  AdamW proj_opt(train_projector ? m_.projector.parameters() : std::vector<Parameter*>{}, oc);
  enc_opt.zero_grad();
  proj_opt.zero_grad();

  const TrainBatch held = held_out_batch(eval_, cfg_, m_.schedule);
  StageResult res;
  res.eval_before = dcr_batch_loss(m_, held, cfg_.tau);
  evaluate(stage, 0, "loss_dcr", res.eval_before);

  const std::uint64_t stream = stage == "stage2" ? streams::kStage2 : streams::kStage1;
  Rng rng = make_rng(cfg_.seed, stream);
  std::size_t epoch = 0, cursor = 0;
  std::vector<std::vector<std::size_t>> order;
  for (std::size_t step = 1; step <= steps; ++step) {
    const auto idx = next_indices(epoch, cursor, order, stream);
    const TrainBatch b = make_batch(train_, idx, cfg_.augment, m_.schedule, rng);
    Graph g;
    Var loss = dcr_batch_loss(g, m_, g.constant(b.x), g.constant(b.x_aug), b, cfg_.tau);
    check_finite(loss.value().item(), stage, step);
    g.backward(loss);
    if (train_encoder) enc_opt.step(cfg_.lr_stage2);
    if (train_projector) proj_opt.step(cfg_.lr_stage1);
    enc_opt.zero_grad();
    proj_opt.zero_grad();
    log_.append({"step", stage, step, {{"loss_dcr", loss.value().item()}}, b.t});
    if (cfg_.eval_every && step % cfg_.eval_every == 0 && step != steps) evaluate(stage, step, "loss_dcr", dcr_batch_loss(m_, held, cfg_.tau));
    if (on_step) on_step(stage, step);
  }
  res.steps = steps;
  res.eval_after = dcr_batch_loss(m_, held, cfg_.tau);
  evaluate(stage, steps, "loss_dcr", res.eval_after);
  m_.encoder.frozen = true;
  m_.projector.frozen = true;
  return res;
}

StageResult Trainer::train_stage1() { return run_dcr("stage1", cfg_.stage1_steps, false, true); }

StageResult Trainer::train_stage2() { return run_dcr("stage2", cfg_.stage2_steps, true, false); }

StageResult Trainer::train_end_to_end() {
  return run_dcr("end_to_end", cfg_.stage1_steps + cfg_.stage2_steps, true, true);
}

StageResult Trainer::train_dcr() {
  if (cfg_.schedule == StageSchedule::kEndToEnd) return train_end_to_end();
  const StageResult s1 = train_stage1();
  StageResult s2 = train_stage2();
  s2.eval_before = s1.eval_before;
  s2.steps += s1.steps;
  return s2;
}

NaiveResult Trainer::train_naive(bool keep_vectors) {
  if (!m_.denoiser.frozen) throw ValueError("naive: the denoiser must be pretrained and frozen first");
  m_.encoder.frozen = false;
  m_.projector.frozen = !cfg_.naive_train_projector;

  const AdamWConfig oc{0.9, 0.999, 1e-8, cfg_.weight_decay};
  AdamW enc_opt(m_.encoder.parameters(), oc);
  AdamW proj_opt(m_.projector.frozen ? std::vector<Parameter*>{} : m_.projector.parameters(), oc);
  enc_opt.zero_grad();
  proj_opt.zero_grad();

  const TrainBatch held = held_out_batch(eval_, cfg_, m_.schedule);
  auto held_loss = [&] {
    Graph g;
    return denoising_loss(g, m_, m_.projector, g.constant(held.x), held).value().item();
  };

  NaiveResult res;
  res.stage.eval_before = held_loss();
  evaluate("naive", 0, "loss_rec", res.stage.eval_before);

  Rng rng = make_rng(cfg_.seed, streams::kNaive);
  std::size_t epoch = 0, cursor = 0;
  std::vector<std::vector<std::size_t>> order;
  std::size_t negatives = 0, negatives_late = 0;
  const std::size_t steps = cfg_.naive_steps, half = steps / 2;
  for (std::size_t step = 1; step <= steps; ++step) {
    const auto idx = next_indices(epoch, cursor, order, streams::kNaive);
    const TrainBatch b = make_batch(train_, idx, cfg_.augment, m_.schedule, rng);
    const NaiveStepResult r = naive_step_gradients(m_, b, cfg_);
    const double joint = joint_loss(r.l_con, r.l_rec, cfg_.weights);
    check_finite(joint, "naive", step);
    enc_opt.step(cfg_.lr_naive);
    if (!m_.projector.frozen) proj_opt.step(cfg_.lr_naive);
    enc_opt.zero_grad();
    proj_opt.zero_grad();

    if (r.cos < 0.0) {
      ++negatives;
      if (step > half) ++negatives_late;
    }
    GradConflictSample s{step, {}, {}, r.cos, r.l_con, r.l_rec};
    if (keep_vectors) {
      s.g_con.assign(r.g_con.data().begin(), r.g_con.data().end());
      s.g_rec.assign(r.g_rec.data().begin(), r.g_rec.data().end());
    }
    res.samples.push_back(std::move(s));
    log_.append({"step", "naive", step, {{"l_con", r.l_con}, {"l_rec", r.l_rec}, {"l_joint", joint}, {"cos", r.cos}}, b.t});
    if (cfg_.eval_every && step % cfg_.eval_every == 0 && step != steps) evaluate("naive", step, "loss_rec", held_loss());
    if (on_step) on_step("naive", step);
  }
  res.stage.steps = steps;
  res.stage.eval_after = held_loss();
  evaluate("naive", steps, "loss_rec", res.stage.eval_after);
  if (steps > 0) {
    res.negative_fraction = static_cast<double>(negatives) / static_cast<double>(steps);
    res.negative_fraction_second_half = static_cast<double>(negatives_late) / static_cast<double>(steps - half);
  }
  log_.append({"eval", "naive", steps, {{"negative_fraction", res.negative_fraction},
                                        {"negative_fraction_second_half", res.negative_fraction_second_half}}, {}});
  m_.encoder.frozen = true;
  m_.projector.frozen = true;
  return res;
}

}  // namespace dcr

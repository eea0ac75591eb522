#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dcr/datasets.hpp"
#include "dcr/losses.hpp"
#include "dcr/model.hpp"
#include "dcr/optim.hpp"
#include "dcr/runlog.hpp"

namespace dcr {

// How the naive baseline picks InfoNCE positives: the other view of the same
// image, or every item sharing the class label (plus the other view).
enum class PositiveMode { kAugmented, kLabels };
// Two-stage trains the projector then the encoder; end-to-end trains both at
// once for the same total number of steps.
enum class StageSchedule { kTwoStage, kEndToEnd };

PositiveMode positive_mode_from_string(const std::string& s);
std::string to_string(PositiveMode m);
StageSchedule stage_schedule_from_string(const std::string& s);
std::string to_string(StageSchedule s);

struct TrainConfig {
  std::size_t stage0_steps = 3000;
  std::size_t stage1_steps = 1500;
  std::size_t stage2_steps = 1500;
  std::size_t naive_steps = 3000;
  std::size_t batch_size = 16;
  double lr_stage0 = 1e-3;
  double lr_stage1 = 1e-4;
  double lr_stage2 = 1e-5;
  double lr_naive = 1e-4;
  double weight_decay = 0.01;
  std::uint64_t seed = 0;
  double tau = kDefaultTau;
  LossWeights weights;
  AugmentConfig augment;
  PositiveMode positives = PositiveMode::kAugmented;
  bool naive_train_projector = true;
  StageSchedule schedule = StageSchedule::kTwoStage;
  // Held-out evaluation cadence in steps; 0 evaluates only before and after each stage.
  std::size_t eval_every = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// One step's worth of sampled data: clean images, their augmented views, and
// the noising draws for each anchor.
struct TrainBatch {
  Tensor x;      // B x D
  Tensor x_aug;  // B x D
  Tensor eps;    // B x D
  Tensor x_t;    // B x D
  std::vector<std::size_t> t;
  std::vector<int> labels;

  std::size_t size() const { return t.size(); }
};

// Draw order per item: augmentation seed, timestep, then the noise vector.
TrainBatch make_batch(const Dataset& ds, std::span<const std::size_t> idx, const AugmentConfig& aug,
                      const DiffusionSchedule& sched, Rng& rng);

// Mean DCR loss over a batch. Every anchor i gets three kinds of prediction
// from the denoiser at its own (x_t, t): with its own condition (anchor), with
// its augmented view's condition (positive), and with every other item's
// condition (negatives). The ground-truth noise is the second positive.
// x and x_aug are graph nodes so the full path can be differentiated.
Var dcr_batch_loss(Graph& g, Model& m, Var x, Var x_aug, const TrainBatch& b, double tau);
double dcr_batch_loss(Model& m, const TrainBatch& b, double tau);

// Mean noise-prediction MSE with conditions from the given projector.
Var denoising_loss(Graph& g, Model& m, Projector& projector, Var x, const TrainBatch& b);

// Cosine of two gradient vectors. Zero vectors are an error.
double gradient_conflict(std::span<const double> g_con, std::span<const double> g_rec);

struct GradConflictSample {
  std::size_t step = 0;
  std::vector<double> g_con;  // filled only when requested
  std::vector<double> g_rec;
  double cos = 0.0;
  double l_con = 0.0;
  double l_rec = 0.0;
};

// Gradients for one naive step. g_con and g_rec are taken with respect to the
// batch features z of the clean images; parameter gradients of the weighted
// joint loss are accumulated into the encoder (and projector when trainable).
struct NaiveStepResult {
  Tensor g_con;
  Tensor g_rec;
  double l_con = 0.0;
  double l_rec = 0.0;
  double cos = 0.0;
};
NaiveStepResult naive_step_gradients(Model& m, const TrainBatch& b, const TrainConfig& cfg);

struct StageResult {
  std::size_t steps = 0;
  double eval_before = 0.0;
  double eval_after = 0.0;
};

struct NaiveResult {
  StageResult stage;
  std::vector<GradConflictSample> samples;
  // Fraction of steps with negative conflict cosine, over the whole run and over its second half.
  double negative_fraction = 0.0;
  double negative_fraction_second_half = 0.0;
};

// Fixed held-out batch drawn from the eval split with its own seeded stream,
// so losses before and after a stage are comparable.
TrainBatch held_out_batch(const Dataset& eval, const TrainConfig& cfg, const DiffusionSchedule& sched);

class Trainer {
 public:
  Trainer(Model& model, const Dataset& train, const Dataset& eval, const TrainConfig& cfg, RunLog& log);

  // Stage 0: denoiser and reference projector learn plain noise prediction
  // over the frozen, randomly initialized encoder. The denoiser is frozen afterwards.
  StageResult pretrain_denoiser();
  // Stage 1: projector only. Stage 2: encoder only.
  StageResult train_stage1();
  StageResult train_stage2();
  // Projector and encoder together for stage1_steps + stage2_steps.
  StageResult train_end_to_end();
  // Runs stage 1 and 2 or the end-to-end variant, per config.
  StageResult train_dcr();
  NaiveResult train_naive(bool keep_vectors = false);

  // Called after every optimizer step with (stage, step).
  std::function<void(const std::string&, std::size_t)> on_step;

 private:
  StageResult run_dcr(const std::string& stage, std::size_t steps, bool train_encoder, bool train_projector);
  std::vector<std::size_t> next_indices(std::size_t& epoch, std::size_t& cursor,
                                        std::vector<std::vector<std::size_t>>& order, std::uint64_t stream);
  void evaluate(const std::string& stage, std::size_t step, const std::string& key, double value);

  Model& m_;
  const Dataset& train_;
  const Dataset& eval_;
  TrainConfig cfg_;
  RunLog& log_;
};

}  // namespace dcr

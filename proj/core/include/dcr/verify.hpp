#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dcr/evaluation.hpp"
#include "dcr/training.hpp"

namespace dcr {

struct VerifyOptions {
  std::size_t batches = 20;
  std::size_t batch_size = 32;
  std::size_t sandwich_instances = 1000;
  double tau = kDefaultTau;
  AugmentConfig augment;
};

struct Theorem1BatchReport {
  std::size_t batch = 0;
  std::size_t t = 0;
  BiLipschitzEstimate estimate;
  Theorem1Check check;
};

struct VerifyReport {
  double lemma1_max_diff = 0.0;
  std::size_t lemma1_sets = 0;
  std::vector<Theorem1BatchReport> theorem1;
  std::size_t theorem1_violations = 0;
  std::size_t sandwich_checked = 0;
  std::size_t sandwich_rejected = 0;
  std::size_t sandwich_violations = 0;
  double sandwich_min_lower_margin = 0.0;
  double sandwich_min_upper_margin = 0.0;
  std::vector<std::string> violations;

  bool ok() const { return lemma1_max_diff < 1e-9 && theorem1_violations == 0 && sandwich_violations == 0; }
};

// Noise map at one fixed (x_t, t): condition-space features go through the
// projector and the frozen denoiser.
PointMap noise_map(Model& model, const Tensor& x_t, std::size_t t);

// Lemma 1 on every batch's features and noises, the Theorem 1 inequalities per
// batch with (m, L) estimated on that batch's features plus class means, and
// the sandwich on model-derived sets (constants fitted per set) plus random
// admissible instances.
VerifyReport verify_model(Model& model, const Dataset& ds, const VerifyOptions& opt, std::uint64_t seed);

}  // namespace dcr

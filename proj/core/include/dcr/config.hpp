#pragma once

#include <filesystem>
#include <string>

#include "dcr/datasets.hpp"
#include "dcr/model.hpp"
#include "dcr/training.hpp"

namespace dcr {

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" or "idx"
  SyntheticSpec synthetic;
  std::string idx_images;
  std::string idx_labels;
  double eval_fraction = 0.2;

  bool operator==(const DataConfig&) const = default;
};

struct EvalConfig {
  std::size_t kmeans_restarts = 5;
  std::size_t kmeans_max_iter = 100;
  std::size_t verify_batches = 20;
  std::size_t verify_batch_size = 32;
  std::size_t sandwich_instances = 1000;
  // Eval-split images used by the reconstruction probe; 0 means all of them.
  std::size_t probe_size = 0;

  bool operator==(const EvalConfig&) const = default;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataConfig data;
  EvalConfig eval;
  std::string out_dir = "runs";

  // Range checks plus existence of referenced input files.
  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

// Canonical JSON text: sorted keys, two-space indent. Missing keys take their
// defaults on parse; unknown keys and wrongly typed values are ValueErrors.
std::string to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& cfg);

std::string to_json(const ModelConfig& cfg);
std::string to_json(const TrainConfig& cfg);

// Synthetic data or IDX files per the config. Image dims must match the model.
Dataset load_dataset(const DataConfig& data);

}  // namespace dcr

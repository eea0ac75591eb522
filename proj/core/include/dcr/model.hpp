#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dcr/diffusion.hpp"
#include "dcr/encoder.hpp"

namespace dcr {

struct ModelConfig {
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t channels = 1;
  std::size_t encoder_hidden = 128;
  std::size_t feature_dim = 32;
  std::size_t projector_hidden = 32;
  std::size_t cond_dim = 32;
  Activation projector_activation = Activation::kGelu;
  std::size_t denoiser_hidden = 256;
  std::size_t time_dim = 32;
  std::size_t timesteps = 100;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  VarianceChoice variance = VarianceChoice::kBeta;

  std::size_t image_dim() const { return height * width * channels; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Everything the pipeline trains. The reference projector conditions the
// denoiser during its pretraining; the main projector is the one aligned by
// the contrastive stages.
struct Model {
  ModelConfig config;
  DiffusionSchedule schedule;
  Encoder encoder;
  Projector projector;
  Projector reference_projector;
  Denoiser denoiser;

  Model() = default;
  Model(const ModelConfig& cfg, std::uint64_t seed);

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

// Binary checkpoint:
//   8 bytes   magic "DCRCKPT\0"
//   u32       format version
//   u64 + n   metadata (JSON text)
//   u64       tensor count, then per tensor:
//             u64 + n name, u32 rank, rank x u64 dims, numel x f64
// Integers and doubles are little-endian. Output bytes depend only on the inputs.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointFile {
  std::uint32_t version = kCheckpointVersion;
  std::string meta_json;
  std::vector<Parameter> tensors;

  const Parameter* find(const std::string& name) const;
};

std::string serialize_checkpoint(const std::string& meta_json, const std::vector<const Parameter*>& params);
CheckpointFile parse_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const std::string& meta_json,
                     const std::vector<const Parameter*>& params);
CheckpointFile load_checkpoint(const std::filesystem::path& path);
// Copies tensors into params by name. A missing tensor or a shape mismatch is an error naming the dims.
void restore_parameters(const CheckpointFile& ckpt, const std::vector<Parameter*>& params);

// Raw bytes of a set of parameters, used to assert that frozen parts never change.
std::string parameter_bytes(const std::vector<const Parameter*>& params);

void save_model(const std::filesystem::path& path, const Model& model, const std::string& stage);
Model load_model(const std::filesystem::path& path, std::string* stage = nullptr);

}  // namespace dcr

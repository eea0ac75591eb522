#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "dcr/tensor.hpp"

namespace dcr {

// One image with pixels in [-1, 1], stored H x W x C row-major.
struct LabeledImage {
  Tensor pixels;
  std::size_t label = 0;
};

struct Dataset {
  std::vector<LabeledImage> images;
  std::size_t num_classes = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;

  std::size_t size() const { return images.size(); }
  std::size_t image_dim() const { return height * width * channels; }
  // Throws ValueError if any image violates the dataset invariants.
  void validate() const;
  std::vector<std::size_t> labels() const;
  Dataset subset(std::span<const std::size_t> indices) const;
};

// Stacks the chosen images as rows of an (n x H*W*C) matrix.
Tensor stack_pixels(const Dataset& ds, std::span<const std::size_t> indices);
Tensor stack_pixels(std::span<const LabeledImage> images);

struct SyntheticSpec {
  std::size_t num_classes = 4;
  std::size_t per_class = 64;
  std::size_t height = 16;
  std::size_t width = 16;
  std::uint64_t seed = 7;

  bool operator==(const SyntheticSpec&) const = default;
};

// Parametric shapes: class k draws shape kind k % 4 (disk, cross, bar, ring)
// with class-specific geometry from k / 4; position, scale and intensity are
// per-sample nuisance. Output is class-major and deterministic in the seed.
Dataset generate_synthetic(const SyntheticSpec& spec);

struct AugmentConfig {
  std::size_t max_shift = 2;
  double jitter_std = 0.05;
  double flip_prob = 0.0;

  void validate(std::size_t height, std::size_t width) const;
  bool operator==(const AugmentConfig&) const = default;
};

// Random translation (background fill), optional horizontal flip and additive
// pixel jitter, clamped to [-1, 1]. Deterministic in (image, cfg, seed).
LabeledImage augment(const LabeledImage& image, const AugmentConfig& cfg, std::size_t height, std::size_t width,
                     std::size_t channels, std::uint64_t seed);

// Seeded permutation of [0, n) cut into full batches; the short tail is dropped.
std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch);

// Deterministic held-out split; returns (train, eval).
std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double eval_fraction, std::uint64_t seed);

// ---- IDX (MNIST layout) ---------------------------------------------------

inline constexpr std::uint32_t kIdxImageMagic = 2051;  // 00 00 08 03
inline constexpr std::uint32_t kIdxLabelMagic = 2049;  // 00 00 08 01
inline constexpr std::uint32_t kIdxImageMagicRgb = 2052;  // 00 00 08 04, n x H x W x C

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);
void write_idx(const Dataset& ds, const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

// Pixel <-> byte mapping used by the IDX codec: byte b maps to b / 127.5 - 1.
std::uint8_t quantize_pixel(double v);
double dequantize_pixel(std::uint8_t b);

}  // namespace dcr

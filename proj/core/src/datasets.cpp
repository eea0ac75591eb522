#include "dcr/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "dcr/rng.hpp"

namespace dcr {

void Dataset::validate() const {
  if (height == 0 || width == 0 || channels == 0) throw ValueError("dataset: zero-sized image dimensions");
  const Shape expected{height, width, channels};
  for (std::size_t i = 0; i < images.size(); ++i) {
    const LabeledImage& im = images[i];
    if (im.pixels.shape() != expected) {
      throw ShapeError("dataset", {im.pixels.shape(), expected}, "image " + std::to_string(i));
    }
    if (im.label >= num_classes) {
      throw ValueError("dataset: image " + std::to_string(i) + " has label " + std::to_string(im.label) +
                       " but K = " + std::to_string(num_classes));
    }
    for (double v : im.pixels.data()) {
      if (!(v >= -1.0 && v <= 1.0)) throw ValueError("dataset: image " + std::to_string(i) + " has a pixel outside [-1, 1]");
    }
  }
}

std::vector<std::size_t> Dataset::labels() const {
  std::vector<std::size_t> out;
  out.reserve(images.size());
  for (const auto& im : images) out.push_back(im.label);
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out{{}, num_classes, height, width, channels};
  out.images.reserve(indices.size());
  for (std::size_t i : indices) out.images.push_back(images.at(i));
  return out;
}

Tensor stack_pixels(const Dataset& ds, std::span<const std::size_t> indices) {
  const std::size_t d = ds.image_dim();
  Tensor out(Shape{indices.size(), d});
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto src = ds.images.at(indices[r]).pixels.data();
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

Tensor stack_pixels(std::span<const LabeledImage> images) {
  if (images.empty()) return Tensor(Shape{0, 0});
  const std::size_t d = images.front().pixels.numel();
  Tensor out(Shape{images.size(), d});
  for (std::size_t r = 0; r < images.size(); ++r) {
    const auto src = images[r].pixels.data();
    if (src.size() != d) throw ShapeError("stack_pixels", {images.front().pixels.shape(), images[r].pixels.shape()});
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

namespace {

struct Vec2 {
  double x, y;
};

// Signed distance to an axis-aligned box of half extents (hx, hy) after rotating p by -angle.
double box_sdf(Vec2 p, double hx, double hy, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  const double qx = std::abs(c * p.x + s * p.y) - hx;
  const double qy = std::abs(-s * p.x + c * p.y) - hy;
  const double ox = std::max(qx, 0.0), oy = std::max(qy, 0.0);
  return std::sqrt(ox * ox + oy * oy) + std::min(std::max(qx, qy), 0.0);
}

double shape_sdf(std::size_t kind, std::size_t variant, std::size_t variants, Vec2 p, double size) {
  const double frac = variants > 1 ? static_cast<double>(variant) / static_cast<double>(variants) : 0.0;
  const double r = std::hypot(p.x, p.y);
  switch (kind) {
    case 0: {  // disk
      return r - size * (0.34 - 0.14 * frac);
    }
    case 1: {  // cross
      const double angle = frac * std::numbers::pi / 2.0;
      const double arm = size * 0.42, half = size * 0.09;
      return std::min(box_sdf(p, arm, half, angle), box_sdf(p, half, arm, angle));
    }
    case 2: {  // bar
      const double angle = frac * std::numbers::pi;
      return box_sdf(p, size * 0.44, size * 0.11, angle);
    }
    default: {  // ring
      const double radius = size * 0.33;
      const double half = size * (0.06 + 0.05 * frac);
      return std::abs(r - radius) - half;
    }
  }
}

}  // namespace

Dataset generate_synthetic(const SyntheticSpec& spec) {
  if (spec.num_classes < 2) throw ValueError("generate_synthetic: need at least 2 classes, got " + std::to_string(spec.num_classes));
  if (spec.height < 8 || spec.width < 8) {
    throw ValueError("generate_synthetic: images must be at least 8x8, got " + std::to_string(spec.height) + "x" +
                     std::to_string(spec.width));
  }
  if (spec.per_class == 0) throw ValueError("generate_synthetic: per_class must be positive");

  Rng rng = make_rng(spec.seed, streams::kData);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> intensity(0.6, 1.0);

  const std::size_t variants = (spec.num_classes + 3) / 4;
  const double extent = static_cast<double>(std::min(spec.height, spec.width));
  Dataset ds{{}, spec.num_classes, spec.height, spec.width, 1};
  ds.images.reserve(spec.num_classes * spec.per_class);
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    const std::size_t kind = k % 4, variant = k / 4;
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      const double cx = 0.5 * static_cast<double>(spec.width) + unit(rng) * extent / 8.0;
      const double cy = 0.5 * static_cast<double>(spec.height) + unit(rng) * extent / 8.0;
      const double size = extent * (1.0 + 0.15 * unit(rng));
      const double fg = intensity(rng);
      Tensor px(Shape{spec.height, spec.width, 1});
      for (std::size_t y = 0; y < spec.height; ++y) {
        for (std::size_t x = 0; x < spec.width; ++x) {
          const Vec2 p{static_cast<double>(x) + 0.5 - cx, static_cast<double>(y) + 0.5 - cy};
          const double sd = shape_sdf(kind, variant, variants, p, size);
          const double coverage = std::clamp(0.5 - sd, 0.0, 1.0);
          px[y * spec.width + x] = -1.0 + (fg + 1.0) * coverage;
        }
      }
      ds.images.push_back({std::move(px), k});
    }
  }
  return ds;
}

void AugmentConfig::validate(std::size_t height, std::size_t width) const {
  if (2 * max_shift >= std::min(height, width)) {
    throw ValueError("augment: max_shift " + std::to_string(max_shift) + " must be below min(H, W) / 2");
  }
  if (!(jitter_std >= 0.0)) throw ValueError("augment: jitter_std must be non-negative");
  if (!(flip_prob >= 0.0 && flip_prob <= 1.0)) throw ValueError("augment: flip_prob must lie in [0, 1]");
}

LabeledImage augment(const LabeledImage& image, const AugmentConfig& cfg, std::size_t height, std::size_t width,
                     std::size_t channels, std::uint64_t seed) {
  cfg.validate(height, width);
  if (image.pixels.numel() != height * width * channels) {
    throw ShapeError("augment", {image.pixels.shape(), Shape{height, width, channels}});
  }
  Rng rng = make_rng(seed, 0xa06);
  const auto shift = static_cast<long>(cfg.max_shift);
  std::uniform_int_distribution<long> shift_dist(-shift, shift);
  const long dx = shift_dist(rng);
  const long dy = shift_dist(rng);
  const bool flip = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.flip_prob;

  LabeledImage out{Tensor(image.pixels.shape(), -1.0), image.label};
  const auto h = static_cast<long>(height), w = static_cast<long>(width);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      const long sy = y - dy;
      long sx = x - dx;
      if (flip) sx = w - 1 - sx;
      if (sy < 0 || sy >= h || sx < 0 || sx >= w) continue;
      for (std::size_t c = 0; c < channels; ++c) {
        out.pixels[(static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)) * channels + c] =
            image.pixels[(static_cast<std::size_t>(sy) * width + static_cast<std::size_t>(sx)) * channels + c];
      }
    }
  }
  if (cfg.jitter_std > 0.0) {
    std::normal_distribution<double> jitter(0.0, cfg.jitter_std);
    for (double& v : out.pixels.data()) v = std::clamp(v + jitter(rng), -1.0, 1.0);
  }
  return out;
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch) {
  if (batch_size < 2) throw ValueError("batches: batch_size must be at least 2");
  if (batch_size > n) {
    throw ValueError("batches: batch_size " + std::to_string(batch_size) + " exceeds dataset size " + std::to_string(n));
  }
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = make_rng(seed, (streams::kBatches << 40) ^ epoch);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start + batch_size <= n; start += batch_size) {
    out.emplace_back(perm.begin() + static_cast<long>(start), perm.begin() + static_cast<long>(start + batch_size));
  }
  return out;
}

std::pair<Dataset, Dataset> split_dataset(const Dataset& ds, double eval_fraction, std::uint64_t seed) {
  if (!(eval_fraction > 0.0 && eval_fraction < 1.0)) throw ValueError("split_dataset: eval_fraction must lie in (0, 1)");
  // Stratified: the same fraction is held out from every class.
  std::vector<std::vector<std::size_t>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.images[i].label].push_back(i);
  Rng rng = make_rng(seed, streams::kSplit);
  std::vector<std::size_t> train, eval;
  for (auto& members : by_class) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto held = static_cast<std::size_t>(std::llround(eval_fraction * static_cast<double>(members.size())));
    for (std::size_t j = 0; j < members.size(); ++j) (j < held ? eval : train).push_back(members[j]);
  }
  std::sort(train.begin(), train.end());
  std::sort(eval.begin(), eval.end());
  return {ds.subset(train), ds.subset(eval)};
}

}  // namespace dcr

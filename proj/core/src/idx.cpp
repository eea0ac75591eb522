#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "dcr/datasets.hpp"

namespace dcr {

std::uint8_t quantize_pixel(double v) {
  const double b = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
  return static_cast<std::uint8_t>(b);
}

double dequantize_pixel(std::uint8_t b) { return static_cast<double>(b) / 127.5 - 1.0; }

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("idx: cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& buf, std::size_t offset, const std::filesystem::path& path) {
  if (offset + 4 > buf.size()) throw Error("idx: truncated header in " + path.string());
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

void put_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("idx: cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("idx: write failed for " + path.string());
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);

  const std::uint32_t img_magic = read_be32(img, 0, images_path);
  if (img_magic != kIdxImageMagic && img_magic != kIdxImageMagicRgb) {
    throw Error("idx: bad image magic in " + images_path.string() + ": expected " + std::to_string(kIdxImageMagic) +
                ", got " + std::to_string(img_magic));
  }
  const std::uint32_t lab_magic = read_be32(lab, 0, labels_path);
  if (lab_magic != kIdxLabelMagic) {
    throw Error("idx: bad label magic in " + labels_path.string() + ": expected " + std::to_string(kIdxLabelMagic) +
                ", got " + std::to_string(lab_magic));
  }

  const std::size_t n = read_be32(img, 4, images_path);
  const std::size_t h = read_be32(img, 8, images_path);
  const std::size_t w = read_be32(img, 12, images_path);
  std::size_t c = 1;
  std::size_t header = 16;
  if (img_magic == kIdxImageMagicRgb) {
    c = read_be32(img, 16, images_path);
    header = 20;
  }
  const std::size_t n_labels = read_be32(lab, 4, labels_path);
  if (n_labels != n) {
    throw Error("idx: image count " + std::to_string(n) + " does not match label count " + std::to_string(n_labels));
  }
  const std::size_t dim = h * w * c;
  if (img.size() < header + n * dim) {
    throw Error("idx: truncated image data in " + images_path.string() + ": expected " + std::to_string(header + n * dim) +
                " bytes, got " + std::to_string(img.size()));
  }
  if (lab.size() < 8 + n) {
    throw Error("idx: truncated label data in " + labels_path.string() + ": expected " + std::to_string(8 + n) +
                " bytes, got " + std::to_string(lab.size()));
  }

  Dataset ds{{}, 0, h, w, c};
  ds.images.reserve(n);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor px(Shape{h, w, c});
    for (std::size_t j = 0; j < dim; ++j) px[j] = dequantize_pixel(img[header + i * dim + j]);
    const std::size_t label = lab[8 + i];
    max_label = std::max(max_label, label);
    ds.images.push_back({std::move(px), label});
  }
  ds.num_classes = n == 0 ? 0 : max_label + 1;
  return ds;
}

void write_idx(const Dataset& ds, const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  ds.validate();
  if (ds.num_classes > 256) throw ValueError("idx: labels must fit in one byte");
  std::vector<std::uint8_t> img;
  const bool rgb = ds.channels != 1;
  put_be32(img, rgb ? kIdxImageMagicRgb : kIdxImageMagic);
  put_be32(img, static_cast<std::uint32_t>(ds.size()));
  put_be32(img, static_cast<std::uint32_t>(ds.height));
  put_be32(img, static_cast<std::uint32_t>(ds.width));
  if (rgb) put_be32(img, static_cast<std::uint32_t>(ds.channels));
  img.reserve(img.size() + ds.size() * ds.image_dim());
  for (const auto& im : ds.images) {
    for (double v : im.pixels.data()) img.push_back(quantize_pixel(v));
  }

  std::vector<std::uint8_t> lab;
  put_be32(lab, kIdxLabelMagic);
  put_be32(lab, static_cast<std::uint32_t>(ds.size()));
  for (const auto& im : ds.images) lab.push_back(static_cast<std::uint8_t>(im.label));

  write_file(images_path, img);
  write_file(labels_path, lab);
}

}  // namespace dcr

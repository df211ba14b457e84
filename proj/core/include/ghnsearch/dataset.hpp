#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ghnsearch/rng.hpp"
#include "ghnsearch/tensor.hpp"

namespace ghn {

/// 8-bit image classification set. Images normalize to [-1, 1] on batch
/// extraction.
struct Dataset {
  int channels = 1;
  int height = 16;
  int width = 16;
  int classes = 10;
  std::vector<uint8_t> pixels;  // count * channels * height * width
  std::vector<uint8_t> labels;  // count

  int64_t count() const { return static_cast<int64_t>(labels.size()); }
  Tensor images_at(std::span<const int> indices) const;  // [B,C,H,W]
  std::vector<int> labels_at(std::span<const int> indices) const;
};

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

/// Oriented-grating textures: each class is a sinusoidal grating direction,
/// with per-sample random phase, amplitude jitter and pixel noise. Classes are
/// exactly balanced (up to rounding) and shuffled. Deterministic in the seed.
Dataset make_texture_dataset(int count, int classes, int height, int width, uint64_t seed);

Batch sample_batch(const Dataset& data, int batch_size, Rng& rng);
Batch take_batch(const Dataset& data, int64_t start, int64_t len);

/// Flat binary file: magic "GHNDSET1", five u32 little-endian fields (count,
/// channels, height, width, classes), pixel bytes, label bytes.
void save_dataset(const std::string& path, const Dataset& data);
Dataset load_dataset(const std::string& path);

}  // namespace ghn

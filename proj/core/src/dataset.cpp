#include "ghnsearch/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "ghnsearch/errors.hpp"

namespace ghn {

Tensor Dataset::images_at(std::span<const int> indices) const {
  const int64_t plane = static_cast<int64_t>(channels) * height * width;
  Tensor out(Shape{static_cast<int64_t>(indices.size()), channels, height, width});
  double* dst = out.data();
  for (size_t b = 0; b < indices.size(); ++b) {
    const uint8_t* src = pixels.data() + static_cast<int64_t>(indices[b]) * plane;
    for (int64_t i = 0; i < plane; ++i) {
      dst[static_cast<int64_t>(b) * plane + i] = static_cast<double>(src[i]) / 127.5 - 1.0;
    }
  }
  return out;
}

std::vector<int> Dataset::labels_at(std::span<const int> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (int i : indices) out.push_back(labels[static_cast<size_t>(i)]);
  return out;
}

Dataset make_texture_dataset(int count, int classes, int height, int width, uint64_t seed) {
  if (count < 1 || classes < 2) throw InputError("make_texture_dataset: bad count/classes");
  Dataset d;
  d.channels = 1;
  d.height = height;
  d.width = width;
  d.classes = classes;
  d.pixels.resize(static_cast<size_t>(count) * height * width);
  d.labels.resize(static_cast<size_t>(count));

  // Balanced label sequence, then shuffled.
  std::vector<uint8_t> seq(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) seq[static_cast<size_t>(i)] = static_cast<uint8_t>(i % classes);
  Rng shuffle_rng = Rng::derive(seed, 0x5f1e);
  const std::vector<int> order = shuffle_rng.permutation(count);
  for (int i = 0; i < count; ++i) d.labels[static_cast<size_t>(i)] = seq[static_cast<size_t>(order[i])];

  const double pi = 3.14159265358979323846;
  for (int i = 0; i < count; ++i) {
    Rng rng = Rng::derive(seed, 0x71e2, static_cast<uint64_t>(i));
    const int label = d.labels[static_cast<size_t>(i)];
    const double theta = pi * static_cast<double>(label) / static_cast<double>(classes);
    const double freq = 2.5 + 0.3 * rng.next_double();  // cycles across the image
    const double phase = 2.0 * pi * rng.next_double();
    const double amplitude = 0.35 + 0.1 * rng.next_double();
    const double cx = std::cos(theta), sx = std::sin(theta);
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) {
        const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(width);
        const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(height);
        const double wave = std::sin(2.0 * pi * freq * (u * cx + v * sx) + phase);
        double value = 0.5 + amplitude * wave + 0.18 * rng.next_normal();
        value = std::clamp(value, 0.0, 1.0);
        d.pixels[(static_cast<size_t>(i) * height + static_cast<size_t>(y)) * width +
                 static_cast<size_t>(x)] = static_cast<uint8_t>(std::lround(value * 255.0));
      }
    }
  }
  return d;
}

Batch sample_batch(const Dataset& data, int batch_size, Rng& rng) {
  if (batch_size < 1) throw InputError("sample_batch: batch_size must be >= 1");
  std::vector<int> idx(static_cast<size_t>(batch_size));
  for (int i = 0; i < batch_size; ++i) {
    idx[static_cast<size_t>(i)] = static_cast<int>(rng.next_below(static_cast<uint64_t>(data.count())));
  }
  return Batch{data.images_at(idx), data.labels_at(idx)};
}

Batch take_batch(const Dataset& data, int64_t start, int64_t len) {
  if (start < 0 || len < 1 || start + len > data.count()) {
    throw InputError("take_batch: range out of bounds");
  }
  std::vector<int> idx(static_cast<size_t>(len));
  for (int64_t i = 0; i < len; ++i) idx[static_cast<size_t>(i)] = static_cast<int>(start + i);
  return Batch{data.images_at(idx), data.labels_at(idx)};
}

namespace {
constexpr char kMagic[8] = {'G', 'H', 'N', 'D', 'S', 'E', 'T', '1'};

void put_u32(std::ofstream& os, uint32_t v) {
  char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                   static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  os.write(bytes, 4);
}

uint32_t get_u32(std::ifstream& is) {
  unsigned char bytes[4];
  is.read(reinterpret_cast<char*>(bytes), 4);
  return static_cast<uint32_t>(bytes[0]) | (static_cast<uint32_t>(bytes[1]) << 8) |
         (static_cast<uint32_t>(bytes[2]) << 16) | (static_cast<uint32_t>(bytes[3]) << 24);
}
}  // namespace

void save_dataset(const std::string& path, const Dataset& data) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write(kMagic, 8);
  put_u32(os, static_cast<uint32_t>(data.count()));
  put_u32(os, static_cast<uint32_t>(data.channels));
  put_u32(os, static_cast<uint32_t>(data.height));
  put_u32(os, static_cast<uint32_t>(data.width));
  put_u32(os, static_cast<uint32_t>(data.classes));
  os.write(reinterpret_cast<const char*>(data.pixels.data()),
           static_cast<std::streamsize>(data.pixels.size()));
  os.write(reinterpret_cast<const char*>(data.labels.data()),
           static_cast<std::streamsize>(data.labels.size()));
  if (!os) throw IoError("failed writing " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) {
    throw ParseError("bad dataset magic in " + path);
  }
  Dataset d;
  const uint32_t count = get_u32(is);
  d.channels = static_cast<int>(get_u32(is));
  d.height = static_cast<int>(get_u32(is));
  d.width = static_cast<int>(get_u32(is));
  d.classes = static_cast<int>(get_u32(is));
  const size_t pixel_bytes =
      static_cast<size_t>(count) * d.channels * d.height * d.width;
  d.pixels.resize(pixel_bytes);
  d.labels.resize(count);
  is.read(reinterpret_cast<char*>(d.pixels.data()), static_cast<std::streamsize>(pixel_bytes));
  is.read(reinterpret_cast<char*>(d.labels.data()), static_cast<std::streamsize>(count));
  if (!is) throw ParseError("truncated dataset file " + path);
  return d;
}

}  // namespace ghn

#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "semcom/models.hpp"
#include "semcom/rng.hpp"

namespace semcom {

struct ImageBatchSet {
  std::vector<float> images;  // [N, 32, 32, 3] in [0, 1]
  std::vector<int> labels;    // [N] in [0, 10)

  int count() const { return static_cast<int>(labels.size()); }

  void append(const ImageBatchSet& other) {
    images.insert(images.end(), other.images.begin(), other.images.end());
    labels.insert(labels.end(), other.labels.begin(), other.labels.end());
  }

  ImageBatchSet slice(int start, int n) const {
    ImageBatchSet out;
    const std::size_t px = static_cast<std::size_t>(kImageSize) * kImageSize * kImageChannels;
    out.images.assign(images.begin() + static_cast<std::ptrdiff_t>(start * px),
                      images.begin() + static_cast<std::ptrdiff_t>((start + n) * px));
    out.labels.assign(labels.begin() + start, labels.begin() + start + n);
    return out;
  }
};

inline constexpr int kCifarRecordBytes = 3073;  // 1 label byte + 3 * 1024 pixels
inline constexpr int kCifarRecordsPerFile = 10000;

// One file in the standard binary layout: each record is a label byte
// followed by 1024 red, 1024 green, 1024 blue bytes in row-major order.
// `expect_records` > 0 enforces the standard per-file count.
inline ImageBatchSet load_cifar10_file(const std::string& path, int expect_records = -1) {
  std::ifstream is(path, std::ios::binary | std::ios::ate);
  if (!is) throw std::runtime_error("cifar: cannot open " + path);
  const std::streamoff size = is.tellg();
  if (size % kCifarRecordBytes != 0)
    throw std::runtime_error("cifar: " + path + " has " + std::to_string(size) +
                             " bytes, not a multiple of the " +
                             std::to_string(kCifarRecordBytes) + "-byte record (" +
                             std::to_string(size % kCifarRecordBytes) +
                             " trailing bytes at offset " +
                             std::to_string(size - size % kCifarRecordBytes) + ")");
  const int records = static_cast<int>(size / kCifarRecordBytes);
  if (expect_records > 0 && records != expect_records)
    throw std::runtime_error("cifar: " + path + " holds " + std::to_string(records) +
                             " records (" + std::to_string(size) + " bytes), expected " +
                             std::to_string(expect_records) + " (" +
                             std::to_string(static_cast<long long>(expect_records) *
                                            kCifarRecordBytes) +
                             " bytes)");
  is.seekg(0);
  ImageBatchSet out;
  out.images.resize(static_cast<std::size_t>(records) * kImageSize * kImageSize * kImageChannels);
  out.labels.resize(static_cast<std::size_t>(records));
  std::vector<std::uint8_t> rec(kCifarRecordBytes);
  for (int r = 0; r < records; ++r) {
    is.read(reinterpret_cast<char*>(rec.data()), kCifarRecordBytes);
    if (!is) throw std::runtime_error("cifar: short read in " + path);
    if (rec[0] > 9)
      throw std::runtime_error("cifar: label byte " + std::to_string(rec[0]) +
                               " out of range in record " + std::to_string(r));
    out.labels[static_cast<std::size_t>(r)] = rec[0];
    // channel-planar source -> interleaved HWC float
    for (int y = 0; y < kImageSize; ++y)
      for (int x = 0; x < kImageSize; ++x)
        for (int c = 0; c < kImageChannels; ++c)
          out.images[((static_cast<std::size_t>(r) * kImageSize + y) * kImageSize + x) *
                         kImageChannels +
                     static_cast<std::size_t>(c)] =
              static_cast<float>(rec[1 + static_cast<std::size_t>(c) * 1024 +
                                     static_cast<std::size_t>(y) * kImageSize +
                                     static_cast<std::size_t>(x)]) /
              255.0f;
  }
  return out;
}

inline ImageBatchSet load_cifar10_train(const std::string& dir) {
  ImageBatchSet all;
  for (int i = 1; i <= 5; ++i)
    all.append(load_cifar10_file(dir + "/data_batch_" + std::to_string(i) + ".bin",
                                 kCifarRecordsPerFile));
  return all;
}

inline ImageBatchSet load_cifar10_test(const std::string& dir) {
  return load_cifar10_file(dir + "/test_batch.bin", kCifarRecordsPerFile);
}

inline bool cifar10_present(const std::string& dir) {
  std::ifstream is(dir + "/data_batch_1.bin", std::ios::binary);
  return static_cast<bool>(is);
}

// ---------------------------------------------------------------------------
// Deterministic synthetic stand-in: 10 visual classes over gradients,
// checkerboards, stripes and Gaussian blobs, with per-image jitter.
// ---------------------------------------------------------------------------

namespace synth {

inline void render_class(int cls, Rng& rng, float* px) {
  const float hue[3] = {static_cast<float>(rng.uniform(0.3, 1.0)),
                        static_cast<float>(rng.uniform(0.3, 1.0)),
                        static_cast<float>(rng.uniform(0.3, 1.0))};
  const float phase = static_cast<float>(rng.uniform(0.0, 1.0));
  const float cx = static_cast<float>(rng.uniform(8.0, 24.0));
  const float cy = static_cast<float>(rng.uniform(8.0, 24.0));
  const float sigma = static_cast<float>(rng.uniform(3.0, 7.0));
  auto at = [&](int y, int x) -> float {
    const float fx = static_cast<float>(x) / 31.0f;
    const float fy = static_cast<float>(y) / 31.0f;
    switch (cls) {
      case 0: return fx;                                     // horizontal ramp
      case 1: return fy;                                     // vertical ramp
      case 2: return 0.5f * (fx + fy);                       // diagonal ramp
      case 3: return static_cast<float>(((x / 4) + (y / 4)) % 2);   // fine checker
      case 4: return static_cast<float>(((x / 8) + (y / 8)) % 2);   // coarse checker
      case 5: {                                              // single blob
        const float d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        return std::exp(-d2 / (2.0f * sigma * sigma));
      }
      case 6: {                                              // two blobs
        const float d1 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        const float d2 = (x - (31 - cx)) * (x - (31 - cx)) + (y - (31 - cy)) * (y - (31 - cy));
        return std::exp(-d1 / (2.0f * sigma * sigma)) + std::exp(-d2 / (2.0f * sigma * sigma));
      }
      case 7: return 0.5f + 0.5f * std::sin((fy * 6.0f + phase) * 2.0f * static_cast<float>(M_PI));  // h stripes
      case 8: return 0.5f + 0.5f * std::sin((fx * 6.0f + phase) * 2.0f * static_cast<float>(M_PI));  // v stripes
      default: {                                             // radial vignette
        const float dx = fx - 0.5f, dy = fy - 0.5f;
        return 1.0f - std::sqrt(dx * dx + dy * dy) * 1.4f;
      }
    }
  };
  for (int y = 0; y < kImageSize; ++y)
    for (int x = 0; x < kImageSize; ++x) {
      const float v = at(y, x);
      for (int c = 0; c < kImageChannels; ++c) {
        float out = v * hue[static_cast<std::size_t>(c)] +
                    0.02f * static_cast<float>(rng.uniform(-1.0, 1.0));
        px[(static_cast<std::size_t>(y) * kImageSize + x) * kImageChannels +
           static_cast<std::size_t>(c)] = std::min(1.0f, std::max(0.0f, out));
      }
    }
}

}  // namespace synth

inline ImageBatchSet synth_dataset(std::uint64_t seed, int n) {
  if (n < 1) throw std::invalid_argument("synth_dataset: n must be >= 1");
  ImageBatchSet out;
  out.images.resize(static_cast<std::size_t>(n) * kImageSize * kImageSize * kImageChannels);
  out.labels.resize(static_cast<std::size_t>(n));
  Rng order_rng(Rng::split_mix(seed ^ 0x73796e74ULL));
  // balanced labels, deterministically shuffled
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = i % kNumClasses;
  for (int i = n - 1; i > 0; --i)
    std::swap(labels[static_cast<std::size_t>(i)],
              labels[static_cast<std::size_t>(order_rng.below(static_cast<std::uint64_t>(i + 1)))]);
  for (int i = 0; i < n; ++i) {
    Rng img_rng(Rng::split_mix(seed * 1000003ULL + static_cast<std::uint64_t>(i)));
    out.labels[static_cast<std::size_t>(i)] = labels[static_cast<std::size_t>(i)];
    synth::render_class(labels[static_cast<std::size_t>(i)], img_rng,
                        out.images.data() +
                            static_cast<std::size_t>(i) * kImageSize * kImageSize * kImageChannels);
  }
  return out;
}

}  // namespace semcom

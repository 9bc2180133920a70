#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace semcom {

inline constexpr float kPsnrCapDb = 100.0f;  // reported for an exact match

// Peak signal-to-noise ratio for [0,1] images: 10*log10(1/MSE).
inline float psnr_db(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size() || a.empty())
    throw std::invalid_argument("psnr: shape mismatch or empty");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - b[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.size());
  if (mse <= 0.0) return kPsnrCapDb;
  return std::min(kPsnrCapDb, static_cast<float>(10.0 * std::log10(1.0 / mse)));
}

// Argmax-match fraction, first index winning ties.
inline float accuracy(const std::vector<float>& logits, const std::vector<int>& labels,
                      int classes) {
  if (labels.empty() || logits.size() != labels.size() * static_cast<std::size_t>(classes))
    throw std::invalid_argument("accuracy: shape mismatch");
  int hits = 0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const float* row = logits.data() + b * static_cast<std::size_t>(classes);
    int best = 0;
    for (int c = 1; c < classes; ++c)
      if (row[c] > row[best]) best = c;
    if (best == labels[b]) ++hits;
  }
  return static_cast<float>(hits) / static_cast<float>(labels.size());
}

inline float bler(const std::vector<bool>& block_ok) {
  if (block_ok.empty()) throw std::invalid_argument("bler: empty");
  int bad = 0;
  for (bool ok : block_ok)
    if (!ok) ++bad;
  return static_cast<float>(bad) / static_cast<float>(block_ok.size());
}

}  // namespace semcom

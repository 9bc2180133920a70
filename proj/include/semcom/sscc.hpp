#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <optional>
#include <vector>

#include "semcom/channel.hpp"
#include "semcom/config.hpp"
#include "semcom/grid.hpp"
#include "semcom/metrics.hpp"
#include "semcom/precoder.hpp"

namespace semcom {

// ---------------------------------------------------------------------------
// Bit plumbing
// ---------------------------------------------------------------------------

struct Bitstream {
  std::vector<std::uint8_t> bytes;
  int length = 0;  // in bits

  void push(bool bit) {
    const int byte = length / 8;
    if (byte >= static_cast<int>(bytes.size())) bytes.push_back(0);
    if (bit) bytes[static_cast<std::size_t>(byte)] |= static_cast<std::uint8_t>(1u << (length % 8));
    ++length;
  }
  bool get(int i) const {
    return (bytes[static_cast<std::size_t>(i / 8)] >> (i % 8)) & 1u;
  }
  std::vector<std::uint8_t> unpacked() const {
    std::vector<std::uint8_t> out(static_cast<std::size_t>(length));
    for (int i = 0; i < length; ++i) out[static_cast<std::size_t>(i)] = get(i) ? 1 : 0;
    return out;
  }
};

class BitReader {
 public:
  explicit BitReader(const Bitstream& bs) : bs_(bs) {}
  // Overrun reads signal failure instead of throwing: a truncated stream is
  // an expected decode outcome, not a programming error.
  std::optional<bool> next() {
    if (pos_ >= bs_.length) return std::nullopt;
    return bs_.get(pos_++);
  }
  int position() const { return pos_; }

 private:
  const Bitstream& bs_;
  int pos_ = 0;
};

// CRC-16-CCITT (poly 0x1021, init 0xFFFF) over an unpacked bit vector.
inline std::uint16_t crc16_ccitt(const std::uint8_t* bits, std::size_t n) {
  std::uint16_t crc = 0xFFFF;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint16_t in = bits[i] ? 1 : 0;
    const std::uint16_t top = (crc >> 15) & 1u;
    crc = static_cast<std::uint16_t>(crc << 1);
    if (top ^ in) crc ^= 0x1021;
  }
  return crc;
}

// ---------------------------------------------------------------------------
// Block-DCT image codec (in-repo stand-in for an external still-image codec)
// ---------------------------------------------------------------------------

inline constexpr int kDctBlock = 8;
inline constexpr int kCodecQualityLevels = 8;
inline constexpr float kCodecBaseStep = 1.0f / 64.0f;  // doubles per level

namespace dct {

inline const std::array<std::array<float, 8>, 8>& basis() {
  static const auto b = [] {
    std::array<std::array<float, 8>, 8> m{};
    for (int k = 0; k < 8; ++k)
      for (int n = 0; n < 8; ++n) {
        const double c = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
        m[static_cast<std::size_t>(k)][static_cast<std::size_t>(n)] =
            static_cast<float>(c * std::cos((2.0 * n + 1.0) * k * M_PI / 16.0));
      }
    return m;
  }();
  return b;
}

// 2-D orthonormal DCT-II of an 8x8 tile, rows then columns.
inline void forward8x8(const float* in, float* out) {
  const auto& b = basis();
  float tmp[64];
  for (int r = 0; r < 8; ++r)
    for (int k = 0; k < 8; ++k) {
      float acc = 0.0f;
      for (int n = 0; n < 8; ++n) acc += in[r * 8 + n] * b[static_cast<std::size_t>(k)][static_cast<std::size_t>(n)];
      tmp[r * 8 + k] = acc;
    }
  for (int c = 0; c < 8; ++c)
    for (int k = 0; k < 8; ++k) {
      float acc = 0.0f;
      for (int n = 0; n < 8; ++n) acc += tmp[n * 8 + c] * b[static_cast<std::size_t>(k)][static_cast<std::size_t>(n)];
      out[k * 8 + c] = acc;
    }
}

inline void inverse8x8(const float* in, float* out) {
  const auto& b = basis();
  float tmp[64];
  for (int c = 0; c < 8; ++c)
    for (int n = 0; n < 8; ++n) {
      float acc = 0.0f;
      for (int k = 0; k < 8; ++k) acc += in[k * 8 + c] * b[static_cast<std::size_t>(k)][static_cast<std::size_t>(n)];
      tmp[n * 8 + c] = acc;
    }
  for (int r = 0; r < 8; ++r)
    for (int n = 0; n < 8; ++n) {
      float acc = 0.0f;
      for (int k = 0; k < 8; ++k) acc += tmp[r * 8 + k] * b[static_cast<std::size_t>(k)][static_cast<std::size_t>(n)];
      out[r * 8 + n] = acc;
    }
}

inline const std::array<int, 64>& zigzag() {
  static const auto z = [] {
    std::array<int, 64> out{};
    int idx = 0;
    for (int s = 0; s < 15; ++s)
      for (int i = 0; i <= s; ++i) {
        const int r = (s % 2 == 0) ? s - i : i;
        const int c = s - r;
        if (r < 8 && c < 8) out[static_cast<std::size_t>(idx++)] = r * 8 + c;
      }
    return out;
  }();
  return z;
}

// Exp-Golomb order 0: value v >= 0 as (leading zeros)(1)(offset bits).
inline void put_eg(Bitstream& bs, std::uint32_t v) {
  const std::uint32_t x = v + 1;
  int nbits = 0;
  while ((x >> (nbits + 1)) != 0) ++nbits;
  for (int i = 0; i < nbits; ++i) bs.push(false);
  for (int i = nbits; i >= 0; --i) bs.push((x >> i) & 1u);
}

inline std::optional<std::uint32_t> get_eg(BitReader& br) {
  int zeros = 0;
  while (true) {
    const auto b = br.next();
    if (!b) return std::nullopt;
    if (*b) break;
    if (++zeros > 31) return std::nullopt;  // corrupt prefix
  }
  std::uint32_t x = 1;
  for (int i = 0; i < zeros; ++i) {
    const auto b = br.next();
    if (!b) return std::nullopt;
    x = (x << 1) | (*b ? 1u : 0u);
  }
  return x - 1;
}

inline void put_eg_signed(Bitstream& bs, int v) {
  put_eg(bs, v <= 0 ? static_cast<std::uint32_t>(-2 * v) : static_cast<std::uint32_t>(2 * v - 1));
}

inline std::optional<int> get_eg_signed(BitReader& br) {
  const auto u = get_eg(br);
  if (!u) return std::nullopt;
  const std::uint32_t x = *u;
  return (x & 1u) ? static_cast<int>((x + 1) / 2) : -static_cast<int>(x / 2);
}

}  // namespace dct

inline constexpr int kCodecMagic = 0xA;  // 4-bit header tag

// image: [32, 32, 3] floats in [0,1]. Per channel: 8x8 block DCT, uniform
// quantization with a per-quality step, zigzag, zero-run coding with
// Exp-Golomb codewords. Run code 0 is end-of-block; run r > 0 means r-1
// zeros before the next nonzero level.
inline Bitstream dct_codec_encode(const std::vector<float>& image, int quality) {
  if (image.size() != 32 * 32 * 3) throw std::invalid_argument("codec: want a 32x32x3 image");
  if (quality < 0 || quality >= kCodecQualityLevels)
    throw std::invalid_argument("codec: quality out of range");
  const float step = kCodecBaseStep * static_cast<float>(1 << quality);
  Bitstream bs;
  for (int i = 3; i >= 0; --i) bs.push((kCodecMagic >> i) & 1);
  for (int i = 2; i >= 0; --i) bs.push((quality >> i) & 1);

  float tile[64], coef[64];
  for (int ch = 0; ch < 3; ++ch) {
    int prev_dc = 0;
    for (int by = 0; by < 4; ++by)
      for (int bx = 0; bx < 4; ++bx) {
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x)
            tile[y * 8 + x] =
                image[(((by * 8 + y) * 32) + bx * 8 + x) * 3 + static_cast<std::size_t>(ch)] -
                0.5f;
        dct::forward8x8(tile, coef);
        int q[64];
        for (int i = 0; i < 64; ++i)
          q[i] = static_cast<int>(std::lround(coef[dct::zigzag()[static_cast<std::size_t>(i)]] / step));
        dct::put_eg_signed(bs, q[0] - prev_dc);
        prev_dc = q[0];
        int run = 0;
        for (int i = 1; i < 64; ++i) {
          if (q[i] == 0) {
            ++run;
            continue;
          }
          dct::put_eg(bs, static_cast<std::uint32_t>(run + 1));
          dct::put_eg_signed(bs, q[i]);
          run = 0;
        }
        dct::put_eg(bs, 0);  // end of block
      }
  }
  return bs;
}

inline std::optional<std::vector<float>> dct_codec_decode(const Bitstream& bs) {
  BitReader br(bs);
  int magic = 0, quality = 0;
  for (int i = 0; i < 4; ++i) {
    const auto b = br.next();
    if (!b) return std::nullopt;
    magic = (magic << 1) | (*b ? 1 : 0);
  }
  if (magic != kCodecMagic) return std::nullopt;
  for (int i = 0; i < 3; ++i) {
    const auto b = br.next();
    if (!b) return std::nullopt;
    quality = (quality << 1) | (*b ? 1 : 0);
  }
  const float step = kCodecBaseStep * static_cast<float>(1 << quality);

  std::vector<float> image(32 * 32 * 3, 0.0f);
  float coef[64], tile[64];
  for (int ch = 0; ch < 3; ++ch) {
    int prev_dc = 0;
    for (int by = 0; by < 4; ++by)
      for (int bx = 0; bx < 4; ++bx) {
        int q[64] = {0};
        const auto dc = dct::get_eg_signed(br);
        if (!dc) return std::nullopt;
        q[0] = prev_dc + *dc;
        prev_dc = q[0];
        int idx = 1;
        while (true) {
          const auto run_code = dct::get_eg(br);
          if (!run_code) return std::nullopt;
          if (*run_code == 0) break;  // end of block
          idx += static_cast<int>(*run_code) - 1;
          if (idx > 63) return std::nullopt;  // corrupt run
          const auto level = dct::get_eg_signed(br);
          if (!level || *level == 0) return std::nullopt;
          q[idx++] = *level;
          if (idx > 64) return std::nullopt;
        }
        for (int i = 0; i < 64; ++i) coef[dct::zigzag()[static_cast<std::size_t>(i)]] = static_cast<float>(q[i]) * step;
        dct::inverse8x8(coef, tile);
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x)
            image[(((by * 8 + y) * 32) + bx * 8 + x) * 3 + static_cast<std::size_t>(ch)] =
                std::clamp(tile[y * 8 + x] + 0.5f, 0.0f, 1.0f);
      }
  }
  return image;
}

// ---------------------------------------------------------------------------
// Rate control
// ---------------------------------------------------------------------------

// Eq.-style nominal capacity: floor(N_st * N_sf * m * r) information bits per
// user stream.
inline int b_max(const LinkConfig& cfg, int mod_order_bits, CodeRate r) {
  return cfg.n_st() * cfg.n_sf() * mod_order_bits * r.num / r.den;
}

// CRC-16 plus the 6-bit code tail live inside the nominal budget.
inline constexpr int kBlockOverheadBits = 16 + 6;

struct RateControlResult {
  bool ok = false;
  int quality = -1;
  Bitstream bits;
};

// Highest quality whose bitstream fits the budget; Failure (ok = false) when
// even the coarsest level overflows.
inline RateControlResult rate_control(const std::vector<float>& image, int b_max_bits,
                                      const SsccConfig& cfg) {
  if (b_max_bits <= 0) throw std::invalid_argument("rate_control: budget must be positive");
  RateControlResult res;
  const int budget = b_max_bits - kBlockOverheadBits;
  for (int q = 0; q < cfg.quality_levels; ++q) {
    Bitstream bs = dct_codec_encode(image, q);
    if (bs.length <= budget) {
      res.ok = true;
      res.quality = q;
      res.bits = std::move(bs);
      return res;
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Convolutional code, K = 7, polynomials (171, 133) octal, tail-terminated;
// rate 2/3 via the [1 1; 1 0] puncturing pattern.
// ---------------------------------------------------------------------------

inline constexpr int kConvConstraint = 7;

namespace conv {

// Generator taps for (171, 133) octal with the newest bit in the LSB:
// 0o171 = 1111001b, 0o133 = 1011011b over [b_t, b_{t-1}, ..., b_{t-6}].
inline constexpr std::uint32_t kG1 = 0171;
inline constexpr std::uint32_t kG2 = 0133;

inline int parity(std::uint32_t x) { return __builtin_popcount(x) & 1; }

// Punctured positions repeat with period 2 info bits: emit (c1, c2) for even
// steps, (c1) for odd steps at rate 2/3.
inline bool keep_bit(int info_idx, int which, CodeRate r) {
  if (r.num == 1 && r.den == 2) return true;
  return which == 0 || info_idx % 2 == 0;
}

}  // namespace conv

inline std::vector<std::uint8_t> conv_encode(const std::vector<std::uint8_t>& bits, CodeRate r) {
  if (bits.empty()) throw std::invalid_argument("conv_encode: empty input");
  std::vector<std::uint8_t> out;
  out.reserve(2 * (bits.size() + 6));
  std::uint32_t reg = 0;  // holds the last K-1 = 6 bits
  const int total = static_cast<int>(bits.size()) + 6;
  for (int i = 0; i < total; ++i) {
    const std::uint32_t in = i < static_cast<int>(bits.size()) ? (bits[static_cast<std::size_t>(i)] & 1u) : 0u;
    const std::uint32_t window = (in << 6) | reg;
    const std::uint8_t c1 = static_cast<std::uint8_t>(conv::parity(window & conv::kG1));
    const std::uint8_t c2 = static_cast<std::uint8_t>(conv::parity(window & conv::kG2));
    if (conv::keep_bit(i, 0, r)) out.push_back(c1);
    if (conv::keep_bit(i, 1, r)) out.push_back(c2);
    reg = window >> 1;
  }
  return out;
}

inline std::size_t coded_length(std::size_t info_bits, CodeRate r) {
  const std::size_t total = info_bits + 6;
  if (r.num == 1 && r.den == 2) return 2 * total;
  return 2 * total - total / 2;  // drop c2 on odd steps
}

// Soft maximum-likelihood decode over the 64-state trellis. llrs[i] is the
// log-likelihood ratio of coded bit i being 0; punctured positions are
// reinserted as zeros. Tail termination pins both endpoints to state 0.
inline std::vector<std::uint8_t> viterbi_decode(const std::vector<float>& llrs,
                                                std::size_t info_bits, CodeRate r) {
  if (llrs.size() != coded_length(info_bits, r))
    throw std::invalid_argument("viterbi_decode: llr count " + std::to_string(llrs.size()) +
                                " does not match coded length " +
                                std::to_string(coded_length(info_bits, r)));
  const int total = static_cast<int>(info_bits) + 6;
  constexpr int kStates = 64;
  constexpr float kNegInf = -1e30f;

  // depuncture
  std::vector<std::array<float, 2>> step_llr(static_cast<std::size_t>(total));
  std::size_t pos = 0;
  for (int i = 0; i < total; ++i) {
    step_llr[static_cast<std::size_t>(i)][0] =
        conv::keep_bit(i, 0, r) ? llrs[pos++] : 0.0f;
    step_llr[static_cast<std::size_t>(i)][1] =
        conv::keep_bit(i, 1, r) ? llrs[pos++] : 0.0f;
  }

  std::vector<float> metric(kStates, kNegInf), next(kStates);
  metric[0] = 0.0f;
  std::vector<std::uint8_t> decision(static_cast<std::size_t>(total) * kStates);

  for (int i = 0; i < total; ++i) {
    std::fill(next.begin(), next.end(), kNegInf);
    std::uint8_t* dec = decision.data() + static_cast<std::size_t>(i) * kStates;
    for (int s = 0; s < kStates; ++s) {
      if (metric[static_cast<std::size_t>(s)] <= kNegInf) continue;
      const int in_max = i < static_cast<int>(info_bits) ? 1 : 0;  // tail forces zeros
      for (int in = 0; in <= in_max; ++in) {
        const std::uint32_t window = (static_cast<std::uint32_t>(in) << 6) |
                                     static_cast<std::uint32_t>(s);
        const int c1 = conv::parity(window & conv::kG1);
        const int c2 = conv::parity(window & conv::kG2);
        // llr > 0 favors bit 0
        const float bm = (c1 ? -0.5f : 0.5f) * step_llr[static_cast<std::size_t>(i)][0] +
                         (c2 ? -0.5f : 0.5f) * step_llr[static_cast<std::size_t>(i)][1];
        const int ns = static_cast<int>(window >> 1);
        const float cand = metric[static_cast<std::size_t>(s)] + bm;
        if (cand > next[static_cast<std::size_t>(ns)]) {
          next[static_cast<std::size_t>(ns)] = cand;
          dec[ns] = static_cast<std::uint8_t>((s & 1) | (in << 1));
        }
      }
    }
    metric.swap(next);
  }

  // traceback from the all-zero tail state
  std::vector<std::uint8_t> bits(info_bits);
  int state = 0;
  for (int i = total - 1; i >= 0; --i) {
    const std::uint8_t d = decision[static_cast<std::size_t>(i) * kStates + state];
    const int in = (d >> 1) & 1;
    const int oldest = d & 1;
    if (i < static_cast<int>(info_bits)) bits[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(in);
    state = ((state << 1) | oldest) & (kStates - 1);
  }
  return bits;
}

// ---------------------------------------------------------------------------
// Gray-mapped QAM with unit average energy and exact max-log LLRs
// ---------------------------------------------------------------------------

namespace qam {

// 4QAM: bits (b0, b1) -> ((1-2 b0) + j (1-2 b1)) / sqrt(2); 00 -> (+1+j)/sqrt2.
// 16QAM: per-axis Gray PAM4 over (b0,b1) for I and (b2,b3) for Q,
// 00 -> +3, 01 -> +1, 11 -> -1, 10 -> -3, scaled by 1/sqrt(10).
inline float pam4_level(int b_hi, int b_lo) {
  if (b_hi == 0 && b_lo == 0) return 3.0f;
  if (b_hi == 0 && b_lo == 1) return 1.0f;
  if (b_hi == 1 && b_lo == 1) return -1.0f;
  return -3.0f;
}

inline const std::array<float, 4>& pam4_levels() {
  static const std::array<float, 4> l{3.0f, 1.0f, -1.0f, -3.0f};
  return l;
}

inline int pam4_bits(int level_idx, int which) {
  // indexes into pam4_levels(): bits (b_hi, b_lo) per the Gray table above
  static const int hi[4] = {0, 0, 1, 1};
  static const int lo[4] = {0, 1, 1, 0};
  return which == 0 ? hi[level_idx] : lo[level_idx];
}

}  // namespace qam

inline std::vector<cfloat> qam_map(const std::vector<std::uint8_t>& bits, int m) {
  if (m != 2 && m != 4) throw std::invalid_argument("qam_map: m must be 2 or 4");
  if (bits.size() % static_cast<std::size_t>(m) != 0)
    throw std::invalid_argument("qam_map: bit count not divisible by m");
  std::vector<cfloat> out(bits.size() / static_cast<std::size_t>(m));
  if (m == 2) {
    const float s = 1.0f / std::sqrt(2.0f);
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = cfloat((1 - 2 * bits[2 * i]) * s, (1 - 2 * bits[2 * i + 1]) * s);
  } else {
    const float s = 1.0f / std::sqrt(10.0f);
    for (std::size_t i = 0; i < out.size(); ++i)
      out[i] = cfloat(qam::pam4_level(bits[4 * i], bits[4 * i + 1]) * s,
                      qam::pam4_level(bits[4 * i + 2], bits[4 * i + 3]) * s);
  }
  return out;
}

// Exact max-log LLRs for an equalized observation y ~ gain * s + n with
// Var(n) = noise_var, decomposed per axis (valid for Gray square QAM).
// LLR convention: positive favors bit 0. gain <= 0 yields erasures.
inline void qam_demap_llr(cfloat y, float gain, float noise_var, int m,
                          std::vector<float>& out) {
  if (m != 2 && m != 4) throw std::invalid_argument("qam_demap_llr: m must be 2 or 4");
  if (!(gain > 0.0f) || !(noise_var > 0.0f) || !std::isfinite(gain) || !std::isfinite(noise_var)) {
    for (int i = 0; i < m; ++i) out.push_back(0.0f);
    return;
  }
  const float inv = 1.0f / noise_var;
  if (m == 2) {
    const float a = gain / std::sqrt(2.0f);
    // exact for antipodal per-axis points: (d1^2 - d0^2)/nv = 4 a v / nv
    out.push_back(4.0f * a * y.real() * inv);
    out.push_back(4.0f * a * y.imag() * inv);
    return;
  }
  const float s = gain / std::sqrt(10.0f);
  for (int axis = 0; axis < 2; ++axis) {
    const float v = axis == 0 ? y.real() : y.imag();
    for (int which = 0; which < 2; ++which) {
      float best0 = -1e30f, best1 = -1e30f;
      for (int li = 0; li < 4; ++li) {
        const float d = v - qam::pam4_levels()[static_cast<std::size_t>(li)] * s;
        const float metric = -d * d * inv;
        if (qam::pam4_bits(li, which) == 0)
          best0 = std::max(best0, metric);
        else
          best1 = std::max(best1, metric);
      }
      out.push_back(best0 - best1);
    }
  }
}

// ---------------------------------------------------------------------------
// Receiver-side channel estimation and equalization
// ---------------------------------------------------------------------------

// Per-user LS estimate of the effective (precoded) scalar channel from the
// pilot comb: divide at owned pilot REs, average the pilot symbols, linearly
// interpolate across frequency, hold at the band edges; constant over the
// slot under block fading.
inline std::vector<cfloat> ls_estimate(const Grid& y, int user, const LinkConfig& cfg,
                                       const PilotSpec& pilot) {
  const int F = cfg.n_f, K = cfg.n_k;
  std::vector<int> owned;
  for (int f = user % K; f < F; f += K) owned.push_back(f);
  if (owned.empty()) throw std::invalid_argument("ls_estimate: user owns no subcarriers");
  std::vector<cfloat> at_owned(owned.size());
  for (std::size_t oi = 0; oi < owned.size(); ++oi) {
    const int f = owned[oi];
    std::complex<double> acc = 0.0;
    for (int s = 0; s < pilot.count(); ++s) {
      const int t = pilot.symbol_indices[static_cast<std::size_t>(s)];
      acc += std::complex<double>(y.at(f, t, user)) /
             std::complex<double>(pilot.at(f, s, user));
    }
    at_owned[oi] = cfloat(acc / static_cast<double>(pilot.count()));
  }
  std::vector<cfloat> h(static_cast<std::size_t>(F));
  for (int f = 0; f < F; ++f) {
    // neighbors in the owned comb
    const int base = user % K;
    if (f <= owned.front()) {
      h[static_cast<std::size_t>(f)] = at_owned.front();
    } else if (f >= owned.back()) {
      h[static_cast<std::size_t>(f)] = at_owned.back();
    } else {
      const std::size_t right = static_cast<std::size_t>((f - base + K - 1) / K);
      const std::size_t left = right - 1;
      const float w = static_cast<float>(f - owned[left]) /
                      static_cast<float>(owned[right] - owned[left]);
      h[static_cast<std::size_t>(f)] =
          at_owned[left] * (1.0f - w) + at_owned[right] * w;
    }
  }
  return h;
}

struct EqualizedSymbol {
  cfloat s_hat;
  float gain;       // s_hat ~ gain * s + n'
  float noise_var;  // Var(n')
};

// LMMSE scalar equalizer: s_hat = h* y / (|h|^2 + sigma2). The h = 0 case
// degrades to an erasure instead of dividing by zero.
inline EqualizedSymbol lmmse_equalize(cfloat y, cfloat h_eff, float sigma2) {
  const float h2 = std::norm(h_eff);
  const float denom = h2 + sigma2;
  EqualizedSymbol out{};
  if (!(denom > 0.0f)) {
    out.s_hat = cfloat(0.0f, 0.0f);
    out.gain = 0.0f;
    out.noise_var = 0.0f;
    return out;
  }
  out.s_hat = std::conj(h_eff) * y / denom;
  out.gain = h2 / denom;
  out.noise_var = sigma2 * h2 / (denom * denom);
  return out;
}

// ---------------------------------------------------------------------------
// End-to-end classical chain
// ---------------------------------------------------------------------------

struct SsccUserRecord {
  float psnr_db = 0.0f;
  bool block_ok = false;
  bool codec_fit = true;
  int quality = -1;
};

namespace detail_sscc {

// Shared PHY: info bits (with CRC appended by the caller) through encode ->
// QAM -> grid -> RZF -> channel -> estimate -> LMMSE -> demap -> Viterbi.
struct PhyLink {
  const LinkConfig& link;
  const SsccConfig& sscc;
  PilotSpec pilot;
  ChannelTensor H;
  double sigma2;
  float norm_scale = 1.0f;
  Grid received;

  PhyLink(const LinkConfig& l, const SsccConfig& s, ChannelTensor h, double s2)
      : link(l), sscc(s), pilot(l.pilot()), H(std::move(h)), sigma2(s2) {}

  // transmit all users' coded bit blocks; returns received grid
  void transmit(const std::vector<std::vector<std::uint8_t>>& coded_per_user,
                std::uint64_t noise_seed) {
    const int F = link.n_f, ST = link.n_st(), K = link.n_k;
    const int m = sscc.mod_order_bits;
    std::vector<cfloat> data(static_cast<std::size_t>(F) * ST * K, cfloat(0.0f, 0.0f));
    for (int k = 0; k < K; ++k) {
      if (coded_per_user[static_cast<std::size_t>(k)].empty()) continue;  // silent user
      auto padded = coded_per_user[static_cast<std::size_t>(k)];
      padded.resize((padded.size() + static_cast<std::size_t>(m) - 1) /
                        static_cast<std::size_t>(m) * static_cast<std::size_t>(m),
                    0);
      const auto symbols = qam_map(padded, m);
      if (static_cast<int>(symbols.size()) > F * ST)
        throw std::invalid_argument("sscc transmit: coded block exceeds grid capacity");
      for (std::size_t i = 0; i < symbols.size(); ++i) {
        const int f = static_cast<int>(i) / ST;
        const int d = static_cast<int>(i) % ST;
        data[(static_cast<std::size_t>(f) * ST + d) * K + k] = symbols[i];
      }
    }
    const Grid s_ofdm = map_to_grid(data, link, pilot);
    PrecodeMatrix V = rzf_matrix(H, 1.0, sigma2);  // regularizer = sigma^2
    const Grid x_raw = apply_precoder(V, s_ofdm);
    norm_scale = static_cast<float>(
        std::sqrt(static_cast<double>(link.power) / mean_re_power(x_raw)));
    const Grid x = power_normalize(x_raw, link.power);
    received = apply_channel(H, x, sigma2, noise_seed);
    v_ = std::move(V);
  }

  // effective scalar channel for one user at every subcarrier
  std::vector<cfloat> effective_channel(int user) const {
    if (sscc.csi_mode == CsiMode::ls) return ls_estimate(received, user, link, pilot);
    std::vector<cfloat> h(static_cast<std::size_t>(link.n_f));
    for (int f = 0; f < link.n_f; ++f) {
      std::complex<double> acc = 0.0;
      for (int mm = 0; mm < link.n_m; ++mm)
        acc += std::complex<double>(H.at(f, 0, user, mm)) *
               std::complex<double>(v_.at(f, 0, mm, user));
      h[static_cast<std::size_t>(f)] = cfloat(acc * static_cast<double>(norm_scale));
    }
    return h;
  }

  // LLRs for one user's coded block of the given length
  std::vector<float> demap_user(int user, std::size_t coded_bits) const {
    const int ST = link.n_st();
    const int m = sscc.mod_order_bits;
    const auto h_eff = effective_channel(user);
    std::vector<float> llrs;
    llrs.reserve(coded_bits);
    const std::size_t n_sym = (coded_bits + static_cast<std::size_t>(m) - 1) / m;
    std::vector<int> data_symbols;
    for (int t = 0; t < link.n_t; ++t)
      if (pilot.pilot_pos(t) < 0) data_symbols.push_back(t);
    for (std::size_t i = 0; i < n_sym; ++i) {
      const int f = static_cast<int>(i) / ST;
      const int d = static_cast<int>(i) % ST;
      const int t = data_symbols[static_cast<std::size_t>(d)];
      const auto eq = lmmse_equalize(received.at(f, t, user), h_eff[static_cast<std::size_t>(f)],
                                     static_cast<float>(sigma2));
      qam_demap_llr(eq.s_hat, eq.gain, eq.noise_var, m, llrs);
    }
    llrs.resize(coded_bits);
    return llrs;
  }

 private:
  PrecodeMatrix v_;
};

inline std::vector<std::uint8_t> frame_with_crc(const std::vector<std::uint8_t>& payload,
                                                int payload_capacity) {
  std::vector<std::uint8_t> framed(payload);
  framed.resize(static_cast<std::size_t>(payload_capacity), 0);  // zero-pad
  const std::uint16_t crc = crc16_ccitt(framed.data(), framed.size());
  for (int i = 15; i >= 0; --i) framed.push_back((crc >> i) & 1u);
  return framed;
}

inline bool check_crc(const std::vector<std::uint8_t>& framed) {
  if (framed.size() < 16) return false;
  const std::size_t n = framed.size() - 16;
  const std::uint16_t want = crc16_ccitt(framed.data(), n);
  std::uint16_t got = 0;
  for (int i = 0; i < 16; ++i) got = static_cast<std::uint16_t>((got << 1) | framed[n + static_cast<std::size_t>(i)]);
  return want == got;
}

}  // namespace detail_sscc

// Full per-group run: N_k images in, per-user PSNR and block status out.
// Codec failures are recorded as PSNR 0 without transmitting that stream.
inline std::vector<SsccUserRecord> sscc_link_run(const std::vector<std::vector<float>>& images,
                                                 const LinkConfig& link, const SsccConfig& sscc,
                                                 const std::string& scenario, double ebn0_db,
                                                 std::uint64_t seed) {
  link.validate();
  sscc.validate();
  const int K = link.n_k;
  if (static_cast<int>(images.size()) != K)
    throw std::invalid_argument("sscc_link_run: want one image per user");
  const int cap = b_max(link, sscc.mod_order_bits, sscc.code_rate);
  const int info_len = cap - 6;              // info block incl. CRC
  const int payload_cap = info_len - 16;     // codec budget
  const double sigma2 =
      ebn0_to_noise_var(ebn0_db, sscc.mod_order_bits, sscc.code_rate.value(),
                        static_cast<double>(link.power) / link.n_m);

  std::vector<SsccUserRecord> records(static_cast<std::size_t>(K));
  std::vector<std::vector<std::uint8_t>> coded(static_cast<std::size_t>(K));
  std::vector<std::vector<std::uint8_t>> framed(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    const auto rc = rate_control(images[static_cast<std::size_t>(k)], cap, sscc);
    records[static_cast<std::size_t>(k)].codec_fit = rc.ok;
    records[static_cast<std::size_t>(k)].quality = rc.quality;
    if (!rc.ok) continue;  // PSNR stays 0, nothing transmitted on this stream
    framed[static_cast<std::size_t>(k)] =
        detail_sscc::frame_with_crc(rc.bits.unpacked(), payload_cap);
    coded[static_cast<std::size_t>(k)] =
        conv_encode(framed[static_cast<std::size_t>(k)], sscc.code_rate);
  }

  detail_sscc::PhyLink phy(link, sscc,
                           sample_channel(scenario_profile(scenario), link.n_f, link.n_t, K,
                                          link.n_m, link.subcarrier_spacing_hz, seed),
                           sigma2);
  phy.transmit(coded, seed ^ 0x517eULL);

  for (int k = 0; k < K; ++k) {
    if (!records[static_cast<std::size_t>(k)].codec_fit) continue;
    const auto llrs = phy.demap_user(k, coded[static_cast<std::size_t>(k)].size());
    const auto decoded = viterbi_decode(llrs, framed[static_cast<std::size_t>(k)].size(),
                                        sscc.code_rate);
    if (!detail_sscc::check_crc(decoded)) continue;  // block error: PSNR 0
    records[static_cast<std::size_t>(k)].block_ok = true;
    Bitstream bs;
    for (int i = 0; i < payload_cap; ++i) bs.push(decoded[static_cast<std::size_t>(i)] != 0);
    const auto img = dct_codec_decode(bs);
    if (img)
      records[static_cast<std::size_t>(k)].psnr_db =
          psnr_db(*img, images[static_cast<std::size_t>(k)]);
  }
  return records;
}

// Block-error measurement on random payloads (the codec does not affect
// BLER); n_blocks counts user transport blocks.
inline float sscc_bler_run(const LinkConfig& link, const SsccConfig& sscc,
                           const std::string& scenario, double ebn0_db, int n_blocks,
                           std::uint64_t seed) {
  link.validate();
  sscc.validate();
  const int K = link.n_k;
  const int cap = b_max(link, sscc.mod_order_bits, sscc.code_rate);
  const int info_len = cap - 6;
  const double sigma2 =
      ebn0_to_noise_var(ebn0_db, sscc.mod_order_bits, sscc.code_rate.value(),
                        static_cast<double>(link.power) / link.n_m);
  Rng rng(Rng::split_mix(seed ^ 0x626c6572ULL));
  std::vector<bool> ok;
  ok.reserve(static_cast<std::size_t>(n_blocks));
  while (static_cast<int>(ok.size()) < n_blocks) {
    std::vector<std::vector<std::uint8_t>> framed(static_cast<std::size_t>(K));
    std::vector<std::vector<std::uint8_t>> coded(static_cast<std::size_t>(K));
    for (int k = 0; k < K; ++k) {
      std::vector<std::uint8_t> payload(static_cast<std::size_t>(info_len - 16));
      for (auto& b : payload) b = static_cast<std::uint8_t>(rng.below(2));
      framed[static_cast<std::size_t>(k)] = detail_sscc::frame_with_crc(payload, info_len - 16);
      coded[static_cast<std::size_t>(k)] = conv_encode(framed[static_cast<std::size_t>(k)],
                                                       sscc.code_rate);
    }
    detail_sscc::PhyLink phy(link, sscc,
                             sample_channel(scenario_profile(scenario), link.n_f, link.n_t, K,
                                            link.n_m, link.subcarrier_spacing_hz, rng.raw()),
                             sigma2);
    phy.transmit(coded, rng.raw());
    for (int k = 0; k < K && static_cast<int>(ok.size()) < n_blocks; ++k) {
      const auto llrs = phy.demap_user(k, coded[static_cast<std::size_t>(k)].size());
      const auto decoded = viterbi_decode(llrs, framed[static_cast<std::size_t>(k)].size(),
                                          sscc.code_rate);
      ok.push_back(detail_sscc::check_crc(decoded));
    }
  }
  return bler(ok);
}

}  // namespace semcom

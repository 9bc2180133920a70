#pragma once

#include <cmath>
#include <complex>
#include <vector>

#include "semcom/channel.hpp"
#include "semcom/config.hpp"
#include "semcom/grid.hpp"
#include "semcom/layers.hpp"
#include "semcom/linalg.hpp"

namespace semcom {

// Spatial precoding matrices V[f,t] in C^{n_m x n_k}.
struct PrecodeMatrix {
  int n_f = 0, n_t = 0, n_m = 0, n_k = 0;
  std::vector<cfloat> v;

  cfloat at(int f, int t, int m, int k) const {
    return v[(((static_cast<std::size_t>(f) * n_t + t) * n_m + m) * n_k) + k];
  }
  cfloat& at(int f, int t, int m, int k) {
    return v[(((static_cast<std::size_t>(f) * n_t + t) * n_m + m) * n_k) + k];
  }
};

// V = H^H (H H^H + alpha*sigma2*I)^{-1} per resource element. alpha = 0 is
// plain zero forcing; a singular slice then surfaces as SingularMatrixError.
inline PrecodeMatrix rzf_matrix(const ChannelTensor& H, double alpha, double sigma2,
                                bool strict = true) {
  if (H.n_k > H.n_m) throw std::invalid_argument("rzf_matrix: requires n_k <= n_m");
  const int F = H.n_f, T = H.n_t, K = H.n_k, M = H.n_m;
  PrecodeMatrix V;
  V.n_f = F;
  V.n_t = T;
  V.n_m = M;
  V.n_k = K;
  V.v.resize(static_cast<std::size_t>(F) * T * M * K);

  const double reg = alpha * sigma2;
  std::vector<std::complex<double>> a(static_cast<std::size_t>(K) * K);
  std::vector<std::complex<double>> binv(static_cast<std::size_t>(K) * K);
  for (int f = 0; f < F; ++f)
    for (int t = 0; t < T; ++t) {
      // A = H H^H + reg I, formed from the float32 coefficients
      for (int i = 0; i < K; ++i)
        for (int j = 0; j < K; ++j) {
          std::complex<float> acc = 0.0f;
          for (int m = 0; m < M; ++m)
            acc += H.at(f, t, i, m) * std::conj(H.at(f, t, j, m));
          a[static_cast<std::size_t>(i) * K + j] = std::complex<double>(acc);
          if (i == j) a[static_cast<std::size_t>(i) * K + j] += reg;
        }
      linalg::cinv_slice(a.data(), binv.data(), K, strict, f * T + t);
      for (int m = 0; m < M; ++m)
        for (int k = 0; k < K; ++k) {
          std::complex<double> acc = 0.0;
          for (int j = 0; j < K; ++j)
            acc += std::conj(std::complex<double>(H.at(f, t, j, m))) *
                   binv[static_cast<std::size_t>(j) * K + k];
          V.at(f, t, m, k) = cfloat(acc);
        }
    }
  return V;
}

// x_{f,t} = V_{f,t} s_{f,t}.
inline Grid apply_precoder(const PrecodeMatrix& V, const Grid& s) {
  if (s.kind != GridKind::streams || s.n_f != V.n_f || s.n_t != V.n_t || s.s != V.n_k)
    throw std::invalid_argument("apply_precoder: stream grid mismatch");
  Grid x(V.n_f, V.n_t, V.n_m, GridKind::antennas);
  for (int f = 0; f < V.n_f; ++f)
    for (int t = 0; t < V.n_t; ++t)
      for (int m = 0; m < V.n_m; ++m) {
        std::complex<double> acc = 0.0;
        for (int k = 0; k < V.n_k; ++k)
          acc += std::complex<double>(V.at(f, t, m, k)) * std::complex<double>(s.at(f, t, k));
        x.at(f, t, m) = cfloat(acc);
      }
  return x;
}

inline Grid rzf_precode(const Grid& s_ofdm, const ChannelTensor& H, double alpha, double sigma2,
                        float power) {
  return power_normalize(apply_precoder(rzf_matrix(H, alpha, sigma2), s_ofdm), power);
}

// Zero forcing; singularity errors from ill-conditioned slices propagate.
inline Grid zf_precode(const Grid& s_ofdm, const ChannelTensor& H, float power) {
  return rzf_precode(s_ofdm, H, 0.0, 0.0, power);
}

// ---------------------------------------------------------------------------
// Learnable residual RZF precoder
// ---------------------------------------------------------------------------

// softplus(alpha0) = 1: start at the classical noise-matched regularizer.
inline float alpha_raw_init() { return std::log(std::exp(1.0f) - 1.0f); }

struct PrecoderParams {
  int alpha_raw = -1;
  Conv2dLayer conv1, conv2, conv3;
  BatchNormLayer bn1, bn2;
  int n_m = 0, n_k = 0;

  static PrecoderParams make(ParamStore& ps, const LinkConfig& cfg, Rng& rng) {
    PrecoderParams p;
    p.n_m = cfg.n_m;
    p.n_k = cfg.n_k;
    p.alpha_raw = ps.add("precoder.alpha_raw", {1}, {alpha_raw_init()});
    const int cin = 2 * cfg.n_m + 2 * cfg.n_k * cfg.n_m;  // coarse signal + CSI channels
    p.conv1 = Conv2dLayer(ps, "precoder.conv1", 3, 3, cin, 64, 1, rng);
    p.bn1 = BatchNormLayer(ps, "precoder.bn1", 64);
    p.conv2 = Conv2dLayer(ps, "precoder.conv2", 3, 3, 64, 64, 1, rng);
    p.bn2 = BatchNormLayer(ps, "precoder.bn2", 64);
    // zero-init: the residual path starts as an exact no-op on top of RZF
    p.conv3 = Conv2dLayer(ps, "precoder.conv3", 1, 1, 64, 2 * cfg.n_m, 1, rng,
                          /*zero_init=*/true);
    return p;
  }
};

enum class PrecodeMode {
  neural,     // learnable alpha + residual refinement
  rzf_fixed,  // classical RZF, alpha = 1 (regularizer = sigma^2), no residual
  zf,         // alpha = 0, no residual, non-strict inverse (collapse path)
};

// Flattens per-group channel tensors into a [G,F,T,K,M,2] constant.
inline ad::Var channels_to_var(ad::Tape& t, const std::vector<ChannelTensor>& hs) {
  const int G = static_cast<int>(hs.size());
  const ChannelTensor& h0 = hs.front();
  std::vector<float> flat(static_cast<std::size_t>(G) * h0.h.size() * 2);
  std::size_t o = 0;
  for (const ChannelTensor& h : hs) {
    if (h.n_f != h0.n_f || h.n_t != h0.n_t || h.n_k != h0.n_k || h.n_m != h0.n_m)
      throw std::invalid_argument("channels_to_var: inconsistent channel dims");
    for (const cfloat& c : h.h) {
      flat[o++] = c.real();
      flat[o++] = c.imag();
    }
  }
  return t.constant({G, h0.n_f, h0.n_t, h0.n_k, h0.n_m, 2}, std::move(flat));
}

// Coarse RZF + learned residual, then the hard power constraint. Fully
// differentiable, including through the batched inverse.
inline ad::Var neural_residual_precode(PassContext& ctx, ad::Var s_ofdm, ad::Var H,
                                       const std::vector<float>& sigma2_per_group,
                                       const PrecoderParams& params, const LinkConfig& cfg,
                                       PrecodeMode mode = PrecodeMode::neural) {
  ad::Tape& t = ctx.tape;
  const ad::Shape ss = t.shape(s_ofdm);
  ad::check(ss.size() == 5 && ss[4] == 2, "neural_residual_precode: want s [G,F,T,K,2]");
  const int G = ss[0], F = ss[1], T = ss[2], K = ss[3], M = cfg.n_m;

  ad::Var Hh = cops::chermitian(H);                    // [G,F,T,M,K,2]
  ad::Var gram = cops::cmatmul(H, Hh);                 // [G,F,T,K,K,2]
  ad::Var A = gram;
  bool strict = true;
  if (mode == PrecodeMode::neural) {
    ad::Var alpha = ad::softplus(ctx.bind(params.alpha_raw));
    A = cops::add_scalar_diag(gram, alpha, sigma2_per_group);
  } else if (mode == PrecodeMode::rzf_fixed) {
    A = cops::add_scalar_diag(gram, t.scalar(1.0f), sigma2_per_group);
  } else {
    strict = false;  // zero forcing: divide through and let NaNs surface
  }
  ad::Var V = cops::cmatmul(Hh, cops::cinv(A, strict));  // [G,F,T,M,K,2]
  ad::Var s_col = ad::reshape(s_ofdm, {G, F, T, K, 1, 2});
  ad::Var coarse = ad::reshape(cops::cmatmul(V, s_col), {G, F, T, M, 2});

  ad::Var x = coarse;
  if (mode == PrecodeMode::neural) {
    // time/frequency as the spatial axes, everything else merged into
    // channels: coarse (2M) concatenated with the CSI (2KM)
    ad::Var coarse_ch = ad::reshape(coarse, {G, F, T, 2 * M});
    ad::Var csi_ch = ad::reshape(H, {G, F, T, 2 * K * M});
    ad::Var s_temp = ad::concat({coarse_ch, csi_ch}, 3);
    ad::Var h1 = ad::relu(params.bn1(ctx, params.conv1(ctx, s_temp)));
    ad::Var h2 = ad::relu(params.bn2(ctx, params.conv2(ctx, h1)));
    ad::Var delta = params.conv3(ctx, h2);  // [G,F,T,2M]
    x = ad::add(coarse, ad::reshape(delta, {G, F, T, M, 2}));
  }
  return gridops::power_normalize(x, cfg.power);
}

}  // namespace semcom

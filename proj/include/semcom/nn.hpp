#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "semcom/tape.hpp"

namespace semcom::ad {

enum class Pad { same, valid };

namespace detail {

struct ConvGeom {
  int out_h, out_w, pad_h, pad_w;
};

inline int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

inline ConvGeom conv_geometry(int H, int W, int kh, int kw, int stride, Pad pad) {
  const int ph = pad == Pad::same ? (kh - 1) / 2 : 0;
  const int pw = pad == Pad::same ? (kw - 1) / 2 : 0;
  ConvGeom g{conv_out_dim(H, kh, stride, ph), conv_out_dim(W, kw, stride, pw), ph, pw};
  check(g.out_h >= 1 && g.out_w >= 1, "conv: output would be empty");
  return g;
}

inline constexpr int kConvAccMax = 512;

inline void conv2d_forward_kernel(const float* __restrict__ xv, const float* __restrict__ kv,
                                  const float* __restrict__ bias, float* __restrict__ out,
                                  int B, int H, int W, int Cin, int kh, int kw, int Cout,
                                  int stride, int PH, int PW, int OH, int OW) {
  alignas(64) float acc_stack[kConvAccMax];
  std::vector<float> acc_spill;
  float* const acc = Cout <= kConvAccMax
      ? acc_stack
      : (acc_spill.resize(static_cast<std::size_t>(Cout)), acc_spill.data());
  for (int b = 0; b < B; ++b)
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) {
        if (bias)
          std::copy_n(bias, Cout, acc);
        else
          std::fill_n(acc, Cout, 0.0f);
        const int iy0 = oy * stride - PH, ix0 = ox * stride - PW;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = iy0 + ky;
          if (iy < 0 || iy >= H) continue;
          const int kx_lo = ix0 < 0 ? -ix0 : 0;
          const int kx_hi = ix0 + kw > W ? W - ix0 : kw;
          const float* px = xv + ((static_cast<std::size_t>(b) * H + iy) * W + ix0 + kx_lo) * Cin;
          const float* kr = kv + (static_cast<std::size_t>(ky) * kw + kx_lo) * Cin * Cout;
          for (int kx = kx_lo; kx < kx_hi; ++kx) {
            for (int ci = 0; ci < Cin; ++ci) {
              const float v = px[ci];
              const float* __restrict__ krow = kr + static_cast<std::size_t>(ci) * Cout;
              for (int co = 0; co < Cout; ++co) acc[co] += v * krow[co];
            }
            px += Cin;
            kr += static_cast<std::size_t>(Cin) * Cout;
          }
        }
        std::copy_n(acc, Cout, out + ((static_cast<std::size_t>(b) * OH + oy) * OW + ox) * Cout);
      }
}

inline void conv2d_backward_kernel(const float* __restrict__ xv, const float* __restrict__ kv,
                                   const float* __restrict__ g, float* __restrict__ gx,
                                   float* __restrict__ gk, int B, int H, int W, int Cin,
                                   int kh, int kw, int Cout, int stride, int PH, int PW,
                                   int OH, int OW) {
  // The input-gradient pass uses the kernel transposed to [ky,kx,Cout,Cin] so
  // its inner loop is a contiguous axpy instead of a dot-product reduction.
  std::vector<float> kt;
  if (gx) {
    kt.resize(static_cast<std::size_t>(kh) * kw * Cin * Cout);
    for (int ky = 0; ky < kh; ++ky)
      for (int kx = 0; kx < kw; ++kx)
        for (int ci = 0; ci < Cin; ++ci)
          for (int co = 0; co < Cout; ++co)
            kt[((static_cast<std::size_t>(ky) * kw + kx) * Cout + co) * Cin + ci] =
                kv[((static_cast<std::size_t>(ky) * kw + kx) * Cin + ci) * Cout + co];
  }
  for (int b = 0; b < B; ++b)
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) {
        const float* __restrict__ grow =
            g + ((static_cast<std::size_t>(b) * OH + oy) * OW + ox) * Cout;
        const int iy0 = oy * stride - PH, ix0 = ox * stride - PW;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = iy0 + ky;
          if (iy < 0 || iy >= H) continue;
          const int kx_lo = ix0 < 0 ? -ix0 : 0;
          const int kx_hi = ix0 + kw > W ? W - ix0 : kw;
          const std::size_t poff0 =
              ((static_cast<std::size_t>(b) * H + iy) * W + ix0 + kx_lo) * Cin;
          const std::size_t koff0 = (static_cast<std::size_t>(ky) * kw + kx_lo) * Cin * Cout;
          for (int kx = kx_lo; kx < kx_hi; ++kx) {
            const std::size_t poff = poff0 + static_cast<std::size_t>(kx - kx_lo) * Cin;
            const std::size_t koff = koff0 + static_cast<std::size_t>(kx - kx_lo) * Cin * Cout;
            if (gk) {
              const float* __restrict__ px = xv + poff;
              for (int ci = 0; ci < Cin; ++ci) {
                const float v = px[ci];
                float* __restrict__ krow = gk + koff + static_cast<std::size_t>(ci) * Cout;
                for (int co = 0; co < Cout; ++co) krow[co] += v * grow[co];
              }
            }
            if (gx) {
              float* __restrict__ dpx = gx + poff;
              const float* __restrict__ ktr = kt.data() + koff;
              for (int co = 0; co < Cout; ++co) {
                const float v = grow[co];
                const float* __restrict__ krow = ktr + static_cast<std::size_t>(co) * Cin;
                for (int ci = 0; ci < Cin; ++ci) dpx[ci] += v * krow[ci];
              }
            }
          }
        }
      }
}

}  // namespace detail

// 2-D convolution, NHWC input [B,H,W,Cin], kernel [kh,kw,Cin,Cout],
// optional bias [Cout]. Odd kernels only; `same` uses symmetric zero padding
// of (k-1)/2 so the stride chain 32->16->8 comes out exact.
inline Var conv2d(Var x, Var kernel, Var bias, int stride, Pad pad) {
  detail::same_tape(x, kernel);
  Tape& t = *x.tape;
  const Shape xs = t.shape(x);
  const Shape ks = t.shape(kernel);
  check(xs.size() == 4, "conv2d: input must be [B,H,W,Cin], got " + shape_str(xs));
  check(ks.size() == 4, "conv2d: kernel must be [kh,kw,Cin,Cout], got " + shape_str(ks));
  const int B = xs[0], H = xs[1], W = xs[2], Cin = xs[3];
  const int kh = ks[0], kw = ks[1], Cout = ks[3];
  check(kh % 2 == 1 && kw % 2 == 1, "conv2d: kernel dims must be odd");
  check(stride >= 1, "conv2d: stride must be >= 1");
  check(ks[2] == Cin, "conv2d: Cin mismatch, input " + std::to_string(Cin) +
            " vs kernel " + std::to_string(ks[2]));
  const bool has_bias = bias.valid();
  if (has_bias) {
    detail::same_tape(x, bias);
    check(t.shape(bias) == Shape{Cout}, "conv2d: bias must be [Cout]");
  }
  const auto geom = detail::conv_geometry(H, W, kh, kw, stride, pad);
  const int OH = geom.out_h, OW = geom.out_w, PH = geom.pad_h, PW = geom.pad_w;

  const auto& xv = t.val(x);
  const auto& kv = t.val(kernel);
  const float* bv = has_bias ? t.val(bias).data() : nullptr;
  std::vector<float> out(static_cast<std::size_t>(B) * OH * OW * Cout);
  detail::conv2d_forward_kernel(xv.data(), kv.data(), bv, out.data(), B, H, W, Cin, kh, kw,
                                Cout, stride, PH, PW, OH, OW);

  const int xi = x.id, ki = kernel.id, bi = has_bias ? bias.id : -1;
  std::vector<int> inputs{xi, ki};
  if (has_bias) inputs.push_back(bi);
  return t.make({B, OH, OW, Cout}, std::move(out), std::move(inputs),
                [=](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    const auto& xv2 = tp.node(xi).val;
    const auto& kv2 = tp.node(ki).val;
    const bool wx = tp.wants_grad(xi);
    const bool wk = tp.wants_grad(ki);
    float* gx = wx ? tp.grad_buf(xi).data() : nullptr;
    float* gk = wk ? tp.grad_buf(ki).data() : nullptr;
    if (bi >= 0 && tp.wants_grad(bi)) {
      auto& gb = tp.grad_buf(bi);
      for (std::size_t p = 0; p < g.size(); p += Cout)
        for (int co = 0; co < Cout; ++co) gb[co] += g[p + co];
    }
    if (!wx && !wk) return;
    detail::conv2d_backward_kernel(xv2.data(), kv2.data(), g.data(), gx, gk, B, H, W, Cin,
                                   kh, kw, Cout, stride, PH, PW, OH, OW);
  });
}

inline Var conv2d(Var x, Var kernel, int stride, Pad pad) {
  return conv2d(x, kernel, Var{}, stride, pad);
}

// Depthwise convolution: input [B,H,W,C], kernel [kh,kw,C]; each channel is
// filtered independently.
inline Var depthwise_conv2d(Var x, Var kernel, int stride, Pad pad) {
  detail::same_tape(x, kernel);
  Tape& t = *x.tape;
  const Shape xs = t.shape(x);
  const Shape ks = t.shape(kernel);
  check(xs.size() == 4, "depthwise_conv2d: input must be [B,H,W,C]");
  check(ks.size() == 3, "depthwise_conv2d: kernel must be [kh,kw,C]");
  const int B = xs[0], H = xs[1], W = xs[2], C = xs[3];
  const int kh = ks[0], kw = ks[1];
  check(kh % 2 == 1 && kw % 2 == 1, "depthwise_conv2d: kernel dims must be odd");
  check(stride >= 1, "depthwise_conv2d: stride must be >= 1");
  check(ks[2] == C, "depthwise_conv2d: channel mismatch");
  const auto geom = detail::conv_geometry(H, W, kh, kw, stride, pad);
  const int OH = geom.out_h, OW = geom.out_w, PH = geom.pad_h, PW = geom.pad_w;

  const auto& xv = t.val(x);
  const auto& kv = t.val(kernel);
  std::vector<float> out(static_cast<std::size_t>(B) * OH * OW * C, 0.0f);
  for (int b = 0; b < B; ++b) {
    for (int oy = 0; oy < OH; ++oy) {
      for (int ox = 0; ox < OW; ++ox) {
        float* orow = out.data() + ((static_cast<std::size_t>(b) * OH + oy) * OW + ox) * C;
        const int iy0 = oy * stride - PH;
        const int ix0 = ox * stride - PW;
        for (int ky = 0; ky < kh; ++ky) {
          const int iy = iy0 + ky;
          if (iy < 0 || iy >= H) continue;
          for (int kx = 0; kx < kw; ++kx) {
            const int ix = ix0 + kx;
            if (ix < 0 || ix >= W) continue;
            const float* px = xv.data() + ((static_cast<std::size_t>(b) * H + iy) * W + ix) * C;
            const float* kr = kv.data() + (static_cast<std::size_t>(ky) * kw + kx) * C;
            for (int c = 0; c < C; ++c) orow[c] += px[c] * kr[c];
          }
        }
      }
    }
  }

  const int xi = x.id, ki = kernel.id;
  return t.make({B, OH, OW, C}, std::move(out), {xi, ki}, [=](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    const auto& xv2 = tp.node(xi).val;
    const auto& kv2 = tp.node(ki).val;
    const bool wx = tp.wants_grad(xi);
    const bool wk = tp.wants_grad(ki);
    float* gx = wx ? tp.grad_buf(xi).data() : nullptr;
    float* gk = wk ? tp.grad_buf(ki).data() : nullptr;
    if (!wx && !wk) return;
    for (int b = 0; b < B; ++b) {
      for (int oy = 0; oy < OH; ++oy) {
        for (int ox = 0; ox < OW; ++ox) {
          const float* grow = g.data() + ((static_cast<std::size_t>(b) * OH + oy) * OW + ox) * C;
          const int iy0 = oy * stride - PH;
          const int ix0 = ox * stride - PW;
          for (int ky = 0; ky < kh; ++ky) {
            const int iy = iy0 + ky;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < kw; ++kx) {
              const int ix = ix0 + kx;
              if (ix < 0 || ix >= W) continue;
              const std::size_t poff = ((static_cast<std::size_t>(b) * H + iy) * W + ix) * C;
              const std::size_t koff = (static_cast<std::size_t>(ky) * kw + kx) * C;
              if (wk) {
                const float* px = xv2.data() + poff;
                for (int c = 0; c < C; ++c) gk[koff + c] += px[c] * grow[c];
              }
              if (wx) {
                const float* kr = kv2.data() + koff;
                for (int c = 0; c < C; ++c) gx[poff + c] += kr[c] * grow[c];
              }
            }
          }
        }
      }
    }
  });
}

// Depthwise filtering followed by a 1x1 pointwise combination.
// Parameter count kh*kw*Cin + Cin*Cout instead of kh*kw*Cin*Cout.
inline Var depthwise_separable_conv2d(Var x, Var depthwise_kernel, Var pointwise_kernel,
                                      Var bias, int stride, Pad pad) {
  Var mid = depthwise_conv2d(x, depthwise_kernel, stride, pad);
  return conv2d(mid, pointwise_kernel, bias, 1, Pad::same);
}

// 1-D convolution over [B,L,Cin] with kernel [k,Cin,Cout]; lowered onto the
// 2-D kernel with a unit height.
inline Var conv1d(Var x, Var kernel, Var bias, int stride, Pad pad) {
  Tape& t = *x.tape;
  const Shape xs = t.shape(x);
  const Shape ks = t.shape(kernel);
  check(xs.size() == 3, "conv1d: input must be [B,L,Cin]");
  check(ks.size() == 3, "conv1d: kernel must be [k,Cin,Cout]");
  Var x4 = reshape(x, {xs[0], 1, xs[1], xs[2]});
  Var k4 = reshape(kernel, {1, ks[0], ks[1], ks[2]});
  Var y4 = conv2d(x4, k4, bias, stride, pad);
  const Shape ys = t.shape(y4);
  return reshape(y4, {ys[0], ys[2], ys[3]});
}

// Affine map: input [B,n] * weights [n,m] + bias [m].
inline Var dense(Var x, Var weights, Var bias) {
  detail::same_tape(x, weights);
  Tape& t = *x.tape;
  const Shape xs = t.shape(x);
  const Shape ws = t.shape(weights);
  check(xs.size() == 2 && ws.size() == 2, "dense: want [B,n] x [n,m]");
  check(xs[1] == ws[0], "dense: inner dims disagree, " + std::to_string(xs[1]) +
            " vs " + std::to_string(ws[0]));
  const int B = xs[0], N = xs[1], M = ws[1];
  const bool has_bias = bias.valid();
  if (has_bias) check(t.shape(bias) == Shape{M}, "dense: bias must be [m]");

  const auto& xv = t.val(x);
  const auto& wv = t.val(weights);
  const float* bv = has_bias ? t.val(bias).data() : nullptr;
  std::vector<float> out(static_cast<std::size_t>(B) * M);
  for (int b = 0; b < B; ++b) {
    float* __restrict__ orow = out.data() + static_cast<std::size_t>(b) * M;
    if (has_bias)
      std::copy_n(bv, M, orow);
    else
      std::fill_n(orow, M, 0.0f);
    const float* __restrict__ xrow = xv.data() + static_cast<std::size_t>(b) * N;
    for (int i = 0; i < N; ++i) {
      const float v = xrow[i];
      const float* __restrict__ wrow = wv.data() + static_cast<std::size_t>(i) * M;
      for (int j = 0; j < M; ++j) orow[j] += v * wrow[j];
    }
  }
  const int xi = x.id, wi = weights.id, bi = has_bias ? bias.id : -1;
  std::vector<int> inputs{xi, wi};
  if (has_bias) inputs.push_back(bi);
  return t.make({B, M}, std::move(out), std::move(inputs), [=](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    const auto& xv2 = tp.node(xi).val;
    const auto& wv2 = tp.node(wi).val;
    if (bi >= 0 && tp.wants_grad(bi)) {
      auto& gb = tp.grad_buf(bi);
      for (int b = 0; b < B; ++b)
        for (int j = 0; j < M; ++j) gb[j] += g[static_cast<std::size_t>(b) * M + j];
    }
    if (tp.wants_grad(wi)) {
      auto& gw = tp.grad_buf(wi);
      for (int b = 0; b < B; ++b) {
        const float* __restrict__ xrow = xv2.data() + static_cast<std::size_t>(b) * N;
        const float* __restrict__ grow = g.data() + static_cast<std::size_t>(b) * M;
        for (int i = 0; i < N; ++i) {
          const float v = xrow[i];
          float* __restrict__ wrow = gw.data() + static_cast<std::size_t>(i) * M;
          for (int j = 0; j < M; ++j) wrow[j] += v * grow[j];
        }
      }
    }
    if (tp.wants_grad(xi)) {
      // transpose once so the inner loop is an axpy over the contiguous axis
      std::vector<float> wt(static_cast<std::size_t>(N) * M);
      for (int i = 0; i < N; ++i)
        for (int j = 0; j < M; ++j)
          wt[static_cast<std::size_t>(j) * N + i] = wv2[static_cast<std::size_t>(i) * M + j];
      auto& gx = tp.grad_buf(xi);
      for (int b = 0; b < B; ++b) {
        const float* __restrict__ grow = g.data() + static_cast<std::size_t>(b) * M;
        float* __restrict__ xrow = gx.data() + static_cast<std::size_t>(b) * N;
        for (int j = 0; j < M; ++j) {
          const float v = grow[j];
          const float* __restrict__ wrow = wt.data() + static_cast<std::size_t>(j) * N;
          for (int i = 0; i < N; ++i) xrow[i] += v * wrow[i];
        }
      }
    }
  });
}

inline Var dense(Var x, Var weights) { return dense(x, weights, Var{}); }

inline constexpr float kBatchNormEps = 1e-5f;
inline constexpr float kBatchNormMomentum = 0.9f;

// Batch normalization over the trailing channel axis of [B,...,C].
// Train mode normalizes with batch statistics and folds them into the
// running estimates (momentum 0.9); infer mode uses the running estimates.
// The epsilon floor keeps zero-variance channels finite.
// `update_running` is split out so repeated forward passes (finite-difference
// probing) can use batch statistics without touching the running estimates.
inline Var batch_norm(Var x, Var gamma, Var beta, std::vector<float>* running_mean,
                      std::vector<float>* running_var, bool training,
                      bool update_running) {
  detail::same_tape(x, gamma);
  detail::same_tape(x, beta);
  Tape& t = *x.tape;
  const Shape xs = t.shape(x);
  check(xs.size() >= 2, "batch_norm: input rank must be >= 2");
  const int C = xs.back();
  check(t.shape(gamma) == Shape{C} && t.shape(beta) == Shape{C},
        "batch_norm: gamma/beta must be [C]");
  check(running_mean && running_var && static_cast<int>(running_mean->size()) == C &&
            static_cast<int>(running_var->size()) == C,
        "batch_norm: running stats must be [C]");
  const std::size_t rows = numel(xs) / static_cast<std::size_t>(C);
  const auto& xv = t.val(x);
  const auto& gv = t.val(gamma);
  const auto& bv = t.val(beta);

  std::vector<float> mean(C), inv_std(C);
  if (training) {
    check(rows > 1, "batch_norm: train mode requires batch*spatial > 1");
    std::vector<double> m(C, 0.0), v(C, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      const float* px = xv.data() + r * C;
      for (int c = 0; c < C; ++c) m[c] += px[c];
    }
    for (int c = 0; c < C; ++c) m[c] /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const float* px = xv.data() + r * C;
      for (int c = 0; c < C; ++c) {
        const double d = px[c] - m[c];
        v[c] += d * d;
      }
    }
    for (int c = 0; c < C; ++c) {
      v[c] /= static_cast<double>(rows);
      mean[c] = static_cast<float>(m[c]);
      inv_std[c] = 1.0f / std::sqrt(static_cast<float>(v[c]) + kBatchNormEps);
      if (update_running) {
        (*running_mean)[c] = kBatchNormMomentum * (*running_mean)[c] +
                             (1.0f - kBatchNormMomentum) * mean[c];
        (*running_var)[c] = kBatchNormMomentum * (*running_var)[c] +
                            (1.0f - kBatchNormMomentum) * static_cast<float>(v[c]);
      }
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = (*running_mean)[c];
      inv_std[c] = 1.0f / std::sqrt((*running_var)[c] + kBatchNormEps);
    }
  }

  std::vector<float> xhat(xv.size());
  std::vector<float> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const float* px = xv.data() + r * C;
    float* ph = xhat.data() + r * C;
    float* po = out.data() + r * C;
    for (int c = 0; c < C; ++c) {
      ph[c] = (px[c] - mean[c]) * inv_std[c];
      po[c] = gv[c] * ph[c] + bv[c];
    }
  }

  const int xi = x.id, gi = gamma.id, bi = beta.id;
  return t.make(xs, std::move(out), {xi, gi, bi},
                [xi, gi, bi, rows, C, training, xhat = std::move(xhat),
                 inv_std = std::move(inv_std)](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    const auto& gv2 = tp.node(gi).val;
    if (tp.wants_grad(bi)) {
      auto& gb = tp.grad_buf(bi);
      for (std::size_t r = 0; r < rows; ++r)
        for (int c = 0; c < C; ++c) gb[c] += g[r * C + c];
    }
    if (tp.wants_grad(gi)) {
      auto& gg = tp.grad_buf(gi);
      for (std::size_t r = 0; r < rows; ++r)
        for (int c = 0; c < C; ++c) gg[c] += g[r * C + c] * xhat[r * C + c];
    }
    if (!tp.wants_grad(xi)) return;
    auto& gx = tp.grad_buf(xi);
    if (!training) {
      for (std::size_t r = 0; r < rows; ++r)
        for (int c = 0; c < C; ++c)
          gx[r * C + c] += g[r * C + c] * gv2[c] * inv_std[c];
      return;
    }
    // Through the batch statistics:
    // dx = gamma*inv_std*(g - mean(g) - xhat*mean(g*xhat)) per channel.
    std::vector<double> sg(C, 0.0), sgx(C, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (int c = 0; c < C; ++c) {
        sg[c] += g[r * C + c];
        sgx[c] += g[r * C + c] * xhat[r * C + c];
      }
    const double n_inv = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (int c = 0; c < C; ++c) {
        const double term = g[r * C + c] - sg[c] * n_inv - xhat[r * C + c] * sgx[c] * n_inv;
        gx[r * C + c] += static_cast<float>(gv2[c] * inv_std[c] * term);
      }
  });
}

inline Var batch_norm(Var x, Var gamma, Var beta, std::vector<float>* running_mean,
                      std::vector<float>* running_var, bool training) {
  return batch_norm(x, gamma, beta, running_mean, running_var, training, training);
}

enum class PoolKind { max, avg, global_avg };

// Pooling over [B,H,W,C]. Max pooling routes the gradient to the first
// maximal element in row-major scan order.
inline Var pool(Var x, PoolKind kind, int window = 2, int stride = 2) {
  Tape& t = *x.tape;
  const Shape xs = t.shape(x);
  check(xs.size() == 4, "pool: input must be [B,H,W,C]");
  const int B = xs[0], H = xs[1], W = xs[2], C = xs[3];

  if (kind == PoolKind::global_avg) {
    const auto& xv = t.val(x);
    std::vector<float> out(static_cast<std::size_t>(B) * C, 0.0f);
    const float inv = 1.0f / static_cast<float>(H * W);
    for (int b = 0; b < B; ++b) {
      float* orow = out.data() + static_cast<std::size_t>(b) * C;
      for (int p = 0; p < H * W; ++p) {
        const float* px = xv.data() + (static_cast<std::size_t>(b) * H * W + p) * C;
        for (int c = 0; c < C; ++c) orow[c] += px[c];
      }
      for (int c = 0; c < C; ++c) orow[c] *= inv;
    }
    const int xi = x.id;
    return t.make({B, C}, std::move(out), {xi}, [xi, B, H, W, C, inv](Tape& tp, int self) {
      const auto& g = tp.node(self).grad;
      auto& gx = tp.grad_buf(xi);
      for (int b = 0; b < B; ++b) {
        const float* grow = g.data() + static_cast<std::size_t>(b) * C;
        for (int p = 0; p < H * W; ++p) {
          float* px = gx.data() + (static_cast<std::size_t>(b) * H * W + p) * C;
          for (int c = 0; c < C; ++c) px[c] += grow[c] * inv;
        }
      }
    });
  }

  check(window >= 1 && window <= H && window <= W, "pool: window exceeds spatial dims");
  check(stride >= 1, "pool: stride must be >= 1");
  const int OH = (H - window) / stride + 1;
  const int OW = (W - window) / stride + 1;
  const auto& xv = t.val(x);
  std::vector<float> out(static_cast<std::size_t>(B) * OH * OW * C);
  std::vector<int> argmax;
  if (kind == PoolKind::max) argmax.resize(out.size());
  const float inv_w2 = 1.0f / static_cast<float>(window * window);

  for (int b = 0; b < B; ++b)
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) {
        const std::size_t obase = ((static_cast<std::size_t>(b) * OH + oy) * OW + ox) * C;
        for (int c = 0; c < C; ++c) {
          if (kind == PoolKind::max) {
            float best = -std::numeric_limits<float>::infinity();
            int best_idx = -1;
            for (int wy = 0; wy < window; ++wy)
              for (int wx = 0; wx < window; ++wx) {
                const int iy = oy * stride + wy, ix = ox * stride + wx;
                const std::size_t idx = ((static_cast<std::size_t>(b) * H + iy) * W + ix) * C + c;
                if (xv[idx] > best) {
                  best = xv[idx];
                  best_idx = static_cast<int>(idx);
                }
              }
            out[obase + c] = best;
            argmax[obase + c] = best_idx;
          } else {
            float s = 0.0f;
            for (int wy = 0; wy < window; ++wy)
              for (int wx = 0; wx < window; ++wx) {
                const int iy = oy * stride + wy, ix = ox * stride + wx;
                s += xv[((static_cast<std::size_t>(b) * H + iy) * W + ix) * C + c];
              }
            out[obase + c] = s * inv_w2;
          }
        }
      }

  const int xi = x.id;
  return t.make({B, OH, OW, C}, std::move(out), {xi},
                [xi, kind, B, H, W, C, OH, OW, window, stride, inv_w2,
                 argmax = std::move(argmax)](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    auto& gx = tp.grad_buf(xi);
    if (kind == PoolKind::max) {
      for (std::size_t i = 0; i < g.size(); ++i) gx[static_cast<std::size_t>(argmax[i])] += g[i];
      return;
    }
    for (int b = 0; b < B; ++b)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          const std::size_t obase = ((static_cast<std::size_t>(b) * OH + oy) * OW + ox) * C;
          for (int wy = 0; wy < window; ++wy)
            for (int wx = 0; wx < window; ++wx) {
              const int iy = oy * stride + wy, ix = ox * stride + wx;
              float* px = gx.data() + ((static_cast<std::size_t>(b) * H + iy) * W + ix) * C;
              for (int c = 0; c < C; ++c) px[c] += g[obase + c] * inv_w2;
            }
        }
  });
}

// Nearest-neighbor upsampling of [B,H,W,C] by an integer factor; the
// gradient sums over each replicated cell.
inline Var upsample_nearest(Var x, int factor) {
  Tape& t = *x.tape;
  const Shape xs = t.shape(x);
  check(xs.size() == 4, "upsample_nearest: input must be [B,H,W,C]");
  check(factor >= 1, "upsample_nearest: factor must be >= 1");
  const int B = xs[0], H = xs[1], W = xs[2], C = xs[3];
  const int OH = H * factor, OW = W * factor;
  const auto& xv = t.val(x);
  std::vector<float> out(static_cast<std::size_t>(B) * OH * OW * C);
  for (int b = 0; b < B; ++b)
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) {
        const float* px = xv.data() +
            ((static_cast<std::size_t>(b) * H + oy / factor) * W + ox / factor) * C;
        float* po = out.data() + ((static_cast<std::size_t>(b) * OH + oy) * OW + ox) * C;
        std::copy_n(px, C, po);
      }
  const int xi = x.id;
  return t.make({B, OH, OW, C}, std::move(out), {xi},
                [xi, B, H, W, C, OH, OW, factor](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    auto& gx = tp.grad_buf(xi);
    for (int b = 0; b < B; ++b)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          const float* po = g.data() + ((static_cast<std::size_t>(b) * OH + oy) * OW + ox) * C;
          float* px = gx.data() +
              ((static_cast<std::size_t>(b) * H + oy / factor) * W + ox / factor) * C;
          for (int c = 0; c < C; ++c) px[c] += po[c];
        }
  });
}

}  // namespace semcom::ad

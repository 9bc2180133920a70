#pragma once

#include <string>

#include "semcom/nn.hpp"
#include "semcom/params.hpp"

namespace semcom {

// Thin bindings from named ParamStore entries to tape ops. Construction
// registers the parameters; operator() records the layer on the pass tape.

struct Conv2dLayer {
  int w = -1, b = -1;
  int stride = 1;
  ad::Pad pad = ad::Pad::same;

  Conv2dLayer() = default;
  Conv2dLayer(ParamStore& ps, const std::string& name, int kh, int kw, int cin, int cout,
              int stride_, Rng& rng, bool zero_init = false)
      : stride(stride_) {
    if (zero_init) {
      w = ps.add_zeros(name + ".w", {kh, kw, cin, cout});
    } else {
      w = ps.add_he_uniform(name + ".w", {kh, kw, cin, cout}, kh * kw * cin, rng);
    }
    b = ps.add_zeros(name + ".b", {cout});
  }

  ad::Var operator()(PassContext& ctx, ad::Var x) const {
    return ad::conv2d(x, ctx.bind(w), ctx.bind(b), stride, pad);
  }
};

struct Conv1dLayer {
  int w = -1, b = -1;
  int stride = 1;

  Conv1dLayer() = default;
  Conv1dLayer(ParamStore& ps, const std::string& name, int k, int cin, int cout, int stride_,
              Rng& rng)
      : stride(stride_) {
    w = ps.add_he_uniform(name + ".w", {k, cin, cout}, k * cin, rng);
    b = ps.add_zeros(name + ".b", {cout});
  }

  ad::Var operator()(PassContext& ctx, ad::Var x) const {
    return ad::conv1d(x, ctx.bind(w), ctx.bind(b), stride, ad::Pad::same);
  }
};

struct SepConv2dLayer {
  int dw = -1, pw = -1, b = -1;
  int stride = 1;

  SepConv2dLayer() = default;
  SepConv2dLayer(ParamStore& ps, const std::string& name, int kh, int kw, int cin, int cout,
                 int stride_, Rng& rng, bool zero_init = false)
      : stride(stride_) {
    dw = ps.add_he_uniform(name + ".dw", {kh, kw, cin}, kh * kw, rng);
    if (zero_init) {
      pw = ps.add_zeros(name + ".pw", {1, 1, cin, cout});
    } else {
      pw = ps.add_he_uniform(name + ".pw", {1, 1, cin, cout}, cin, rng);
    }
    b = ps.add_zeros(name + ".b", {cout});
  }

  ad::Var operator()(PassContext& ctx, ad::Var x) const {
    return ad::depthwise_separable_conv2d(x, ctx.bind(dw), ctx.bind(pw), ctx.bind(b), stride,
                                          ad::Pad::same);
  }
};

struct DenseLayer {
  int w = -1, b = -1;

  DenseLayer() = default;
  DenseLayer(ParamStore& ps, const std::string& name, int n, int m, Rng& rng,
             bool zero_init = false) {
    if (zero_init) {
      w = ps.add_zeros(name + ".w", {n, m});
    } else {
      w = ps.add_he_uniform(name + ".w", {n, m}, n, rng);
    }
    b = ps.add_zeros(name + ".b", {m});
  }

  ad::Var operator()(PassContext& ctx, ad::Var x) const {
    return ad::dense(x, ctx.bind(w), ctx.bind(b));
  }
};

struct BatchNormLayer {
  int gamma = -1, beta = -1, rmean = -1, rvar = -1;

  BatchNormLayer() = default;
  BatchNormLayer(ParamStore& ps, const std::string& name, int c) {
    gamma = ps.add_full(name + ".gamma", {c}, 1.0f);
    beta = ps.add_zeros(name + ".beta", {c});
    rmean = ps.add_zeros(name + ".running_mean", {c}, /*trainable=*/false);
    rvar = ps.add_full(name + ".running_var", {c}, 1.0f, /*trainable=*/false);
  }

  ad::Var operator()(PassContext& ctx, ad::Var x) const {
    return ad::batch_norm(x, ctx.bind(gamma), ctx.bind(beta), &ctx.store[rmean].value,
                          &ctx.store[rvar].value, ctx.training, ctx.training && !ctx.freeze_stats);
  }
};

}  // namespace semcom

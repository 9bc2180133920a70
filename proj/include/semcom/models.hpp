#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "semcom/channel.hpp"
#include "semcom/config.hpp"
#include "semcom/grid.hpp"
#include "semcom/layers.hpp"
#include "semcom/nn.hpp"

namespace semcom {

inline constexpr int kImageSize = 32;
inline constexpr int kImageChannels = 3;
inline constexpr int kNumClasses = 10;
inline constexpr int kEncoderSpatial = 8;  // 32 -> 16 -> 8 through the resblock strides

// Residual block: conv(s)-BN-ReLU-conv(1)-BN, plus a 1x1 stride-matched
// projection when the shape changes, ReLU after the sum.
struct ResBlock {
  Conv2dLayer conv1, conv2, proj;
  BatchNormLayer bn1, bn2;
  bool use_proj = false;

  ResBlock() = default;
  ResBlock(ParamStore& ps, const std::string& name, int cin, int cout, int stride, Rng& rng) {
    conv1 = Conv2dLayer(ps, name + ".conv1", 3, 3, cin, cout, stride, rng);
    bn1 = BatchNormLayer(ps, name + ".bn1", cout);
    conv2 = Conv2dLayer(ps, name + ".conv2", 3, 3, cout, cout, 1, rng);
    bn2 = BatchNormLayer(ps, name + ".bn2", cout);
    use_proj = stride != 1 || cin != cout;
    if (use_proj) proj = Conv2dLayer(ps, name + ".proj", 1, 1, cin, cout, stride, rng);
  }

  ad::Var operator()(PassContext& ctx, ad::Var x) const {
    ad::Var main = bn2(ctx, conv2(ctx, ad::relu(bn1(ctx, conv1(ctx, x)))));
    ad::Var shortcut = use_proj ? proj(ctx, x) : x;
    return ad::relu(ad::add(main, shortcut));
  }
};

// sigma^2 enters the noise gate as log10, affinely rescaled to roughly
// [-1, 1] across the training SNR range.
inline float normalize_noise_var(double sigma2, const LinkConfig& cfg) {
  const double center = std::log10(static_cast<double>(cfg.power) / cfg.n_m);
  return static_cast<float>((std::log10(sigma2) - center) / 0.7);
}

// Scenario cue: per-subcarrier mean magnitude of the channel draw.
inline std::vector<float> csi_magnitude(const ChannelTensor& h) {
  std::vector<float> mag(static_cast<std::size_t>(h.n_f), 0.0f);
  const double inv = 1.0 / (static_cast<double>(h.n_t) * h.n_k * h.n_m);
  for (int f = 0; f < h.n_f; ++f) {
    double acc = 0.0;
    for (int t = 0; t < h.n_t; ++t)
      for (int k = 0; k < h.n_k; ++k)
        for (int m = 0; m < h.n_m; ++m) acc += std::abs(std::complex<double>(h.at(f, t, k, m)));
    mag[static_cast<std::size_t>(f)] = static_cast<float>(acc * inv);
  }
  return mag;
}

inline int encoder_head_channels(const LinkConfig& cfg) {
  const int want = cfg.n_sf() * cfg.n_st() * cfg.n_k;
  return std::max(1, (want + 63) / 64);
}

struct EncoderParams {
  Conv2dLayer stem;
  BatchNormLayer stem_bn;
  ResBlock rb1, rb2, rb3;
  DenseLayer noise_gate;
  Conv1dLayer scen_conv1, scen_conv2;
  DenseLayer scen_d1, scen_d2;
  Conv2dLayer head_conv;
  DenseLayer head_dense;
  bool with_gates = true;
  int feat_len = 0;  // per-image head output: N_sf * N_st * 2

  static EncoderParams make(ParamStore& ps, const LinkConfig& cfg, Rng& rng,
                            bool with_gates = true) {
    EncoderParams e;
    e.with_gates = with_gates;
    e.feat_len = cfg.n_sf() * cfg.n_st() * 2;
    e.stem = Conv2dLayer(ps, "encoder.stem", 3, 3, kImageChannels, 64, 1, rng);
    e.stem_bn = BatchNormLayer(ps, "encoder.stem_bn", 64);
    e.rb1 = ResBlock(ps, "encoder.rb1", 64, 64, 2, rng);
    e.rb2 = ResBlock(ps, "encoder.rb2", 64, 128, 2, rng);
    e.rb3 = ResBlock(ps, "encoder.rb3", 128, 128, 1, rng);
    if (with_gates) {
      e.noise_gate = DenseLayer(ps, "encoder.noise_gate", 1, 128, rng);
      e.scen_conv1 = Conv1dLayer(ps, "encoder.scen_conv1", 5, 1, 16, 2, rng);
      e.scen_conv2 = Conv1dLayer(ps, "encoder.scen_conv2", 5, 16, 32, 2, rng);
      e.scen_d1 = DenseLayer(ps, "encoder.scen_d1", 32, 64, rng);
      // gate width matches the 128-channel feature map it scales
      e.scen_d2 = DenseLayer(ps, "encoder.scen_d2", 64, 128, rng);
    }
    const int c_head = encoder_head_channels(cfg);
    e.head_conv = Conv2dLayer(ps, "encoder.head_conv", 3, 3, 128, c_head, 1, rng);
    e.head_dense = DenseLayer(ps, "encoder.head_dense",
                              kEncoderSpatial * kEncoderSpatial * c_head, e.feat_len, rng);
    return e;
  }
};

// images [B,32,32,3] -> per-image features [B, N_sf, N_st, 2] in (-1, 1).
// csi_mag [B, N_f] and sigma2_norm [B, 1] are the adaptation inputs; they are
// ignored when the encoder was built without gates.
inline ad::Var encoder_forward(PassContext& ctx, const EncoderParams& e, ad::Var images,
                               ad::Var csi_mag, ad::Var sigma2_norm, const LinkConfig& cfg) {
  ad::Tape& t = ctx.tape;
  const ad::Shape is = t.shape(images);
  ad::check(is.size() == 4 && is[1] == kImageSize && is[2] == kImageSize &&
                is[3] == kImageChannels,
            "encoder_forward: want images [B,32,32,3], got " + ad::shape_str(is));
  const int B = is[0];

  ad::Var x = ad::relu(e.stem_bn(ctx, e.stem(ctx, images)));
  x = e.rb1(ctx, x);
  x = e.rb2(ctx, x);
  x = e.rb3(ctx, x);  // [B, 8, 8, 128]

  if (e.with_gates) {
    ad::Var g_noise = ad::sigmoid(e.noise_gate(ctx, sigma2_norm));  // [B,128]
    x = ad::channel_gate(x, g_noise);

    const ad::Shape cs = t.shape(csi_mag);
    ad::check(cs.size() == 2 && cs[0] == B, "encoder_forward: csi_mag must be [B,N_f]");
    ad::Var c = ad::reshape(csi_mag, {B, cs[1], 1});
    c = ad::relu(e.scen_conv1(ctx, c));
    c = ad::relu(e.scen_conv2(ctx, c));
    const ad::Shape c2 = t.shape(c);
    c = ad::pool(ad::reshape(c, {B, 1, c2[1], c2[2]}), ad::PoolKind::global_avg);  // [B,32]
    ad::Var g_scen = ad::sigmoid(e.scen_d2(ctx, ad::relu(e.scen_d1(ctx, c))));     // [B,128]
    x = ad::channel_gate(x, g_scen);
  }

  x = e.head_conv(ctx, x);  // [B, 8, 8, c_head]
  const ad::Shape hs = t.shape(x);
  x = ad::reshape(x, {B, hs[1] * hs[2] * hs[3]});
  x = ad::tanh_act(e.head_dense(ctx, x));
  return ad::reshape(x, {B, cfg.n_sf(), cfg.n_st(), 2});
}

struct DecoderParams {
  // pilot-guided attention (only when built with attention)
  SepConv2dLayer att1, att2, att3;
  BatchNormLayer att_bn1, att_bn2;
  // restoration head
  Conv2dLayer rest_in;
  SepConv2dLayer rest_sep1, rest_sep2, rest_sep3;
  BatchNormLayer rest_bn1, rest_bn2;
  Conv2dLayer rest_out;
  // classification head
  SepConv2dLayer cls_sep1, cls_sep2, cls_sep3;
  DenseLayer cls_d1, cls_d2;

  bool with_attention = true;
  int c_feat = 4;  // channels entering the heads: 2*(1+1) with pilots, 2 blind
  int c_dec = 0;   // channels after the 8x8 reshape

  static DecoderParams make(ParamStore& ps, const LinkConfig& cfg, Rng& rng,
                            bool with_attention = true) {
    DecoderParams d;
    d.with_attention = with_attention;
    d.c_feat = with_attention ? 4 : 2;
    const int total = cfg.n_sf() * cfg.n_st() * d.c_feat;
    const int spatial = kEncoderSpatial * kEncoderSpatial;
    if (total % spatial != 0)
      throw std::invalid_argument(
          "decoder: N_sf*N_st*" + std::to_string(d.c_feat) + " = " + std::to_string(total) +
          " must be divisible by " + std::to_string(spatial) + " for the 8x8 head reshape");
    d.c_dec = total / spatial;

    if (with_attention) {
      d.att1 = SepConv2dLayer(ps, "decoder.att1", 3, 3, 4, 64, 1, rng);
      d.att_bn1 = BatchNormLayer(ps, "decoder.att_bn1", 64);
      d.att2 = SepConv2dLayer(ps, "decoder.att2", 3, 3, 64, 64, 1, rng);
      d.att_bn2 = BatchNormLayer(ps, "decoder.att_bn2", 64);
      // zero-init pointwise: the map starts flat at sigmoid(0) = 0.5
      d.att3 = SepConv2dLayer(ps, "decoder.att3", 3, 3, 64, 2, 1, rng, /*zero_init=*/true);
    }
    d.rest_in = Conv2dLayer(ps, "decoder.rest_in", 1, 1, d.c_dec, 128, 1, rng);
    d.rest_sep1 = SepConv2dLayer(ps, "decoder.rest_sep1", 3, 3, 128, 64, 1, rng);
    d.rest_bn1 = BatchNormLayer(ps, "decoder.rest_bn1", 64);
    d.rest_sep2 = SepConv2dLayer(ps, "decoder.rest_sep2", 3, 3, 64, 32, 1, rng);
    d.rest_bn2 = BatchNormLayer(ps, "decoder.rest_bn2", 32);
    d.rest_sep3 = SepConv2dLayer(ps, "decoder.rest_sep3", 3, 3, 32, 16, 1, rng);
    d.rest_out = Conv2dLayer(ps, "decoder.rest_out", 3, 3, 16, kImageChannels, 1, rng);

    d.cls_sep1 = SepConv2dLayer(ps, "decoder.cls_sep1", 3, 3, d.c_dec, 16, 1, rng);
    d.cls_sep2 = SepConv2dLayer(ps, "decoder.cls_sep2", 3, 3, 16, 32, 1, rng);
    d.cls_sep3 = SepConv2dLayer(ps, "decoder.cls_sep3", 3, 3, 32, 64, 1, rng);
    d.cls_d1 = DenseLayer(ps, "decoder.cls_d1", 64, 128, rng);
    d.cls_d2 = DenseLayer(ps, "decoder.cls_d2", 128, kNumClasses, rng);
    return d;
  }
};

// Pilot-guided attention over one user stream: the received grid and the
// clean reference are stacked channel-wise, a sigmoid map reweights the
// received symbols element-wise, and the reference is concatenated back in
// before the heads.
inline ad::Var pilot_guided_attention(PassContext& ctx, const DecoderParams& d, ad::Var y,
                                      ad::Var y_p) {
  ad::Tape& t = ctx.tape;
  ad::check(t.shape(y) == t.shape(y_p), "pilot_guided_attention: Y and Y_p shapes differ");
  ad::Var fused = ad::concat({y, y_p}, 3);  // [B,F,T,4]
  ad::Var a = ad::relu(d.att_bn1(ctx, d.att1(ctx, fused)));
  a = ad::relu(d.att_bn2(ctx, d.att2(ctx, a)));
  ad::Var map = ad::sigmoid(d.att3(ctx, a));  // [B,F,T,2], in (0,1)
  ad::Var weighted = ad::mul(y, map);
  return ad::concat({weighted, y_p}, 3);  // [B,F,T,4]
}

struct DecoderOutput {
  ad::Var image;   // [B,32,32,3] in (0,1)
  ad::Var logits;  // [B,10]
};

// y_ca [B, N_sf, N_st, c_feat] -> restored image and class logits.
inline DecoderOutput decoder_heads(PassContext& ctx, const DecoderParams& d, ad::Var y_ca) {
  ad::Tape& t = ctx.tape;
  const ad::Shape s = t.shape(y_ca);
  ad::check(s.size() == 4 && s[3] == d.c_feat,
            "decoder_heads: want [B,N_sf,N_st," + std::to_string(d.c_feat) + "], got " +
                ad::shape_str(s));
  const int B = s[0];
  ad::Var z = ad::reshape(y_ca, {B, kEncoderSpatial, kEncoderSpatial, d.c_dec});

  ad::Var r = ad::relu(d.rest_in(ctx, z));
  r = ad::upsample_nearest(r, 2);
  r = ad::relu(d.rest_bn1(ctx, d.rest_sep1(ctx, r)));
  r = ad::upsample_nearest(r, 2);
  r = ad::relu(d.rest_bn2(ctx, d.rest_sep2(ctx, r)));
  r = d.rest_sep3(ctx, r);
  ad::Var image = ad::sigmoid(d.rest_out(ctx, r));

  ad::Var c = ad::pool(ad::relu(d.cls_sep1(ctx, z)), ad::PoolKind::max, 2, 2);
  c = ad::pool(ad::relu(d.cls_sep2(ctx, c)), ad::PoolKind::max, 2, 2);
  c = ad::pool(ad::relu(d.cls_sep3(ctx, c)), ad::PoolKind::max, 2, 2);  // [B,1,1,64]
  c = ad::reshape(c, {B, 64});
  ad::Var logits = d.cls_d2(ctx, ad::relu(d.cls_d1(ctx, c)));
  return {image, logits};
}

// L = MSE(image) + lambda * CE(classes), batch-averaged.
inline ad::Var composite_loss(ad::Var restored, ad::Var target_images, ad::Var logits,
                              const std::vector<int>& labels, float lambda_ce) {
  ad::check(lambda_ce >= 0.0f, "composite_loss: lambda must be >= 0");
  ad::Var l = ad::mse(restored, target_images);
  if (lambda_ce > 0.0f)
    l = ad::add(l, ad::scale(ad::softmax_cross_entropy(logits, labels), lambda_ce));
  return l;
}

}  // namespace semcom

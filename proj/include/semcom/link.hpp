#pragma once

#include <cstdint>
#include <vector>

#include "semcom/models.hpp"
#include "semcom/precoder.hpp"

namespace semcom {

// Everything trainable for one variant, in a single named store.
struct SemanticModel {
  LinkConfig cfg;
  TrainVariant variant = TrainVariant::full;
  ParamStore store;
  EncoderParams encoder;
  DecoderParams decoder;
  PrecoderParams precoder;

  bool with_gates() const {
    return variant == TrainVariant::full || variant == TrainVariant::no_pilot;
  }
  bool with_attention() const { return variant == TrainVariant::full; }
  bool with_neural_precoder() const {
    return variant == TrainVariant::full || variant == TrainVariant::no_pilot;
  }
  PrecodeMode precode_mode() const {
    if (with_neural_precoder()) return PrecodeMode::neural;
    return variant == TrainVariant::rzf ? PrecodeMode::rzf_fixed : PrecodeMode::zf;
  }

  static SemanticModel make(const LinkConfig& cfg, TrainVariant variant, std::uint64_t seed) {
    cfg.validate();
    SemanticModel m;
    m.cfg = cfg;
    m.variant = variant;
    Rng rng(Rng::split_mix(seed ^ 0x696e6974ULL));
    m.encoder = EncoderParams::make(m.store, cfg, rng, m.with_gates());
    m.decoder = DecoderParams::make(m.store, cfg, rng, m.with_attention());
    if (m.with_neural_precoder()) m.precoder = PrecoderParams::make(m.store, cfg, rng);
    return m;
  }
};

// One training/eval batch: B images grouped into B/N_k user groups, one
// channel draw and one noise level per group.
struct LinkBatch {
  std::vector<float> images;            // [B, 32, 32, 3], range [0,1]
  std::vector<int> labels;              // [B]
  std::vector<ChannelTensor> channels;  // [G]
  std::vector<double> sigma2;           // [G]
};

struct LinkOutputs {
  ad::Var features;   // [G, N_sf, N_st, N_k, 2]
  ad::Var transmit;   // [G, N_f, N_t, N_m, 2], power-normalized
  ad::Var received;   // [B, N_f, N_t, 2] per user stream
  ad::Var image;      // [B, 32, 32, 3]
  ad::Var logits;     // [B, 10]
  ad::Var loss;       // scalar
};

namespace detail_link {

inline std::vector<float> tile_pilot_reference(const LinkConfig& cfg, const PilotSpec& pilot,
                                               int groups) {
  const Grid yp = pilot_reference(cfg, pilot);
  const int F = cfg.n_f, T = cfg.n_t, K = cfg.n_k;
  std::vector<float> out(static_cast<std::size_t>(groups) * K * F * T * 2);
  std::size_t o = 0;
  for (int g = 0; g < groups; ++g)
    for (int k = 0; k < K; ++k)
      for (int f = 0; f < F; ++f)
        for (int t = 0; t < T; ++t) {
          out[o++] = yp.at(f, t, k).real();
          out[o++] = yp.at(f, t, k).imag();
        }
  return out;
}

inline std::vector<float> draw_noise(const LinkBatch& batch, const LinkConfig& cfg,
                                     std::uint64_t seed) {
  const int G = static_cast<int>(batch.channels.size());
  const int F = cfg.n_f, T = cfg.n_t, K = cfg.n_k;
  std::vector<float> noise(static_cast<std::size_t>(G) * F * T * K * 2);
  Rng rng(Rng::split_mix(seed ^ 0x6177676eULL));
  std::size_t o = 0;
  for (int g = 0; g < G; ++g) {
    const double s2 = batch.sigma2[static_cast<std::size_t>(g)];
    for (int i = 0; i < F * T * K; ++i) {
      const auto n = rng.cgaussian(s2);
      noise[o++] = static_cast<float>(n.real());
      noise[o++] = static_cast<float>(n.imag());
    }
  }
  return noise;
}

}  // namespace detail_link

// Full differentiable chain: encode -> grid map -> precode -> channel ->
// per-user decode -> composite loss.
inline LinkOutputs link_forward(PassContext& ctx, const SemanticModel& model,
                                const LinkBatch& batch, std::uint64_t noise_seed,
                                float lambda_ce) {
  ad::Tape& t = ctx.tape;
  const LinkConfig& cfg = model.cfg;
  const int K = cfg.n_k;
  const int G = static_cast<int>(batch.channels.size());
  const int B = G * K;
  ad::check(batch.images.size() ==
                static_cast<std::size_t>(B) * kImageSize * kImageSize * kImageChannels,
            "link_forward: image count must be groups * n_k");
  ad::check(batch.labels.size() == static_cast<std::size_t>(B), "link_forward: label count");
  ad::check(batch.sigma2.size() == static_cast<std::size_t>(G), "link_forward: sigma2 count");

  ad::Var images = t.constant({B, kImageSize, kImageSize, kImageChannels}, batch.images);

  // adaptation inputs, tiled per group member
  std::vector<float> csi(static_cast<std::size_t>(B) * cfg.n_f);
  std::vector<float> s2n(static_cast<std::size_t>(B));
  for (int g = 0; g < G; ++g) {
    const auto mag = csi_magnitude(batch.channels[static_cast<std::size_t>(g)]);
    const float nn = normalize_noise_var(batch.sigma2[static_cast<std::size_t>(g)], cfg);
    for (int k = 0; k < K; ++k) {
      std::copy(mag.begin(), mag.end(),
                csi.begin() + (static_cast<std::size_t>(g) * K + k) * cfg.n_f);
      s2n[static_cast<std::size_t>(g) * K + k] = nn;
    }
  }
  ad::Var csi_mag = t.constant({B, cfg.n_f}, std::move(csi));
  ad::Var sigma2_norm = t.constant({B, 1}, std::move(s2n));

  LinkOutputs out;
  ad::Var feats = encoder_forward(ctx, model.encoder, images, csi_mag, sigma2_norm, cfg);
  out.features = ad::batch_to_users(feats, K);  // [G, F, ST, K, 2]

  const PilotSpec pilot = cfg.pilot();
  ad::Var s_ofdm = gridops::map_to_grid(out.features, cfg, pilot);

  ad::Var H = channels_to_var(t, batch.channels);
  std::vector<float> s2f(batch.sigma2.begin(), batch.sigma2.end());
  out.transmit = neural_residual_precode(ctx, s_ofdm, H, s2f, model.precoder, cfg,
                                         model.precode_mode());

  ad::Var x_col = ad::reshape(out.transmit, {G, cfg.n_f, cfg.n_t, cfg.n_m, 1, 2});
  ad::Var y = ad::reshape(cops::cmatmul(H, x_col), {G, cfg.n_f, cfg.n_t, K, 2});
  ad::Var noise = t.constant({G, cfg.n_f, cfg.n_t, K, 2},
                             detail_link::draw_noise(batch, cfg, noise_seed));
  y = ad::add(y, noise);
  out.received = ad::users_to_batch(y);  // [B, F, T, 2]

  ad::Var y_ca;
  if (model.with_attention()) {
    ad::Var yp = t.constant({B, cfg.n_f, cfg.n_t, 2},
                            detail_link::tile_pilot_reference(cfg, pilot, G));
    ad::Var fused = pilot_guided_attention(ctx, model.decoder, out.received, yp);
    y_ca = gridops::remove_pilots(fused, cfg, pilot);  // [B, F, ST, 4]
  } else {
    y_ca = gridops::remove_pilots(out.received, cfg, pilot);  // [B, F, ST, 2]
  }

  const DecoderOutput heads = decoder_heads(ctx, model.decoder, y_ca);
  out.image = heads.image;
  out.logits = heads.logits;
  out.loss = composite_loss(heads.image, images, heads.logits, batch.labels, lambda_ce);
  return out;
}

}  // namespace semcom

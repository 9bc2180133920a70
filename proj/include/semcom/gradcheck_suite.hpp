#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "semcom/gradcheck.hpp"
#include "semcom/link.hpp"

namespace semcom {

struct GradCheckCase {
  std::string name;
  double max_err = 0.0;
  int coords_checked = 0;
  bool pass = false;
};

namespace detail_gradsuite {

inline std::vector<float> rvec(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
  return v;
}

inline ad::Var weighted_sum(ad::Tape& t, ad::Var y, std::uint64_t seed) {
  Rng rng(seed);
  return ad::sum_all(ad::mul(y, t.constant(t.shape(y), rvec(ad::numel(t.shape(y)), rng))));
}

}  // namespace detail_gradsuite

// Central-difference verification of every layer type plus the composed
// encoder -> precoder -> channel -> decoder loss, at three fixed seeds.
inline std::vector<GradCheckCase> run_gradcheck_suite(double tol = 1e-3) {
  using detail_gradsuite::rvec;
  using detail_gradsuite::weighted_sum;
  std::vector<GradCheckCase> out;

  struct LayerCase {
    const char* name;
    ad::Shape shape;
    std::function<ad::Var(ad::Tape&, ad::Var, std::uint64_t)> apply;
  };
  const std::vector<LayerCase> layers{
      {"conv2d", {1, 5, 5, 2},
       [](ad::Tape& t, ad::Var x, std::uint64_t s) {
         Rng r(s);
         return ad::conv2d(x, t.constant({3, 3, 2, 3}, rvec(54, r)),
                           t.constant({3}, rvec(3, r)), 1, ad::Pad::same);
       }},
      {"depthwise_separable", {1, 6, 6, 2},
       [](ad::Tape& t, ad::Var x, std::uint64_t s) {
         Rng r(s);
         return ad::depthwise_separable_conv2d(x, t.constant({3, 3, 2}, rvec(18, r)),
                                               t.constant({1, 1, 2, 4}, rvec(8, r)),
                                               t.constant({4}, rvec(4, r)), 2, ad::Pad::same);
       }},
      {"conv1d", {2, 8, 2},
       [](ad::Tape& t, ad::Var x, std::uint64_t s) {
         Rng r(s);
         return ad::conv1d(x, t.constant({5, 2, 3}, rvec(30, r)), t.constant({3}, rvec(3, r)),
                           2, ad::Pad::same);
       }},
      {"dense", {3, 6},
       [](ad::Tape& t, ad::Var x, std::uint64_t s) {
         Rng r(s);
         return ad::dense(x, t.constant({6, 4}, rvec(24, r)), t.constant({4}, rvec(4, r)));
       }},
      {"batch_norm", {8, 3},
       [](ad::Tape& t, ad::Var x, std::uint64_t s) {
         Rng r(s);
         auto rm = std::make_shared<std::vector<float>>(3, 0.0f);
         auto rv = std::make_shared<std::vector<float>>(3, 1.0f);
         return ad::batch_norm(x, t.constant({3}, rvec(3, r, 0.5, 1.5)),
                               t.constant({3}, rvec(3, r)), rm.get(), rv.get(), true, false);
       }},
      {"activations", {4, 5},
       [](ad::Tape&, ad::Var x, std::uint64_t) {
         return ad::tanh_act(ad::add(ad::sigmoid(x), ad::relu(x)));
       }},
      {"pool_max", {1, 6, 6, 2},
       [](ad::Tape&, ad::Var x, std::uint64_t) { return ad::pool(x, ad::PoolKind::max, 2, 2); }},
      {"pool_avg_global", {2, 4, 4, 3},
       [](ad::Tape&, ad::Var x, std::uint64_t) {
         return ad::pool(x, ad::PoolKind::global_avg);
       }},
      {"upsample_nearest", {1, 3, 3, 2},
       [](ad::Tape&, ad::Var x, std::uint64_t) { return ad::upsample_nearest(x, 2); }},
      {"softmax_cross_entropy", {4, 5},
       [](ad::Tape&, ad::Var x, std::uint64_t) {
         return ad::softmax_cross_entropy(x, {0, 2, 4, 1});
       }},
      {"complex_inverse", {2, 3, 3, 2},
       [](ad::Tape& t, ad::Var x, std::uint64_t s) {
         Rng r(s);
         // keep slices well-conditioned: A = X + 4I on the diagonal real part
         ad::Var shifted = cops::add_scalar_diag(x, t.scalar(4.0f), 1.0f);
         (void)r;
         return cops::cinv(shifted);
       }},
      {"complex_matmul_hermitian", {2, 2, 3, 2},
       [](ad::Tape& t, ad::Var x, std::uint64_t s) {
         Rng r(s);
         ad::Var b = t.constant({2, 3, 2, 2}, rvec(24, r));
         return cops::cmatmul(cops::chermitian(cops::cmatmul(x, b)), x);
       }},
      {"power_normalize", {2, 3, 2, 2, 2},
       [](ad::Tape&, ad::Var x, std::uint64_t) { return gridops::power_normalize(x, 1.0f); }},
  };

  for (const auto& lc : layers) {
    GradCheckCase gc;
    gc.name = lc.name;
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
      Rng r(seed * 977 + 3);
      auto point = rvec(ad::numel(lc.shape), r);
      if (std::string(lc.name) == "activations" || std::string(lc.name) == "pool_max")
        for (auto& v : point) v += v >= 0.0f ? 0.05f : -0.05f;
      auto build = [&](ad::Tape& t, ad::Var x) {
        ad::Var y = lc.apply(t, x, seed);
        if (ad::numel(t.shape(y)) == 1) return y;
        return weighted_sum(t, y, seed + 99);
      };
      const auto rep = finite_diff_check(build, lc.shape, point, 0.02, 20, seed);
      gc.max_err = std::max(gc.max_err, rep.max_err);
      gc.coords_checked += rep.coords_checked;
    }
    gc.pass = gc.max_err < tol && gc.coords_checked > 0;
    out.push_back(gc);
  }

  // composed end-to-end loss on a small but complete configuration
  {
    LinkConfig cfg;
    cfg.n_f = 16;
    cfg.n_t = 4;
    cfg.n_k = 2;
    cfg.n_m = 2;
    cfg.pilot_symbols = {1, 2};
    GradCheckCase gc;
    gc.name = "composed_encoder_precoder_channel_decoder";
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
      SemanticModel model = SemanticModel::make(cfg, TrainVariant::full, seed);
      Rng pr(seed + 100);
      for (auto& v : model.store[model.precoder.conv3.w].value)
        v = static_cast<float>(pr.uniform(-0.05, 0.05));
      for (auto& v : model.store[model.decoder.att3.pw].value)
        v = static_cast<float>(pr.uniform(-0.05, 0.05));

      LinkBatch batch;
      Rng br(seed * 7 + 1);
      const int B = cfg.n_k;
      batch.images = rvec(static_cast<std::size_t>(B) * 32 * 32 * 3, br, 0.0, 1.0);
      for (int i = 0; i < B; ++i) batch.labels.push_back(static_cast<int>(br.below(10)));
      batch.channels.push_back(sample_channel(scenario_profile("UMi"), cfg.n_f, cfg.n_t,
                                              cfg.n_k, cfg.n_m, cfg.subcarrier_spacing_hz,
                                              seed * 131));
      batch.sigma2.push_back(0.3);

      ParamFdTarget target;
      target.loss_value = [&]() {
        ad::Tape t;
        PassContext ctx{t, model.store, true, /*freeze_stats=*/true};
        return static_cast<double>(t.val(link_forward(ctx, model, batch, 5, 0.1f).loss)[0]);
      };
      target.gradients = [&]() {
        ad::Tape t;
        PassContext ctx{t, model.store, true, true};
        const auto o = link_forward(ctx, model, batch, 5, 0.1f);
        t.backward(o.loss);
        std::vector<std::vector<float>> gs(static_cast<std::size_t>(model.store.count()));
        for (int pi = 0; pi < model.store.count(); ++pi)
          gs[static_cast<std::size_t>(pi)] = ctx.grad_of(pi);
        return gs;
      };
      const auto rep = finite_diff_check_params(model.store, target, 0.02, 20, seed,
                                                /*deep composite rounding budget*/ 1024);
      gc.max_err = std::max(gc.max_err, rep.max_err);
      gc.coords_checked += rep.coords_checked;
    }
    gc.pass = gc.max_err < tol && gc.coords_checked > 0;
    out.push_back(gc);
  }
  return out;
}

}  // namespace semcom

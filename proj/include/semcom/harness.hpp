#pragma once

#include <atomic>
#include <cstdint>
#include <cstring>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "semcom/adam.hpp"
#include "semcom/dataset.hpp"
#include "semcom/link.hpp"
#include "semcom/metrics.hpp"

namespace semcom {

// ---------------------------------------------------------------------------
// Channel factory: scenario presets plus the adversarial generator used by
// the precoder-collapse experiment.
// ---------------------------------------------------------------------------

inline constexpr const char* kDeepFadeScenario = "deep_fade_two_ray";

inline ChannelTensor draw_channel(const std::string& scenario, const LinkConfig& cfg,
                                  std::uint64_t seed) {
  if (scenario == kDeepFadeScenario)
    return sample_deep_fade_two_ray(cfg.n_f, cfg.n_t, cfg.n_k, cfg.n_m, seed);
  return sample_channel(scenario_profile(scenario), cfg.n_f, cfg.n_t, cfg.n_k, cfg.n_m,
                        cfg.subcarrier_spacing_hz, seed);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct EpochStat {
  int epoch = 0;
  double mean_loss = 0.0;
  double mean_grad_norm = 0.0;
};

struct AbortRecord {
  int epoch = 0;
  int step = 0;
  double grad_norm = 0.0;
  std::string reason;
};

struct TrainResult {
  std::vector<EpochStat> trace;
  std::optional<AbortRecord> abort;
  double max_grad_norm = 0.0;
  long long steps_run = 0;
};

namespace detail_harness {

inline LinkBatch assemble_batch(const ImageBatchSet& data, const std::vector<int>& order,
                                int start, int batch, const TrainConfig& tc,
                                const LinkConfig& cfg, Rng& rng) {
  const int K = cfg.n_k;
  const int G = batch / K;
  LinkBatch lb;
  const std::size_t px = static_cast<std::size_t>(kImageSize) * kImageSize * kImageChannels;
  lb.images.resize(static_cast<std::size_t>(batch) * px);
  lb.labels.resize(static_cast<std::size_t>(batch));
  for (int i = 0; i < batch; ++i) {
    const int src = order[static_cast<std::size_t>(start + i)];
    std::copy_n(data.images.begin() + static_cast<std::ptrdiff_t>(src * px), px,
                lb.images.begin() + static_cast<std::ptrdiff_t>(i) * static_cast<std::ptrdiff_t>(px));
    lb.labels[static_cast<std::size_t>(i)] = data.labels[static_cast<std::size_t>(src)];
  }
  for (int g = 0; g < G; ++g) {
    const std::string& scen =
        tc.scenarios[static_cast<std::size_t>(rng.below(tc.scenarios.size()))];
    const double snr = rng.uniform(tc.snr_min_db, tc.snr_max_db);
    lb.channels.push_back(draw_channel(scen, cfg, rng.raw()));
    lb.sigma2.push_back(snr_db_to_noise_var(snr, cfg));
  }
  return lb;
}

}  // namespace detail_harness

// End-to-end training. A non-finite loss or gradient aborts with a
// diagnostic record instead of stepping on poisoned values.
inline TrainResult train(SemanticModel& model, const TrainConfig& tc,
                         const ImageBatchSet& data) {
  tc.validate();
  model.cfg.validate();
  const int B = tc.batch;
  if (B % model.cfg.n_k != 0)
    throw std::invalid_argument("train: batch must be divisible by the user count");
  if (data.count() < B) throw std::invalid_argument("train: dataset smaller than one batch");
  const int steps_per_epoch = data.count() / B;

  AdamState opt = AdamState::init(model.store, tc.lr);
  TrainResult res;
  std::vector<int> order(static_cast<std::size_t>(data.count()));
  for (int i = 0; i < data.count(); ++i) order[static_cast<std::size_t>(i)] = i;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    Rng erng(Rng::split_mix(tc.seed * 0x9e37ULL + static_cast<std::uint64_t>(epoch)));
    for (int i = data.count() - 1; i > 0; --i)
      std::swap(order[static_cast<std::size_t>(i)],
                order[static_cast<std::size_t>(erng.below(static_cast<std::uint64_t>(i + 1)))]);

    double loss_acc = 0.0, gn_acc = 0.0;
    int counted = 0;
    for (int step = 0; step < steps_per_epoch; ++step) {
      const LinkBatch batch = detail_harness::assemble_batch(data, order, step * B, B, tc,
                                                             model.cfg, erng);
      ad::Tape tape;
      PassContext ctx{tape, model.store, /*training=*/true};
      const LinkOutputs out = link_forward(ctx, model, batch, erng.raw(), tc.lambda_ce);
      const double loss = static_cast<double>(tape.val(out.loss)[0]);
      if (!std::isfinite(loss)) {
        res.abort = AbortRecord{epoch, step, res.max_grad_norm, "non-finite loss"};
        return res;
      }
      tape.backward(out.loss);
      std::vector<std::vector<float>> grads(static_cast<std::size_t>(model.store.count()));
      for (int pi = 0; pi < model.store.count(); ++pi)
        grads[static_cast<std::size_t>(pi)] = ctx.grad_of(pi);
      const double gn = grad_l2_norm(grads);
      res.max_grad_norm = std::max(res.max_grad_norm, gn);
      if (!std::isfinite(gn)) {
        res.abort = AbortRecord{epoch, step, gn, "non-finite gradient"};
        return res;
      }
      try {
        adam_step(model.store, grads, opt);
      } catch (const NonFiniteGradientError& e) {
        res.abort = AbortRecord{epoch, step, gn, e.what()};
        return res;
      }
      loss_acc += loss;
      gn_acc += gn;
      ++counted;
      ++res.steps_run;
    }
    res.trace.push_back(EpochStat{epoch, loss_acc / std::max(counted, 1),
                                  gn_acc / std::max(counted, 1)});
  }
  return res;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

inline int worker_thread_cap() {
  if (const char* env = std::getenv("SEMCOM_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(i) for i in [0, n) on up to worker_thread_cap() threads. Outputs
// must be written into pre-sized slots so results are order-deterministic.
template <typename Fn>
inline void parallel_cells(int n, Fn&& fn) {
  const int threads = std::min(worker_thread_cap(), n);
  if (threads <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      while (true) {
        const int i = next.fetch_add(1);
        if (i >= n) return;
        fn(i);
      }
    });
  for (auto& th : pool) th.join();
}

// Deterministic sweep over (scenario, snr) cells; PSNR and accuracy averaged
// over images and users, batch-norm in inference mode.
inline std::vector<EvalRecord> eval_sweep(SemanticModel& model, const EvalConfig& ec,
                                          const ImageBatchSet& eval_data) {
  model.cfg.validate();
  const int K = model.cfg.n_k;
  const int n_images = std::min(ec.n_images / K * K, eval_data.count() / K * K);
  if (n_images < K) throw std::invalid_argument("eval_sweep: not enough images");
  const int G = n_images / K;

  struct Cell {
    std::string scenario;
    float snr = 0.0f;
  };
  std::vector<Cell> cells;
  for (const auto& s : ec.scenarios)
    for (float snr : ec.snr_list_db) cells.push_back(Cell{s, snr});

  std::vector<EvalRecord> records(cells.size());
  parallel_cells(static_cast<int>(cells.size()), [&](int ci) {
    const Cell& cell = cells[static_cast<std::size_t>(ci)];
    Rng rng(Rng::split_mix(ec.seed ^ (Rng::split_mix(static_cast<std::uint64_t>(ci) + 1) |
                                      1ULL)));
    const std::size_t px = static_cast<std::size_t>(kImageSize) * kImageSize * kImageChannels;
    double psnr_acc = 0.0;
    int psnr_n = 0;
    std::vector<float> all_logits;
    std::vector<int> all_labels;

    // батched over groups of users, a few groups per tape
    const int groups_per_pass = std::max(1, 16 / K);
    for (int g0 = 0; g0 < G; g0 += groups_per_pass) {
      const int gs = std::min(groups_per_pass, G - g0);
      LinkBatch batch;
      batch.images.assign(eval_data.images.begin() + static_cast<std::ptrdiff_t>(g0 * K * px),
                          eval_data.images.begin() +
                              static_cast<std::ptrdiff_t>((g0 + gs) * K * px));
      batch.labels.assign(eval_data.labels.begin() + g0 * K,
                          eval_data.labels.begin() + (g0 + gs) * K);
      for (int g = 0; g < gs; ++g) {
        batch.channels.push_back(draw_channel(cell.scenario, model.cfg, rng.raw()));
        batch.sigma2.push_back(snr_db_to_noise_var(cell.snr, model.cfg));
      }
      ad::Tape tape;
      PassContext ctx{tape, model.store, /*training=*/false};
      const LinkOutputs out = link_forward(ctx, model, batch, rng.raw(), 0.0f);
      const auto& img = tape.val(out.image);
      for (int b = 0; b < gs * K; ++b) {
        const std::vector<float> got(img.begin() + static_cast<std::ptrdiff_t>(b * px),
                                     img.begin() + static_cast<std::ptrdiff_t>((b + 1) * px));
        const std::vector<float> want(batch.images.begin() + static_cast<std::ptrdiff_t>(b * px),
                                      batch.images.begin() +
                                          static_cast<std::ptrdiff_t>((b + 1) * px));
        psnr_acc += psnr_db(got, want);
        ++psnr_n;
      }
      const auto& lg = tape.val(out.logits);
      all_logits.insert(all_logits.end(), lg.begin(), lg.end());
      all_labels.insert(all_labels.end(), batch.labels.begin(), batch.labels.end());
    }

    EvalRecord rec;
    rec.variant = to_string(model.variant);
    rec.scenario = cell.scenario;
    rec.snr_db = cell.snr;
    rec.psnr_db = static_cast<float>(psnr_acc / std::max(psnr_n, 1));
    rec.accuracy = accuracy(all_logits, all_labels, kNumClasses);
    rec.bler = 0.0f;
    rec.seed = ec.seed;
    rec.n_images = n_images;
    records[static_cast<std::size_t>(ci)] = rec;
  });
  return records;
}

// ---------------------------------------------------------------------------
// CSV output (schemas shared with the CLI)
// ---------------------------------------------------------------------------

inline void write_eval_csv(const std::vector<EvalRecord>& records, std::ostream& os) {
  os << "variant,scenario,snr_db,psnr_db,accuracy,bler,seed,n_images\n";
  for (const auto& r : records) {
    std::ostringstream line;
    line << r.variant << "," << r.scenario << "," << r.snr_db << "," << r.psnr_db << ","
         << r.accuracy << "," << r.bler << "," << r.seed << "," << r.n_images << "\n";
    os << line.str();
  }
}

inline void write_trace_csv(const TrainResult& res, std::ostream& os) {
  os << "epoch,mean_loss,grad_norm\n";
  for (const auto& e : res.trace)
    os << e.epoch << "," << e.mean_loss << "," << e.mean_grad_norm << "\n";
  if (res.abort)
    os << "# aborted at epoch " << res.abort->epoch << " step " << res.abort->step
       << " grad_norm " << res.abort->grad_norm << " (" << res.abort->reason << ")\n";
}

// ---------------------------------------------------------------------------
// Checkpoints: "SEMCOMCKPT v1\n", little-endian u64 manifest length, JSON
// manifest (config, variant, tensor names/shapes/offsets), then contiguous
// little-endian float32 blobs.
// ---------------------------------------------------------------------------

inline constexpr const char* kCheckpointMagic = "SEMCOMCKPT v1\n";

inline void checkpoint_save(const SemanticModel& model, const std::string& path) {
  nlohmann::json manifest;
  manifest["format_version"] = 1;
  manifest["link"] = to_json(model.cfg);
  manifest["variant"] = to_string(model.variant);
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (int pi = 0; pi < model.store.count(); ++pi) {
    const Param& p = model.store[pi];
    tensors.push_back({{"name", p.name},
                       {"shape", p.shape},
                       {"offset", offset},
                       {"numel", p.value.size()},
                       {"trainable", p.trainable}});
    offset += p.value.size() * sizeof(float);
  }
  manifest["tensors"] = std::move(tensors);
  const std::string mjson = manifest.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot write " + path);
  os.write(kCheckpointMagic, static_cast<std::streamsize>(std::strlen(kCheckpointMagic)));
  const std::uint64_t mlen = mjson.size();
  os.write(reinterpret_cast<const char*>(&mlen), 8);
  os.write(mjson.data(), static_cast<std::streamsize>(mjson.size()));
  for (int pi = 0; pi < model.store.count(); ++pi) {
    const Param& p = model.store[pi];
    os.write(reinterpret_cast<const char*>(p.value.data()),
             static_cast<std::streamsize>(p.value.size() * sizeof(float)));
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

inline SemanticModel checkpoint_load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  std::string magic(std::strlen(kCheckpointMagic), '\0');
  is.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (!is || magic != kCheckpointMagic)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  std::uint64_t mlen = 0;
  is.read(reinterpret_cast<char*>(&mlen), 8);
  if (!is || mlen == 0 || mlen > (1ULL << 30))
    throw std::runtime_error("checkpoint: bad manifest length in " + path);
  std::string mjson(mlen, '\0');
  is.read(mjson.data(), static_cast<std::streamsize>(mlen));
  if (!is) throw std::runtime_error("checkpoint: truncated manifest in " + path);
  nlohmann::json manifest = nlohmann::json::parse(mjson, nullptr, false);
  if (manifest.is_discarded()) throw std::runtime_error("checkpoint: manifest is not JSON");
  if (manifest.value("format_version", 0) != 1)
    throw std::runtime_error("checkpoint: unsupported format version");

  LinkConfig cfg;
  from_json_into(manifest.at("link"), cfg);
  SemanticModel model =
      SemanticModel::make(cfg, parse_variant(manifest.at("variant").get<std::string>()), 0);

  for (const auto& tj : manifest.at("tensors")) {
    const std::string name = tj.at("name");
    const int pi = model.store.find(name);
    if (pi < 0) throw std::runtime_error("checkpoint: unknown tensor " + name);
    Param& p = model.store[pi];
    const auto shape = tj.at("shape").get<std::vector<int>>();
    if (shape != p.shape)
      throw std::runtime_error("checkpoint: shape mismatch for " + name + ": file " +
                               ad::shape_str(shape) + " vs model " + ad::shape_str(p.shape));
    const std::size_t numel = tj.at("numel");
    if (numel != p.value.size())
      throw std::runtime_error("checkpoint: numel mismatch for " + name);
    is.seekg(static_cast<std::streamoff>(std::strlen(kCheckpointMagic)) + 8 +
             static_cast<std::streamoff>(mlen) +
             static_cast<std::streamoff>(tj.at("offset").get<std::size_t>()));
    is.read(reinterpret_cast<char*>(p.value.data()),
            static_cast<std::streamsize>(numel * sizeof(float)));
    if (!is)
      throw std::runtime_error("checkpoint: blob truncated while reading " + name +
                               " (manifest/blob length mismatch)");
  }
  return model;
}

// ---------------------------------------------------------------------------
// Precoder-collapse experiment: bare zero forcing inside the loop on
// deep-fade two-ray channels versus the regularized neural path.
// ---------------------------------------------------------------------------

struct InstabilitySeedRecord {
  std::string variant;
  std::uint64_t seed = 0;
  bool collapsed = false;
  double max_grad_norm = 0.0;
  double final_loss = 0.0;
  int abort_epoch = -1;
  int abort_step = -1;
};

struct InstabilityReport {
  std::vector<InstabilitySeedRecord> records;
  int zf_collapsed = 0;
  int neural_completed_finite = 0;
  int seeds = 0;
};

inline InstabilityReport run_instability_experiment(const LinkConfig& cfg, int n_seeds,
                                                    int epochs, int n_images, int batch) {
  InstabilityReport report;
  report.seeds = n_seeds;
  for (TrainVariant variant : {TrainVariant::zf_in_loop, TrainVariant::full}) {
    for (int s = 0; s < n_seeds; ++s) {
      const std::uint64_t seed = 100 + static_cast<std::uint64_t>(s);
      TrainConfig tc;
      tc.batch = batch;
      tc.epochs = epochs;
      tc.seed = seed;
      tc.scenarios = {kDeepFadeScenario};
      tc.variant = variant;
      tc.dataset.kind = "synth";
      tc.dataset.n = n_images;
      SemanticModel model = SemanticModel::make(cfg, variant, seed);
      const ImageBatchSet data = synth_dataset(seed * 31 + 7, n_images);
      const TrainResult res = train(model, tc, data);

      InstabilitySeedRecord rec;
      rec.variant = to_string(variant);
      rec.seed = seed;
      rec.max_grad_norm = res.max_grad_norm;
      rec.final_loss = res.trace.empty() ? std::nan("") : res.trace.back().mean_loss;
      // collapse: aborted on non-finite values, or gradients past any
      // reasonable scale
      rec.collapsed = res.abort.has_value() || res.max_grad_norm > 1e6;
      if (res.abort) {
        rec.abort_epoch = res.abort->epoch;
        rec.abort_step = res.abort->step;
      }
      if (variant == TrainVariant::zf_in_loop && rec.collapsed) ++report.zf_collapsed;
      if (variant == TrainVariant::full && !res.abort.has_value() &&
          std::isfinite(rec.final_loss))
        ++report.neural_completed_finite;
      report.records.push_back(rec);
    }
  }
  return report;
}

}  // namespace semcom

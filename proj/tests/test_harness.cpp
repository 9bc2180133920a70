#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "semcom/harness.hpp"

using namespace semcom;

namespace {

LinkConfig tiny_cfg() {
  LinkConfig cfg;
  cfg.n_f = 16;
  cfg.n_t = 4;
  cfg.n_k = 2;
  cfg.n_m = 2;
  cfg.pilot_symbols = {1, 2};
  return cfg;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("semcom_test_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_cifar_file(const std::string& path, int records, std::uint8_t label0 = 7) {
  std::ofstream os(path, std::ios::binary);
  for (int r = 0; r < records; ++r) {
    std::vector<std::uint8_t> rec(kCifarRecordBytes, 0);
    rec[0] = static_cast<std::uint8_t>((label0 + r) % 10);
    rec[1] = 255;                         // red plane, pixel (0,0)
    rec[1 + 1024] = 128;                  // green plane, pixel (0,0)
    rec[1 + 2048 + 33] = 64;              // blue plane, pixel (1,1)
    os.write(reinterpret_cast<const char*>(rec.data()), kCifarRecordBytes);
  }
}

}  // namespace

TEST_CASE("cifar loader") {
  TempDir tmp;
  SECTION("parses the 3073-byte record layout") {
    write_cifar_file(tmp.file("small.bin"), 3);
    const auto set = load_cifar10_file(tmp.file("small.bin"));
    REQUIRE(set.count() == 3);
    REQUIRE(set.labels[0] == 7);
    REQUIRE(set.labels[1] == 8);
    // pixel 255 -> 1.0 (red at (0,0)); channel-planar unpacked to HWC
    REQUIRE(set.images[0] == 1.0f);
    REQUIRE(set.images[1] == Catch::Approx(128.0 / 255.0));
    const std::size_t px_11_blue = ((1 * 32 + 1) * 3) + 2;
    REQUIRE(set.images[px_11_blue] == Catch::Approx(64.0 / 255.0));
  }
  SECTION("truncated file errors with expected vs actual sizes") {
    {
      std::ofstream os(tmp.file("trunc.bin"), std::ios::binary);
      std::vector<char> junk(kCifarRecordBytes + 100, 0);
      os.write(junk.data(), static_cast<std::streamsize>(junk.size()));
    }
    try {
      load_cifar10_file(tmp.file("trunc.bin"));
      FAIL("expected error");
    } catch (const std::runtime_error& e) {
      const std::string msg = e.what();
      REQUIRE(msg.find("3173") != std::string::npos);   // actual byte count
      REQUIRE(msg.find("3073") != std::string::npos);   // record size
    }
  }
  SECTION("standard batch files must hold exactly 10000 records") {
    write_cifar_file(tmp.file("data_batch_1.bin"), 5);
    try {
      load_cifar10_train(tmp.path.string());
      FAIL("expected error");
    } catch (const std::runtime_error& e) {
      const std::string msg = e.what();
      REQUIRE(msg.find("10000") != std::string::npos);
      REQUIRE(msg.find("5 records") != std::string::npos);
    }
  }
  SECTION("label byte out of range") {
    {
      std::ofstream os(tmp.file("badlabel.bin"), std::ios::binary);
      std::vector<std::uint8_t> rec(kCifarRecordBytes, 0);
      rec[0] = 11;
      os.write(reinterpret_cast<const char*>(rec.data()), kCifarRecordBytes);
    }
    REQUIRE_THROWS_AS(load_cifar10_file(tmp.file("badlabel.bin")), std::runtime_error);
  }
}

TEST_CASE("synthetic dataset") {
  SECTION("deterministic per seed") {
    const auto a = synth_dataset(5, 40);
    const auto b = synth_dataset(5, 40);
    REQUIRE(a.images == b.images);
    REQUIRE(a.labels == b.labels);
    const auto c = synth_dataset(6, 40);
    REQUIRE(a.images != c.images);
  }
  SECTION("labels balanced within one") {
    const auto set = synth_dataset(9, 95);
    std::vector<int> counts(10, 0);
    for (int l : set.labels) counts[static_cast<std::size_t>(l)]++;
    const auto [mn, mx] = std::minmax_element(counts.begin(), counts.end());
    REQUIRE(*mx - *mn <= 1);
  }
  SECTION("pixels stay in [0, 1]") {
    const auto set = synth_dataset(11, 30);
    for (float v : set.images) {
      REQUIRE(v >= 0.0f);
      REQUIRE(v <= 1.0f);
    }
  }
}

TEST_CASE("metrics") {
  SECTION("psnr") {
    std::vector<float> a(12, 0.5f);
    REQUIRE(psnr_db(a, a) == kPsnrCapDb);
    std::vector<float> zeros(12, 0.0f), ones(12, 1.0f);
    REQUIRE(psnr_db(zeros, ones) == Catch::Approx(0.0));
    std::vector<float> b(a);
    for (auto& v : b) v += 0.1f;  // MSE = 0.01
    REQUIRE(psnr_db(a, b) == Catch::Approx(20.0).margin(1e-3));
  }
  SECTION("accuracy: perfect, chance, and a hand-counted case") {
    std::vector<float> perfect{0, 5, 0, 0, 0, 0, 0, 0, 0, 0,
                               9, 0, 0, 0, 0, 0, 0, 0, 0, 0};
    REQUIRE(accuracy(perfect, {1, 0}, 10) == 1.0f);
    // uniform logits: argmax ties resolve to class 0
    std::vector<float> uniform(10 * 10, 0.25f);
    std::vector<int> balanced;
    for (int i = 0; i < 10; ++i) balanced.push_back(i);
    REQUIRE(accuracy(uniform, balanced, 10) == Catch::Approx(0.1));
    // hand case: 3 samples over 3 classes, 2 hits
    std::vector<float> lg{0.1f, 0.9f, 0.2f,   // -> 1 (hit)
                          0.7f, 0.1f, 0.6f,   // -> 0 (miss, want 2)
                          0.2f, 0.2f, 0.9f};  // -> 2 (hit)
    REQUIRE(accuracy(lg, {1, 2, 2}, 3) == Catch::Approx(2.0 / 3.0));
  }
  SECTION("bler") {
    REQUIRE(bler({true, true, false, true}) == Catch::Approx(0.25));
    REQUIRE(bler({true, true}) == 0.0f);
  }
}

TEST_CASE("checkpoint round trip") {
  TempDir tmp;
  const LinkConfig cfg = tiny_cfg();
  auto model = SemanticModel::make(cfg, TrainVariant::full, 3);
  // dirty the parameters so the round trip is nontrivial
  Rng rng(17);
  for (int pi = 0; pi < model.store.count(); ++pi)
    for (auto& v : model.store[pi].value) v += static_cast<float>(rng.uniform(-0.01, 0.01));

  const std::string path = tmp.file("ckpt.bin");
  checkpoint_save(model, path);

  SECTION("bit-exact restore") {
    const auto back = checkpoint_load(path);
    REQUIRE(back.variant == model.variant);
    REQUIRE(back.cfg.n_f == cfg.n_f);
    REQUIRE(back.store.count() == model.store.count());
    for (int pi = 0; pi < model.store.count(); ++pi) {
      REQUIRE(back.store[pi].name == model.store[pi].name);
      REQUIRE(back.store[pi].value == model.store[pi].value);
    }
  }
  SECTION("corrupted magic is rejected") {
    auto blob = [&] {
      std::ifstream is(path, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(is), {});
    }();
    blob[0] = 'X';
    std::ofstream(tmp.file("bad.bin"), std::ios::binary) << blob;
    REQUIRE_THROWS_WITH(checkpoint_load(tmp.file("bad.bin")),
                        Catch::Matchers::ContainsSubstring("magic"));
  }
  SECTION("manifest/blob length mismatch is rejected") {
    auto blob = [&] {
      std::ifstream is(path, std::ios::binary);
      return std::string(std::istreambuf_iterator<char>(is), {});
    }();
    blob.resize(blob.size() - 64);  // chop the blob tail
    std::ofstream(tmp.file("short.bin"), std::ios::binary) << blob;
    REQUIRE_THROWS_WITH(checkpoint_load(tmp.file("short.bin")),
                        Catch::Matchers::ContainsSubstring("truncated"));
  }
}

TEST_CASE("training loop") {
  const LinkConfig cfg = tiny_cfg();
  SECTION("one epoch of 64 images at batch 64 is exactly one step") {
    auto model = SemanticModel::make(cfg, TrainVariant::full, 1);
    TrainConfig tc;
    tc.batch = 64;
    tc.epochs = 1;
    tc.seed = 2;
    const auto data = synth_dataset(3, 64);
    const auto res = train(model, tc, data);
    REQUIRE_FALSE(res.abort.has_value());
    REQUIRE(res.steps_run == 1);
    REQUIRE(res.trace.size() == 1);
  }
  SECTION("loss decreases over ten epochs on a small synth set") {
    auto model = SemanticModel::make(cfg, TrainVariant::full, 4);
    TrainConfig tc;
    tc.batch = 64;
    tc.epochs = 10;
    tc.seed = 5;
    const auto data = synth_dataset(7, 64);
    const auto res = train(model, tc, data);
    REQUIRE_FALSE(res.abort.has_value());
    REQUIRE(res.trace.size() == 10);
    INFO("epoch1 " << res.trace.front().mean_loss << " epoch10 " << res.trace.back().mean_loss);
    REQUIRE(res.trace.back().mean_loss < res.trace.front().mean_loss);
  }
  SECTION("lambda 0 leaves classification head parameters untouched") {
    auto model = SemanticModel::make(cfg, TrainVariant::full, 6);
    TrainConfig tc;
    tc.batch = 32;
    tc.epochs = 2;
    tc.seed = 7;
    tc.lambda_ce = 0.0f;
    std::vector<std::pair<std::string, std::vector<float>>> before;
    for (int pi = 0; pi < model.store.count(); ++pi)
      if (model.store[pi].name.rfind("decoder.cls_", 0) == 0)
        before.emplace_back(model.store[pi].name, model.store[pi].value);
    REQUIRE_FALSE(before.empty());
    const auto data = synth_dataset(9, 64);
    const auto res = train(model, tc, data);
    REQUIRE_FALSE(res.abort.has_value());
    for (const auto& [name, want] : before) {
      const int pi = model.store.find(name);
      REQUIRE(model.store[pi].value == want);
    }
  }
  SECTION("training is reproducible for a fixed seed") {
    auto run_once = [&] {
      auto model = SemanticModel::make(cfg, TrainVariant::full, 8);
      TrainConfig tc;
      tc.batch = 32;
      tc.epochs = 2;
      tc.seed = 9;
      const auto res = train(model, tc, synth_dataset(11, 64));
      return std::make_pair(res.trace, model.store[0].value);
    };
    const auto a = run_once();
    const auto b = run_once();
    REQUIRE(a.second == b.second);
    for (std::size_t i = 0; i < a.first.size(); ++i) {
      REQUIRE(a.first[i].mean_loss == b.first[i].mean_loss);
      REQUIRE(a.first[i].mean_grad_norm == b.first[i].mean_grad_norm);
    }
  }
}

TEST_CASE("zero-forcing collapse smoke test") {
  // deep-fade channels have exact spectral nulls; bare ZF inverts a singular
  // Gram matrix and the loss goes non-finite immediately
  const LinkConfig cfg = tiny_cfg();
  auto model = SemanticModel::make(cfg, TrainVariant::zf_in_loop, 11);
  TrainConfig tc;
  tc.batch = 32;
  tc.epochs = 1;
  tc.seed = 12;
  tc.scenarios = {kDeepFadeScenario};
  tc.variant = TrainVariant::zf_in_loop;
  const auto res = train(model, tc, synth_dataset(13, 64));
  REQUIRE(res.abort.has_value());

  // the regularized neural path shrugs off the same channels
  auto model2 = SemanticModel::make(cfg, TrainVariant::full, 11);
  TrainConfig tc2 = tc;
  tc2.variant = TrainVariant::full;
  const auto res2 = train(model2, tc2, synth_dataset(13, 64));
  REQUIRE_FALSE(res2.abort.has_value());
  REQUIRE(std::isfinite(res2.trace.back().mean_loss));
}

TEST_CASE("eval sweep determinism") {
  const LinkConfig cfg = tiny_cfg();
  auto model = SemanticModel::make(cfg, TrainVariant::full, 13);
  EvalConfig ec;
  ec.snr_list_db = {-3.0f, 5.0f};
  ec.scenarios = {"UMi", "RMa"};
  ec.n_images = 16;
  ec.seed = 14;
  const auto data = synth_dataset(15, 16);
  const auto a = eval_sweep(model, ec, data);
  const auto b = eval_sweep(model, ec, data);
  REQUIRE(a.size() == 4);
  for (std::size_t i = 0; i < a.size(); ++i) {
    REQUIRE(a[i].psnr_db == b[i].psnr_db);
    REQUIRE(a[i].accuracy == b[i].accuracy);
    REQUIRE(a[i].accuracy >= 0.0f);
    REQUIRE(a[i].psnr_db >= 0.0f);
  }
  // csv schema
  std::ostringstream os;
  write_eval_csv(a, os);
  REQUIRE(os.str().rfind("variant,scenario,snr_db,psnr_db,accuracy,bler,seed,n_images\n", 0) == 0);
}

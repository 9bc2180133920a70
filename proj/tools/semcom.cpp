// Command-line frontend: JSON config + dotted-key overrides, experiment
// orchestration, CSV persistence. Exit codes: 0 success, 1 runtime failure,
// 2 usage error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "semcom/gradcheck_suite.hpp"
#include "semcom/harness.hpp"
#include "semcom/sweeps.hpp"

namespace {

using nlohmann::json;

struct GlobalOpts {
  std::string config_path;
  std::string out_dir = "out";
  std::vector<std::string> overrides;
};

json load_config(const GlobalOpts& g) {
  json cfg = json::object();
  if (!g.config_path.empty()) {
    std::ifstream is(g.config_path);
    if (!is) throw std::runtime_error("cannot open config file " + g.config_path);
    is >> cfg;
  }
  for (const std::string& kv : g.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("override must look like section.key=value, got " + kv);
    std::string path = kv.substr(0, eq);
    const std::string value = kv.substr(eq + 1);
    json parsed;
    try {
      parsed = json::parse(value);
    } catch (const json::exception&) {
      parsed = value;  // plain string
    }
    json* node = &cfg;
    std::size_t start = 0;
    while (true) {
      const auto dot = path.find('.', start);
      const std::string key = path.substr(start, dot == std::string::npos ? dot : dot - start);
      if (dot == std::string::npos) {
        (*node)[key] = parsed;
        break;
      }
      node = &(*node)[key];
      start = dot + 1;
    }
  }
  return cfg;
}

semcom::LinkConfig link_from(const json& cfg) {
  semcom::LinkConfig link;
  if (cfg.contains("link")) semcom::from_json_into(cfg["link"], link);
  link.validate();
  return link;
}

semcom::ImageBatchSet load_train_images(const semcom::DatasetSpec& spec, std::uint64_t seed) {
  if (spec.kind == "synth") return semcom::synth_dataset(seed * 2654435761ULL + 1, spec.n);
  if (spec.kind == "cifar") {
    auto all = semcom::load_cifar10_train(spec.path);
    return spec.n < all.count() ? all.slice(0, spec.n) : all;
  }
  throw std::runtime_error("dataset kind must be synth or cifar, got " + spec.kind);
}

semcom::ImageBatchSet load_eval_images(const semcom::DatasetSpec& spec, int n,
                                       std::uint64_t seed) {
  if (spec.kind == "synth") return semcom::synth_dataset(seed * 7919ULL + 5, n);
  auto test = semcom::load_cifar10_test(spec.path);
  return n < test.count() ? test.slice(0, n) : test;
}

void write_csv_file(const std::vector<semcom::EvalRecord>& records, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  semcom::write_eval_csv(records, os);
  std::cout << "wrote " << path << " (" << records.size() << " rows)\n";
}

int cmd_train(const GlobalOpts& g) {
  const json cfg = load_config(g);
  const semcom::LinkConfig link = link_from(cfg);
  semcom::TrainConfig tc;
  if (cfg.contains("train")) semcom::from_json_into(cfg["train"], tc);
  tc.validate();

  semcom::SemanticModel model = semcom::SemanticModel::make(link, tc.variant, tc.seed);
  const auto data = load_train_images(tc.dataset, tc.seed);
  std::cout << "training variant=" << semcom::to_string(tc.variant)
            << " images=" << data.count() << " epochs=" << tc.epochs << " batch=" << tc.batch
            << "\n";
  const auto res = semcom::train(model, tc, data);
  for (const auto& e : res.trace)
    std::cout << "  epoch " << e.epoch << ": loss " << e.mean_loss << " grad_norm "
              << e.mean_grad_norm << "\n";
  if (res.abort)
    std::cout << "aborted at epoch " << res.abort->epoch << " step " << res.abort->step << " ("
              << res.abort->reason << ", grad_norm " << res.abort->grad_norm << ")\n";

  std::filesystem::create_directories(g.out_dir);
  std::filesystem::path ckpt = tc.checkpoint_path;
  if (ckpt.is_relative() && ckpt.parent_path().empty()) ckpt = g.out_dir / ckpt;
  if (!ckpt.parent_path().empty()) std::filesystem::create_directories(ckpt.parent_path());
  semcom::checkpoint_save(model, ckpt.string());
  std::cout << "checkpoint: " << ckpt.string() << "\n";
  std::ofstream trace(g.out_dir + "/loss_trace.csv");
  semcom::write_trace_csv(res, trace);
  std::cout << "wrote " << g.out_dir << "/loss_trace.csv\n";
  return res.abort ? 1 : 0;
}

int cmd_eval(const GlobalOpts& g, const std::string& checkpoint) {
  if (!std::filesystem::exists(checkpoint)) {
    std::cerr << "error: checkpoint not found: " << checkpoint << "\n";
    return 1;
  }
  const json cfg = load_config(g);
  semcom::SemanticModel model = semcom::checkpoint_load(checkpoint);
  semcom::EvalConfig ec;
  if (cfg.contains("eval")) semcom::from_json_into(cfg["eval"], ec);
  semcom::TrainConfig tc;  // dataset spec lives here
  if (cfg.contains("train")) semcom::from_json_into(cfg["train"], tc);
  const auto images = load_eval_images(tc.dataset, ec.n_images, ec.seed);
  const auto records = semcom::eval_sweep(model, ec, images);
  std::filesystem::create_directories(g.out_dir);
  write_csv_file(records, g.out_dir + "/eval.csv");
  for (const auto& r : records)
    std::cout << "  " << r.scenario << " @ " << r.snr_db << " dB: psnr " << r.psnr_db
              << " acc " << r.accuracy << "\n";
  return 0;
}

int cmd_bler(const GlobalOpts& g) {
  const json cfg = load_config(g);
  const semcom::LinkConfig link = link_from(cfg);
  semcom::BlerSweepConfig sweep;
  if (cfg.contains("bler")) semcom::from_json_into(cfg["bler"], sweep);
  const auto records = semcom::run_bler_sweep(link, sweep);
  std::filesystem::create_directories(g.out_dir);
  write_csv_file(records, g.out_dir + "/bler.csv");
  return 0;
}

int cmd_sscc(const GlobalOpts& g) {
  const json cfg = load_config(g);
  const semcom::LinkConfig link = link_from(cfg);
  semcom::SsccConfig sscc;
  if (cfg.contains("sscc")) semcom::from_json_into(cfg["sscc"], sscc);
  sscc.validate();
  semcom::SsccPsnrSweepConfig sweep;
  if (cfg.contains("sscc_sweep")) semcom::from_json_into(cfg["sscc_sweep"], sweep);
  semcom::TrainConfig tc;
  if (cfg.contains("train")) semcom::from_json_into(cfg["train"], tc);
  const auto images = load_eval_images(tc.dataset, sweep.n_images, sweep.seed);
  const auto records = semcom::run_sscc_psnr_sweep(link, sscc, sweep, images);
  std::filesystem::create_directories(g.out_dir);
  write_csv_file(records, g.out_dir + "/sscc_psnr.csv");
  for (const auto& r : records)
    std::cout << "  " << r.scenario << " @ " << r.snr_db << " dB: psnr " << r.psnr_db
              << " bler " << r.bler << "\n";
  return 0;
}

int cmd_gradcheck() {
  const auto cases = semcom::run_gradcheck_suite();
  bool all_pass = true;
  for (const auto& c : cases) {
    std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << c.name << ": max rel err " << c.max_err
              << " over " << c.coords_checked << " coordinates\n";
    all_pass = all_pass && c.pass;
  }
  return all_pass ? 0 : 1;
}

int cmd_instability(const GlobalOpts& g) {
  const json cfg = load_config(g);
  semcom::LinkConfig link = link_from(cfg);
  int seeds = 5, epochs = 5, images = 2000, batch = 64;
  if (cfg.contains("instability")) {
    const auto& j = cfg["instability"];
    seeds = j.value("seeds", seeds);
    epochs = j.value("epochs", epochs);
    images = j.value("images", images);
    batch = j.value("batch", batch);
  }
  const auto report = semcom::run_instability_experiment(link, seeds, epochs, images, batch);
  for (const auto& r : report.records)
    std::cout << "  " << r.variant << " seed " << r.seed
              << (r.collapsed ? " COLLAPSED" : " completed") << " max_grad_norm "
              << r.max_grad_norm << " final_loss " << r.final_loss
              << (r.abort_epoch >= 0 ? " (abort at epoch " + std::to_string(r.abort_epoch) +
                                           " step " + std::to_string(r.abort_step) + ")"
                                     : "")
              << "\n";
  std::cout << "zero-forcing collapsed in " << report.zf_collapsed << "/" << report.seeds
            << " seeds; neural precoder finished " << report.neural_completed_finite << "/"
            << report.seeds << " with finite loss\n";
  std::filesystem::create_directories(g.out_dir);
  std::ofstream os(g.out_dir + "/instability.csv");
  os << "variant,seed,collapsed,max_grad_norm,final_loss,abort_epoch,abort_step\n";
  for (const auto& r : report.records)
    os << r.variant << "," << r.seed << "," << (r.collapsed ? 1 : 0) << "," << r.max_grad_norm
       << "," << r.final_loss << "," << r.abort_epoch << "," << r.abort_step << "\n";
  std::cout << "wrote " << g.out_dir << "/instability.csv\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Downlink MU-MIMO OFDM semantic communication simulator"};
  app.require_subcommand(1);

  GlobalOpts g;
  app.add_option("-c,--config", g.config_path, "JSON config file");
  app.add_option("-o,--out", g.out_dir, "output directory")->capture_default_str();
  app.add_option("--set", g.overrides,
                 "dotted-key config override, e.g. --set train.lr=0.001");

  auto* train = app.add_subcommand("train", "train a model and write a checkpoint");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint over (scenario, SNR) cells");
  std::string checkpoint;
  eval->add_option("--checkpoint", checkpoint, "checkpoint file")->required();
  auto* bler = app.add_subcommand("bler", "classical-chain block error rate sweeps");
  auto* sscc = app.add_subcommand("sscc", "classical-chain image PSNR sweeps");
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  auto* instability =
      app.add_subcommand("instability", "zero-forcing training-collapse experiment");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);  // prints help, exits 0
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;  // usage error
  }

  try {
    if (train->parsed()) return cmd_train(g);
    if (eval->parsed()) return cmd_eval(g, checkpoint);
    if (bler->parsed()) return cmd_bler(g);
    if (sscc->parsed()) return cmd_sscc(g);
    if (gradcheck->parsed()) return cmd_gradcheck();
    if (instability->parsed()) return cmd_instability(g);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

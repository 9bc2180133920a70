#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#ifndef SEMCOM_BIN
#error "SEMCOM_BIN must point at the CLI binary"
#endif

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("semcom_cli_" + std::to_string(::getpid()) + "_" +
            std::to_string(reinterpret_cast<std::uintptr_t>(this)));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

struct RunResult {
  int exit_code;
  std::string out, err;
};

RunResult run_cli(const std::string& args, const TempDir& tmp) {
  const std::string out_f = tmp.file("stdout.txt"), err_f = tmp.file("stderr.txt");
  const std::string cmd =
      std::string(SEMCOM_BIN) + " " + args + " >" + out_f + " 2>" + err_f;
  const int status = std::system(cmd.c_str());
  auto slurp = [](const std::string& p) {
    std::ifstream is(p);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_f);
  r.err = slurp(err_f);
  return r;
}

std::string slurp_file(const std::string& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

const char* kTinyConfig = R"({
  "link": {"n_f": 16, "n_t": 4, "n_k": 2, "n_m": 2, "pilot_symbols": [1, 2]},
  "train": {"batch": 16, "epochs": 1, "seed": 3,
            "dataset": {"kind": "synth", "n": 32},
            "checkpoint": "ckpt.bin"},
  "eval": {"snr_list_db": [1.0], "scenarios": ["UMi"], "n_images": 8, "seed": 4},
  "bler": {"scenarios": ["UMa"], "ebn0_list_db": [6.0], "mod_orders": [2],
           "code_rates": ["1/2"], "n_f_list": [16], "csi_modes": ["perfect"],
           "blocks_per_point": 8, "seed": 5}
})";

}  // namespace

TEST_CASE("cli usage surface") {
  TempDir tmp;
  SECTION("--help exits 0 and prints usage") {
    const auto r = run_cli("--help", tmp);
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.out.find("Usage") != std::string::npos);
  }
  SECTION("unknown subcommand exits 2 with a message") {
    const auto r = run_cli("frobnicate", tmp);
    REQUIRE(r.exit_code == 2);
    REQUIRE_FALSE(r.err.empty());
  }
  SECTION("eval with a missing checkpoint exits 1 naming the path") {
    const auto r = run_cli("eval --checkpoint /no/such/ckpt.bin", tmp);
    REQUIRE(r.exit_code == 1);
    REQUIRE(r.err.find("/no/such/ckpt.bin") != std::string::npos);
  }
}

TEST_CASE("cli train/eval round trip and reproducible outputs") {
  TempDir tmp;
  {
    std::ofstream os(tmp.file("config.json"));
    os << kTinyConfig;
  }
  const std::string base = "-c " + tmp.file("config.json");

  SECTION("train writes a checkpoint and loss trace; eval consumes it") {
    const auto tr = run_cli(base + " -o " + tmp.file("run1") + " train", tmp);
    INFO(tr.out << tr.err);
    REQUIRE(tr.exit_code == 0);
    REQUIRE(fs::exists(tmp.file("run1") + "/ckpt.bin"));
    REQUIRE(fs::exists(tmp.file("run1") + "/loss_trace.csv"));
    const std::string trace = slurp_file(tmp.file("run1") + "/loss_trace.csv");
    REQUIRE(trace.rfind("epoch,mean_loss,grad_norm\n", 0) == 0);

    const auto ev = run_cli(base + " -o " + tmp.file("run1") + " eval --checkpoint " +
                                tmp.file("run1") + "/ckpt.bin",
                            tmp);
    INFO(ev.out << ev.err);
    REQUIRE(ev.exit_code == 0);
    REQUIRE(fs::exists(tmp.file("run1") + "/eval.csv"));
  }

  SECTION("identical argv and config give byte-identical CSV outputs") {
    const auto a = run_cli(base + " -o " + tmp.file("a") + " bler", tmp);
    const auto b = run_cli(base + " -o " + tmp.file("b") + " bler", tmp);
    REQUIRE(a.exit_code == 0);
    REQUIRE(b.exit_code == 0);
    REQUIRE(slurp_file(tmp.file("a") + "/bler.csv") == slurp_file(tmp.file("b") + "/bler.csv"));
  }

  SECTION("dotted overrides reach the config") {
    const auto r = run_cli(base + " -o " + tmp.file("c") +
                               " --set train.epochs=2 --set train.dataset.n=16 "
                               "--set train.batch=8 train",
                           tmp);
    INFO(r.out << r.err);
    REQUIRE(r.exit_code == 0);
    REQUIRE(r.out.find("epochs=2") != std::string::npos);
    REQUIRE(r.out.find("images=16") != std::string::npos);
  }
}

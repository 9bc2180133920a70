#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "semcom/rng.hpp"

namespace semcom {

using cfloat = std::complex<float>;

// Known reference symbols: per-user QPSK on a disjoint subcarrier comb inside
// the pilot OFDM symbols (user k owns subcarriers f = k mod N_k; other users
// transmit zero there), which keeps per-user LS estimation well-posed in the
// multi-user downlink.
struct PilotSpec {
  std::vector<int> symbol_indices;              // t positions carrying pilots
  std::vector<cfloat> sequence;                 // [n_f][n_pilot_syms][n_k]
  int n_f = 0, n_k = 0;

  static PilotSpec make(int n_f, int n_t, int n_k, std::vector<int> symbol_indices,
                        std::uint64_t seed) {
    PilotSpec p;
    std::sort(symbol_indices.begin(), symbol_indices.end());
    for (int t : symbol_indices)
      if (t < 0 || t >= n_t) throw std::invalid_argument("pilot symbol index out of range");
    p.symbol_indices = std::move(symbol_indices);
    p.n_f = n_f;
    p.n_k = n_k;
    const int np = static_cast<int>(p.symbol_indices.size());
    p.sequence.assign(static_cast<std::size_t>(n_f) * np * n_k, cfloat(0.0f, 0.0f));
    Rng rng(Rng::split_mix(seed ^ 0x70696c6fULL));
    for (int f = 0; f < n_f; ++f)
      for (int s = 0; s < np; ++s) {
        const int owner = f % n_k;
        const double phase = M_PI_4 * (2.0 * static_cast<double>(rng.below(4)) + 1.0);
        p.sequence[(static_cast<std::size_t>(f) * np + s) * n_k + owner] =
            cfloat(static_cast<float>(std::cos(phase)), static_cast<float>(std::sin(phase)));
      }
    return p;
  }

  int count() const { return static_cast<int>(symbol_indices.size()); }
  bool is_pilot_symbol(int t) const {
    return std::binary_search(symbol_indices.begin(), symbol_indices.end(), t);
  }
  // Position of t within symbol_indices, -1 if not a pilot symbol.
  int pilot_pos(int t) const {
    auto it = std::lower_bound(symbol_indices.begin(), symbol_indices.end(), t);
    return (it != symbol_indices.end() && *it == t)
               ? static_cast<int>(it - symbol_indices.begin())
               : -1;
  }
  cfloat at(int f, int pilot_sym_pos, int k) const {
    return sequence[(static_cast<std::size_t>(f) * count() + pilot_sym_pos) * n_k + k];
  }
  int owner_of(int f) const { return f % n_k; }
};

struct LinkConfig {
  int n_f = 32;          // subcarriers
  int n_t = 14;          // OFDM symbols per slot
  int n_k = 4;           // users (single-antenna)
  int n_m = 4;           // BS antennas
  float power = 1.0f;    // total transmit power budget P
  double subcarrier_spacing_hz = 15e3;
  double carrier_hz = 2.6e9;
  int cyclic_prefix = 20;  // recorded, not simulated (per-RE frequency model)
  std::vector<int> pilot_symbols{2, 11};
  std::uint64_t pilot_seed = 7;

  int n_sf() const { return n_f; }
  int n_st() const { return n_t - static_cast<int>(pilot_symbols.size()); }

  PilotSpec pilot() const { return PilotSpec::make(n_f, n_t, n_k, pilot_symbols, pilot_seed); }

  void validate() const {
    if (n_f < 1 || n_t < 1 || n_k < 1 || n_m < 1)
      throw std::invalid_argument("link config: dimensions must be positive");
    if (n_k > n_m) throw std::invalid_argument("link config: requires n_k <= n_m");
    if (n_st() < 1) throw std::invalid_argument("link config: no data symbols left");
    if (!(power > 0.0f)) throw std::invalid_argument("link config: power must be positive");
  }
};

struct CodeRate {
  int num = 1, den = 2;
  double value() const { return static_cast<double>(num) / den; }
  std::string str() const { return std::to_string(num) + "/" + std::to_string(den); }
  static CodeRate parse(const std::string& s) {
    if (s == "1/2") return {1, 2};
    if (s == "2/3") return {2, 3};
    throw std::invalid_argument("code rate must be 1/2 or 2/3, got " + s);
  }
};

enum class CsiMode { perfect, ls };

struct SsccConfig {
  int mod_order_bits = 2;       // m: 2 (4QAM) or 4 (16QAM)
  CodeRate code_rate{1, 2};     // r: 1/2 or 2/3 via puncturing
  int quality_levels = 8;       // codec quality ladder size
  CsiMode csi_mode = CsiMode::ls;

  void validate() const {
    if (mod_order_bits != 2 && mod_order_bits != 4)
      throw std::invalid_argument("sscc: modulation order m must be 2 or 4");
    if (quality_levels < 1) throw std::invalid_argument("sscc: need at least one quality level");
  }
};

enum class TrainVariant { full, no_pilot, rzf, zf_in_loop };

inline std::string to_string(TrainVariant v) {
  switch (v) {
    case TrainVariant::full: return "full";
    case TrainVariant::no_pilot: return "no_pilot";
    case TrainVariant::rzf: return "rzf";
    case TrainVariant::zf_in_loop: return "zf_in_loop";
  }
  return "?";
}

inline TrainVariant parse_variant(const std::string& s) {
  if (s == "full") return TrainVariant::full;
  if (s == "no_pilot") return TrainVariant::no_pilot;
  if (s == "rzf") return TrainVariant::rzf;
  if (s == "zf_in_loop") return TrainVariant::zf_in_loop;
  throw std::invalid_argument("unknown variant " + s);
}

struct DatasetSpec {
  std::string kind = "synth";  // synth | cifar
  std::string path;            // cifar binary batch directory
  int n = 2000;                // training images drawn from the set
};

struct TrainConfig {
  int batch = 64;
  int epochs = 10;
  float lr = 1e-3f;
  float lambda_ce = 0.1f;
  float snr_min_db = -7.0f;
  float snr_max_db = 7.0f;
  std::vector<std::string> scenarios{"UMi", "UMa", "RMa"};
  std::uint64_t seed = 1;
  DatasetSpec dataset;
  std::string checkpoint_path = "checkpoint.bin";  // relative paths join the out dir
  TrainVariant variant = TrainVariant::full;

  void validate() const {
    if (batch < 1) throw std::invalid_argument("train: batch must be >= 1");
    if (!(lr > 0.0f)) throw std::invalid_argument("train: lr must be > 0");
    if (!(snr_min_db <= snr_max_db)) throw std::invalid_argument("train: empty snr range");
    if (lambda_ce < 0.0f) throw std::invalid_argument("train: lambda must be >= 0");
    if (scenarios.empty()) throw std::invalid_argument("train: scenario set empty");
  }
};

struct EvalConfig {
  std::vector<float> snr_list_db{-7.0f, -3.0f, 1.0f, 5.0f, 7.0f};
  std::vector<std::string> scenarios{"UMi", "UMa", "RMa"};
  int n_images = 256;
  std::uint64_t seed = 3;
};

struct EvalRecord {
  std::string variant;
  std::string scenario;
  float snr_db = 0.0f;
  float psnr_db = 0.0f;
  float accuracy = 0.0f;
  float bler = 0.0f;
  std::uint64_t seed = 0;
  int n_images = 0;
};

// ---------------------------------------------------------------------------
// JSON binding
// ---------------------------------------------------------------------------

inline void from_json_into(const nlohmann::json& j, LinkConfig& c) {
  c.n_f = j.value("n_f", c.n_f);
  c.n_t = j.value("n_t", c.n_t);
  c.n_k = j.value("n_k", c.n_k);
  c.n_m = j.value("n_m", c.n_m);
  c.power = j.value("power", c.power);
  c.subcarrier_spacing_hz = j.value("subcarrier_spacing_hz", c.subcarrier_spacing_hz);
  c.carrier_hz = j.value("carrier_hz", c.carrier_hz);
  c.cyclic_prefix = j.value("cyclic_prefix", c.cyclic_prefix);
  if (j.contains("pilot_symbols")) c.pilot_symbols = j["pilot_symbols"].get<std::vector<int>>();
  c.pilot_seed = j.value("pilot_seed", c.pilot_seed);
}

inline nlohmann::json to_json(const LinkConfig& c) {
  return {{"n_f", c.n_f},
          {"n_t", c.n_t},
          {"n_k", c.n_k},
          {"n_m", c.n_m},
          {"power", c.power},
          {"subcarrier_spacing_hz", c.subcarrier_spacing_hz},
          {"carrier_hz", c.carrier_hz},
          {"cyclic_prefix", c.cyclic_prefix},
          {"pilot_symbols", c.pilot_symbols},
          {"pilot_seed", c.pilot_seed}};
}

inline void from_json_into(const nlohmann::json& j, SsccConfig& c) {
  c.mod_order_bits = j.value("mod_order_bits", c.mod_order_bits);
  if (j.contains("code_rate")) c.code_rate = CodeRate::parse(j["code_rate"].get<std::string>());
  c.quality_levels = j.value("quality_levels", c.quality_levels);
  if (j.contains("csi_mode")) {
    const std::string m = j["csi_mode"].get<std::string>();
    if (m == "perfect")
      c.csi_mode = CsiMode::perfect;
    else if (m == "ls")
      c.csi_mode = CsiMode::ls;
    else
      throw std::invalid_argument("csi_mode must be perfect or ls");
  }
}

inline nlohmann::json to_json(const SsccConfig& c) {
  return {{"mod_order_bits", c.mod_order_bits},
          {"code_rate", c.code_rate.str()},
          {"quality_levels", c.quality_levels},
          {"csi_mode", c.csi_mode == CsiMode::perfect ? "perfect" : "ls"}};
}

inline void from_json_into(const nlohmann::json& j, DatasetSpec& d) {
  d.kind = j.value("kind", d.kind);
  d.path = j.value("path", d.path);
  d.n = j.value("n", d.n);
}

inline void from_json_into(const nlohmann::json& j, TrainConfig& c) {
  c.batch = j.value("batch", c.batch);
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.lambda_ce = j.value("lambda_ce", c.lambda_ce);
  c.snr_min_db = j.value("snr_min_db", c.snr_min_db);
  c.snr_max_db = j.value("snr_max_db", c.snr_max_db);
  if (j.contains("scenarios")) c.scenarios = j["scenarios"].get<std::vector<std::string>>();
  c.seed = j.value("seed", c.seed);
  if (j.contains("dataset")) from_json_into(j["dataset"], c.dataset);
  c.checkpoint_path = j.value("checkpoint", c.checkpoint_path);
  if (j.contains("variant")) c.variant = parse_variant(j["variant"].get<std::string>());
}

inline void from_json_into(const nlohmann::json& j, EvalConfig& c) {
  if (j.contains("snr_list_db")) c.snr_list_db = j["snr_list_db"].get<std::vector<float>>();
  if (j.contains("scenarios")) c.scenarios = j["scenarios"].get<std::vector<std::string>>();
  c.n_images = j.value("n_images", c.n_images);
  c.seed = j.value("seed", c.seed);
}

}  // namespace semcom

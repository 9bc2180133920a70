#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "semcom/harness.hpp"
#include "semcom/sscc.hpp"

namespace semcom {

// ---------------------------------------------------------------------------
// Classical-chain sweeps (BLER protocol and image-PSNR protocol)
// ---------------------------------------------------------------------------

struct BlerSweepConfig {
  std::vector<std::string> scenarios{"UMi", "UMa", "RMa"};
  std::vector<double> ebn0_list_db{-4.0, 0.0, 4.0, 8.0, 12.0};
  std::vector<int> mod_orders{2, 4};
  std::vector<std::string> code_rates{"1/2"};
  std::vector<int> n_f_list{32};
  std::vector<std::string> csi_modes{"perfect", "ls"};
  int blocks_per_point = 200;
  std::uint64_t seed = 1;
};

inline void from_json_into(const nlohmann::json& j, BlerSweepConfig& c) {
  if (j.contains("scenarios")) c.scenarios = j["scenarios"].get<std::vector<std::string>>();
  if (j.contains("ebn0_list_db")) c.ebn0_list_db = j["ebn0_list_db"].get<std::vector<double>>();
  if (j.contains("mod_orders")) c.mod_orders = j["mod_orders"].get<std::vector<int>>();
  if (j.contains("code_rates")) c.code_rates = j["code_rates"].get<std::vector<std::string>>();
  if (j.contains("n_f_list")) c.n_f_list = j["n_f_list"].get<std::vector<int>>();
  if (j.contains("csi_modes")) c.csi_modes = j["csi_modes"].get<std::vector<std::string>>();
  c.blocks_per_point = j.value("blocks_per_point", c.blocks_per_point);
  c.seed = j.value("seed", c.seed);
}

// One row per sweep cell; the variant column carries the configuration tag
// so a single CSV compares modulations, bandwidths and CSI assumptions.
inline std::vector<EvalRecord> run_bler_sweep(const LinkConfig& base,
                                              const BlerSweepConfig& sweep) {
  struct Cell {
    std::string scenario, rate, csi;
    double ebn0;
    int m, n_f;
  };
  std::vector<Cell> cells;
  for (const auto& scen : sweep.scenarios)
    for (int nf : sweep.n_f_list)
      for (int m : sweep.mod_orders)
        for (const auto& r : sweep.code_rates)
          for (const auto& csi : sweep.csi_modes)
            for (double e : sweep.ebn0_list_db)
              cells.push_back(Cell{scen, r, csi, e, m, nf});

  std::vector<EvalRecord> records(cells.size());
  parallel_cells(static_cast<int>(cells.size()), [&](int ci) {
    const Cell& cell = cells[static_cast<std::size_t>(ci)];
    LinkConfig link = base;
    link.n_f = cell.n_f;
    SsccConfig sscc;
    sscc.mod_order_bits = cell.m;
    sscc.code_rate = CodeRate::parse(cell.rate);
    sscc.csi_mode = cell.csi == "perfect" ? CsiMode::perfect : CsiMode::ls;
    const std::uint64_t cell_seed =
        Rng::split_mix(sweep.seed ^ Rng::split_mix(static_cast<std::uint64_t>(ci) + 17));
    EvalRecord rec;
    rec.variant = "sscc_m" + std::to_string(cell.m) + "_r" + cell.rate + "_nf" +
                  std::to_string(cell.n_f) + "_" + cell.csi;
    rec.scenario = cell.scenario;
    rec.snr_db = static_cast<float>(cell.ebn0);
    rec.bler = sscc_bler_run(link, sscc, cell.scenario, cell.ebn0, sweep.blocks_per_point,
                             cell_seed);
    rec.seed = sweep.seed;
    rec.n_images = sweep.blocks_per_point;
    records[static_cast<std::size_t>(ci)] = rec;
  });
  return records;
}

struct SsccPsnrSweepConfig {
  std::vector<std::string> scenarios{"UMi", "UMa", "RMa"};
  std::vector<double> ebn0_list_db{-7.0, -3.0, 1.0, 5.0, 7.0};
  int n_images = 64;
  std::uint64_t seed = 2;
};

inline void from_json_into(const nlohmann::json& j, SsccPsnrSweepConfig& c) {
  if (j.contains("scenarios")) c.scenarios = j["scenarios"].get<std::vector<std::string>>();
  if (j.contains("ebn0_list_db")) c.ebn0_list_db = j["ebn0_list_db"].get<std::vector<double>>();
  c.n_images = j.value("n_images", c.n_images);
  c.seed = j.value("seed", c.seed);
}

// Mean PSNR of the classical baseline over images and users; failed blocks
// and unencodable images count as 0 dB.
inline std::vector<EvalRecord> run_sscc_psnr_sweep(const LinkConfig& link,
                                                   const SsccConfig& sscc,
                                                   const SsccPsnrSweepConfig& sweep,
                                                   const ImageBatchSet& images) {
  const int K = link.n_k;
  const int groups = std::max(1, std::min(sweep.n_images, images.count()) / K);
  struct Cell {
    std::string scenario;
    double ebn0;
  };
  std::vector<Cell> cells;
  for (const auto& s : sweep.scenarios)
    for (double e : sweep.ebn0_list_db) cells.push_back(Cell{s, e});

  std::vector<EvalRecord> records(cells.size());
  parallel_cells(static_cast<int>(cells.size()), [&](int ci) {
    const Cell& cell = cells[static_cast<std::size_t>(ci)];
    Rng rng(Rng::split_mix(sweep.seed ^ Rng::split_mix(static_cast<std::uint64_t>(ci) + 43)));
    double psnr_acc = 0.0;
    std::vector<bool> oks;
    const std::size_t px = static_cast<std::size_t>(kImageSize) * kImageSize * kImageChannels;
    for (int g = 0; g < groups; ++g) {
      std::vector<std::vector<float>> group_images;
      for (int k = 0; k < K; ++k) {
        const int idx = (g * K + k) % images.count();
        group_images.emplace_back(images.images.begin() + static_cast<std::ptrdiff_t>(idx * px),
                                  images.images.begin() +
                                      static_cast<std::ptrdiff_t>((idx + 1) * px));
      }
      const auto recs = sscc_link_run(group_images, link, sscc, cell.scenario, cell.ebn0,
                                      rng.raw());
      for (const auto& r : recs) {
        psnr_acc += r.psnr_db;
        oks.push_back(r.block_ok);
      }
    }
    EvalRecord rec;
    rec.variant = "sscc";
    rec.scenario = cell.scenario;
    rec.snr_db = static_cast<float>(cell.ebn0);
    rec.psnr_db = static_cast<float>(psnr_acc / static_cast<double>(groups * K));
    rec.bler = bler(oks);
    rec.seed = sweep.seed;
    rec.n_images = groups * K;
    records[static_cast<std::size_t>(ci)] = rec;
  });
  return records;
}

}  // namespace semcom

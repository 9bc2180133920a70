#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>

#include "semcom/channel.hpp"
#include "semcom/grid.hpp"
#include "semcom/rng.hpp"

using namespace semcom;

namespace {

double rms_delay_spread(const ScenarioProfile& p) {
  double mean = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < p.delays_s.size(); ++i) {
    mean += p.powers[i] * p.delays_s[i];
    m2 += p.powers[i] * p.delays_s[i] * p.delays_s[i];
  }
  return std::sqrt(m2 - mean * mean);
}

}  // namespace

TEST_CASE("scenario presets") {
  const auto umi = scenario_profile("UMi");
  REQUIRE(umi.delays_s.size() == 4);
  REQUIRE(umi.rician_k == Catch::Approx(3.0));
  REQUIRE(umi.spread_db == Catch::Approx(2.0));
  REQUIRE(umi.powers == std::vector<double>{0.5, 0.3, 0.15, 0.05});

  const auto uma = scenario_profile("UMa");
  REQUIRE(uma.delays_s.size() == 4);
  REQUIRE(uma.rician_k == Catch::Approx(9.0));

  const auto rma = scenario_profile("RMa");
  REQUIRE(rma.delays_s.size() == 6);
  REQUIRE(rma.rician_k == 0.0);
  REQUIRE(rma.spread_db == Catch::Approx(3.0));

  // delay-spread ordering drives the scenario difficulty ordering
  REQUIRE(rms_delay_spread(uma) < rms_delay_spread(umi));
  REQUIRE(rms_delay_spread(umi) < rms_delay_spread(rma));

  REQUIRE_THROWS_AS(scenario_profile("SubUrban"), std::invalid_argument);
}

TEST_CASE("scenario profile from JSON") {
  nlohmann::json j = {{"taps_us", {0.0, 0.5}},
                      {"powers", {0.7, 0.3}},
                      {"rician_k", 2.0},
                      {"spread_db", 1.0}};
  const auto p = scenario_profile_from_json(j);
  REQUIRE(p.delays_s[1] == Catch::Approx(0.5e-6));
  REQUIRE(p.rician_k == Catch::Approx(2.0));
  nlohmann::json bad = {{"taps_us", {0.0, 0.5}}, {"powers", {0.7, 0.4}}};
  REQUIRE_THROWS(scenario_profile_from_json(bad));
}

TEST_CASE("tdl frequency response closed forms") {
  SECTION("single tap at delay zero is flat") {
    const auto h = tdl_frequency_response({0.0}, {{1.0, 0.0}}, 16, 15e3);
    for (const auto& v : h) REQUIRE(std::abs(v) == Catch::Approx(1.0).margin(1e-12));
  }
  SECTION("two unit rays: |H|^2 = 2 + 2cos(2 pi f df tau), nulls at half-integers") {
    const double df = 15e3;
    const double tau = 1.0 / (16.0 * df);  // full rotation every 16 subcarriers
    const auto h = tdl_frequency_response({0.0, tau}, {{1.0, 0.0}, {1.0, 0.0}}, 32, df);
    for (int f = 0; f < 32; ++f) {
      const double want = 2.0 + 2.0 * std::cos(2.0 * M_PI * f * df * tau);
      REQUIRE(std::norm(h[static_cast<std::size_t>(f)]) == Catch::Approx(want).margin(1e-9));
    }
    // f*df*tau = 1/2 at f = 8 and 3/2 at f = 24
    REQUIRE(std::abs(h[8]) < 1e-9);
    REQUIRE(std::abs(h[24]) < 1e-9);
  }
}

TEST_CASE("sample_channel determinism and flatness") {
  SECTION("deterministic for equal seeds") {
    const auto p = scenario_profile("UMi");
    const auto a = sample_channel(p, 16, 4, 2, 2, 15e3, 99);
    const auto b = sample_channel(p, 16, 4, 2, 2, 15e3, 99);
    REQUIRE(a.h == b.h);
    const auto c = sample_channel(p, 16, 4, 2, 2, 15e3, 100);
    REQUIRE(a.h != c.h);
  }
  SECTION("single dominant LOS tap gives |H| = 1") {
    ScenarioProfile p;
    p.name = "flat";
    p.delays_s = {0.0};
    p.powers = {1.0};
    p.rician_k = 1e15;  // deterministic-gain limit of the Rician tap
    p.spread_db = 0.0;
    const auto ch = sample_channel(p, 8, 2, 1, 1, 15e3, 5);
    for (const auto& v : ch.h) REQUIRE(std::abs(v) == Catch::Approx(1.0).margin(1e-5));
  }
  SECTION("block fading: constant across the slot") {
    const auto ch = sample_channel(scenario_profile("RMa"), 8, 14, 2, 2, 15e3, 7);
    for (int f = 0; f < 8; ++f)
      for (int k = 0; k < 2; ++k)
        for (int m = 0; m < 2; ++m)
          for (int t = 1; t < 14; ++t) REQUIRE(ch.at(f, t, k, m) == ch.at(f, 0, k, m));
  }
}

TEST_CASE("tap power normalization per preset") {
  // E|H|^2 = 1 per (k,m) link before shadowing
  for (const char* name : {"UMi", "UMa", "RMa"}) {
    auto p = scenario_profile(name);
    p.spread_db = 0.0;
    double acc = 0.0;
    std::size_t n = 0;
    const int reps = 10000 / 4;  // 4 (k,m) links per draw
    for (int r = 0; r < reps; ++r) {
      const auto ch = sample_channel(p, 16, 1, 2, 2, 15e3, 1000 + static_cast<std::uint64_t>(r));
      for (const auto& v : ch.h) {
        acc += std::norm(v);
        ++n;
      }
    }
    const double mean = acc / static_cast<double>(n);
    INFO(name << " mean |H|^2 = " << mean);
    REQUIRE(mean > 0.97);
    REQUIRE(mean < 1.03);
  }
}

TEST_CASE("apply_channel") {
  SECTION("scalar noiseless case") {
    ChannelTensor H;
    H.n_f = 1;
    H.n_t = 1;
    H.n_k = 1;
    H.n_m = 1;
    H.h = {cfloat(2.0f, 0.0f)};
    Grid x(1, 1, 1, GridKind::antennas);
    x.at(0, 0, 0) = cfloat(1.0f, 1.0f);
    const Grid y = apply_channel(H, x, 0.0, 1);
    REQUIRE(y.at(0, 0, 0).real() == Catch::Approx(2.0));
    REQUIRE(y.at(0, 0, 0).imag() == Catch::Approx(2.0));
  }
  SECTION("noise variance and zero mean over 1e5 samples") {
    ChannelTensor H;
    H.n_f = 100;
    H.n_t = 10;
    H.n_k = 100;
    H.n_m = 1;
    H.h.assign(100 * 10 * 100, cfloat(0.0f, 0.0f));
    Grid x(100, 10, 1, GridKind::antennas);  // zero input: output is pure noise
    const double sigma2 = 0.5;
    const Grid y = apply_channel(H, x, sigma2, 42);
    double power = 0.0;
    std::complex<double> mean = 0.0;
    for (const auto& v : y.v) {
      power += std::norm(v);
      mean += std::complex<double>(v);
    }
    const double n = static_cast<double>(y.v.size());
    REQUIRE(power / n == Catch::Approx(sigma2).epsilon(0.03));
    REQUIRE(std::abs(mean / n) < 3.0 * std::sqrt(sigma2) / std::sqrt(n));
  }
  SECTION("2x2 matches the per-RE matrix-vector oracle") {
    Rng rng(4);
    ChannelTensor H;
    H.n_f = 3;
    H.n_t = 2;
    H.n_k = 2;
    H.n_m = 2;
    H.h.resize(3 * 2 * 2 * 2);
    for (auto& v : H.h) v = cfloat(rng.cgaussian());
    Grid x(3, 2, 2, GridKind::antennas);
    for (auto& v : x.v) v = cfloat(rng.cgaussian());
    const Grid y = apply_channel(H, x, 0.0, 9);
    for (int f = 0; f < 3; ++f)
      for (int t = 0; t < 2; ++t)
        for (int k = 0; k < 2; ++k) {
          std::complex<double> want = 0.0;
          for (int m = 0; m < 2; ++m)
            want += std::complex<double>(H.at(f, t, k, m)) * std::complex<double>(x.at(f, t, m));
          REQUIRE(std::abs(std::complex<double>(y.at(f, t, k)) - want) < 1e-6);
        }
  }
  SECTION("linearity in the transmit grid") {
    Rng rng(11);
    ChannelTensor H;
    H.n_f = 4;
    H.n_t = 3;
    H.n_k = 3;
    H.n_m = 3;
    H.h.resize(4 * 3 * 3 * 3);
    for (auto& v : H.h) v = cfloat(rng.cgaussian());
    Grid x1(4, 3, 3, GridKind::antennas), x2 = x1, mix = x1;
    for (auto& v : x1.v) v = cfloat(rng.cgaussian());
    for (auto& v : x2.v) v = cfloat(rng.cgaussian());
    const double a = 0.7, b = -1.3;
    for (std::size_t i = 0; i < mix.v.size(); ++i)
      mix.v[i] = static_cast<float>(a) * x1.v[i] + static_cast<float>(b) * x2.v[i];
    const Grid y1 = apply_channel(H, x1, 0.0, 1), y2 = apply_channel(H, x2, 0.0, 1);
    const Grid ym = apply_channel(H, mix, 0.0, 1);
    for (std::size_t i = 0; i < ym.v.size(); ++i)
      REQUIRE(std::abs(std::complex<double>(ym.v[i]) -
                       (a * std::complex<double>(y1.v[i]) + b * std::complex<double>(y2.v[i]))) <
              1e-5);
  }
  SECTION("dimension mismatch") {
    ChannelTensor H;
    H.n_f = 2;
    H.n_t = 2;
    H.n_k = 1;
    H.n_m = 2;
    H.h.resize(8);
    Grid x(2, 2, 1, GridKind::antennas);  // wrong port count
    REQUIRE_THROWS_AS(apply_channel(H, x, 0.0, 1), std::invalid_argument);
  }
}

TEST_CASE("ebn0_to_noise_var") {
  REQUIRE(ebn0_to_noise_var(0.0, 2, 0.5, 1.0) == Catch::Approx(1.0));
  REQUIRE(ebn0_to_noise_var(10.0, 2, 0.5, 1.0) == Catch::Approx(0.1));
  // doubling bits per symbol halves the variance at equal Eb/N0
  REQUIRE(ebn0_to_noise_var(3.0, 4, 0.5, 1.0) ==
          Catch::Approx(0.5 * ebn0_to_noise_var(3.0, 2, 0.5, 1.0)));
}

TEST_CASE("deep-fade two-ray generator") {
  const auto ch = sample_deep_fade_two_ray(32, 2, 3, 4, 17);
  SECTION("deterministic") {
    const auto ch2 = sample_deep_fade_two_ray(32, 2, 3, 4, 17);
    REQUIRE(ch.h == ch2.h);
  }
  SECTION("every user has one exact in-band null across all antennas") {
    for (int k = 0; k < 3; ++k) {
      int nulls = 0;
      for (int f = 0; f < 32; ++f) {
        bool all_zero = true;
        for (int m = 0; m < 4; ++m)
          all_zero = all_zero && ch.at(f, 0, k, m) == cfloat(0.0f, 0.0f);
        if (all_zero) ++nulls;
      }
      REQUIRE(nulls >= 1);  // period 8 over 32 subcarriers: 4 exact nulls
      REQUIRE(nulls == 4);
    }
  }
  SECTION("unit average link power") {
    double acc = 0.0;
    std::size_t n = 0;
    for (int r = 0; r < 400; ++r) {
      const auto c = sample_deep_fade_two_ray(32, 1, 2, 2, 3000 + static_cast<std::uint64_t>(r));
      for (const auto& v : c.h) {
        acc += std::norm(v);
        ++n;
      }
    }
    REQUIRE(acc / static_cast<double>(n) == Catch::Approx(1.0).epsilon(0.05));
  }
}

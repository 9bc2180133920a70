#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "semcom/config.hpp"
#include "semcom/grid.hpp"
#include "semcom/rng.hpp"

namespace semcom {

// Tapped-delay-line scenario preset. The numeric tables are artifact
// approximations of the named deployment characters (LOS strength and delay
// spread ordering), not measured channel-sounding data.
struct ScenarioProfile {
  std::string name;
  std::vector<double> delays_s;  // nonnegative, increasing
  std::vector<double> powers;    // linear, sums to 1
  double rician_k = 0.0;         // linear K-factor on tap 0; 0 = Rayleigh
  double spread_db = 0.0;        // per-user log-normal shadowing std-dev

  void validate() const {
    if (delays_s.size() != powers.size() || delays_s.empty())
      throw std::invalid_argument("scenario " + name + ": taps malformed");
    double sum = 0.0;
    for (std::size_t i = 0; i < delays_s.size(); ++i) {
      if (delays_s[i] < 0.0) throw std::invalid_argument("scenario: negative delay");
      if (i > 0 && delays_s[i] <= delays_s[i - 1])
        throw std::invalid_argument("scenario: delays must increase");
      sum += powers[i];
    }
    if (std::abs(sum - 1.0) > 1e-9)
      throw std::invalid_argument("scenario " + name + ": tap powers sum to " +
                                  std::to_string(sum));
    if (rician_k < 0.0) throw std::invalid_argument("scenario: rician_k must be >= 0");
  }
};

inline ScenarioProfile scenario_profile(const std::string& name) {
  ScenarioProfile p;
  p.name = name;
  if (name == "UMi") {
    p.delays_s = {0.0, 0.1e-6, 0.3e-6, 0.7e-6};
    p.powers = {0.5, 0.3, 0.15, 0.05};
    p.rician_k = 3.0;
    p.spread_db = 2.0;
  } else if (name == "UMa") {
    p.delays_s = {0.0, 0.05e-6, 0.15e-6, 0.3e-6};
    p.powers = {0.6, 0.25, 0.1, 0.05};
    p.rician_k = 9.0;
    p.spread_db = 2.0;
  } else if (name == "RMa") {
    p.delays_s = {0.0, 0.2e-6, 0.5e-6, 1.0e-6, 1.5e-6, 2.0e-6};
    p.powers = {0.35, 0.25, 0.15, 0.12, 0.08, 0.05};
    p.rician_k = 0.0;
    p.spread_db = 3.0;
  } else {
    throw std::invalid_argument("unknown scenario '" + name + "' (want UMi, UMa or RMa)");
  }
  p.validate();
  return p;
}

// Custom profiles: JSON object {taps_us: [...], powers: [...], rician_k, spread_db}.
inline ScenarioProfile scenario_profile_from_json(const nlohmann::json& j,
                                                  const std::string& name = "custom") {
  ScenarioProfile p;
  p.name = j.value("name", name);
  for (double us : j.at("taps_us").get<std::vector<double>>()) p.delays_s.push_back(us * 1e-6);
  p.powers = j.at("powers").get<std::vector<double>>();
  p.rician_k = j.value("rician_k", 0.0);
  p.spread_db = j.value("spread_db", 0.0);
  p.validate();
  return p;
}

inline ScenarioProfile load_scenario_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open scenario file " + path);
  nlohmann::json j;
  is >> j;
  return scenario_profile_from_json(j, path);
}

// H[f] = sum_l g_l exp(-j 2 pi f df tau_l) over the subcarrier index grid.
inline std::vector<std::complex<double>> tdl_frequency_response(
    const std::vector<double>& delays_s, const std::vector<std::complex<double>>& gains,
    int n_f, double subcarrier_spacing_hz) {
  if (delays_s.size() != gains.size())
    throw std::invalid_argument("tdl_frequency_response: delay/gain count mismatch");
  std::vector<std::complex<double>> hf(static_cast<std::size_t>(n_f));
  for (int f = 0; f < n_f; ++f) {
    std::complex<double> acc = 0.0;
    for (std::size_t l = 0; l < gains.size(); ++l) {
      const double phase = -2.0 * M_PI * f * subcarrier_spacing_hz * delays_s[l];
      acc += gains[l] * std::complex<double>(std::cos(phase), std::sin(phase));
    }
    hf[static_cast<std::size_t>(f)] = acc;
  }
  return hf;
}

// Per-RE channel coefficients H[f,t,k,m] plus the profile and seed that
// generated them.
struct ChannelTensor {
  int n_f = 0, n_t = 0, n_k = 0, n_m = 0;
  std::vector<cfloat> h;
  ScenarioProfile profile;
  std::uint64_t seed = 0;

  cfloat at(int f, int t, int k, int m) const {
    return h[(((static_cast<std::size_t>(f) * n_t + t) * n_k + k) * n_m) + m];
  }
  cfloat& at(int f, int t, int k, int m) {
    return h[(((static_cast<std::size_t>(f) * n_t + t) * n_k + k) * n_m) + m];
  }
};

// Frequency response of the tapped-delay line per (k, m): tap 0 is Rician
// with factor K, the rest Rayleigh; H[f] = sum_l g_l exp(-j 2 pi f df tau_l),
// constant across the slot (block fading), then a per-user log-normal gain.
inline ChannelTensor sample_channel(const ScenarioProfile& profile, int n_f, int n_t, int n_k,
                                    int n_m, double subcarrier_spacing_hz, std::uint64_t seed,
                                    bool include_shadowing = true) {
  profile.validate();
  if (n_f < 1 || n_t < 1 || n_k < 1 || n_m < 1)
    throw std::invalid_argument("sample_channel: dims must be >= 1");
  if (!(subcarrier_spacing_hz > 0.0))
    throw std::invalid_argument("sample_channel: spacing must be > 0");
  ChannelTensor ch;
  ch.n_f = n_f;
  ch.n_t = n_t;
  ch.n_k = n_k;
  ch.n_m = n_m;
  ch.profile = profile;
  ch.seed = seed;
  ch.h.resize(static_cast<std::size_t>(n_f) * n_t * n_k * n_m);

  Rng rng(Rng::split_mix(seed ^ 0x6368616eULL));
  const std::size_t n_taps = profile.delays_s.size();
  std::vector<std::complex<double>> gains(n_taps);
  for (int k = 0; k < n_k; ++k) {
    double user_gain = 1.0;
    if (include_shadowing && profile.spread_db > 0.0)
      user_gain = std::pow(10.0, profile.spread_db * rng.gaussian() / 20.0);
    for (int m = 0; m < n_m; ++m) {
      for (std::size_t l = 0; l < n_taps; ++l) {
        if (l == 0 && profile.rician_k > 0.0) {
          const double kf = profile.rician_k;
          const double los_amp = std::sqrt(profile.powers[0] * kf / (kf + 1.0));
          const double los_phase = 2.0 * M_PI * rng.uniform();
          gains[0] = std::complex<double>(los_amp * std::cos(los_phase),
                                          los_amp * std::sin(los_phase)) +
                     rng.cgaussian(profile.powers[0] / (kf + 1.0));
        } else {
          gains[l] = rng.cgaussian(profile.powers[l]);
        }
      }
      const auto hf = tdl_frequency_response(profile.delays_s, gains, n_f,
                                             subcarrier_spacing_hz);
      for (int f = 0; f < n_f; ++f) {
        const cfloat val(hf[static_cast<std::size_t>(f)] * user_gain);
        for (int t = 0; t < n_t; ++t) ch.at(f, t, k, m) = val;
      }
    }
  }
  return ch;
}

// Adversarial two-ray channel for the precoder-collapse experiment: per user,
// the second tap mirrors the first with a phase ramp whose null lands exactly
// on an in-band subcarrier, so |h_k(f_null)| underflows to a true zero row.
// A regularized inverse shrugs this off; a bare zero-forcing inverse divides
// by zero.
inline ChannelTensor sample_deep_fade_two_ray(int n_f, int n_t, int n_k, int n_m,
                                              std::uint64_t seed) {
  if (n_f < 8) throw std::invalid_argument("deep_fade_two_ray: needs n_f >= 8");
  ChannelTensor ch;
  ch.n_f = n_f;
  ch.n_t = n_t;
  ch.n_k = n_k;
  ch.n_m = n_m;
  ch.profile.name = "deep_fade_two_ray";
  ch.profile.delays_s = {0.0, 1.0};  // symbolic; the ramp below is what matters
  ch.profile.powers = {0.5, 0.5};
  ch.seed = seed;
  ch.h.resize(static_cast<std::size_t>(n_f) * n_t * n_k * n_m);

  Rng rng(Rng::split_mix(seed ^ 0x74776f72ULL));
  const int period = 8;  // delay such that the two rays rotate by 2pi every 8 subcarriers
  for (int k = 0; k < n_k; ++k) {
    const int f_null = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_f)));
    for (int m = 0; m < n_m; ++m) {
      const std::complex<double> g0 = rng.cgaussian(0.5);
      for (int f = 0; f < n_f; ++f) {
        const int r = ((f - f_null) % period + period) % period;
        const double delta = 2.0 * M_PI * static_cast<double>(r) / period;
        // r == 0 makes 1 - e^{j*0} exactly zero at every periodic null
        const std::complex<double> ray(1.0 - std::cos(delta), -std::sin(delta));
        const cfloat val(g0 * ray);
        for (int t = 0; t < n_t; ++t) ch.at(f, t, k, m) = val;
      }
    }
  }
  return ch;
}

// y_{f,t} = H_{f,t} x_{f,t} + n_{f,t}, noise circular complex Gaussian with
// variance sigma2 per receive element.
inline Grid apply_channel(const ChannelTensor& H, const Grid& x, double sigma2,
                          std::uint64_t seed) {
  if (x.kind != GridKind::antennas)
    throw std::invalid_argument("apply_channel: transmit grid must be antenna ports");
  if (x.n_f != H.n_f || x.n_t != H.n_t || x.s != H.n_m)
    throw std::invalid_argument("apply_channel: grid/channel dimension mismatch");
  if (sigma2 < 0.0) throw std::invalid_argument("apply_channel: sigma2 must be >= 0");
  Grid y(H.n_f, H.n_t, H.n_k, GridKind::streams);
  Rng rng(Rng::split_mix(seed ^ 0x6e6f6973ULL));
  for (int f = 0; f < H.n_f; ++f)
    for (int t = 0; t < H.n_t; ++t)
      for (int k = 0; k < H.n_k; ++k) {
        std::complex<double> acc = 0.0;
        for (int m = 0; m < H.n_m; ++m)
          acc += std::complex<double>(H.at(f, t, k, m)) * std::complex<double>(x.at(f, t, m));
        if (sigma2 > 0.0) acc += rng.cgaussian(sigma2);
        y.at(f, t, k) = cfloat(acc);
      }
  return y;
}

// sigma^2 = Es / (m * r * 10^(EbN0/10)).
inline double ebn0_to_noise_var(double ebn0_db, int bits_per_symbol, double code_rate,
                                double symbol_energy) {
  if (bits_per_symbol < 1) throw std::invalid_argument("ebn0_to_noise_var: m must be >= 1");
  if (!(code_rate > 0.0 && code_rate <= 1.0))
    throw std::invalid_argument("ebn0_to_noise_var: r must be in (0,1]");
  return symbol_energy /
         (bits_per_symbol * code_rate * std::pow(10.0, ebn0_db / 10.0));
}

// Semantic-side SNR knob: sigma^2 = Es / 10^(snr/10) with Es = P / N_m.
inline double snr_db_to_noise_var(double snr_db, const LinkConfig& cfg) {
  return (static_cast<double>(cfg.power) / cfg.n_m) / std::pow(10.0, snr_db / 10.0);
}

}  // namespace semcom

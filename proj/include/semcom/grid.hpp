#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "semcom/config.hpp"
#include "semcom/tape.hpp"

namespace semcom {

enum class GridKind { streams, antennas };

// One OFDM resource grid: [n_f subcarriers, n_t symbols, s streams-or-ports].
struct Grid {
  int n_f = 0, n_t = 0, s = 0;
  GridKind kind = GridKind::streams;
  std::vector<cfloat> v;

  Grid() = default;
  Grid(int f, int t, int s_, GridKind k)
      : n_f(f), n_t(t), s(s_), kind(k), v(static_cast<std::size_t>(f) * t * s_) {}

  cfloat& at(int f, int t, int i) {
    return v[(static_cast<std::size_t>(f) * n_t + t) * s + i];
  }
  cfloat at(int f, int t, int i) const {
    return v[(static_cast<std::size_t>(f) * n_t + t) * s + i];
  }
  std::size_t size() const { return v.size(); }
};

// ---------------------------------------------------------------------------
// Feature <-> grid mapping (single realization)
// ---------------------------------------------------------------------------

// Data symbols [n_sf][n_st][n_k] onto the resource grid: pilot symbols carry
// the PilotSpec sequence, every other symbol column carries data in order.
inline Grid map_to_grid(const std::vector<cfloat>& data, const LinkConfig& cfg,
                        const PilotSpec& pilot) {
  cfg.validate();
  const int F = cfg.n_f, T = cfg.n_t, K = cfg.n_k, ST = cfg.n_st();
  if (data.size() != static_cast<std::size_t>(F) * ST * K)
    throw std::invalid_argument("map_to_grid: want " + std::to_string(F * ST * K) +
                                " data symbols, got " + std::to_string(data.size()));
  Grid g(F, T, K, GridKind::streams);
  for (int f = 0; f < F; ++f) {
    int d = 0;
    for (int t = 0; t < T; ++t) {
      const int pp = pilot.pilot_pos(t);
      for (int k = 0; k < K; ++k)
        g.at(f, t, k) = pp >= 0 ? pilot.at(f, pp, k)
                                : data[(static_cast<std::size_t>(f) * ST + d) * K + k];
      if (pp < 0) ++d;
    }
  }
  return g;
}

inline std::vector<cfloat> remove_pilots(const Grid& g, const LinkConfig& cfg,
                                         const PilotSpec& pilot) {
  if (g.kind != GridKind::streams)
    throw std::invalid_argument("remove_pilots: grid kind must be streams");
  const int F = cfg.n_f, T = cfg.n_t, K = cfg.n_k, ST = cfg.n_st();
  std::vector<cfloat> data(static_cast<std::size_t>(F) * ST * K);
  for (int f = 0; f < F; ++f) {
    int d = 0;
    for (int t = 0; t < T; ++t) {
      if (pilot.pilot_pos(t) >= 0) continue;
      for (int k = 0; k < K; ++k)
        data[(static_cast<std::size_t>(f) * ST + d) * K + k] = g.at(f, t, k);
      ++d;
    }
  }
  return data;
}

// Sparse pilot reference Y_p: the known sequence at pilot positions, exact
// zeros everywhere else.
inline Grid pilot_reference(const LinkConfig& cfg, const PilotSpec& pilot) {
  Grid g(cfg.n_f, cfg.n_t, cfg.n_k, GridKind::streams);
  for (int f = 0; f < cfg.n_f; ++f)
    for (int s = 0; s < pilot.count(); ++s)
      for (int k = 0; k < cfg.n_k; ++k)
        g.at(f, pilot.symbol_indices[static_cast<std::size_t>(s)], k) = pilot.at(f, s, k);
  return g;
}

// Scales the grid so the mean per-RE transmit power sum_i |x_{f,t,i}|^2
// equals P exactly.
inline Grid power_normalize(const Grid& x, float P) {
  double total = 0.0;
  for (const cfloat& c : x.v) total += std::norm(c);
  if (total <= 0.0) throw std::invalid_argument("power_normalize: all-zero grid");
  const double mean_per_re = total / (static_cast<double>(x.n_f) * x.n_t);
  const float scale = static_cast<float>(std::sqrt(static_cast<double>(P) / mean_per_re));
  Grid out = x;
  for (cfloat& c : out.v) c *= scale;
  return out;
}

inline double mean_re_power(const Grid& x) {
  double total = 0.0;
  for (const cfloat& c : x.v) total += std::norm(c);
  return total / (static_cast<double>(x.n_f) * x.n_t);
}

// ---------------------------------------------------------------------------
// Debug dump format: header line "GRID v1 N_f N_t S kind", then
// little-endian float32 interleaved (re, im).
// ---------------------------------------------------------------------------

inline void dump_grid(const Grid& g, std::ostream& os) {
  os << "GRID v1 " << g.n_f << " " << g.n_t << " " << g.s << " "
     << (g.kind == GridKind::streams ? "streams" : "antennas") << "\n";
  for (const cfloat& c : g.v) {
    const float re = c.real(), im = c.imag();
    os.write(reinterpret_cast<const char*>(&re), 4);
    os.write(reinterpret_cast<const char*>(&im), 4);
  }
}

inline Grid load_grid(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("grid load: missing header");
  std::istringstream hs(line);
  std::string magic, ver, kind;
  int f = 0, t = 0, s = 0;
  hs >> magic >> ver >> f >> t >> s >> kind;
  if (magic != "GRID" || ver != "v1" || hs.fail())
    throw std::runtime_error("grid load: bad header '" + line + "'");
  Grid g(f, t, s, kind == "streams" ? GridKind::streams : GridKind::antennas);
  for (cfloat& c : g.v) {
    float re = 0.0f, im = 0.0f;
    is.read(reinterpret_cast<char*>(&re), 4);
    is.read(reinterpret_cast<char*>(&im), 4);
    if (!is) throw std::runtime_error("grid load: truncated payload");
    c = cfloat(re, im);
  }
  return g;
}

inline void dump_grid_file(const Grid& g, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("grid dump: cannot open " + path);
  dump_grid(g, os);
}

inline Grid load_grid_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("grid load: cannot open " + path);
  return load_grid(is);
}

// ---------------------------------------------------------------------------
// Differentiable counterparts over [G, ...] batches with a trailing
// real/imag axis of size 2.
// ---------------------------------------------------------------------------

namespace gridops {

// Constant pilot tensor [F, P, K, 2] for grid scatter; zeros off-comb.
inline std::vector<float> pilot_sequence_flat(const PilotSpec& pilot) {
  std::vector<float> out(pilot.sequence.size() * 2);
  for (std::size_t i = 0; i < pilot.sequence.size(); ++i) {
    out[2 * i] = pilot.sequence[i].real();
    out[2 * i + 1] = pilot.sequence[i].imag();
  }
  return out;
}

// features [G, F, ST, K, 2] -> grid [G, F, T, K, 2] with the pilot sequence
// written at pilot symbol positions.
inline ad::Var map_to_grid(ad::Var features, const LinkConfig& cfg, const PilotSpec& pilot) {
  ad::Tape& t = *features.tape;
  const ad::Shape s = t.shape(features);
  const int F = cfg.n_f, T = cfg.n_t, K = cfg.n_k, ST = cfg.n_st();
  ad::check(s.size() == 5 && s[1] == F && s[2] == ST && s[3] == K && s[4] == 2,
            "map_to_grid: feature shape " + ad::shape_str(s) + " does not match config");
  const int G = s[0];

  // data-symbol column for each t, or -1 at pilot positions
  std::vector<int> data_col(static_cast<std::size_t>(T), -1);
  {
    int d = 0;
    for (int tt = 0; tt < T; ++tt)
      if (pilot.pilot_pos(tt) < 0) data_col[static_cast<std::size_t>(tt)] = d++;
  }
  const auto pseq = pilot_sequence_flat(pilot);
  const auto& fv = t.val(features);
  std::vector<float> out(static_cast<std::size_t>(G) * F * T * K * 2);
  for (int g = 0; g < G; ++g)
    for (int f = 0; f < F; ++f)
      for (int tt = 0; tt < T; ++tt) {
        const int pp = pilot.pilot_pos(tt);
        for (int k = 0; k < K; ++k)
          for (int c = 0; c < 2; ++c) {
            const std::size_t o =
                ((((static_cast<std::size_t>(g) * F + f) * T + tt) * K + k) * 2) +
                static_cast<std::size_t>(c);
            out[o] = pp >= 0
                ? pseq[((static_cast<std::size_t>(f) * pilot.count() + pp) * K + k) * 2 +
                       static_cast<std::size_t>(c)]
                : fv[((((static_cast<std::size_t>(g) * F + f) * ST +
                        data_col[static_cast<std::size_t>(tt)]) * K + k) * 2) +
                     static_cast<std::size_t>(c)];
          }
      }
  const int fi = features.id;
  return t.make({G, F, T, K, 2}, std::move(out), {fi},
                [fi, G, F, T, K, ST, data_col](ad::Tape& tp, int self) {
    const auto& gr = tp.node(self).grad;
    auto& gf = tp.grad_buf(fi);
    for (int g = 0; g < G; ++g)
      for (int f = 0; f < F; ++f)
        for (int tt = 0; tt < T; ++tt) {
          const int d = data_col[static_cast<std::size_t>(tt)];
          if (d < 0) continue;  // pilots are constants
          for (int k = 0; k < K; ++k)
            for (int c = 0; c < 2; ++c)
              gf[((((static_cast<std::size_t>(g) * F + f) * ST + d) * K + k) * 2) +
                 static_cast<std::size_t>(c)] +=
                  gr[((((static_cast<std::size_t>(g) * F + f) * T + tt) * K + k) * 2) +
                     static_cast<std::size_t>(c)];
        }
  });
}

// grid [B, F, T, C] -> [B, F, ST, C]: drops pilot symbol columns. Works on
// the per-user batch layout (C = channel axis).
inline ad::Var remove_pilots(ad::Var grid, const LinkConfig& cfg, const PilotSpec& pilot) {
  ad::Tape& t = *grid.tape;
  const ad::Shape s = t.shape(grid);
  const int T = cfg.n_t, ST = cfg.n_st();
  ad::check(s.size() == 4 && s[2] == T, "remove_pilots: want [B,F,T,C] with T = " +
                                            std::to_string(T) + ", got " + ad::shape_str(s));
  const int B = s[0], F = s[1], C = s[3];
  std::vector<int> keep;
  for (int tt = 0; tt < T; ++tt)
    if (pilot.pilot_pos(tt) < 0) keep.push_back(tt);
  const auto& gv = t.val(grid);
  std::vector<float> out(static_cast<std::size_t>(B) * F * ST * C);
  for (int b = 0; b < B; ++b)
    for (int f = 0; f < F; ++f)
      for (int d = 0; d < ST; ++d) {
        const int tt = keep[static_cast<std::size_t>(d)];
        const float* src = gv.data() + (((static_cast<std::size_t>(b) * F + f) * T + tt) * C);
        float* dst = out.data() + (((static_cast<std::size_t>(b) * F + f) * ST + d) * C);
        std::copy_n(src, C, dst);
      }
  const int gi = grid.id;
  return t.make({B, F, ST, C}, std::move(out), {gi},
                [gi, B, F, T, ST, C, keep](ad::Tape& tp, int self) {
    const auto& gr = tp.node(self).grad;
    auto& gg = tp.grad_buf(gi);
    for (int b = 0; b < B; ++b)
      for (int f = 0; f < F; ++f)
        for (int d = 0; d < ST; ++d) {
          const int tt = keep[static_cast<std::size_t>(d)];
          const float* src = gr.data() + (((static_cast<std::size_t>(b) * F + f) * ST + d) * C);
          float* dst = gg.data() + (((static_cast<std::size_t>(b) * F + f) * T + tt) * C);
          for (int c = 0; c < C; ++c) dst[c] += src[c];
        }
  });
}

// x [G, F, T, M, 2] scaled per batch element so the mean per-RE power is P.
// d(c*x)/dx with c = sqrt(P*F*T / sum(x^2)) gives c*(g - x*(x.g)/sum(x^2)).
inline ad::Var power_normalize(ad::Var x, float P) {
  ad::Tape& t = *x.tape;
  const ad::Shape s = t.shape(x);
  ad::check(s.size() == 5 && s.back() == 2, "power_normalize: want [G,F,T,M,2]");
  const int G = s[0];
  const std::size_t per = ad::numel(s) / static_cast<std::size_t>(G);
  const double target = static_cast<double>(P) * s[1] * s[2];
  const auto& xv = t.val(x);
  std::vector<float> out(xv.size());
  std::vector<float> scales(static_cast<std::size_t>(G));
  for (int g = 0; g < G; ++g) {
    const float* px = xv.data() + static_cast<std::size_t>(g) * per;
    float total = 0.0f;  // float32 on purpose: a numerically exploding grid
    float* po = out.data() + static_cast<std::size_t>(g) * per;
    for (std::size_t i = 0; i < per; ++i) total += px[i] * px[i];
    const float c = static_cast<float>(std::sqrt(target / static_cast<double>(total)));
    scales[static_cast<std::size_t>(g)] = c;
    for (std::size_t i = 0; i < per; ++i) po[i] = c * px[i];
  }
  const int xi = x.id;
  return t.make(s, std::move(out), {xi},
                [xi, G, per, target, scales = std::move(scales)](ad::Tape& tp, int self) {
    const auto& gr = tp.node(self).grad;
    const auto& xv2 = tp.node(xi).val;
    auto& gx = tp.grad_buf(xi);
    for (int g = 0; g < G; ++g) {
      const float* px = xv2.data() + static_cast<std::size_t>(g) * per;
      const float* pg = gr.data() + static_cast<std::size_t>(g) * per;
      float* pgx = gx.data() + static_cast<std::size_t>(g) * per;
      const float c = scales[static_cast<std::size_t>(g)];
      double dot = 0.0, total = 0.0;
      for (std::size_t i = 0; i < per; ++i) {
        dot += static_cast<double>(pg[i]) * px[i];
        total += static_cast<double>(px[i]) * px[i];
      }
      const float corr = static_cast<float>(dot / total);
      for (std::size_t i = 0; i < per; ++i) pgx[i] += c * (pg[i] - px[i] * corr);
    }
  });
}

}  // namespace gridops

}  // namespace semcom

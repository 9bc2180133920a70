#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "semcom/params.hpp"
#include "semcom/rng.hpp"
#include "semcom/tape.hpp"

namespace semcom {

struct FdReport {
  double max_err = 0.0;
  int coords_checked = 0;
  int coords_skipped = 0;  // fold points (relu/maxpool kinks inside the interval)
  int worst_coord = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

namespace detail {

// Absolute resolution limit of a float32 central difference: the loss value
// carries accumulated rounding of order budget*eps32*|f|, which the quotient
// amplifies by 1/(2h). Analytic/numeric disagreement inside this band is not
// measurable and scores zero. The budget is per-instance: ~64 ulps suits a
// single layer, deep composites accumulate hundreds of ulps of forward
// rounding per evaluation.
inline double fd_noise_floor(double f_scale, double h, double rounding_budget_ulps) {
  constexpr double kEps32 = 1.1920929e-7;
  return rounding_budget_ulps * kEps32 * std::max(f_scale, 1e-3) / (2.0 * h);
}

// Scores coordinates, refining the step when the first probe disagrees.
// A relu/maxpool kink inside [x-h, x+h] corrupts the central difference; the
// cure is shrinking h until the quotient stabilizes. A wrong backward cannot
// hide behind this: the numeric value it is compared against then comes from
// a stabilized (kink-free) measurement, which exposes the mismatch at every
// step size. Coordinates whose quotient never stabilizes sit on a fold and
// are skipped as unmeasurable.
class FdScorer {
 public:
  FdScorer(double h, double budget) : h_(h), budget_(budget) {}

  // eval_pm(delta) must return f(x + delta e_i) for the current coordinate.
  template <typename EvalFn>
  void probe(int coord, double analytic, double f0, EvalFn&& eval_pm, FdReport& rep) {
    const auto measure = [&](double hh) {
      const double fp = eval_pm(hh);
      const double fm = eval_pm(-hh);
      const double fd = (fp - fm) / (2.0 * hh);
      const double noise =
          fd_noise_floor(std::max({std::abs(fp), std::abs(fm), std::abs(f0)}), hh, budget_);
      return std::pair<double, double>(fd, noise);
    };
    auto [fd, noise] = measure(h_);
    if (std::abs(analytic - fd) > noise) {
      const auto [fd2, n2] = measure(h_ / 2.0);
      const auto [fd4, n4] = measure(h_ / 4.0);
      const double scale = std::max({std::abs(analytic), std::abs(fd4), n4});
      if (std::abs(fd2 - fd4) > std::max(2.0 * n4, 0.005 * scale)) {
        ++rep.coords_skipped;  // no stable derivative in reach: fold point
        return;
      }
      fd = fd4;
      noise = n4;
    }
    const double diff = std::max(0.0, std::abs(analytic - fd) - noise);
    const double err = diff / std::max({std::abs(analytic), std::abs(fd), 1e-12});
    ++rep.coords_checked;
    if (err > rep.max_err) {
      rep.max_err = err;
      rep.worst_coord = coord;
      rep.worst_analytic = analytic;
      rep.worst_numeric = fd;
    }
  }

 private:
  double h_, budget_;
};

}  // namespace detail

// Compares backward() against central finite differences of a scalar-valued
// function of one tensor on `n_coords` sampled coordinates. `build` must be
// deterministic and must not mutate external state.
inline FdReport finite_diff_check(const std::function<ad::Var(ad::Tape&, ad::Var)>& build,
                                  const ad::Shape& shape, const std::vector<float>& point,
                                  double h, int n_coords, std::uint64_t seed,
                                  double rounding_budget_ulps = 64.0) {
  ad::Tape tape;
  ad::Var x = tape.input(shape, point, true);
  ad::Var loss = build(tape, x);
  tape.backward(loss);
  const std::vector<float> analytic = tape.has_grad(x)
      ? tape.grad(x)
      : std::vector<float>(point.size(), 0.0f);
  const double f0 = static_cast<double>(tape.val(loss)[0]);

  auto eval = [&](const std::vector<float>& p) {
    ad::Tape t2;
    ad::Var x2 = t2.input(shape, p, false);
    return static_cast<double>(t2.val(build(t2, x2))[0]);
  };

  Rng rng(seed);
  FdReport rep;
  detail::FdScorer scorer(h, rounding_budget_ulps);
  std::vector<float> pt = point;
  const int max_attempts = n_coords * 3 + 10;
  for (int a = 0; a < max_attempts && rep.coords_checked < n_coords; ++a) {
    const std::size_t i = static_cast<std::size_t>(rng.below(point.size()));
    const float orig = pt[i];
    scorer.probe(static_cast<int>(i), analytic[i], f0,
                 [&](double delta) {
                   pt[i] = orig + static_cast<float>(delta);
                   const double f = eval(pt);
                   pt[i] = orig;
                   return f;
                 },
                 rep);
  }
  return rep;
}

// Same check across the trainable parameters of a ParamStore. The store is
// perturbed in place and restored after each probe.
struct ParamFdTarget {
  // Scalar loss for the current store contents.
  std::function<double()> loss_value;
  // One forward+backward, returning per-param flat gradients.
  std::function<std::vector<std::vector<float>>()> gradients;
};

inline FdReport finite_diff_check_params(ParamStore& store, const ParamFdTarget& target,
                                         double h, int n_coords, std::uint64_t seed,
                                         double rounding_budget_ulps = 64.0) {
  const auto grads = target.gradients();
  const double f0 = target.loss_value();

  std::vector<std::pair<int, std::size_t>> coords;
  for (int pi = 0; pi < store.count(); ++pi) {
    if (!store[pi].trainable) continue;
    for (std::size_t j = 0; j < store[pi].value.size(); ++j) coords.emplace_back(pi, j);
  }
  Rng rng(seed);
  FdReport rep;
  detail::FdScorer scorer(h, rounding_budget_ulps);
  const int max_attempts = n_coords * 3 + 10;
  for (int a = 0; a < max_attempts && rep.coords_checked < n_coords; ++a) {
    const auto [pi, j] = coords[static_cast<std::size_t>(rng.below(coords.size()))];
    float& slot = store[pi].value[j];
    const float orig = slot;
    scorer.probe(static_cast<int>(j), grads[static_cast<std::size_t>(pi)][j], f0,
                 [&](double delta) {
                   slot = orig + static_cast<float>(delta);
                   const double f = target.loss_value();
                   slot = orig;
                   return f;
                 },
                 rep);
  }
  return rep;
}

}  // namespace semcom

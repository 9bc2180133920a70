#pragma once

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

#include "semcom/config.hpp"
#include "semcom/tape.hpp"

namespace semcom {

struct SingularMatrixError : std::runtime_error {
  int slice;
  explicit SingularMatrixError(int slice_idx)
      : std::runtime_error("singular matrix in batched inverse at slice " +
                           std::to_string(slice_idx)),
        slice(slice_idx) {}
};

inline constexpr double kPivotFloor = 1e-12;

namespace linalg {

// In-place Gauss-Jordan with partial pivoting on [A | I]. Entries arrive as
// float32; elimination runs in double so the result is limited by the input
// rounding, not the elimination. `strict` turns an (effectively) exact zero
// pivot into an error naming the slice; non-strict divides through, which
// yields inf/NaN downstream by design for the zero-forcing collapse path.
inline void cinv_slice(const std::complex<double>* a, std::complex<double>* out, int n,
                       bool strict, int slice_idx) {
  std::vector<std::complex<double>> m(static_cast<std::size_t>(n) * n);
  std::copy(a, a + static_cast<std::size_t>(n) * n, m.begin());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i) * n + j] = i == j ? 1.0 : 0.0;

  for (int col = 0; col < n; ++col) {
    int piv = col;
    double best = std::abs(m[static_cast<std::size_t>(col) * n + col]);
    for (int r = col + 1; r < n; ++r) {
      const double mag = std::abs(m[static_cast<std::size_t>(r) * n + col]);
      if (mag > best) {
        best = mag;
        piv = r;
      }
    }
    if (strict && best < kPivotFloor) throw SingularMatrixError(slice_idx);
    if (piv != col) {
      for (int j = 0; j < n; ++j) {
        std::swap(m[static_cast<std::size_t>(piv) * n + j], m[static_cast<std::size_t>(col) * n + j]);
        std::swap(out[static_cast<std::size_t>(piv) * n + j], out[static_cast<std::size_t>(col) * n + j]);
      }
    }
    const std::complex<double> inv_p = 1.0 / m[static_cast<std::size_t>(col) * n + col];
    for (int j = 0; j < n; ++j) {
      m[static_cast<std::size_t>(col) * n + j] *= inv_p;
      out[static_cast<std::size_t>(col) * n + j] *= inv_p;
    }
    for (int r = 0; r < n; ++r) {
      if (r == col) continue;
      const std::complex<double> factor = m[static_cast<std::size_t>(r) * n + col];
      if (factor == 0.0) continue;
      for (int j = 0; j < n; ++j) {
        m[static_cast<std::size_t>(r) * n + j] -= factor * m[static_cast<std::size_t>(col) * n + j];
        out[static_cast<std::size_t>(r) * n + j] -=
            factor * out[static_cast<std::size_t>(col) * n + j];
      }
    }
  }
}

}  // namespace linalg

// Batched inverse of [..., n, n] complex slices.
inline std::vector<cfloat> batched_cinv(const std::vector<cfloat>& a, int n, bool strict = true) {
  if (n < 1 || a.size() % (static_cast<std::size_t>(n) * n) != 0)
    throw std::invalid_argument("batched_cinv: size not a multiple of n*n");
  const std::size_t slices = a.size() / (static_cast<std::size_t>(n) * n);
  std::vector<cfloat> out(a.size());
  std::vector<std::complex<double>> ad(static_cast<std::size_t>(n) * n);
  std::vector<std::complex<double>> od(static_cast<std::size_t>(n) * n);
  for (std::size_t s = 0; s < slices; ++s) {
    const std::size_t off = s * n * n;
    for (std::size_t i = 0; i < ad.size(); ++i) ad[i] = std::complex<double>(a[off + i]);
    linalg::cinv_slice(ad.data(), od.data(), n, strict, static_cast<int>(s));
    for (std::size_t i = 0; i < ad.size(); ++i) out[off + i] = cfloat(od[i]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Differentiable complex ops over real tensors with a trailing (re, im) axis.
// Gradients follow the pair convention g = dL/d(re) + j dL/d(im); for
// holomorphic maps this gives G_A = -B^H G B^H for B = A^{-1} and
// G_A = G C^H, G_B = A^H G for C = A B.
// ---------------------------------------------------------------------------

namespace cops {

inline std::complex<double> cat(const std::vector<float>& v, std::size_t idx) {
  return {static_cast<double>(v[2 * idx]), static_cast<double>(v[2 * idx + 1])};
}

inline void cadd_to(std::vector<float>& v, std::size_t idx, std::complex<double> g) {
  v[2 * idx] += static_cast<float>(g.real());
  v[2 * idx + 1] += static_cast<float>(g.imag());
}

inline void cset(std::vector<float>& v, std::size_t idx, std::complex<double> g) {
  v[2 * idx] = static_cast<float>(g.real());
  v[2 * idx + 1] = static_cast<float>(g.imag());
}

// Batched complex matmul: A [batch.., n, k, 2] x B [batch.., k, m, 2].
inline ad::Var cmatmul(ad::Var A, ad::Var B) {
  ad::detail::same_tape(A, B);
  ad::Tape& t = *A.tape;
  const ad::Shape as = t.shape(A);
  const ad::Shape bs = t.shape(B);
  ad::check(as.size() >= 3 && as.back() == 2 && bs.size() == as.size() && bs.back() == 2,
            "cmatmul: want [..,n,k,2] x [..,k,m,2]");
  for (std::size_t d = 0; d + 3 < as.size(); ++d)
    ad::check(as[d] == bs[d], "cmatmul: batch dims disagree");
  const int n = as[as.size() - 3], k = as[as.size() - 2];
  const int k2 = bs[bs.size() - 3], m = bs[bs.size() - 2];
  ad::check(k == k2, "cmatmul: inner dims " + std::to_string(k) + " vs " + std::to_string(k2));
  std::size_t batch = 1;
  for (std::size_t d = 0; d + 3 < as.size(); ++d) batch *= static_cast<std::size_t>(as[d]);

  ad::Shape os(as.begin(), as.end() - 3);
  os.push_back(n);
  os.push_back(m);
  os.push_back(2);

  const auto& av = t.val(A);
  const auto& bv = t.val(B);
  std::vector<float> out(ad::numel(os));
  for (std::size_t s = 0; s < batch; ++s) {
    const std::size_t ao = s * n * k, bo = s * k * m, oo = s * n * m;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) {
        std::complex<double> acc = 0.0;
        for (int p = 0; p < k; ++p)
          acc += cat(av, ao + static_cast<std::size_t>(i) * k + p) *
                 cat(bv, bo + static_cast<std::size_t>(p) * m + j);
        cset(out, oo + static_cast<std::size_t>(i) * m + j, acc);
      }
  }
  const int ai = A.id, bi = B.id;
  return t.make(os, std::move(out), {ai, bi},
                [ai, bi, batch, n, k, m](ad::Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    const auto& av2 = tp.node(ai).val;
    const auto& bv2 = tp.node(bi).val;
    if (tp.wants_grad(ai)) {
      auto& ga = tp.grad_buf(ai);
      // G_A = G * B^H
      for (std::size_t s = 0; s < batch; ++s) {
        const std::size_t ao = s * n * k, bo = s * k * m, oo = s * n * m;
        for (int i = 0; i < n; ++i)
          for (int p = 0; p < k; ++p) {
            std::complex<double> acc = 0.0;
            for (int j = 0; j < m; ++j)
              acc += cat(g, oo + static_cast<std::size_t>(i) * m + j) *
                     std::conj(cat(bv2, bo + static_cast<std::size_t>(p) * m + j));
            cadd_to(ga, ao + static_cast<std::size_t>(i) * k + p, acc);
          }
      }
    }
    if (tp.wants_grad(bi)) {
      auto& gb = tp.grad_buf(bi);
      // G_B = A^H * G
      for (std::size_t s = 0; s < batch; ++s) {
        const std::size_t ao = s * n * k, bo = s * k * m, oo = s * n * m;
        for (int p = 0; p < k; ++p)
          for (int j = 0; j < m; ++j) {
            std::complex<double> acc = 0.0;
            for (int i = 0; i < n; ++i)
              acc += std::conj(cat(av2, ao + static_cast<std::size_t>(i) * k + p)) *
                     cat(g, oo + static_cast<std::size_t>(i) * m + j);
            cadd_to(gb, bo + static_cast<std::size_t>(p) * m + j, acc);
          }
      }
    }
  });
}

// Conjugate transpose of the trailing matrix dims: [.., n, m, 2] -> [.., m, n, 2].
inline ad::Var chermitian(ad::Var A) {
  ad::Tape& t = *A.tape;
  const ad::Shape as = t.shape(A);
  ad::check(as.size() >= 3 && as.back() == 2, "chermitian: want [..,n,m,2]");
  const int n = as[as.size() - 3], m = as[as.size() - 2];
  std::size_t batch = 1;
  for (std::size_t d = 0; d + 3 < as.size(); ++d) batch *= static_cast<std::size_t>(as[d]);
  ad::Shape os(as.begin(), as.end() - 3);
  os.push_back(m);
  os.push_back(n);
  os.push_back(2);
  const auto& av = t.val(A);
  std::vector<float> out(av.size());
  for (std::size_t s = 0; s < batch; ++s)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) {
        const std::size_t src = s * n * m + static_cast<std::size_t>(i) * m + j;
        const std::size_t dst = s * n * m + static_cast<std::size_t>(j) * n + i;
        out[2 * dst] = av[2 * src];
        out[2 * dst + 1] = -av[2 * src + 1];
      }
  const int ai = A.id;
  return t.make(os, std::move(out), {ai}, [ai, batch, n, m](ad::Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    auto& ga = tp.grad_buf(ai);
    for (std::size_t s = 0; s < batch; ++s)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) {
          const std::size_t src = s * n * m + static_cast<std::size_t>(j) * n + i;
          const std::size_t dst = s * n * m + static_cast<std::size_t>(i) * m + j;
          ga[2 * dst] += g[2 * src];
          ga[2 * dst + 1] -= g[2 * src + 1];
        }
  });
}

// A + s*coef*I on the trailing [n, n] dims (real shift on the diagonal);
// s is a scalar Var so the regularization strength stays learnable. `coefs`
// is indexed by the leading batch dim (size 1 broadcasts) — this is where the
// per-realization noise variance enters the regularizer.
inline ad::Var add_scalar_diag(ad::Var A, ad::Var s, std::vector<float> coefs) {
  ad::detail::same_tape(A, s);
  ad::Tape& t = *A.tape;
  const ad::Shape as = t.shape(A);
  ad::check(as.size() >= 3 && as.back() == 2, "add_scalar_diag: want [..,n,n,2]");
  const int n = as[as.size() - 3];
  ad::check(as[as.size() - 2] == n, "add_scalar_diag: trailing dims must be square");
  ad::check(ad::numel(t.shape(s)) == 1, "add_scalar_diag: shift must be scalar");
  const int lead = as.size() > 3 ? as[0] : 1;
  ad::check(static_cast<int>(coefs.size()) == lead || coefs.size() == 1,
            "add_scalar_diag: coef count must match leading dim");
  std::size_t batch = 1;
  for (std::size_t d = 0; d + 3 < as.size(); ++d) batch *= static_cast<std::size_t>(as[d]);
  const std::size_t per_lead = batch / static_cast<std::size_t>(lead);
  const float sv = t.val(s)[0];
  std::vector<float> out = t.val(A);
  for (std::size_t b = 0; b < batch; ++b) {
    const float coef = coefs[coefs.size() == 1 ? 0 : b / per_lead];
    for (int i = 0; i < n; ++i)
      out[2 * (b * n * n + static_cast<std::size_t>(i) * n + i)] += sv * coef;
  }
  const int ai = A.id, si = s.id;
  return t.make(as, std::move(out), {ai, si},
                [ai, si, batch, per_lead, n, coefs = std::move(coefs)](ad::Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    if (tp.wants_grad(ai)) {
      auto& ga = tp.grad_buf(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.wants_grad(si)) {
      auto& gs = tp.grad_buf(si);
      double acc = 0.0;
      for (std::size_t b = 0; b < batch; ++b) {
        const float coef = coefs[coefs.size() == 1 ? 0 : b / per_lead];
        for (int i = 0; i < n; ++i)
          acc += coef * g[2 * (b * n * n + static_cast<std::size_t>(i) * n + i)];
      }
      gs[0] += static_cast<float>(acc);
    }
  });
}

inline ad::Var add_scalar_diag(ad::Var A, ad::Var s, float coef) {
  return add_scalar_diag(A, s, std::vector<float>{coef});
}

// Batched inverse with the analytic backward dA^{-1} = -A^{-1} dA A^{-1}
// (pair convention: G_A = -B^H G B^H). Differentiating the elimination steps
// would be both slower and numerically fragile.
inline ad::Var cinv(ad::Var A, bool strict = true) {
  ad::Tape& t = *A.tape;
  const ad::Shape as = t.shape(A);
  ad::check(as.size() >= 3 && as.back() == 2, "cinv: want [..,n,n,2]");
  const int n = as[as.size() - 3];
  ad::check(as[as.size() - 2] == n, "cinv: trailing dims must be square");
  std::size_t batch = 1;
  for (std::size_t d = 0; d + 3 < as.size(); ++d) batch *= static_cast<std::size_t>(as[d]);
  const auto& av = t.val(A);
  std::vector<float> out(av.size());
  std::vector<std::complex<double>> ad_(static_cast<std::size_t>(n) * n);
  std::vector<std::complex<double>> od(static_cast<std::size_t>(n) * n);
  for (std::size_t s = 0; s < batch; ++s) {
    const std::size_t off = s * n * n;
    for (std::size_t i = 0; i < ad_.size(); ++i) ad_[i] = cat(av, off + i);
    linalg::cinv_slice(ad_.data(), od.data(), n, strict, static_cast<int>(s));
    for (std::size_t i = 0; i < od.size(); ++i) cset(out, off + i, od[i]);
  }
  const int ai = A.id;
  return t.make(as, std::move(out), {ai}, [ai, batch, n](ad::Tape& tp, int self) {
    if (!tp.wants_grad(ai)) return;
    const auto& g = tp.node(self).grad;
    const auto& bv = tp.node(self).val;  // B = A^{-1}
    auto& ga = tp.grad_buf(ai);
    std::vector<std::complex<double>> tmp(static_cast<std::size_t>(n) * n);
    for (std::size_t s = 0; s < batch; ++s) {
      const std::size_t off = s * n * n;
      // tmp = B^H * G
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          std::complex<double> acc = 0.0;
          for (int p = 0; p < n; ++p)
            acc += std::conj(cat(bv, off + static_cast<std::size_t>(p) * n + i)) *
                   cat(g, off + static_cast<std::size_t>(p) * n + j);
          tmp[static_cast<std::size_t>(i) * n + j] = acc;
        }
      // G_A = -tmp * B^H
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
          std::complex<double> acc = 0.0;
          for (int p = 0; p < n; ++p)
            acc += tmp[static_cast<std::size_t>(i) * n + p] *
                   std::conj(cat(bv, off + static_cast<std::size_t>(j) * n + p));
          cadd_to(ga, off + static_cast<std::size_t>(i) * n + j, -acc);
        }
    }
  });
}

}  // namespace cops

}  // namespace semcom

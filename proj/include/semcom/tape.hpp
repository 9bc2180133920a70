#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace semcom::ad {

using Shape = std::vector<int>;

inline std::size_t numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

class Tape;

// Handle to a node on a tape. Cheap to copy; only meaningful while the
// owning tape is alive.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Reverse-mode tape over dense float32 tensors. Nodes are recorded in
// topological order by construction; backward() walks them once in reverse.
class Tape {
 public:
  struct Node {
    Shape shape;
    std::vector<float> val;
    std::vector<float> grad;
    bool requires_grad = false;
    std::vector<int> inputs;
    // Accumulates into the grads of `inputs` given this node's grad.
    std::function<void(Tape&, int)> backprop;
  };

  Var input(Shape shape, std::vector<float> values, bool requires_grad) {
    check(values.size() == numel(shape), "tape input: data length " +
              std::to_string(values.size()) + " != numel" + shape_str(shape));
    nodes_.push_back(Node{std::move(shape), std::move(values), {}, requires_grad, {}, nullptr});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  Var constant(Shape shape, std::vector<float> values) {
    return input(std::move(shape), std::move(values), false);
  }

  Var scalar(float v, bool requires_grad = false) {
    return input({1}, {v}, requires_grad);
  }

  // Record an op node. `requires_grad` is inherited from the inputs.
  Var make(Shape shape, std::vector<float> val, std::vector<int> inputs,
           std::function<void(Tape&, int)> backprop) {
    check(val.size() == numel(shape), "tape make: value/shape mismatch");
    bool rg = false;
    for (int i : inputs) rg = rg || nodes_[static_cast<std::size_t>(i)].requires_grad;
    nodes_.push_back(Node{std::move(shape), std::move(val), {}, rg,
                          std::move(inputs), rg ? std::move(backprop) : nullptr});
    return Var{this, static_cast<int>(nodes_.size()) - 1};
  }

  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  const Shape& shape(Var v) const { return node(v.id).shape; }
  const std::vector<float>& val(Var v) const { return node(v.id).val; }
  std::size_t size() const { return nodes_.size(); }

  bool wants_grad(int id) const { return node(id).requires_grad; }

  // Zero-initialized gradient buffer for a node, created on first use.
  std::vector<float>& grad_buf(int id) {
    Node& n = node(id);
    if (n.grad.empty()) n.grad.assign(n.val.size(), 0.0f);
    return n.grad;
  }

  const std::vector<float>& grad(Var v) const {
    const Node& n = node(v.id);
    check(!n.grad.empty(), "grad not materialized; run backward() first");
    return n.grad;
  }

  bool has_grad(Var v) const { return !node(v.id).grad.empty(); }

  // Reverse sweep from a scalar loss. Every requires_grad leaf reachable
  // from `loss` ends up with a materialized gradient.
  void backward(Var loss) {
    check(loss.tape == this, "backward: var from another tape");
    check(numel(node(loss.id).shape) == 1, "backward: loss must be scalar, got " +
              shape_str(node(loss.id).shape));
    grad_buf(loss.id)[0] = 1.0f;
    for (int id = loss.id; id >= 0; --id) {
      Node& n = node(id);
      if (n.grad.empty() || !n.backprop) continue;
      n.backprop(*this, id);
    }
  }

  void clear() { nodes_.clear(); }

 private:
  std::vector<Node> nodes_;
};

namespace detail {
inline void same_tape(Var a, Var b) {
  check(a.tape == b.tape, "vars from different tapes");
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

inline Var add(Var a, Var b) {
  detail::same_tape(a, b);
  Tape& t = *a.tape;
  check(t.shape(a) == t.shape(b), "add: shape mismatch " + shape_str(t.shape(a)) +
            " vs " + shape_str(t.shape(b)));
  const auto& av = t.val(a);
  const auto& bv = t.val(b);
  std::vector<float> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[i];
  const int ai = a.id, bi = b.id;
  return t.make(t.shape(a), std::move(out), {ai, bi}, [ai, bi](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    if (tp.wants_grad(ai)) {
      auto& ga = tp.grad_buf(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.wants_grad(bi)) {
      auto& gb = tp.grad_buf(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
}

inline Var sub(Var a, Var b) {
  detail::same_tape(a, b);
  Tape& t = *a.tape;
  check(t.shape(a) == t.shape(b), "sub: shape mismatch");
  const auto& av = t.val(a);
  const auto& bv = t.val(b);
  std::vector<float> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - bv[i];
  const int ai = a.id, bi = b.id;
  return t.make(t.shape(a), std::move(out), {ai, bi}, [ai, bi](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    if (tp.wants_grad(ai)) {
      auto& ga = tp.grad_buf(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (tp.wants_grad(bi)) {
      auto& gb = tp.grad_buf(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

inline Var mul(Var a, Var b) {
  detail::same_tape(a, b);
  Tape& t = *a.tape;
  check(t.shape(a) == t.shape(b), "mul: shape mismatch");
  const auto& av = t.val(a);
  const auto& bv = t.val(b);
  std::vector<float> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[i];
  const int ai = a.id, bi = b.id;
  return t.make(t.shape(a), std::move(out), {ai, bi}, [ai, bi](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    const auto& av2 = tp.node(ai).val;
    const auto& bv2 = tp.node(bi).val;
    if (tp.wants_grad(ai)) {
      auto& ga = tp.grad_buf(ai);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
    }
    if (tp.wants_grad(bi)) {
      auto& gb = tp.grad_buf(bi);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
    }
  });
}

inline Var scale(Var a, float c) {
  Tape& t = *a.tape;
  const auto& av = t.val(a);
  std::vector<float> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * c;
  const int ai = a.id;
  return t.make(t.shape(a), std::move(out), {ai}, [ai, c](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    auto& ga = tp.grad_buf(ai);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
  });
}

enum class Act { relu, sigmoid, tanh };

inline Var activation(Var x, Act kind) {
  Tape& t = *x.tape;
  const auto& xv = t.val(x);
  std::vector<float> out(xv.size());
  switch (kind) {
    case Act::relu:
      for (std::size_t i = 0; i < xv.size(); ++i) out[i] = xv[i] > 0.0f ? xv[i] : 0.0f;
      break;
    case Act::sigmoid:
      for (std::size_t i = 0; i < xv.size(); ++i) out[i] = 1.0f / (1.0f + std::exp(-xv[i]));
      break;
    case Act::tanh:
      for (std::size_t i = 0; i < xv.size(); ++i) out[i] = std::tanh(xv[i]);
      break;
  }
  const int xi = x.id;
  return t.make(t.shape(x), std::move(out), {xi}, [xi, kind](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    const auto& y = tp.node(self).val;
    const auto& xv2 = tp.node(xi).val;
    auto& gx = tp.grad_buf(xi);
    switch (kind) {
      case Act::relu:
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += xv2[i] > 0.0f ? g[i] : 0.0f;
        break;
      case Act::sigmoid:
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0f - y[i]);
        break;
      case Act::tanh:
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (1.0f - y[i] * y[i]);
        break;
    }
  });
}

inline Var relu(Var x) { return activation(x, Act::relu); }
inline Var sigmoid(Var x) { return activation(x, Act::sigmoid); }
inline Var tanh_act(Var x) { return activation(x, Act::tanh); }

// softplus(x) = log(1 + e^x), numerically stable; used for the nonnegative
// reparameterization of the precoder regularizer.
inline Var softplus(Var x) {
  Tape& t = *x.tape;
  const auto& xv = t.val(x);
  std::vector<float> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const float v = xv[i];
    out[i] = v > 20.0f ? v : std::log1p(std::exp(std::min(v, 20.0f)));
  }
  const int xi = x.id;
  return t.make(t.shape(x), std::move(out), {xi}, [xi](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    const auto& xv2 = tp.node(xi).val;
    auto& gx = tp.grad_buf(xi);
    for (std::size_t i = 0; i < g.size(); ++i)
      gx[i] += g[i] / (1.0f + std::exp(-xv2[i]));
  });
}

// ---------------------------------------------------------------------------
// Structural ops
// ---------------------------------------------------------------------------

inline Var reshape(Var x, Shape shape) {
  Tape& t = *x.tape;
  check(numel(shape) == numel(t.shape(x)),
        "reshape: numel mismatch " + shape_str(t.shape(x)) + " -> " + shape_str(shape));
  const int xi = x.id;
  std::vector<float> out = t.val(x);
  return t.make(std::move(shape), std::move(out), {xi}, [xi](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    auto& gx = tp.grad_buf(xi);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

// Concatenate along `axis`. All other dims must agree.
inline Var concat(const std::vector<Var>& parts, int axis) {
  check(!parts.empty(), "concat: no inputs");
  Tape& t = *parts[0].tape;
  Shape s0 = t.shape(parts[0]);
  check(axis >= 0 && axis < static_cast<int>(s0.size()), "concat: bad axis");
  int total = 0;
  for (Var p : parts) {
    detail::same_tape(parts[0], p);
    Shape sp = t.shape(p);
    check(sp.size() == s0.size(), "concat: rank mismatch");
    for (std::size_t d = 0; d < sp.size(); ++d)
      if (static_cast<int>(d) != axis)
        check(sp[d] == s0[d], "concat: dim mismatch on axis " + std::to_string(d));
    total += sp[axis];
  }
  Shape out_shape = s0;
  out_shape[axis] = total;

  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(s0[d]);
  for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < s0.size(); ++d)
    inner *= static_cast<std::size_t>(s0[d]);

  std::vector<float> out(numel(out_shape));
  std::vector<int> ids;
  std::vector<int> widths;
  for (Var p : parts) {
    ids.push_back(p.id);
    widths.push_back(t.shape(p)[axis]);
  }
  std::size_t off = 0;
  for (std::size_t pi = 0; pi < ids.size(); ++pi) {
    const auto& pv = t.node(ids[pi]).val;
    const std::size_t w = static_cast<std::size_t>(widths[pi]) * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * w), w,
                  out.begin() + static_cast<std::ptrdiff_t>(o * static_cast<std::size_t>(total) * inner + off));
    off += w;
  }
  return t.make(out_shape, std::move(out), ids,
                [ids, widths, outer, inner, total](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    std::size_t off2 = 0;
    for (std::size_t pi = 0; pi < ids.size(); ++pi) {
      const std::size_t w = static_cast<std::size_t>(widths[pi]) * inner;
      if (tp.wants_grad(ids[pi])) {
        auto& gp = tp.grad_buf(ids[pi]);
        for (std::size_t o = 0; o < outer; ++o) {
          const float* src = g.data() + o * static_cast<std::size_t>(total) * inner + off2;
          float* dst = gp.data() + o * w;
          for (std::size_t i = 0; i < w; ++i) dst[i] += src[i];
        }
      }
      off2 += w;
    }
  });
}

// Slice `len` entries starting at `start` along `axis`.
inline Var slice(Var x, int axis, int start, int len) {
  Tape& t = *x.tape;
  Shape s = t.shape(x);
  check(axis >= 0 && axis < static_cast<int>(s.size()), "slice: bad axis");
  check(start >= 0 && len >= 1 && start + len <= s[axis], "slice: out of range");
  std::size_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= static_cast<std::size_t>(s[d]);
  for (std::size_t d = static_cast<std::size_t>(axis) + 1; d < s.size(); ++d)
    inner *= static_cast<std::size_t>(s[d]);
  const std::size_t in_w = static_cast<std::size_t>(s[axis]) * inner;
  const std::size_t out_w = static_cast<std::size_t>(len) * inner;

  Shape out_shape = s;
  out_shape[axis] = len;
  std::vector<float> out(numel(out_shape));
  const auto& xv = t.val(x);
  for (std::size_t o = 0; o < outer; ++o)
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(o * in_w + static_cast<std::size_t>(start) * inner),
                out_w, out.begin() + static_cast<std::ptrdiff_t>(o * out_w));
  const int xi = x.id;
  return t.make(out_shape, std::move(out), {xi},
                [xi, outer, inner, in_w, out_w, start](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    auto& gx = tp.grad_buf(xi);
    for (std::size_t o = 0; o < outer; ++o) {
      const float* src = g.data() + o * out_w;
      float* dst = gx.data() + o * in_w + static_cast<std::size_t>(start) * inner;
      for (std::size_t i = 0; i < out_w; ++i) dst[i] += src[i];
    }
  });
}

// [G, F, T, K, C] -> [G*K, F, T, C]: per-user streams folded into the batch
// axis, group-major so row g*K+k is user k of group g.
inline Var users_to_batch(Var x) {
  Tape& t = *x.tape;
  Shape s = t.shape(x);
  check(s.size() == 5, "users_to_batch: want rank-5 [G,F,T,K,C], got " + shape_str(s));
  const int G = s[0], F = s[1], T = s[2], K = s[3], C = s[4];
  Shape out_shape{G * K, F, T, C};
  std::vector<float> out(numel(out_shape));
  const auto& xv = t.val(x);
  const std::size_t cs = static_cast<std::size_t>(C);
  for (int g = 0; g < G; ++g)
    for (int f = 0; f < F; ++f)
      for (int tt = 0; tt < T; ++tt)
        for (int k = 0; k < K; ++k) {
          const std::size_t src = (((static_cast<std::size_t>(g) * F + f) * T + tt) * K + k) * cs;
          const std::size_t dst = (((static_cast<std::size_t>(g) * K + k) * F + f) * T + tt) * cs;
          for (std::size_t c = 0; c < cs; ++c) out[dst + c] = xv[src + c];
        }
  const int xi = x.id;
  return t.make(out_shape, std::move(out), {xi}, [xi, G, F, T, K, C](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    auto& gx = tp.grad_buf(xi);
    const std::size_t cs = static_cast<std::size_t>(C);
    for (int gg = 0; gg < G; ++gg)
      for (int f = 0; f < F; ++f)
        for (int tt = 0; tt < T; ++tt)
          for (int k = 0; k < K; ++k) {
            const std::size_t src = (((static_cast<std::size_t>(gg) * F + f) * T + tt) * K + k) * cs;
            const std::size_t dst = (((static_cast<std::size_t>(gg) * K + k) * F + f) * T + tt) * cs;
            for (std::size_t c = 0; c < cs; ++c) gx[src + c] += g[dst + c];
          }
  });
}

// [G*K, F, T, C] -> [G, F, T, K, C]: inverse of users_to_batch.
inline Var batch_to_users(Var x, int users) {
  Tape& t = *x.tape;
  Shape s = t.shape(x);
  check(s.size() == 4, "batch_to_users: want rank-4 [B,F,T,C]");
  check(s[0] % users == 0, "batch_to_users: batch not divisible by user count");
  const int G = s[0] / users, F = s[1], T = s[2], K = users, C = s[3];
  Shape out_shape{G, F, T, K, C};
  std::vector<float> out(numel(out_shape));
  const auto& xv = t.val(x);
  const std::size_t cs = static_cast<std::size_t>(C);
  for (int g = 0; g < G; ++g)
    for (int k = 0; k < K; ++k)
      for (int f = 0; f < F; ++f)
        for (int tt = 0; tt < T; ++tt) {
          const std::size_t src = (((static_cast<std::size_t>(g) * K + k) * F + f) * T + tt) * cs;
          const std::size_t dst = (((static_cast<std::size_t>(g) * F + f) * T + tt) * K + k) * cs;
          for (std::size_t c = 0; c < cs; ++c) out[dst + c] = xv[src + c];
        }
  const int xi = x.id;
  return t.make(out_shape, std::move(out), {xi}, [xi, G, F, T, K, C](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    auto& gx = tp.grad_buf(xi);
    const std::size_t cs = static_cast<std::size_t>(C);
    for (int gg = 0; gg < G; ++gg)
      for (int k = 0; k < K; ++k)
        for (int f = 0; f < F; ++f)
          for (int tt = 0; tt < T; ++tt) {
            const std::size_t src = (((static_cast<std::size_t>(gg) * K + k) * F + f) * T + tt) * cs;
            const std::size_t dst = (((static_cast<std::size_t>(gg) * F + f) * T + tt) * K + k) * cs;
            for (std::size_t c = 0; c < cs; ++c) gx[src + c] += g[dst + c];
          }
  });
}

// ---------------------------------------------------------------------------
// Broadcast and reduction ops
// ---------------------------------------------------------------------------

// x: [B, ..., C], gate: [B, C]; multiplies each channel by a per-sample gate.
inline Var channel_gate(Var x, Var gate) {
  detail::same_tape(x, gate);
  Tape& t = *x.tape;
  Shape xs = t.shape(x);
  Shape gs = t.shape(gate);
  check(xs.size() >= 2 && gs.size() == 2, "channel_gate: bad ranks");
  check(xs.front() == gs[0] && xs.back() == gs[1],
        "channel_gate: " + shape_str(xs) + " vs gate " + shape_str(gs));
  const int B = xs.front(), C = xs.back();
  const std::size_t spatial = numel(xs) / static_cast<std::size_t>(B * C);
  const auto& xv = t.val(x);
  const auto& gv = t.val(gate);
  std::vector<float> out(xv.size());
  for (int b = 0; b < B; ++b) {
    const float* grow = gv.data() + static_cast<std::size_t>(b) * C;
    float* orow = out.data() + static_cast<std::size_t>(b) * spatial * C;
    const float* xrow = xv.data() + static_cast<std::size_t>(b) * spatial * C;
    for (std::size_t s = 0; s < spatial; ++s)
      for (int c = 0; c < C; ++c) orow[s * C + c] = xrow[s * C + c] * grow[c];
  }
  const int xi = x.id, gi = gate.id;
  return t.make(xs, std::move(out), {xi, gi}, [xi, gi, B, C, spatial](Tape& tp, int self) {
    const auto& g = tp.node(self).grad;
    const auto& xv2 = tp.node(xi).val;
    const auto& gv2 = tp.node(gi).val;
    if (tp.wants_grad(xi)) {
      auto& gx = tp.grad_buf(xi);
      for (int b = 0; b < B; ++b) {
        const float* grow = gv2.data() + static_cast<std::size_t>(b) * C;
        for (std::size_t s = 0; s < spatial; ++s) {
          const std::size_t base = (static_cast<std::size_t>(b) * spatial + s) * C;
          for (int c = 0; c < C; ++c) gx[base + c] += g[base + c] * grow[c];
        }
      }
    }
    if (tp.wants_grad(gi)) {
      auto& gg = tp.grad_buf(gi);
      for (int b = 0; b < B; ++b) {
        float* grow = gg.data() + static_cast<std::size_t>(b) * C;
        for (std::size_t s = 0; s < spatial; ++s) {
          const std::size_t base = (static_cast<std::size_t>(b) * spatial + s) * C;
          for (int c = 0; c < C; ++c) grow[c] += g[base + c] * xv2[base + c];
        }
      }
    }
  });
}

inline Var sum_all(Var x) {
  Tape& t = *x.tape;
  const auto& xv = t.val(x);
  double acc = 0.0;
  for (float v : xv) acc += v;
  const int xi = x.id;
  return t.make({1}, {static_cast<float>(acc)}, {xi}, [xi](Tape& tp, int self) {
    const float g = tp.node(self).grad[0];
    auto& gx = tp.grad_buf(xi);
    for (auto& v : gx) v += g;
  });
}

inline Var mean_all(Var x) {
  Tape& t = *x.tape;
  const float inv = 1.0f / static_cast<float>(t.val(x).size());
  return scale(sum_all(x), inv);
}

// Mean squared error against a constant-or-var target, averaged over every
// element.
inline Var mse(Var pred, Var target) {
  detail::same_tape(pred, target);
  Tape& t = *pred.tape;
  check(t.shape(pred) == t.shape(target), "mse: shape mismatch");
  const auto& pv = t.val(pred);
  const auto& tv = t.val(target);
  double acc = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    const double d = static_cast<double>(pv[i]) - static_cast<double>(tv[i]);
    acc += d * d;
  }
  const float n_inv = 1.0f / static_cast<float>(pv.size());
  const int pi = pred.id, ti = target.id;
  return t.make({1}, {static_cast<float>(acc * n_inv)}, {pi, ti},
                [pi, ti, n_inv](Tape& tp, int self) {
    const float g = tp.node(self).grad[0];
    const auto& pv2 = tp.node(pi).val;
    const auto& tv2 = tp.node(ti).val;
    if (tp.wants_grad(pi)) {
      auto& gp = tp.grad_buf(pi);
      for (std::size_t i = 0; i < pv2.size(); ++i)
        gp[i] += g * 2.0f * n_inv * (pv2[i] - tv2[i]);
    }
    if (tp.wants_grad(ti)) {
      auto& gt = tp.grad_buf(ti);
      for (std::size_t i = 0; i < pv2.size(); ++i)
        gt[i] -= g * 2.0f * n_inv * (pv2[i] - tv2[i]);
    }
  });
}

// Softmax cross-entropy with integer labels, batch-averaged. Fused for
// numerical stability; backward is (softmax - onehot) / B.
inline Var softmax_cross_entropy(Var logits, const std::vector<int>& labels) {
  Tape& t = *logits.tape;
  Shape s = t.shape(logits);
  check(s.size() == 2, "softmax_cross_entropy: want [B, classes]");
  const int B = s[0], C = s[1];
  check(static_cast<int>(labels.size()) == B, "softmax_cross_entropy: label count");
  const auto& lv = t.val(logits);
  std::vector<float> probs(lv.size());
  double loss = 0.0;
  for (int b = 0; b < B; ++b) {
    const float* row = lv.data() + static_cast<std::size_t>(b) * C;
    float* prow = probs.data() + static_cast<std::size_t>(b) * C;
    float mx = row[0];
    for (int c = 1; c < C; ++c) mx = std::max(mx, row[c]);
    double z = 0.0;
    for (int c = 0; c < C; ++c) {
      prow[c] = std::exp(row[c] - mx);
      z += prow[c];
    }
    const float zinv = static_cast<float>(1.0 / z);
    for (int c = 0; c < C; ++c) prow[c] *= zinv;
    check(labels[b] >= 0 && labels[b] < C, "softmax_cross_entropy: label out of range");
    loss -= std::log(std::max(static_cast<double>(prow[labels[b]]), 1e-30));
  }
  loss /= B;
  const int li = logits.id;
  return t.make({1}, {static_cast<float>(loss)}, {li},
                [li, B, C, probs = std::move(probs), labels](Tape& tp, int self) {
    const float g = tp.node(self).grad[0] / static_cast<float>(B);
    auto& gl = tp.grad_buf(li);
    for (int b = 0; b < B; ++b) {
      const std::size_t base = static_cast<std::size_t>(b) * C;
      for (int c = 0; c < C; ++c) gl[base + c] += g * probs[base + c];
      gl[base + static_cast<std::size_t>(labels[b])] -= g;
    }
  });
}

}  // namespace semcom::ad

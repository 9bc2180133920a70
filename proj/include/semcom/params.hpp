#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "semcom/rng.hpp"
#include "semcom/tape.hpp"

namespace semcom {

// A named model parameter living outside any tape. Running statistics
// (batch-norm) are stored here too, flagged non-trainable.
struct Param {
  std::string name;
  ad::Shape shape;
  std::vector<float> value;
  bool trainable = true;
};

class ParamStore {
 public:
  int add(std::string name, ad::Shape shape, std::vector<float> value, bool trainable = true) {
    if (value.size() != ad::numel(shape))
      throw std::invalid_argument("param " + name + ": value/shape mismatch");
    if (index_.count(name)) throw std::invalid_argument("duplicate param name " + name);
    index_[name] = static_cast<int>(items_.size());
    items_.push_back(Param{std::move(name), std::move(shape), std::move(value), trainable});
    return static_cast<int>(items_.size()) - 1;
  }

  int add_zeros(std::string name, ad::Shape shape, bool trainable = true) {
    std::vector<float> v(ad::numel(shape), 0.0f);
    return add(std::move(name), std::move(shape), std::move(v), trainable);
  }

  int add_full(std::string name, ad::Shape shape, float fill, bool trainable = true) {
    std::vector<float> v(ad::numel(shape), fill);
    return add(std::move(name), std::move(shape), std::move(v), trainable);
  }

  // He-uniform: U(-sqrt(6/fan_in), +sqrt(6/fan_in)).
  int add_he_uniform(std::string name, ad::Shape shape, int fan_in, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::vector<float> v(ad::numel(shape));
    for (auto& x : v) x = static_cast<float>(rng.uniform(-limit, limit));
    return add(std::move(name), std::move(shape), std::move(v));
  }

  Param& operator[](int i) { return items_.at(static_cast<std::size_t>(i)); }
  const Param& operator[](int i) const { return items_.at(static_cast<std::size_t>(i)); }
  int find(const std::string& name) const {
    auto it = index_.find(name);
    return it == index_.end() ? -1 : it->second;
  }
  int count() const { return static_cast<int>(items_.size()); }

  std::size_t trainable_scalar_count(const std::string& prefix = "") const {
    std::size_t n = 0;
    for (const auto& p : items_)
      if (p.trainable && p.name.rfind(prefix, 0) == 0) n += p.value.size();
    return n;
  }

  auto begin() { return items_.begin(); }
  auto end() { return items_.end(); }
  auto begin() const { return items_.begin(); }
  auto end() const { return items_.end(); }

 private:
  std::vector<Param> items_;
  std::unordered_map<std::string, int> index_;
};

// One forward/backward pass: binds store parameters onto a tape exactly once
// each, so gradients can be read back per parameter after backward().
struct PassContext {
  ad::Tape& tape;
  ParamStore& store;
  bool training = true;
  // Keeps repeated probing passes (finite differences) from moving the
  // batch-norm running statistics.
  bool freeze_stats = false;

  ad::Var bind(int param_idx) {
    auto it = bound.find(param_idx);
    if (it != bound.end()) return it->second;
    Param& p = store[param_idx];
    ad::Var v = tape.input(p.shape, p.value, p.trainable);
    bound.emplace(param_idx, v);
    return v;
  }

  // Gradient of a bound parameter after backward(); zeros if it never
  // received one.
  std::vector<float> grad_of(int param_idx) const {
    auto it = bound.find(param_idx);
    if (it == bound.end() || !tape.has_grad(it->second))
      return std::vector<float>(store[param_idx].value.size(), 0.0f);
    return tape.grad(it->second);
  }

  std::unordered_map<int, ad::Var> bound;
};

}  // namespace semcom

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "smx/errors.hpp"
#include "smx/rng.hpp"
#include "smx/tensor.hpp"

namespace smx {

// Named parameter table with per-parameter gradient buffers and optimizer
// state. Iteration order is the lexicographic order of names, which makes
// every downstream artifact (checkpoints, hashes) independent of insertion
// order.
class ParamStore {
 public:
  struct Entry {
    Tensor value;
    Tensor grad;
    Tensor velocity;  // SGD momentum, allocated on first sgd_step
    Tensor adam_m;    // Adam first moment, allocated on first adam_step
    Tensor adam_v;    // Adam second moment
  };

  Tensor& create(const std::string& name, Tensor init) {
    if (entries_.count(name))
      throw ConfigError("parameter already exists: " + name);
    Entry e;
    e.grad = Tensor::zeros(init.shape);
    e.value = std::move(init);
    auto [it, ok] = entries_.emplace(name, std::move(e));
    (void)ok;
    return it->second.value;
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  Tensor& value(const std::string& name) { return find(name).value; }
  const Tensor& value(const std::string& name) const { return find(name).value; }
  Tensor& grad(const std::string& name) { return find(name).grad; }
  const Tensor& grad(const std::string& name) const { return find(name).grad; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& [k, v] : entries_) out.push_back(k);
    return out;
  }

  std::size_t size() const { return entries_.size(); }
  std::size_t numel() const {
    std::size_t n = 0;
    for (const auto& [k, v] : entries_) n += v.value.numel();
    return n;
  }

  std::uint64_t step_count() const { return step_count_; }

  void zero_grads() {
    for (auto& [k, e] : entries_)
      std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
  }

  // Overwrites a parameter value in place (checkpoint restore). Shape must
  // match the existing allocation.
  void load(const std::string& name, Tensor v) {
    Entry& e = find(name);
    if (!e.value.same_shape(v))
      throw FormatError("parameter " + name + " has shape " +
                        e.value.shape_str() + " but restore payload is " +
                        v.shape_str());
    e.value = std::move(v);
  }

  // SGD with classical momentum: v = mu*v + g; w -= lr*v.
  // Parameters whose name starts with none of `prefixes` are left untouched
  // (their grads are still cleared). An empty list updates everything.
  void sgd_step(double lr, double momentum = 0.9,
                const std::string& prefix = "") {
    sgd_step(lr, momentum, prefix_list(prefix));
  }
  void sgd_step(double lr, double momentum,
                const std::vector<std::string>& prefixes) {
    for (auto& [name, e] : entries_) {
      if (selected(name, prefixes)) {
        if (e.velocity.numel() == 0) e.velocity = Tensor::zeros(e.value.shape);
        double* v = e.velocity.data.data();
        double* w = e.value.data.data();
        const double* g = e.grad.data.data();
        const std::size_t n = e.value.numel();
        for (std::size_t i = 0; i < n; ++i) {
          v[i] = momentum * v[i] + g[i];
          w[i] -= lr * v[i];
        }
      }
      std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
    }
    ++step_count_;
  }

  // Adam with bias correction. Shares the step counter with sgd_step; the
  // bias-correction exponent is the number of adam steps taken so far,
  // tracked separately so mixing optimizers stays well defined.
  void adam_step(double lr, double beta1 = 0.9, double beta2 = 0.999,
                 double eps = 1e-8, const std::string& prefix = "") {
    adam_step(lr, beta1, beta2, eps, prefix_list(prefix));
  }
  void adam_step(double lr, double beta1, double beta2, double eps,
                 const std::vector<std::string>& prefixes) {
    ++adam_t_;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(adam_t_));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(adam_t_));
    for (auto& [name, e] : entries_) {
      if (selected(name, prefixes)) {
        if (e.adam_m.numel() == 0) {
          e.adam_m = Tensor::zeros(e.value.shape);
          e.adam_v = Tensor::zeros(e.value.shape);
        }
        double* m = e.adam_m.data.data();
        double* v = e.adam_v.data.data();
        double* w = e.value.data.data();
        const double* g = e.grad.data.data();
        const std::size_t n = e.value.numel();
        for (std::size_t i = 0; i < n; ++i) {
          m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
          v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
          const double mhat = m[i] / c1;
          const double vhat = v[i] / c2;
          w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
        }
      }
      std::fill(e.grad.data.begin(), e.grad.data.end(), 0.0);
    }
    ++step_count_;
  }

  // Order-insensitive-by-construction digest of names, shapes and values
  // (the map already fixes the order to lexicographic-by-name).
  std::uint64_t content_hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* p, std::size_t n) {
      const unsigned char* b = static_cast<const unsigned char*>(p);
      for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
      }
    };
    for (const auto& [name, e] : entries_) {
      mix(name.data(), name.size());
      for (std::size_t d : e.value.shape) {
        std::uint64_t v = d;
        mix(&v, sizeof v);
      }
      mix(e.value.data.data(), e.value.data.size() * sizeof(double));
    }
    return h;
  }

  bool grads_finite() const {
    for (const auto& [k, e] : entries_)
      if (!e.grad.all_finite()) return false;
    return true;
  }

  const std::map<std::string, Entry>& entries() const { return entries_; }

 private:
  static std::vector<std::string> prefix_list(const std::string& prefix) {
    if (prefix.empty()) return {};
    return {prefix};
  }

  static bool selected(const std::string& name,
                       const std::vector<std::string>& prefixes) {
    if (prefixes.empty()) return true;
    for (const std::string& p : prefixes)
      if (name.rfind(p, 0) == 0) return true;
    return false;
  }

  Entry& find(const std::string& name) {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }
  const Entry& find(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ConfigError("unknown parameter: " + name);
    return it->second;
  }

  std::map<std::string, Entry> entries_;
  std::uint64_t step_count_ = 0;
  std::uint64_t adam_t_ = 0;
};

// Glorot-uniform initialization helper used by every encoder. The stream is
// derived from the parameter name so adding parameters never perturbs the
// draws of existing ones.
inline Tensor glorot(std::uint64_t seed, const std::string& name,
                     std::size_t fan_in, std::size_t fan_out,
                     std::vector<std::size_t> shape) {
  Rng rng(child_seed(seed, fnv1a64(name)));
  const double limit =
      std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = rng.uniform(-limit, limit);
  return t;
}

}  // namespace smx

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "smx/param_store.hpp"
#include "smx/rng.hpp"

namespace smx {

struct FiniteDiffReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t probes = 0;
};

// Central-difference audit of reverse-mode gradients. `loss(store, with_grad)`
// must return the loss value; when with_grad is true it must also leave
// gradients in the store (the audit clears them beforehand). Probed
// coordinates are drawn uniformly from the flattened concatenation of all
// parameters. The relative-error denominator is floored at `floor` so that
// coordinates where both sides are ~0 do not explode the ratio.
inline FiniteDiffReport finite_diff_check(
    ParamStore& ps,
    const std::function<double(ParamStore&, bool)>& loss,
    std::size_t probes, double h = 1e-5, std::uint64_t seed = 0,
    double floor = 1e-6) {
  ps.zero_grads();
  loss(ps, true);

  // Snapshot the analytic gradients before the probe evaluations.
  std::map<std::string, Tensor> analytic;
  for (const std::string& name : ps.names()) analytic[name] = ps.grad(name);

  struct Span {
    std::string name;
    std::size_t begin;
    std::size_t size;
  };
  std::vector<Span> spans;
  std::size_t total = 0;
  for (const std::string& name : ps.names()) {
    const std::size_t n = ps.value(name).numel();
    spans.push_back({name, total, n});
    total += n;
  }
  if (total == 0) throw ConfigError("finite_diff_check: store is empty");

  FiniteDiffReport report;
  report.probes = probes;
  Rng rng(seed);
  for (std::size_t p = 0; p < probes; ++p) {
    const std::size_t flat = static_cast<std::size_t>(rng.below(total));
    const Span* span = &spans.back();
    for (const Span& s : spans)
      if (flat < s.begin + s.size) {
        span = &s;
        break;
      }
    const std::size_t idx = flat - span->begin;

    double& w = ps.value(span->name).data[idx];
    const double keep = w;
    w = keep + h;
    const double up = loss(ps, false);
    w = keep - h;
    const double down = loss(ps, false);
    w = keep;

    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic[span->name].data[idx];
    const double denom =
        std::max({std::abs(a), std::abs(numeric), floor});
    const double rel = std::abs(a - numeric) / denom;
    if (rel >= report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_param = span->name;
      report.worst_index = idx;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
  }

  // Leave the store the way the audit found it: analytic grads restored.
  for (auto& [name, g] : analytic) {
    Tensor& dst = ps.grad(name);
    dst = std::move(g);
  }
  return report;
}

}  // namespace smx

#pragma once

#include <set>
#include <string>
#include <vector>

#include "smx/dataset.hpp"
#include "smx/errors.hpp"
#include "smx/scene.hpp"
#include "smx/tokens.hpp"

namespace smx {

struct AugmentConfig {
  bool enable_reverse = true;
  bool enable_transitive = true;
  int onfly_per_step = 8;

  void validate() const {
    if (onfly_per_step < 0)
      throw ConfigError("onfly_per_step must be non-negative");
  }

  json to_json() const {
    return json{{"enable_reverse", enable_reverse},
                {"enable_transitive", enable_transitive},
                {"onfly_per_step", onfly_per_step}};
  }

  static AugmentConfig from_json(const json& j) {
    detail::reject_unknown_keys_config(
        j, {"enable_reverse", "enable_transitive", "onfly_per_step"},
        "augment config");
    AugmentConfig c;
    if (j.contains("enable_reverse")) c.enable_reverse = j.at("enable_reverse");
    if (j.contains("enable_transitive"))
      c.enable_transitive = j.at("enable_transitive");
    if (j.contains("onfly_per_step")) c.onfly_per_step = j.at("onfly_per_step");
    c.validate();
    return c;
  }
};

namespace detail {

inline std::string reversed_domain(const std::string& domain) {
  if (domain == "AB") return "BA";
  if (domain == "BA") return "AB";
  return domain;  // single-domain triplets reverse in place
}

// Dedup key covering the cross-domain tags as well; for single-domain sets
// it reduces to the canonical (q, spec, r) key.
inline std::string keyed(const Triplet& t) {
  return t.domain + "|" + triplet_key(t.q, t.t, t.r);
}

}  // namespace detail

// X ∪ { (r, t⁻¹, q) : (q, t, r) ∈ X }, deduplicated. Order: the input
// triplets first, then each new reversal in input order. Idempotent.
inline std::vector<Triplet> augment_reverse(const std::vector<Triplet>& x) {
  std::vector<Triplet> out;
  out.reserve(2 * x.size());
  std::set<std::string> seen;
  for (const Triplet& t : x)
    if (seen.insert(detail::keyed(t)).second) out.push_back(t);
  for (const Triplet& t : x) {
    Triplet rev{t.r, reverse_spec(t.t), t.q, detail::reversed_domain(t.domain)};
    if (seen.insert(detail::keyed(rev)).second) out.push_back(std::move(rev));
  }
  return out;
}

// For triplets whose endpoint scene has a cross-domain counterpart (its id
// appears in the pair list), emit the counterpart-substituted triplet. A
// triplet (q_A, t, r_A) with q paired yields (q_B, t, r_A), tagged "BA";
// with r paired it yields (q_A, t, r_B), tagged "AB". Substitution flips
// one side's observation domain — the underlying scenes are unchanged.
inline std::vector<Triplet> augment_transitive(
    const std::vector<Triplet>& x, const std::vector<std::string>& pair_ids) {
  const std::set<std::string> paired(pair_ids.begin(), pair_ids.end());
  std::vector<Triplet> out;
  out.reserve(x.size() * 2);
  std::set<std::string> seen;
  for (const Triplet& t : x)
    if (seen.insert(detail::keyed(t)).second) out.push_back(t);
  for (const Triplet& t : x) {
    if (t.domain != "A" && t.domain != "B") continue;
    const std::string other = t.domain == "A" ? "B" : "A";
    if (paired.count(t.q)) {
      Triplet sub{t.q, t.t, t.r, other + t.domain};
      if (seen.insert(detail::keyed(sub)).second) out.push_back(std::move(sub));
    }
    if (paired.count(t.r)) {
      Triplet sub{t.q, t.t, t.r, t.domain + other};
      if (seen.insert(detail::keyed(sub)).second) out.push_back(std::move(sub));
    }
  }
  return out;
}

// Ephemeral training examples: fresh scene + valid spec + result, never
// persisted. Drawn under the same constraints as the stored training data
// (held-out color excluded, same kind weights and object counts).
struct OnflyExample {
  Scene q;
  TransformSpec t;
  Scene r;
};

inline std::vector<OnflyExample> onfly_examples(Rng& rng, int count,
                                                const GenConfig& gcfg) {
  if (count < 0) throw ConfigError("onfly count must be non-negative");
  const std::vector<Color> palette = palette_without(gcfg.heldout_color);
  std::vector<OnflyExample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    Scene q = sample_scene(rng, gcfg.min_objects, gcfg.max_objects, palette);
    TransformSpec t = sample_spec(rng, q, palette, gcfg.kind_weights);
    Scene r = apply_transform(q, t);
    out.push_back({std::move(q), t, std::move(r)});
  }
  return out;
}

}  // namespace smx

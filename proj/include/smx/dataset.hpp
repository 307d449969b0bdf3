#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "smx/errors.hpp"
#include "smx/rng.hpp"
#include "smx/scene.hpp"
#include "smx/tokens.hpp"

namespace smx {

using json = nlohmann::json;

namespace detail {

// Strict-schema guard: every present key must be expected. Catches typos in
// hand-edited files instead of silently ignoring them. Data files raise
// FormatError; user-authored configs raise ConfigError (different exit codes).
template <typename Error>
inline void reject_unknown_keys_as(const json& j,
                                   std::initializer_list<const char*> keys,
                                   const std::string& where) {
  if (!j.is_object()) throw Error(where + ": expected a JSON object");
  for (const auto& [key, unused] : j.items()) {
    bool known = false;
    for (const char* k : keys)
      if (key == k) {
        known = true;
        break;
      }
    if (!known) throw Error(where + ": unknown key \"" + key + "\"");
  }
}

inline void reject_unknown_keys(const json& j,
                                std::initializer_list<const char*> keys,
                                const std::string& where) {
  reject_unknown_keys_as<FormatError>(j, keys, where);
}

inline void reject_unknown_keys_config(const json& j,
                                       std::initializer_list<const char*> keys,
                                       const std::string& where) {
  reject_unknown_keys_as<ConfigError>(j, keys, where);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// JSON forms of the domain types
// ---------------------------------------------------------------------------

inline json object_to_json(const SceneObject& o) {
  return json{{"shape", shape_name(o.shape)}, {"color", color_name(o.color)},
              {"size", size_name(o.size)},    {"row", o.cell.row},
              {"col", o.cell.col}};
}

inline SceneObject object_from_json(const json& j) {
  detail::reject_unknown_keys(j, {"shape", "color", "size", "row", "col"},
                              "object");
  SceneObject o;
  o.shape = parse_shape(j.at("shape").get<std::string>());
  o.color = parse_color(j.at("color").get<std::string>());
  o.size = parse_size(j.at("size").get<std::string>());
  o.cell = {j.at("row").get<int>(), j.at("col").get<int>()};
  return o;
}

inline json scene_to_json(const std::string& id, const Scene& s) {
  json objs = json::array();
  for (const SceneObject& o : s.objects()) objs.push_back(object_to_json(o));
  return json{{"id", id}, {"objects", std::move(objs)}};
}

inline json selector_to_json(const Selector& sel) {
  json j = json::object();
  if (sel.shape) j["shape"] = shape_name(*sel.shape);
  if (sel.color) j["color"] = color_name(*sel.color);
  if (sel.size) j["size"] = size_name(*sel.size);
  if (sel.cell) {
    j["row"] = sel.cell->row;
    j["col"] = sel.cell->col;
  }
  return j;
}

inline Selector selector_from_json(const json& j) {
  detail::reject_unknown_keys(j, {"shape", "color", "size", "row", "col"},
                              "selector");
  Selector sel;
  if (j.contains("shape")) sel.shape = parse_shape(j.at("shape"));
  if (j.contains("color")) sel.color = parse_color(j.at("color"));
  if (j.contains("size")) sel.size = parse_size(j.at("size"));
  if (j.contains("row") != j.contains("col"))
    throw FormatError("selector: row and col must appear together");
  if (j.contains("row"))
    sel.cell = Cell{j.at("row").get<int>(), j.at("col").get<int>()};
  return sel;
}

inline json spec_to_json(const TransformSpec& t) {
  json j;
  j["kind"] = spec_kind_name(spec_kind(t));
  switch (t.op) {
    case TransformSpec::Op::Add:
      j["object"] = object_to_json(t.object);
      break;
    case TransformSpec::Op::Remove:
      j["selector"] = selector_to_json(t.selector);
      break;
    case TransformSpec::Op::Change:
      j["selector"] = selector_to_json(t.selector);
      switch (t.attr) {
        case Attr::Shape: j["value"] = shape_name(std::get<Shape>(t.value)); break;
        case Attr::Color: j["value"] = color_name(std::get<Color>(t.value)); break;
        case Attr::Size: j["value"] = size_name(std::get<Size>(t.value)); break;
        case Attr::Cell:
          j["value"] = json{{"row", std::get<Cell>(t.value).row},
                            {"col", std::get<Cell>(t.value).col}};
          break;
      }
      break;
  }
  return j;
}

inline TransformSpec spec_from_json(const json& j) {
  const SpecKind kind = parse_spec_kind(j.at("kind").get<std::string>());
  switch (kind) {
    case SpecKind::Add:
      detail::reject_unknown_keys(j, {"kind", "object"}, "spec");
      return TransformSpec::add(object_from_json(j.at("object")));
    case SpecKind::Remove:
      detail::reject_unknown_keys(j, {"kind", "selector"}, "spec");
      return TransformSpec::remove(selector_from_json(j.at("selector")));
    default: {
      detail::reject_unknown_keys(j, {"kind", "selector", "value"}, "spec");
      const Selector sel = selector_from_json(j.at("selector"));
      const json& v = j.at("value");
      switch (kind) {
        case SpecKind::ChangeShape:
          return TransformSpec::change(sel, parse_shape(v.get<std::string>()));
        case SpecKind::ChangeColor:
          return TransformSpec::change(sel, parse_color(v.get<std::string>()));
        case SpecKind::ChangeSize:
          return TransformSpec::change(sel, parse_size(v.get<std::string>()));
        case SpecKind::ChangeCell:
          detail::reject_unknown_keys(v, {"row", "col"}, "spec value");
          return TransformSpec::change(
              sel, Cell{v.at("row").get<int>(), v.at("col").get<int>()});
        default: break;
      }
    }
  }
  throw FormatError("bad spec kind");
}

// ---------------------------------------------------------------------------
// Generation config
// ---------------------------------------------------------------------------

struct GenConfig {
  std::uint64_t seed = 1;
  int base_scenes = 200;
  int pairs = 200;
  int train_triplets = 3000;
  int test_triplets = 500;
  int min_objects = 2;
  int max_objects = 5;
  double novel_fraction = 0.2;
  Color heldout_color = Color::Cyan;
  std::array<double, 6> kind_weights = {1, 1, 1, 1, 1, 1};  // SpecKind order

  void validate() const {
    if (base_scenes < 1 || train_triplets < 1 || test_triplets < 1)
      throw ConfigError("generation counts must be positive");
    if (pairs < 0 || pairs > base_scenes)
      throw ConfigError("pairs must lie in 0..base_scenes");
    if (min_objects < 1 || max_objects > 9 || min_objects > max_objects)
      throw ConfigError("object count range must sit within 1..9");
    if (novel_fraction < 0.0 || novel_fraction > 1.0)
      throw ConfigError("novel_fraction must lie in [0,1]");
    double total = 0.0;
    for (double w : kind_weights) {
      if (w < 0.0) throw ConfigError("kind weights must be non-negative");
      total += w;
    }
    if (total <= 0.0) throw ConfigError("kind weights must not all be zero");
    if (novel_fraction > 0.0) {
      const double novel_total =
          kind_weights[static_cast<int>(SpecKind::ChangeShape)] +
          kind_weights[static_cast<int>(SpecKind::ChangeColor)] +
          kind_weights[static_cast<int>(SpecKind::ChangeSize)] +
          kind_weights[static_cast<int>(SpecKind::ChangeCell)];
      if (novel_total <= 0.0)
        throw ConfigError(
            "novel queries need a positive weight on one of the "
            "change kinds");
    }
  }

  json to_json() const {
    json weights = json::object();
    for (SpecKind k : kAllSpecKinds)
      weights[spec_kind_name(k)] = kind_weights[static_cast<int>(k)];
    return json{{"seed", seed},
                {"base_scenes", base_scenes},
                {"pairs", pairs},
                {"train_triplets", train_triplets},
                {"test_triplets", test_triplets},
                {"min_objects", min_objects},
                {"max_objects", max_objects},
                {"novel_fraction", novel_fraction},
                {"heldout_color", color_name(heldout_color)},
                {"kind_weights", std::move(weights)}};
  }

  static GenConfig from_json(const json& j) {
    detail::reject_unknown_keys_config(
        j,
        {"seed", "base_scenes", "pairs", "train_triplets", "test_triplets",
         "min_objects", "max_objects", "novel_fraction", "heldout_color",
         "kind_weights"},
        "generation config");
    GenConfig c;
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("base_scenes")) c.base_scenes = j.at("base_scenes");
    if (j.contains("pairs")) c.pairs = j.at("pairs");
    if (j.contains("train_triplets")) c.train_triplets = j.at("train_triplets");
    if (j.contains("test_triplets")) c.test_triplets = j.at("test_triplets");
    if (j.contains("min_objects")) c.min_objects = j.at("min_objects");
    if (j.contains("max_objects")) c.max_objects = j.at("max_objects");
    if (j.contains("novel_fraction")) c.novel_fraction = j.at("novel_fraction");
    if (j.contains("heldout_color"))
      c.heldout_color = parse_color(j.at("heldout_color"));
    if (j.contains("kind_weights")) {
      const json& w = j.at("kind_weights");
      detail::reject_unknown_keys_config(
          w,
          {"add", "remove", "change_shape", "change_color", "change_size",
           "change_cell"},
          "kind_weights");
      for (SpecKind k : kAllSpecKinds)
        if (w.contains(spec_kind_name(k)))
          c.kind_weights[static_cast<int>(k)] = w.at(spec_kind_name(k));
    }
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------------------
// Spec sampling
// ---------------------------------------------------------------------------

// Draws a valid transformation for the scene: kind by configured weight among
// the kinds feasible for this scene, then parameters uniformly. Selectors
// always pin the changed attribute plus the object's cell, so they match
// exactly one object and stay invertible.
inline TransformSpec sample_spec(Rng& rng, const Scene& s,
                                 const std::vector<Color>& palette,
                                 const std::array<double, 6>& weights) {
  std::vector<Cell> empty_cells;
  for (int r = 0; r < kGridSide; ++r)
    for (int c = 0; c < kGridSide; ++c)
      if (!s.at({r, c})) empty_cells.push_back({r, c});

  std::array<double, 6> feasible = weights;
  if (empty_cells.empty() || palette.empty())
    feasible[static_cast<int>(SpecKind::Add)] = 0.0;
  if (s.empty())
    for (SpecKind k : {SpecKind::Remove, SpecKind::ChangeShape,
                       SpecKind::ChangeColor, SpecKind::ChangeSize,
                       SpecKind::ChangeCell})
      feasible[static_cast<int>(k)] = 0.0;
  if (empty_cells.empty())
    feasible[static_cast<int>(SpecKind::ChangeCell)] = 0.0;
  if (palette.size() < 2)
    feasible[static_cast<int>(SpecKind::ChangeColor)] = 0.0;

  double total = 0.0;
  for (double w : feasible) total += w;
  if (total <= 0.0)
    throw SamplingError("no transformation kind is feasible for this scene");

  const SpecKind kind = static_cast<SpecKind>(
      rng.weighted(std::span<const double>(feasible.data(), feasible.size())));
  switch (kind) {
    case SpecKind::Add: {
      SceneObject o;
      o.shape = kAllShapes[rng.below(kAllShapes.size())];
      o.color = palette[rng.below(palette.size())];
      o.size = kAllSizes[rng.below(kAllSizes.size())];
      o.cell = empty_cells[rng.below(empty_cells.size())];
      return TransformSpec::add(o);
    }
    case SpecKind::Remove: {
      const SceneObject& o = s.objects()[rng.below(s.size())];
      return TransformSpec::remove(Selector::exact(o));
    }
    case SpecKind::ChangeShape: {
      const SceneObject& o = s.objects()[rng.below(s.size())];
      std::vector<Shape> others;
      for (Shape sh : kAllShapes)
        if (sh != o.shape) others.push_back(sh);
      return TransformSpec::change(
          Selector{.shape = o.shape, .cell = o.cell}, rng.pick(others));
    }
    case SpecKind::ChangeColor: {
      const SceneObject& o = s.objects()[rng.below(s.size())];
      std::vector<Color> others;
      for (Color c : palette)
        if (c != o.color) others.push_back(c);
      if (others.empty())
        throw SamplingError("no alternative color available");
      return TransformSpec::change(
          Selector{.color = o.color, .cell = o.cell}, rng.pick(others));
    }
    case SpecKind::ChangeSize: {
      const SceneObject& o = s.objects()[rng.below(s.size())];
      return TransformSpec::change(
          Selector{.size = o.size, .cell = o.cell},
          o.size == Size::Small ? Size::Large : Size::Small);
    }
    case SpecKind::ChangeCell: {
      const SceneObject& o = s.objects()[rng.below(s.size())];
      return TransformSpec::change(Selector{.cell = o.cell},
                                   rng.pick(empty_cells));
    }
  }
  throw SamplingError("bad spec kind draw");
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

struct Triplet {
  std::string q;
  TransformSpec t;
  std::string r;
  std::string domain;  // "A", "B", or cross tags "AB"/"BA" (q-side, r-side)
};

inline json triplet_to_json(const Triplet& t) {
  return json{{"q", t.q}, {"t", spec_to_json(t.t)}, {"r", t.r},
              {"domain", t.domain}};
}

inline Triplet triplet_from_json(const json& j) {
  detail::reject_unknown_keys(j, {"q", "t", "r", "domain"}, "triplet");
  Triplet t;
  t.q = j.at("q").get<std::string>();
  t.t = spec_from_json(j.at("t"));
  t.r = j.at("r").get<std::string>();
  t.domain = j.at("domain").get<std::string>();
  if (t.domain != "A" && t.domain != "B" && t.domain != "AB" &&
      t.domain != "BA")
    throw FormatError("triplet: bad domain tag \"" + t.domain + "\"");
  return t;
}

struct Dataset {
  GenConfig config;
  std::vector<std::string> scene_order;  // file order; base scenes first
  std::map<std::string, Scene> scenes;
  std::vector<std::string> base_ids;
  std::vector<std::string> pair_ids;
  std::vector<Triplet> train;
  std::vector<Triplet> test;
  std::uint64_t manifest_hash = 0;  // set when written to / read from disk

  const Scene& scene(const std::string& id) const {
    auto it = scenes.find(id);
    if (it == scenes.end()) throw DataError("unknown scene id: " + id);
    return it->second;
  }

  // Retrieval universe: all base scenes plus every test target.
  std::vector<std::string> pool_ids() const {
    std::vector<std::string> pool = base_ids;
    std::set<std::string> seen(pool.begin(), pool.end());
    for (const Triplet& t : test)
      if (seen.insert(t.r).second) pool.push_back(t.r);
    return pool;
  }

  // A test query is novel when its query scene shows the color that was
  // withheld from every training surface.
  bool is_novel_query(const Triplet& t) const {
    for (const SceneObject& o : scene(t.q).objects())
      if (o.color == config.heldout_color) return true;
    return false;
  }
};

namespace detail {

inline void validate_triplets(const Dataset& d,
                              const std::vector<Triplet>& triplets,
                              const std::string& which) {
  for (const Triplet& t : triplets) {
    const Scene result = apply_transform(d.scene(t.q), t.t);
    if (!(result == d.scene(t.r)))
      throw DataError(which + " triplet " + t.q +
                      " does not transform into its target " + t.r);
  }
}

}  // namespace detail

inline Dataset generate_dataset(const GenConfig& cfg) {
  cfg.validate();
  Dataset d;
  d.config = cfg;
  const std::vector<Color> palette = palette_without(cfg.heldout_color);

  auto intern = [&d](const Scene& s) -> std::string {
    std::string id = scene_id(s);
    if (d.scenes.emplace(id, s).second) d.scene_order.push_back(id);
    return id;
  };

  // Base scenes: distinct by content, free of the held-out color. The first
  // half is drawn independently; each scene of the second half is a one-edit
  // neighbor of a first-half scene, so the observation universe contains
  // both states of many single transformations (the structure editable scene
  // datasets have by construction). The edges feed the test split below.
  struct NeighborEdge {
    std::string from;
    TransformSpec t;
    std::string to;
  };
  std::vector<NeighborEdge> edges;
  {
    Rng rng(child_seed(cfg.seed, 0));
    std::set<std::string> seen;
    long attempts = 0;
    const long budget = 100L * cfg.base_scenes;
    const int root_count = (cfg.base_scenes + 1) / 2;
    while (static_cast<int>(d.base_ids.size()) < root_count) {
      if (++attempts > budget)
        throw GenerationError("could not draw " +
                              std::to_string(cfg.base_scenes) +
                              " distinct base scenes; loosen the config");
      Scene s = sample_scene(rng, cfg.min_objects, cfg.max_objects, palette);
      std::string id = scene_id(s);
      if (!seen.insert(id).second) continue;
      intern(s);
      d.base_ids.push_back(id);
    }
    while (static_cast<int>(d.base_ids.size()) < cfg.base_scenes) {
      if (++attempts > budget)
        throw GenerationError("could not draw " +
                              std::to_string(cfg.base_scenes) +
                              " distinct base-scene neighbors; loosen the "
                              "config");
      const std::string& from =
          d.base_ids[rng.below(static_cast<std::size_t>(root_count))];
      TransformSpec t =
          sample_spec(rng, d.scene(from), palette, cfg.kind_weights);
      Scene nb = apply_transform(d.scene(from), t);
      const int n = static_cast<int>(nb.objects().size());
      if (n < cfg.min_objects || n > cfg.max_objects) continue;
      std::string id = scene_id(nb);
      if (!seen.insert(id).second) continue;
      intern(nb);
      d.base_ids.push_back(id);
      edges.push_back({from, t, id});
    }
  }

  // Cross-domain pair supervision: the first `pairs` base scenes, observed
  // in both domains at training time.
  d.pair_ids.assign(d.base_ids.begin(), d.base_ids.begin() + cfg.pairs);

  std::set<std::string> train_keys;
  std::set<SpecKind> train_kinds;

  // The neighbor-edge triplets (both directions) are reserved for the test
  // split; training must not draw those exact instances.
  for (const NeighborEdge& e : edges) {
    train_keys.insert(triplet_key(e.from, e.t, e.to));
    train_keys.insert(triplet_key(e.to, reverse_spec(e.t), e.from));
  }

  // Training triplets, domain A.
  {
    Rng rng(child_seed(cfg.seed, 1));
    long attempts = 0;
    const long budget = 100L * cfg.train_triplets;
    while (static_cast<int>(d.train.size()) < cfg.train_triplets) {
      if (++attempts > budget)
        throw GenerationError(
            "could not draw " + std::to_string(cfg.train_triplets) +
            " distinct training triplets; loosen the config");
      const std::string& q = d.base_ids[rng.below(d.base_ids.size())];
      TransformSpec t = sample_spec(rng, d.scene(q), palette, cfg.kind_weights);
      const Scene result = apply_transform(d.scene(q), t);
      const std::string r = intern(result);
      if (!train_keys.insert(triplet_key(q, t, r)).second) continue;
      d.train.push_back({q, t, r, "A"});
      train_kinds.insert(spec_kind(t));
    }
  }

  // Test triplets, domain B. The plain slice leads with base-to-base edits
  // drawn from the neighbor edges, emitted in both directions, so those
  // queries and targets are all base scenes the candidate pool already
  // contains; ordinary base-to-derived forward triplets fill the remainder.
  const int novel_count = static_cast<int>(
      cfg.novel_fraction * static_cast<double>(cfg.test_triplets) + 0.5);
  std::set<std::string> test_keys;
  {
    Rng rng(child_seed(cfg.seed, 2));
    long attempts = 0;
    const long budget = 100L * cfg.test_triplets;
    const int plain_count = cfg.test_triplets - novel_count;
    std::vector<std::size_t> order(edges.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(order);
    for (std::size_t ei : order) {
      if (static_cast<int>(d.test.size()) >= plain_count) break;
      const NeighborEdge& e = edges[ei];
      const TransformSpec back = reverse_spec(e.t);
      const std::string fwd_key = triplet_key(e.from, e.t, e.to);
      const std::string rev_key = triplet_key(e.to, back, e.from);
      if (train_keys.count(fwd_key) || train_keys.count(rev_key)) continue;
      if (test_keys.count(fwd_key) || test_keys.count(rev_key)) continue;
      test_keys.insert(fwd_key);
      d.test.push_back({e.from, e.t, e.to, "B"});
      if (static_cast<int>(d.test.size()) < plain_count) {
        test_keys.insert(rev_key);
        d.test.push_back({e.to, back, e.from, "B"});
      }
    }
    while (static_cast<int>(d.test.size()) < plain_count) {
      if (++attempts > budget)
        throw GenerationError("could not draw enough distinct test triplets");
      const std::string& q = d.base_ids[rng.below(d.base_ids.size())];
      TransformSpec t = sample_spec(rng, d.scene(q), palette, cfg.kind_weights);
      const Scene result = apply_transform(d.scene(q), t);
      const std::string r = scene_id(result);
      const std::string fwd_key = triplet_key(q, t, r);
      if (train_keys.count(fwd_key) || test_keys.count(fwd_key)) continue;
      intern(result);
      test_keys.insert(fwd_key);
      d.test.push_back({q, t, r, "B"});
    }
  }
  {
    Rng rng(child_seed(cfg.seed, 3));
    long attempts = 0;
    const long budget = 100L * std::max(novel_count, 1);
    while (static_cast<int>(d.test.size()) < cfg.test_triplets) {
      if (++attempts > budget)
        throw GenerationError("could not draw enough novel test triplets");

      // The novel slice drops one held-out-color object into a base scene
      // and edits one of the original objects, so the unseen attribute is
      // present in query and target but untouched by the edit.
      const Scene& base = d.scene(d.base_ids[rng.below(d.base_ids.size())]);
      std::vector<Cell> free_cells;
      for (int rr = 0; rr < kGridSide; ++rr)
        for (int cc = 0; cc < kGridSide; ++cc)
          if (!base.at({rr, cc})) free_cells.push_back({rr, cc});
      SceneObject subject;
      subject.shape = kAllShapes[rng.below(kAllShapes.size())];
      subject.color = cfg.heldout_color;
      subject.size = kAllSizes[rng.below(kAllSizes.size())];
      subject.cell = free_cells[rng.below(free_cells.size())];
      std::vector<SceneObject> objs = base.objects();
      objs.push_back(subject);
      Scene q_scene = Scene::from_objects(std::move(objs));

      // A change-kind edit on one of the original objects; the held-out
      // object rides along untouched.
      const SceneObject& o = base.objects()[rng.below(base.size())];
      std::vector<Cell> dest_cells;
      for (const Cell& c : free_cells)
        if (!(c == subject.cell)) dest_cells.push_back(c);
      std::array<double, 6> feasible = {};
      for (SpecKind k : {SpecKind::ChangeShape, SpecKind::ChangeColor,
                         SpecKind::ChangeSize, SpecKind::ChangeCell})
        feasible[static_cast<int>(k)] = cfg.kind_weights[static_cast<int>(k)];
      if (dest_cells.empty())
        feasible[static_cast<int>(SpecKind::ChangeCell)] = 0.0;
      double total = 0.0;
      for (double w : feasible) total += w;
      if (total <= 0.0) continue;

      const SpecKind kind = static_cast<SpecKind>(rng.weighted(
          std::span<const double>(feasible.data(), feasible.size())));
      TransformSpec t = [&]() {
        switch (kind) {
          case SpecKind::ChangeShape: {
            std::vector<Shape> others;
            for (Shape sh : kAllShapes)
              if (sh != o.shape) others.push_back(sh);
            return TransformSpec::change(
                Selector{.shape = o.shape, .cell = o.cell}, rng.pick(others));
          }
          case SpecKind::ChangeColor: {
            std::vector<Color> others;
            for (Color c : palette)
              if (c != o.color) others.push_back(c);
            return TransformSpec::change(
                Selector{.color = o.color, .cell = o.cell}, rng.pick(others));
          }
          case SpecKind::ChangeSize:
            return TransformSpec::change(
                Selector{.size = o.size, .cell = o.cell},
                o.size == Size::Small ? Size::Large : Size::Small);
          default:
            return TransformSpec::change(Selector{.cell = o.cell},
                                         rng.pick(dest_cells));
        }
      }();
      const Scene r_scene = apply_transform(q_scene, t);
      const TransformSpec back = reverse_spec(t);
      const std::string q = scene_id(q_scene);
      const std::string r = scene_id(r_scene);
      const std::string fwd_key = triplet_key(q, t, r);
      const std::string rev_key = triplet_key(r, back, q);
      if (train_keys.count(fwd_key) || train_keys.count(rev_key)) continue;
      if (test_keys.count(fwd_key) || test_keys.count(rev_key)) continue;
      intern(q_scene);
      intern(r_scene);
      test_keys.insert(fwd_key);
      d.test.push_back({q, t, r, "B"});
      if (static_cast<int>(d.test.size()) < cfg.test_triplets) {
        test_keys.insert(rev_key);
        d.test.push_back({r, back, q, "B"});
      }
    }
  }

  // Guarantees: every test kind was seen (as a kind) in training, and every
  // triplet replays exactly.
  for (const Triplet& t : d.test)
    if (!train_kinds.count(spec_kind(t.t)))
      throw GenerationError(std::string("test kind ") +
                            spec_kind_name(spec_kind(t.t)) +
                            " never appeared in training");
  detail::validate_triplets(d, d.train, "train");
  detail::validate_triplets(d, d.test, "test");
  return d;
}

// ---------------------------------------------------------------------------
// Files
// ---------------------------------------------------------------------------

namespace detail {

inline void write_file(const std::filesystem::path& path,
                       const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw DataError("short write to " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string content((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  return content;
}

inline std::vector<json> parse_lines(const std::string& content,
                                     const std::string& name) {
  std::vector<json> out;
  std::size_t start = 0;
  std::size_t lineno = 0;
  while (start < content.size()) {
    std::size_t end = content.find('\n', start);
    if (end == std::string::npos) end = content.size();
    ++lineno;
    const std::string_view line(content.data() + start, end - start);
    if (!line.empty()) {
      try {
        out.push_back(json::parse(line));
      } catch (const json::exception& e) {
        throw FormatError(name + ":" + std::to_string(lineno) + ": " +
                          e.what());
      }
    }
    start = end + 1;
  }
  return out;
}

}  // namespace detail

inline constexpr const char* kScenesFile = "scenes.jsonl";
inline constexpr const char* kPairsFile = "pairs.jsonl";
inline constexpr const char* kTrainFile = "triplets_train.jsonl";
inline constexpr const char* kTestFile = "triplets_test.jsonl";
inline constexpr const char* kManifestFile = "manifest.json";

// Writes the four data files plus the manifest; returns the manifest hash,
// which identifies the dataset everywhere downstream (checkpoints, reports).
inline std::uint64_t write_dataset(Dataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);

  std::string scenes_out;
  for (const std::string& id : d.scene_order) {
    scenes_out += scene_to_json(id, d.scene(id)).dump();
    scenes_out += '\n';
  }
  std::string pairs_out;
  for (const std::string& id : d.pair_ids) {
    pairs_out += json{{"id", id}}.dump();
    pairs_out += '\n';
  }
  auto triplets_out = [](const std::vector<Triplet>& ts) {
    std::string out;
    for (const Triplet& t : ts) {
      out += triplet_to_json(t).dump();
      out += '\n';
    }
    return out;
  };
  const std::string train_out = triplets_out(d.train);
  const std::string test_out = triplets_out(d.test);

  json manifest;
  manifest["config"] = d.config.to_json();
  manifest["seed"] = d.config.seed;
  manifest["files"] = json{{"scenes", kScenesFile},
                           {"pairs", kPairsFile},
                           {"train", kTrainFile},
                           {"test", kTestFile}};
  manifest["counts"] = json{{"base", d.base_ids.size()},
                            {"scenes", d.scene_order.size()},
                            {"pairs", d.pair_ids.size()},
                            {"train", d.train.size()},
                            {"test", d.test.size()}};
  manifest["hashes"] =
      json{{kScenesFile, hex16(fnv1a64(scenes_out.data(), scenes_out.size()))},
           {kPairsFile, hex16(fnv1a64(pairs_out.data(), pairs_out.size()))},
           {kTrainFile, hex16(fnv1a64(train_out.data(), train_out.size()))},
           {kTestFile, hex16(fnv1a64(test_out.data(), test_out.size()))}};
  const std::string manifest_out = manifest.dump(2) + "\n";

  detail::write_file(dir / kScenesFile, scenes_out);
  detail::write_file(dir / kPairsFile, pairs_out);
  detail::write_file(dir / kTrainFile, train_out);
  detail::write_file(dir / kTestFile, test_out);
  detail::write_file(dir / kManifestFile, manifest_out);

  d.manifest_hash = fnv1a64(manifest_out.data(), manifest_out.size());
  return d.manifest_hash;
}

// Loads and fully re-validates a dataset directory: per-file hashes against
// the manifest, content-addressed ids, and exact triplet replay.
inline Dataset load_dataset(const std::filesystem::path& dir) {
  const std::string manifest_bytes = detail::read_file(dir / kManifestFile);
  json manifest;
  try {
    manifest = json::parse(manifest_bytes);
  } catch (const json::exception& e) {
    throw FormatError(std::string(kManifestFile) + ": " + e.what());
  }
  detail::reject_unknown_keys(
      manifest, {"config", "seed", "files", "counts", "hashes"}, "manifest");

  Dataset d;
  d.config = GenConfig::from_json(manifest.at("config"));
  d.manifest_hash = fnv1a64(manifest_bytes.data(), manifest_bytes.size());

  const json& hashes = manifest.at("hashes");
  auto load_checked = [&](const char* name) {
    std::string content = detail::read_file(dir / name);
    const std::string want = hashes.at(name).get<std::string>();
    const std::string got = hex16(fnv1a64(content.data(), content.size()));
    if (want != got)
      throw DataError(std::string(name) +
                      " does not match its manifest hash (expected " + want +
                      ", file hashes to " + got + "); regenerate the dataset");
    return content;
  };

  for (const json& line : detail::parse_lines(load_checked(kScenesFile),
                                              kScenesFile)) {
    detail::reject_unknown_keys(line, {"id", "objects"}, "scene");
    std::vector<SceneObject> objs;
    for (const json& jo : line.at("objects"))
      objs.push_back(object_from_json(jo));
    Scene s = Scene::from_objects(std::move(objs));
    const std::string id = line.at("id").get<std::string>();
    if (id != scene_id(s))
      throw DataError("scene id " + id + " does not match its content");
    if (!d.scenes.emplace(id, std::move(s)).second)
      throw DataError("duplicate scene id " + id);
    d.scene_order.push_back(id);
  }

  const std::size_t base_count = manifest.at("counts").at("base");
  if (base_count > d.scene_order.size())
    throw DataError("manifest base count exceeds scene count");
  d.base_ids.assign(d.scene_order.begin(),
                    d.scene_order.begin() + static_cast<long>(base_count));

  for (const json& line : detail::parse_lines(load_checked(kPairsFile),
                                              kPairsFile)) {
    detail::reject_unknown_keys(line, {"id"}, "pair");
    const std::string id = line.at("id").get<std::string>();
    d.scene(id);  // must exist
    d.pair_ids.push_back(id);
  }

  auto load_triplets = [&](const char* name) {
    std::vector<Triplet> out;
    for (const json& line : detail::parse_lines(load_checked(name), name)) {
      Triplet t = triplet_from_json(line);
      d.scene(t.q);
      d.scene(t.r);
      out.push_back(std::move(t));
    }
    return out;
  };
  d.train = load_triplets(kTrainFile);
  d.test = load_triplets(kTestFile);

  detail::validate_triplets(d, d.train, "train");
  detail::validate_triplets(d, d.test, "test");
  return d;
}

}  // namespace smx

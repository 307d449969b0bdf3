#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "smx/errors.hpp"
#include "smx/rng.hpp"

namespace smx {

inline constexpr int kGridSide = 3;
inline constexpr std::size_t kMaxObjects = 9;

enum class Shape : std::uint8_t { Circle, Triangle, Square };
enum class Color : std::uint8_t { Red, Green, Blue, Yellow, Gray, Cyan };
enum class Size : std::uint8_t { Small, Large };

inline constexpr std::array<Shape, 3> kAllShapes = {Shape::Circle,
                                                    Shape::Triangle,
                                                    Shape::Square};
inline constexpr std::array<Color, 6> kAllColors = {Color::Red,   Color::Green,
                                                    Color::Blue,  Color::Yellow,
                                                    Color::Gray,  Color::Cyan};
inline constexpr std::array<Size, 2> kAllSizes = {Size::Small, Size::Large};

inline const char* shape_name(Shape s) {
  switch (s) {
    case Shape::Circle: return "circle";
    case Shape::Triangle: return "triangle";
    case Shape::Square: return "square";
  }
  throw FormatError("bad shape value");
}

inline const char* color_name(Color c) {
  switch (c) {
    case Color::Red: return "red";
    case Color::Green: return "green";
    case Color::Blue: return "blue";
    case Color::Yellow: return "yellow";
    case Color::Gray: return "gray";
    case Color::Cyan: return "cyan";
  }
  throw FormatError("bad color value");
}

inline const char* size_name(Size s) {
  switch (s) {
    case Size::Small: return "small";
    case Size::Large: return "large";
  }
  throw FormatError("bad size value");
}

inline Shape parse_shape(const std::string& s) {
  for (Shape v : kAllShapes)
    if (s == shape_name(v)) return v;
  throw FormatError("unknown shape: " + s);
}

inline Color parse_color(const std::string& s) {
  for (Color v : kAllColors)
    if (s == color_name(v)) return v;
  throw FormatError("unknown color: " + s);
}

inline Size parse_size(const std::string& s) {
  for (Size v : kAllSizes)
    if (s == size_name(v)) return v;
  throw FormatError("unknown size: " + s);
}

struct Cell {
  int row = 0;
  int col = 0;
  auto operator<=>(const Cell&) const = default;
  bool valid() const {
    return row >= 0 && row < kGridSide && col >= 0 && col < kGridSide;
  }
};

struct SceneObject {
  Shape shape;
  Color color;
  Size size;
  Cell cell;
  bool operator==(const SceneObject&) const = default;
};

// Scene: a set of objects on the 3x3 grid, at most one per cell, stored in
// canonical (row, col) order so equal object sets are representationally
// identical. The empty scene is a legal value (it can arise from Remove);
// dataset generation never emits it directly.
class Scene {
 public:
  Scene() = default;

  static Scene from_objects(std::vector<SceneObject> objs) {
    if (objs.size() > kMaxObjects)
      throw DataError("scene holds " + std::to_string(objs.size()) +
                      " objects; the grid fits at most 9");
    for (const SceneObject& o : objs)
      if (!o.cell.valid())
        throw DataError("object cell (" + std::to_string(o.cell.row) + "," +
                        std::to_string(o.cell.col) + ") outside the 3x3 grid");
    std::sort(objs.begin(), objs.end(),
              [](const SceneObject& a, const SceneObject& b) {
                return a.cell < b.cell;
              });
    for (std::size_t i = 1; i < objs.size(); ++i)
      if (objs[i - 1].cell == objs[i].cell)
        throw DataError("two objects share cell (" +
                        std::to_string(objs[i].cell.row) + "," +
                        std::to_string(objs[i].cell.col) + ")");
    Scene s;
    s.objects_ = std::move(objs);
    return s;
  }

  const std::vector<SceneObject>& objects() const { return objects_; }
  std::size_t size() const { return objects_.size(); }
  bool empty() const { return objects_.empty(); }

  const SceneObject* at(Cell c) const {
    for (const SceneObject& o : objects_)
      if (o.cell == c) return &o;
    return nullptr;
  }

  bool operator==(const Scene& o) const { return objects_ == o.objects_; }

  // Content digest over the canonical representation; equal scenes share it.
  std::uint64_t digest() const {
    std::vector<unsigned char> bytes;
    bytes.reserve(objects_.size() * 5);
    for (const SceneObject& o : objects_) {
      bytes.push_back(static_cast<unsigned char>(o.shape));
      bytes.push_back(static_cast<unsigned char>(o.color));
      bytes.push_back(static_cast<unsigned char>(o.size));
      bytes.push_back(static_cast<unsigned char>(o.cell.row));
      bytes.push_back(static_cast<unsigned char>(o.cell.col));
    }
    return fnv1a64(bytes.data(), bytes.size());
  }

 private:
  std::vector<SceneObject> objects_;
};

inline std::string hex16(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

// Content-addressed scene ids. Stored dataset scenes use the "s" prefix;
// ephemeral generated scenes use "f" so their ids can never collide with
// dataset ids while the digest part still identifies the underlying scene.
inline std::string scene_id(const Scene& s, char prefix = 's') {
  return std::string(1, prefix) + hex16(s.digest());
}

// ---------------------------------------------------------------------------
// Transformations
// ---------------------------------------------------------------------------

struct Selector {
  std::optional<Shape> shape;
  std::optional<Color> color;
  std::optional<Size> size;
  std::optional<Cell> cell;

  bool matches(const SceneObject& o) const {
    if (shape && *shape != o.shape) return false;
    if (color && *color != o.color) return false;
    if (size && *size != o.size) return false;
    if (cell && *cell != o.cell) return false;
    return true;
  }

  bool fully_specified() const { return shape && color && size && cell; }

  static Selector exact(const SceneObject& o) {
    Selector s;
    s.shape = o.shape;
    s.color = o.color;
    s.size = o.size;
    s.cell = o.cell;
    return s;
  }

  bool operator==(const Selector&) const = default;
};

enum class Attr : std::uint8_t { Shape, Color, Size, Cell };
using AttrValue = std::variant<Shape, Color, Size, Cell>;  // index == Attr

inline const char* attr_name(Attr a) {
  switch (a) {
    case Attr::Shape: return "shape";
    case Attr::Color: return "color";
    case Attr::Size: return "size";
    case Attr::Cell: return "cell";
  }
  throw FormatError("bad attribute value");
}

inline Attr parse_attr(const std::string& s) {
  for (Attr a : {Attr::Shape, Attr::Color, Attr::Size, Attr::Cell})
    if (s == attr_name(a)) return a;
  throw FormatError("unknown attribute: " + s);
}

// A transformation between scenes. Change specs must name the value they
// replace (the selector pins the changed attribute); together with
// fully-specified Remove selectors used by generation, this makes every
// spec invertible from its own description, without consulting a scene.
struct TransformSpec {
  enum class Op : std::uint8_t { Add, Remove, Change };

  Op op = Op::Add;
  SceneObject object{};  // Add payload
  Selector selector{};   // Remove / Change subject
  Attr attr = Attr::Shape;
  AttrValue value{};  // Change target value

  static TransformSpec add(SceneObject o) {
    if (!o.cell.valid()) throw DataError("add spec: cell outside the grid");
    TransformSpec t;
    t.op = Op::Add;
    t.object = o;
    return t;
  }

  static TransformSpec remove(Selector sel) {
    TransformSpec t;
    t.op = Op::Remove;
    t.selector = sel;
    return t;
  }

  static TransformSpec change(Selector sel, AttrValue to) {
    TransformSpec t;
    t.op = Op::Change;
    t.selector = sel;
    t.attr = static_cast<Attr>(to.index());
    t.value = to;
    const bool pinned = (t.attr == Attr::Shape && sel.shape) ||
                        (t.attr == Attr::Color && sel.color) ||
                        (t.attr == Attr::Size && sel.size) ||
                        (t.attr == Attr::Cell && sel.cell);
    if (!pinned)
      throw DataError(
          std::string("change spec must pin the prior ") + attr_name(t.attr) +
          " in its selector so the spec stays invertible");
    if (t.attr == Attr::Cell && !std::get<Cell>(to).valid())
      throw DataError("change spec: destination cell outside the grid");
    return t;
  }

  bool operator==(const TransformSpec&) const = default;
};

// Six observable kinds: Add, Remove, and Change split by attribute. Used for
// sampling weights and per-kind metric breakdowns.
enum class SpecKind : std::uint8_t {
  Add,
  Remove,
  ChangeShape,
  ChangeColor,
  ChangeSize,
  ChangeCell,
};

inline constexpr std::array<SpecKind, 6> kAllSpecKinds = {
    SpecKind::Add,         SpecKind::Remove,    SpecKind::ChangeShape,
    SpecKind::ChangeColor, SpecKind::ChangeSize, SpecKind::ChangeCell};

inline SpecKind spec_kind(const TransformSpec& t) {
  switch (t.op) {
    case TransformSpec::Op::Add: return SpecKind::Add;
    case TransformSpec::Op::Remove: return SpecKind::Remove;
    case TransformSpec::Op::Change:
      switch (t.attr) {
        case Attr::Shape: return SpecKind::ChangeShape;
        case Attr::Color: return SpecKind::ChangeColor;
        case Attr::Size: return SpecKind::ChangeSize;
        case Attr::Cell: return SpecKind::ChangeCell;
      }
  }
  throw FormatError("bad spec op");
}

inline const char* spec_kind_name(SpecKind k) {
  switch (k) {
    case SpecKind::Add: return "add";
    case SpecKind::Remove: return "remove";
    case SpecKind::ChangeShape: return "change_shape";
    case SpecKind::ChangeColor: return "change_color";
    case SpecKind::ChangeSize: return "change_size";
    case SpecKind::ChangeCell: return "change_cell";
  }
  throw FormatError("bad spec kind");
}

inline SpecKind parse_spec_kind(const std::string& s) {
  for (SpecKind k : kAllSpecKinds)
    if (s == spec_kind_name(k)) return k;
  throw FormatError("unknown spec kind: " + s);
}

// Applies a transformation. Pure: the input scene is untouched, the result
// is freshly canonicalized. Failure modes are part of the contract:
//   NoMatch      selector matched no object
//   Ambiguous    selector matched more than one object
//   CellOccupied Add (or a cell Change) targets an occupied cell
//   NoOp         Change to the value already present
inline Scene apply_transform(const Scene& s, const TransformSpec& t) {
  std::vector<SceneObject> objs = s.objects();
  switch (t.op) {
    case TransformSpec::Op::Add: {
      if (s.at(t.object.cell))
        throw TransformError(TransformErrorCode::CellOccupied,
                             "add: cell (" + std::to_string(t.object.cell.row) +
                                 "," + std::to_string(t.object.cell.col) +
                                 ") is occupied");
      objs.push_back(t.object);
      return Scene::from_objects(std::move(objs));
    }
    case TransformSpec::Op::Remove:
    case TransformSpec::Op::Change: {
      std::size_t hit = objs.size();
      std::size_t hits = 0;
      for (std::size_t i = 0; i < objs.size(); ++i)
        if (t.selector.matches(objs[i])) {
          hit = i;
          ++hits;
        }
      if (hits == 0)
        throw TransformError(TransformErrorCode::NoMatch,
                             "selector matched no object");
      if (hits > 1)
        throw TransformError(TransformErrorCode::Ambiguous,
                             "selector matched " + std::to_string(hits) +
                                 " objects");
      if (t.op == TransformSpec::Op::Remove) {
        objs.erase(objs.begin() + static_cast<std::ptrdiff_t>(hit));
        return Scene::from_objects(std::move(objs));
      }
      SceneObject next = objs[hit];
      switch (t.attr) {
        case Attr::Shape: next.shape = std::get<Shape>(t.value); break;
        case Attr::Color: next.color = std::get<Color>(t.value); break;
        case Attr::Size: next.size = std::get<Size>(t.value); break;
        case Attr::Cell: next.cell = std::get<Cell>(t.value); break;
      }
      if (next == objs[hit])
        throw TransformError(TransformErrorCode::NoOp,
                             "change: object already has that value");
      if (t.attr == Attr::Cell && s.at(next.cell))
        throw TransformError(TransformErrorCode::CellOccupied,
                             "change: destination cell (" +
                                 std::to_string(next.cell.row) + "," +
                                 std::to_string(next.cell.col) +
                                 ") is occupied");
      objs[hit] = next;
      return Scene::from_objects(std::move(objs));
    }
  }
  throw FormatError("bad spec op");
}

// Inverse of a transformation, derived from the spec alone. This is total
// over the specs this library produces: Add carries its object, generated
// Remove selectors are fully specified, and Change selectors pin the value
// they overwrite. apply(apply(s, t), reverse_spec(t)) == s wherever t applies.
inline TransformSpec reverse_spec(const TransformSpec& t) {
  switch (t.op) {
    case TransformSpec::Op::Add:
      return TransformSpec::remove(Selector::exact(t.object));
    case TransformSpec::Op::Remove: {
      if (!t.selector.fully_specified())
        throw DataError(
            "cannot reverse a remove whose selector leaves fields open");
      SceneObject o;
      o.shape = *t.selector.shape;
      o.color = *t.selector.color;
      o.size = *t.selector.size;
      o.cell = *t.selector.cell;
      return TransformSpec::add(o);
    }
    case TransformSpec::Op::Change: {
      Selector sel = t.selector;
      AttrValue old_value;
      switch (t.attr) {
        case Attr::Shape:
          old_value = *sel.shape;
          sel.shape = std::get<Shape>(t.value);
          break;
        case Attr::Color:
          old_value = *sel.color;
          sel.color = std::get<Color>(t.value);
          break;
        case Attr::Size:
          old_value = *sel.size;
          sel.size = std::get<Size>(t.value);
          break;
        case Attr::Cell:
          old_value = *sel.cell;
          sel.cell = std::get<Cell>(t.value);
          break;
      }
      return TransformSpec::change(sel, old_value);
    }
  }
  throw FormatError("bad spec op");
}

// Uniformly samples a scene: object count from [min_count, max_count],
// then per object shape/color/size uniform over the palette and cells drawn
// without replacement.
inline Scene sample_scene(Rng& rng, int min_count, int max_count,
                          const std::vector<Color>& palette) {
  if (min_count < 1 || max_count > static_cast<int>(kMaxObjects) ||
      min_count > max_count)
    throw ConfigError("sample_scene: count range must sit within 1..9");
  if (palette.empty()) throw ConfigError("sample_scene: empty color palette");
  const int n = static_cast<int>(rng.range(min_count, max_count));
  std::vector<Cell> cells;
  cells.reserve(9);
  for (int r = 0; r < kGridSide; ++r)
    for (int c = 0; c < kGridSide; ++c) cells.push_back({r, c});
  rng.shuffle(cells);
  std::vector<SceneObject> objs;
  objs.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    SceneObject o;
    o.shape = kAllShapes[rng.below(kAllShapes.size())];
    o.color = palette[rng.below(palette.size())];
    o.size = kAllSizes[rng.below(kAllSizes.size())];
    o.cell = cells[static_cast<std::size_t>(i)];
    objs.push_back(o);
  }
  return Scene::from_objects(std::move(objs));
}

inline std::vector<Color> full_palette() {
  return {kAllColors.begin(), kAllColors.end()};
}

inline std::vector<Color> palette_without(Color held_out) {
  std::vector<Color> p;
  for (Color c : kAllColors)
    if (c != held_out) p.push_back(c);
  return p;
}

}  // namespace smx

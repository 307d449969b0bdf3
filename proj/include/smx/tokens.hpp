#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smx/errors.hpp"
#include "smx/scene.hpp"

namespace smx {

using TokenSeq = std::vector<std::uint32_t>;

// Fixed symbolic vocabulary (32 ids): structural markers, attribute words,
// cell names, and transformation keywords. Layout is frozen — checkpoints
// and datasets depend on it.
namespace tok {
inline constexpr std::uint32_t PAD = 0;
inline constexpr std::uint32_t EMPTY = 1;
inline constexpr std::uint32_t END = 2;
inline constexpr std::uint32_t SEP = 3;
inline constexpr std::uint32_t WILD = 4;
inline constexpr std::uint32_t SMALL = 5;
inline constexpr std::uint32_t LARGE = 6;
inline constexpr std::uint32_t COLOR0 = 7;   // red green blue yellow gray cyan
inline constexpr std::uint32_t SHAPE0 = 13;  // circle triangle square
inline constexpr std::uint32_t CELL0 = 16;   // cell_r_c, id = 16 + 3r + c
inline constexpr std::uint32_t ADD = 25;
inline constexpr std::uint32_t REMOVE = 26;
inline constexpr std::uint32_t CHANGE = 27;
inline constexpr std::uint32_t ATTR_SHAPE = 28;
inline constexpr std::uint32_t ATTR_COLOR = 29;
inline constexpr std::uint32_t ATTR_SIZE = 30;
inline constexpr std::uint32_t ATTR_CELL = 31;
}  // namespace tok

inline constexpr std::size_t kVocabSize = 32;
inline constexpr std::size_t kSpecTokenLen = 8;

inline std::uint32_t size_token(Size s) {
  return s == Size::Small ? tok::SMALL : tok::LARGE;
}
inline std::uint32_t color_token(Color c) {
  return tok::COLOR0 + static_cast<std::uint32_t>(c);
}
inline std::uint32_t shape_token(Shape s) {
  return tok::SHAPE0 + static_cast<std::uint32_t>(s);
}
inline std::uint32_t cell_token(Cell c) {
  return tok::CELL0 + static_cast<std::uint32_t>(3 * c.row + c.col);
}
inline std::uint32_t attr_token(Attr a) {
  switch (a) {
    case Attr::Shape: return tok::ATTR_SHAPE;
    case Attr::Color: return tok::ATTR_COLOR;
    case Attr::Size: return tok::ATTR_SIZE;
    case Attr::Cell: return tok::ATTR_CELL;
  }
  throw FormatError("bad attribute value");
}

inline std::string token_name(std::uint32_t id) {
  switch (id) {
    case tok::PAD: return "<pad>";
    case tok::EMPTY: return "<empty>";
    case tok::END: return "<end>";
    case tok::SEP: return "<sep>";
    case tok::WILD: return "<any>";
    case tok::SMALL: return "small";
    case tok::LARGE: return "large";
    case tok::ADD: return "add";
    case tok::REMOVE: return "remove";
    case tok::CHANGE: return "change";
    case tok::ATTR_SHAPE: return "attr:shape";
    case tok::ATTR_COLOR: return "attr:color";
    case tok::ATTR_SIZE: return "attr:size";
    case tok::ATTR_CELL: return "attr:cell";
    default: break;
  }
  if (id >= tok::COLOR0 && id < tok::COLOR0 + 6)
    return color_name(static_cast<Color>(id - tok::COLOR0));
  if (id >= tok::SHAPE0 && id < tok::SHAPE0 + 3)
    return shape_name(static_cast<Shape>(id - tok::SHAPE0));
  if (id >= tok::CELL0 && id < tok::CELL0 + 9)
    return "cell_" + std::to_string((id - tok::CELL0) / 3) + "_" +
           std::to_string((id - tok::CELL0) % 3);
  throw VocabularyError("token id " + std::to_string(id) +
                        " outside the vocabulary");
}

// Scene serialization: [size color shape cell <sep>] per object in canonical
// order, closed by <end>; the empty scene is the single <empty> token.
// Length is always 1 + 5 * object_count.
inline TokenSeq render_tokens(const Scene& s) {
  if (s.empty()) return {tok::EMPTY};
  TokenSeq out;
  out.reserve(1 + 5 * s.size());
  for (const SceneObject& o : s.objects()) {
    out.push_back(size_token(o.size));
    out.push_back(color_token(o.color));
    out.push_back(shape_token(o.shape));
    out.push_back(cell_token(o.cell));
    out.push_back(tok::SEP);
  }
  out.push_back(tok::END);
  return out;
}

namespace detail {
inline Size token_to_size(std::uint32_t id) {
  if (id == tok::SMALL) return Size::Small;
  if (id == tok::LARGE) return Size::Large;
  throw FormatError("expected a size token, got " + std::to_string(id));
}
inline Color token_to_color(std::uint32_t id) {
  if (id < tok::COLOR0 || id >= tok::COLOR0 + 6)
    throw FormatError("expected a color token, got " + std::to_string(id));
  return static_cast<Color>(id - tok::COLOR0);
}
inline Shape token_to_shape(std::uint32_t id) {
  if (id < tok::SHAPE0 || id >= tok::SHAPE0 + 3)
    throw FormatError("expected a shape token, got " + std::to_string(id));
  return static_cast<Shape>(id - tok::SHAPE0);
}
inline Cell token_to_cell(std::uint32_t id) {
  if (id < tok::CELL0 || id >= tok::CELL0 + 9)
    throw FormatError("expected a cell token, got " + std::to_string(id));
  const int k = static_cast<int>(id - tok::CELL0);
  return Cell{k / 3, k % 3};
}
}  // namespace detail

// Strict inverse of render_tokens; anything but a canonical serialization is
// rejected. parse_tokens(render_tokens(s)) == s for every scene.
inline Scene parse_tokens(const TokenSeq& seq) {
  if (seq.empty()) throw FormatError("empty token sequence");
  if (seq.size() == 1) {
    if (seq[0] == tok::EMPTY) return Scene();
    throw FormatError("single-token sequence must be <empty>");
  }
  if (seq.size() % 5 != 1 || seq.back() != tok::END)
    throw FormatError("scene serialization must be n*5 object tokens + <end>");
  std::vector<SceneObject> objs;
  for (std::size_t i = 0; i + 1 < seq.size(); i += 5) {
    SceneObject o;
    o.size = detail::token_to_size(seq[i]);
    o.color = detail::token_to_color(seq[i + 1]);
    o.shape = detail::token_to_shape(seq[i + 2]);
    o.cell = detail::token_to_cell(seq[i + 3]);
    if (seq[i + 4] != tok::SEP)
      throw FormatError("object group must close with <sep>");
    if (!objs.empty() && !(objs.back().cell < o.cell))
      throw FormatError("objects are not in canonical cell order");
    objs.push_back(o);
  }
  return Scene::from_objects(std::move(objs));
}

// Transformation serialization: fixed 8 tokens.
//   add:    [add    size  color shape cell  <pad> <pad> <pad>]
//   remove: [remove size? color? shape? cell?  <pad> <pad> <pad>]
//   change: [change size? color? shape? cell?  attr  value <pad>]
// where ? slots hold <any> when the selector leaves them open. Injective:
// the op token fixes the layout and every field has a disjoint token range.
inline TokenSeq spec_tokens(const TransformSpec& t) {
  TokenSeq out(kSpecTokenLen, tok::PAD);
  auto fill_selector = [&out](const Selector& sel) {
    out[1] = sel.size ? size_token(*sel.size) : tok::WILD;
    out[2] = sel.color ? color_token(*sel.color) : tok::WILD;
    out[3] = sel.shape ? shape_token(*sel.shape) : tok::WILD;
    out[4] = sel.cell ? cell_token(*sel.cell) : tok::WILD;
  };
  switch (t.op) {
    case TransformSpec::Op::Add:
      out[0] = tok::ADD;
      out[1] = size_token(t.object.size);
      out[2] = color_token(t.object.color);
      out[3] = shape_token(t.object.shape);
      out[4] = cell_token(t.object.cell);
      break;
    case TransformSpec::Op::Remove:
      out[0] = tok::REMOVE;
      fill_selector(t.selector);
      break;
    case TransformSpec::Op::Change:
      out[0] = tok::CHANGE;
      fill_selector(t.selector);
      out[5] = attr_token(t.attr);
      switch (t.attr) {
        case Attr::Shape: out[6] = shape_token(std::get<Shape>(t.value)); break;
        case Attr::Color: out[6] = color_token(std::get<Color>(t.value)); break;
        case Attr::Size: out[6] = size_token(std::get<Size>(t.value)); break;
        case Attr::Cell: out[6] = cell_token(std::get<Cell>(t.value)); break;
      }
      break;
  }
  return out;
}

// Canonical byte key for a triplet, used for deduplication.
inline std::string triplet_key(const std::string& q_id, const TransformSpec& t,
                               const std::string& r_id) {
  std::string key = q_id + "|";
  for (std::uint32_t id : spec_tokens(t)) {
    key += std::to_string(id);
    key += ",";
  }
  key += "|" + r_id;
  return key;
}

}  // namespace smx

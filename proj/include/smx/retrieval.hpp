#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "smx/trainer.hpp"

namespace smx {

// ---------------------------------------------------------------------------
// Embedding index
// ---------------------------------------------------------------------------

// Immutable search structure over one domain's observations: ids in
// ascending order, one embedding row per id.
struct EmbeddingIndex {
  char domain = 'A';
  std::vector<std::string> ids;
  Tensor matrix;  // [ids.size(), embed_dim]

  std::size_t size() const { return ids.size(); }

  bool contains(const std::string& id) const {
    return std::binary_search(ids.begin(), ids.end(), id);
  }
};

inline EmbeddingIndex build_index(
    std::vector<std::pair<std::string, Scene>> observations, char domain,
    ParamStore& ps, const EncoderConfig& cfg) {
  if (observations.empty())
    throw DataError("cannot build an index over zero observations");
  std::sort(observations.begin(), observations.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 1; i < observations.size(); ++i)
    if (observations[i].first == observations[i - 1].first)
      throw DataError("duplicate id in index: " + observations[i].first);

  EmbeddingIndex index;
  index.domain = domain;
  index.ids.reserve(observations.size());
  if (domain == 'A') {
    std::vector<std::vector<double>> rows;
    rows.reserve(observations.size());
    for (const auto& [id, scene] : observations) {
      index.ids.push_back(id);
      rows.push_back(render_grid_flat(scene));
    }
    index.matrix = embed_grid_values(ps, stack_rows(rows), cfg);
  } else if (domain == 'B') {
    std::vector<TokenSeq> seqs;
    seqs.reserve(observations.size());
    for (const auto& [id, scene] : observations) {
      index.ids.push_back(id);
      seqs.push_back(render_tokens(scene));
    }
    index.matrix = embed_tokens_values(ps, seqs, cfg);
  } else {
    throw DataError(std::string("unknown index domain '") + domain + "'");
  }
  return index;
}

// ---------------------------------------------------------------------------
// Ranking
// ---------------------------------------------------------------------------

struct RetrievalResult {
  std::string query_id;
  std::vector<std::string> ranked;  // top-k candidate ids, best first
  std::vector<double> scores;       // non-increasing, parallel to `ranked`
  bool fallback_image_only = false;
};

namespace detail {

// Rank candidates by descending score; exact ties break toward the smaller
// id. `exclude_id` drops the query's own source observation when the index
// shares its domain.
inline RetrievalResult rank_row(const EmbeddingIndex& index,
                                const double* scores, std::size_t k,
                                const std::string& exclude_id) {
  std::vector<std::size_t> order;
  order.reserve(index.size());
  for (std::size_t i = 0; i < index.size(); ++i)
    if (index.ids[i] != exclude_id) order.push_back(i);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return index.ids[a] < index.ids[b];
  });
  if (k < order.size()) order.resize(k);
  RetrievalResult r;
  for (std::size_t i : order) {
    r.ranked.push_back(index.ids[i]);
    r.scores.push_back(scores[i]);
  }
  return r;
}

inline std::vector<double> score_row(const EmbeddingIndex& index,
                                     const Tensor& query_rows,
                                     std::size_t row) {
  std::vector<double> out(index.size(), 0.0);
  const std::size_t d = index.matrix.cols();
  const double* q = query_rows.data.data() + row * d;
  for (std::size_t i = 0; i < index.size(); ++i) {
    const double* c = index.matrix.data.data() + i * d;
    double acc = 0.0;
    for (std::size_t j = 0; j < d; ++j) acc += q[j] * c[j];
    out[i] = acc;
  }
  return out;
}

}  // namespace detail

inline Tensor embed_observation_rows(ParamStore& ps, const EncoderConfig& cfg,
                                     const std::vector<Scene>& scenes,
                                     char domain) {
  if (domain == 'A') {
    std::vector<std::vector<double>> rows;
    rows.reserve(scenes.size());
    for (const Scene& s : scenes) rows.push_back(render_grid_flat(s));
    return embed_grid_values(ps, stack_rows(rows), cfg);
  }
  if (domain == 'B') {
    std::vector<TokenSeq> seqs;
    seqs.reserve(scenes.size());
    for (const Scene& s : scenes) seqs.push_back(render_tokens(s));
    return embed_tokens_values(ps, seqs, cfg);
  }
  throw DataError(std::string("unknown observation domain '") + domain + "'");
}

// Composed retrieval: r~ = fuse(embed(q), embed_spec(t)), ranked against the
// index by dot product.
inline RetrievalResult query_composed(ParamStore& ps, const EncoderConfig& cfg,
                                      const Scene& q, char q_domain,
                                      const TransformSpec& t,
                                      const EmbeddingIndex& index,
                                      std::size_t k,
                                      const std::string& exclude_id = "") {
  Tensor q_rows = embed_observation_rows(ps, cfg, {q}, q_domain);
  Tensor spec_rows = embed_spec_values(ps, {t}, cfg);
  Tensor composed = transform_fuse_values(ps, q_rows, spec_rows, cfg);
  std::vector<double> scores = detail::score_row(index, composed, 0);
  return detail::rank_row(index, scores.data(), k, exclude_id);
}

// Baseline 1: ignore the transformation, rank by query similarity alone.
inline RetrievalResult baseline_image_only(ParamStore& ps,
                                           const EncoderConfig& cfg,
                                           const Scene& q, char q_domain,
                                           const EmbeddingIndex& index,
                                           std::size_t k,
                                           const std::string& exclude_id = "") {
  Tensor q_rows = embed_observation_rows(ps, cfg, {q}, q_domain);
  std::vector<double> scores = detail::score_row(index, q_rows, 0);
  return detail::rank_row(index, scores.data(), k, exclude_id);
}

namespace detail {

// Word-vector style decomposition of a spec: token sequences whose
// embeddings are added to / subtracted from the query embedding.
//   Change a->b:  +[b], -[a]
//   Add(object):  +[object tokens]
//   Remove(sel):  -[selector tokens]
inline std::pair<TokenSeq, TokenSeq> arithmetic_tokens(const TransformSpec& t) {
  auto selector_tokens = [](const Selector& sel) {
    return TokenSeq{sel.size ? size_token(*sel.size) : tok::WILD,
                    sel.color ? color_token(*sel.color) : tok::WILD,
                    sel.shape ? shape_token(*sel.shape) : tok::WILD,
                    sel.cell ? cell_token(*sel.cell) : tok::WILD};
  };
  switch (t.op) {
    case TransformSpec::Op::Add:
      return {TokenSeq{size_token(t.object.size), color_token(t.object.color),
                       shape_token(t.object.shape), cell_token(t.object.cell)},
              TokenSeq{}};
    case TransformSpec::Op::Remove:
      return {TokenSeq{}, selector_tokens(t.selector)};
    case TransformSpec::Op::Change: {
      std::uint32_t from = 0, to = 0;
      switch (t.attr) {
        case Attr::Shape:
          from = shape_token(*t.selector.shape);
          to = shape_token(std::get<Shape>(t.value));
          break;
        case Attr::Color:
          from = color_token(*t.selector.color);
          to = color_token(std::get<Color>(t.value));
          break;
        case Attr::Size:
          from = size_token(*t.selector.size);
          to = size_token(std::get<Size>(t.value));
          break;
        case Attr::Cell:
          from = cell_token(*t.selector.cell);
          to = cell_token(std::get<Cell>(t.value));
          break;
      }
      return {TokenSeq{to}, TokenSeq{from}};
    }
  }
  throw DataError("unreachable spec op");
}

inline void normalize_rows_inplace(Tensor& rows) {
  const std::size_t d = rows.cols();
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    double norm = 0.0;
    for (std::size_t j = 0; j < d; ++j) norm += rows.at(i, j) * rows.at(i, j);
    norm = std::sqrt(norm);
    if (norm < 1e-8)
      throw DegenerateEmbeddingError(
          "arithmetic baseline produced a zero embedding");
    for (std::size_t j = 0; j < d; ++j) rows.at(i, j) /= norm;
  }
}

}  // namespace detail

// Baseline 2: embedding arithmetic. r~ = normalize(embed(q) + embed(to
// tokens) - embed(from tokens)) using the token encoder for the word
// vectors; Add and Remove contribute their object/selector tokens with +/-
// sign respectively.
inline RetrievalResult baseline_arithmetic(ParamStore& ps,
                                           const EncoderConfig& cfg,
                                           const Scene& q, char q_domain,
                                           const TransformSpec& t,
                                           const EmbeddingIndex& index,
                                           std::size_t k,
                                           const std::string& exclude_id = "") {
  Tensor r = embed_observation_rows(ps, cfg, {q}, q_domain);
  auto [plus, minus] = detail::arithmetic_tokens(t);
  if (!plus.empty()) {
    Tensor p = embed_tokens_values(ps, {plus}, cfg);
    axpy(r, 1.0, p);
  }
  if (!minus.empty()) {
    Tensor m = embed_tokens_values(ps, {minus}, cfg);
    axpy(r, -1.0, m);
  }
  detail::normalize_rows_inplace(r);
  std::vector<double> scores = detail::score_row(index, r, 0);
  return detail::rank_row(index, scores.data(), k, exclude_id);
}

// Translation memory for the round-trip baseline: the token-domain
// embeddings of the scenes with known cross-domain correspondence.
struct TranslationDb {
  EmbeddingIndex b_index;  // token-domain embeddings of paired scenes
  const Dataset* data = nullptr;
};

inline TranslationDb build_translation_db(const Dataset& data, ParamStore& ps,
                                          const EncoderConfig& cfg) {
  if (data.pair_ids.empty())
    throw DataError(
        "round-trip baseline needs cross-domain pairs for translation");
  std::vector<std::pair<std::string, Scene>> obs;
  obs.reserve(data.pair_ids.size());
  for (const std::string& id : data.pair_ids)
    obs.emplace_back(id, data.scene(id));
  TranslationDb db;
  db.b_index = build_index(std::move(obs), 'B', ps, cfg);
  db.data = &data;
  return db;
}

// Baseline 3: translate the raster query to its nearest token-domain
// neighbor, apply the transformation natively on the recovered symbolic
// scene, re-embed the result, and retrieve. If the native application fails
// (the recovered scene need not admit the spec) the result falls back to
// image-only ranking and is flagged.
inline RetrievalResult baseline_roundtrip(ParamStore& ps,
                                          const EncoderConfig& cfg,
                                          const Scene& q, char q_domain,
                                          const TransformSpec& t,
                                          const TranslationDb& db,
                                          const EmbeddingIndex& index,
                                          std::size_t k,
                                          const std::string& exclude_id = "") {
  Tensor q_rows = embed_observation_rows(ps, cfg, {q}, q_domain);
  std::vector<double> tr_scores = detail::score_row(db.b_index, q_rows, 0);
  RetrievalResult nearest =
      detail::rank_row(db.b_index, tr_scores.data(), 1, "");
  const Scene& recovered = db.data->scene(nearest.ranked.front());

  try {
    Scene transformed = apply_transform(recovered, t);
    Tensor r_rows = embed_observation_rows(ps, cfg, {transformed}, 'B');
    std::vector<double> scores = detail::score_row(index, r_rows, 0);
    return detail::rank_row(index, scores.data(), k, exclude_id);
  } catch (const TransformError&) {
    RetrievalResult r =
        baseline_image_only(ps, cfg, q, q_domain, index, k, exclude_id);
    r.fallback_image_only = true;
    return r;
  }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

// Exact percentage of queries whose top-k list contains the true target.
inline double recall_at_k(const std::vector<RetrievalResult>& results,
                          const std::vector<std::string>& truths,
                          std::size_t k) {
  if (results.size() != truths.size())
    throw DimensionError("results and ground truth differ in length");
  if (results.empty())
    throw ProtocolError("recall over an empty query set is undefined");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& ranked = results[i].ranked;
    const std::size_t top = std::min(k, ranked.size());
    for (std::size_t j = 0; j < top; ++j)
      if (ranked[j] == truths[i]) {
        ++hits;
        break;
      }
  }
  return 100.0 * static_cast<double>(hits) /
         static_cast<double>(results.size());
}

struct MetricsReport {
  std::string regime;
  std::map<std::string, double> r_at;     // k (as string) -> percentage
  std::map<std::string, double> by_kind;  // spec kind -> R@1 percentage
  std::size_t n_queries = 0;
  std::string checkpoint_hash;
  std::string dataset_hash;

  json to_json() const {
    return json{{"regime", regime},        {"r_at", r_at},
                {"by_kind", by_kind},      {"n_queries", n_queries},
                {"checkpoint_hash", checkpoint_hash},
                {"dataset_hash", dataset_hash}};
  }
};

enum class Method { Composed, ImageOnly, Arithmetic, Roundtrip };

inline const char* method_name(Method m) {
  switch (m) {
    case Method::Composed: return "composed";
    case Method::ImageOnly: return "image_only";
    case Method::Arithmetic: return "arithmetic";
    case Method::Roundtrip: return "roundtrip";
  }
  throw ConfigError("unreachable method");
}

// Evaluates one cell of the results matrix: the given queries, realized with
// query side in `q_domain`, against the candidate pool in `r_domain`.
// The pool is the base scenes plus every test target; a query's own source
// observation is excluded only when it actually lives in the pool's domain.
inline MetricsReport evaluate_cell(Checkpoint& ckpt, const Dataset& data,
                                   const std::vector<Triplet>& queries,
                                   char q_domain, char r_domain,
                                   const std::vector<std::size_t>& ks,
                                   const std::string& label,
                                   Method method = Method::Composed) {
  if (queries.empty())
    throw ProtocolError("evaluation over an empty query set is undefined");
  if (ks.empty()) throw ConfigError("at least one k is required");
  ParamStore& ps = ckpt.params;
  const EncoderConfig& enc = ckpt.config.encoder;

  std::vector<std::pair<std::string, Scene>> pool;
  for (const std::string& id : data.pool_ids())
    pool.emplace_back(id, data.scene(id));
  EmbeddingIndex index = build_index(std::move(pool), r_domain, ps, enc);

  const std::size_t max_k = *std::max_element(ks.begin(), ks.end());
  TranslationDb db;
  if (method == Method::Roundtrip) db = build_translation_db(data, ps, enc);

  std::vector<RetrievalResult> results;
  std::vector<std::string> truths;
  results.reserve(queries.size());
  std::map<std::string, std::pair<std::size_t, std::size_t>> kind_tally;
  for (const Triplet& t : queries) {
    if (!index.contains(t.r))
      throw ProtocolError("true target " + t.r +
                          " is missing from the candidate pool");
    const std::string exclude = (q_domain == r_domain) ? t.q : std::string();
    const Scene& q = data.scene(t.q);
    RetrievalResult r;
    switch (method) {
      case Method::Composed:
        r = query_composed(ps, enc, q, q_domain, t.t, index, max_k, exclude);
        break;
      case Method::ImageOnly:
        r = baseline_image_only(ps, enc, q, q_domain, index, max_k, exclude);
        break;
      case Method::Arithmetic:
        r = baseline_arithmetic(ps, enc, q, q_domain, t.t, index, max_k,
                                exclude);
        break;
      case Method::Roundtrip:
        r = baseline_roundtrip(ps, enc, q, q_domain, t.t, db, index, max_k,
                               exclude);
        break;
    }
    r.query_id = t.q;
    auto& [kind_hits, kind_total] = kind_tally[spec_kind_name(spec_kind(t.t))];
    ++kind_total;
    if (!r.ranked.empty() && r.ranked.front() == t.r) ++kind_hits;
    results.push_back(std::move(r));
    truths.push_back(t.r);
  }

  MetricsReport report;
  report.regime = label;
  for (std::size_t k : ks)
    report.r_at[std::to_string(k)] = recall_at_k(results, truths, k);
  for (const auto& [kind, tally] : kind_tally)
    report.by_kind[kind] = 100.0 * static_cast<double>(tally.first) /
                           static_cast<double>(tally.second);
  report.n_queries = queries.size();
  report.checkpoint_hash = hex16(fnv1a64(serialize_checkpoint(ckpt)));
  report.dataset_hash = hex16(data.manifest_hash);
  return report;
}

// ---------------------------------------------------------------------------
// Results matrix
// ---------------------------------------------------------------------------

struct MatrixOptions {
  std::vector<std::size_t> ks = {1, 5, 10};
  bool baselines = false;
};

// Emits every cell the supplied checkpoints can serve:
//   in_domain_A -> A->A      in_domain_B -> B->B      cross_AB -> A->B
//   transfer    -> A->A, A->B, B->B
// plus, when requested, the three baseline rows on the cross-domain cell
// using the transfer checkpoint. Cells whose checkpoint is absent are
// reported in `missing`.
struct MatrixResult {
  std::vector<MetricsReport> reports;
  std::vector<std::string> missing;
};

inline MatrixResult run_matrix(std::map<Regime, Checkpoint>& ckpts,
                               const Dataset& data,
                               const MatrixOptions& opt = {}) {
  MatrixResult out;
  auto cell = [&](Regime regime, char qd, char rd) {
    const std::string label = std::string(regime_name(regime)) + ":" + qd +
                              "->" + rd;
    auto it = ckpts.find(regime);
    if (it == ckpts.end()) {
      out.missing.push_back(label);
      return;
    }
    out.reports.push_back(
        evaluate_cell(it->second, data, data.test, qd, rd, opt.ks, label));
  };
  cell(Regime::InDomainA, 'A', 'A');
  cell(Regime::CrossAB, 'A', 'B');
  cell(Regime::InDomainB, 'B', 'B');
  cell(Regime::Transfer, 'A', 'A');
  cell(Regime::Transfer, 'A', 'B');
  cell(Regime::Transfer, 'B', 'B');

  if (opt.baselines) {
    auto it = ckpts.find(Regime::Transfer);
    if (it == ckpts.end()) {
      out.missing.push_back("baselines (need transfer checkpoint)");
    } else {
      for (Method m :
           {Method::ImageOnly, Method::Arithmetic, Method::Roundtrip}) {
        const std::string label = std::string(method_name(m)) + ":A->B";
        out.reports.push_back(evaluate_cell(it->second, data, data.test, 'A',
                                            'B', opt.ks, label, m));
      }
    }
  }
  return out;
}

inline json matrix_json(const MatrixResult& m) {
  json reports = json::array();
  for (const MetricsReport& r : m.reports) reports.push_back(r.to_json());
  return json{{"reports", reports}, {"missing", m.missing}};
}

// Plain-text table carrying exactly the JSON numbers (identical
// serialization, so the two outputs can never disagree).
inline std::string matrix_table(const MatrixResult& m,
                                const std::vector<std::size_t>& ks) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header = {"regime"};
  for (std::size_t k : ks) header.push_back("R@" + std::to_string(k));
  header.push_back("queries");
  rows.push_back(header);
  for (const MetricsReport& r : m.reports) {
    std::vector<std::string> row = {r.regime};
    for (std::size_t k : ks)
      row.push_back(json(r.r_at.at(std::to_string(k))).dump());
    row.push_back(std::to_string(r.n_queries));
    rows.push_back(row);
  }
  for (const std::string& miss : m.missing) {
    std::vector<std::string> row = {miss};
    for (std::size_t i = 0; i < ks.size(); ++i) row.push_back("--");
    row.push_back("--");
    rows.push_back(row);
  }

  std::vector<std::size_t> widths(rows.front().size(), 0);
  for (const auto& row : rows)
    for (std::size_t c = 0; c < row.size(); ++c)
      widths[c] = std::max(widths[c], row[c].size());
  std::string out;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out += "  ";
      out += row[c];
      out.append(widths[c] - row[c].size(), ' ');
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += '\n';
  }
  return out;
}

}  // namespace smx

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "smx/param_store.hpp"
#include "smx/render.hpp"
#include "smx/tape.hpp"
#include "smx/tokens.hpp"

namespace smx {

// Width settings shared by every encoder and the fusion head. embed_dim is
// the dimension of the shared space every observation maps into.
struct EncoderConfig {
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 128;
  std::size_t token_dim = 32;
  std::size_t fusion_hidden = 128;
  bool normalize = true;

  void validate() const {
    if (embed_dim == 0 || hidden_dim == 0 || token_dim == 0 ||
        fusion_hidden == 0)
      throw ConfigError("encoder widths must be positive");
  }
};

// Parameter families:
//   enc_grid.*  raster encoder, 432 -> hidden -> d
//   enc_tok.*   token encoder: lookup table + pooled -> hidden -> d
//   enc_spec.*  transformation encoder, same mechanism, separate weights
//   fuse.*      fusion head, (d + d) -> fusion_hidden -> d
// Weight draws depend only on (seed, parameter name), so adding parameters
// never shifts the initialization of existing ones. Biases get the same
// small uniform draw rather than zeros: an all-zero raster (empty scene) or
// a fully ReLU-dead hidden row would otherwise map to the zero vector, which
// cannot be length-normalized.
inline void init_encoder_params(ParamStore& ps, const EncoderConfig& cfg,
                                std::uint64_t seed) {
  cfg.validate();
  auto dense = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    ps.create(prefix + ".w", glorot(seed, prefix + ".w", in, out, {in, out}));
    ps.create(prefix + ".b", glorot(seed, prefix + ".b", in, out, {out}));
  };
  dense("enc_grid.l1", kRasterSize, cfg.hidden_dim);
  dense("enc_grid.l2", cfg.hidden_dim, cfg.embed_dim);

  ps.create("enc_tok.table", glorot(seed, "enc_tok.table", kVocabSize,
                                    cfg.token_dim, {kVocabSize, cfg.token_dim}));
  dense("enc_tok.l1", cfg.token_dim, cfg.hidden_dim);
  dense("enc_tok.l2", cfg.hidden_dim, cfg.embed_dim);

  ps.create("enc_spec.table",
            glorot(seed, "enc_spec.table", kVocabSize, cfg.token_dim,
                   {kVocabSize, cfg.token_dim}));
  dense("enc_spec.l1", cfg.token_dim, cfg.hidden_dim);
  dense("enc_spec.l2", cfg.hidden_dim, cfg.embed_dim);

  dense("fuse.l1", 2 * cfg.embed_dim, cfg.fusion_hidden);
  dense("fuse.l2", cfg.fusion_hidden, cfg.embed_dim);
}

namespace detail {

inline NodeId mlp2(Tape& t, ParamStore& ps, NodeId x,
                   const std::string& prefix) {
  NodeId h = t.relu(t.add_rowwise(t.matmul(x, t.param(ps, prefix + ".l1.w")),
                                  t.param(ps, prefix + ".l1.b")));
  return t.add_rowwise(t.matmul(h, t.param(ps, prefix + ".l2.w")),
                       t.param(ps, prefix + ".l2.b"));
}

// Position-weighted mean: weight of token i proportional to 1 + 0.1*i,
// normalized per sequence. Keeps the pool order-sensitive (a mean alone
// would confuse permuted serializations) while staying a single linear op.
inline void pooling_lists(const std::vector<TokenSeq>& seqs,
                          std::vector<std::uint32_t>& ids,
                          std::vector<double>& weights,
                          std::vector<std::size_t>& offsets) {
  offsets.clear();
  ids.clear();
  weights.clear();
  offsets.push_back(0);
  for (const TokenSeq& seq : seqs) {
    if (seq.empty()) throw DataError("cannot embed an empty token sequence");
    double total = 0.0;
    for (std::size_t i = 0; i < seq.size(); ++i)
      total += 1.0 + 0.1 * static_cast<double>(i);
    for (std::size_t i = 0; i < seq.size(); ++i) {
      ids.push_back(seq[i]);
      weights.push_back((1.0 + 0.1 * static_cast<double>(i)) / total);
    }
    offsets.push_back(ids.size());
  }
}

}  // namespace detail

// Raster encoder over a batch of flattened 12x12x3 images, one per row.
inline NodeId embed_grid_batch(Tape& t, ParamStore& ps, const Tensor& rasters,
                               const EncoderConfig& cfg) {
  if (rasters.cols() != kRasterSize)
    throw DimensionError("raster batch must have " +
                         std::to_string(kRasterSize) + " columns, got " +
                         rasters.shape_str());
  NodeId out = detail::mlp2(t, ps, t.constant(rasters), "enc_grid");
  return cfg.normalize ? t.l2_normalize_rows(out) : out;
}

// Token encoder over a batch of sequences (one embedding per sequence).
inline NodeId embed_tokens_batch(Tape& t, ParamStore& ps,
                                 const std::vector<TokenSeq>& seqs,
                                 const EncoderConfig& cfg,
                                 const std::string& family = "enc_tok") {
  std::vector<std::uint32_t> ids;
  std::vector<double> weights;
  std::vector<std::size_t> offsets;
  detail::pooling_lists(seqs, ids, weights, offsets);
  NodeId pooled = t.embedding_rows(t.param(ps, family + ".table"),
                                   std::move(ids), std::move(weights),
                                   std::move(offsets));
  NodeId out = detail::mlp2(t, ps, pooled, family);
  return cfg.normalize ? t.l2_normalize_rows(out) : out;
}

// Transformation encoder: fixed-length serialization through the enc_spec
// family. Never normalized — the result parameterizes the fusion head, it is
// not itself a point in retrieval space.
inline NodeId embed_spec_batch(Tape& t, ParamStore& ps,
                               const std::vector<TransformSpec>& specs,
                               const EncoderConfig& cfg) {
  std::vector<TokenSeq> seqs;
  seqs.reserve(specs.size());
  for (const TransformSpec& s : specs) seqs.push_back(spec_tokens(s));
  std::vector<std::uint32_t> ids;
  std::vector<double> weights;
  std::vector<std::size_t> offsets;
  detail::pooling_lists(seqs, ids, weights, offsets);
  NodeId pooled = t.embedding_rows(t.param(ps, "enc_spec.table"),
                                   std::move(ids), std::move(weights),
                                   std::move(offsets));
  return detail::mlp2(t, ps, pooled, "enc_spec");
}

// Fusion head: rows of (query embedding | spec embedding) -> shared space.
inline NodeId transform_fuse_batch(Tape& t, ParamStore& ps, NodeId q,
                                   NodeId spec, const EncoderConfig& cfg) {
  if (t.value(q).cols() != cfg.embed_dim ||
      t.value(spec).cols() != cfg.embed_dim)
    throw DimensionError("fusion inputs must both be embed_dim wide");
  NodeId out = detail::mlp2(t, ps, t.concat_cols(q, spec), "fuse");
  return cfg.normalize ? t.l2_normalize_rows(out) : out;
}

// ---------------------------------------------------------------------------
// Forward-only conveniences (evaluation paths)
// ---------------------------------------------------------------------------

inline Tensor stack_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw DataError("cannot stack zero rows");
  Tensor out = Tensor::zeros({rows.size(), rows.front().size()});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.front().size())
      throw DimensionError("ragged rows cannot form a batch");
    std::copy(rows[i].begin(), rows[i].end(),
              out.data.begin() + static_cast<long>(i * rows.front().size()));
  }
  return out;
}

inline Tensor embed_grid_values(ParamStore& ps, const Tensor& rasters,
                                const EncoderConfig& cfg) {
  Tape t;
  return t.value(embed_grid_batch(t, ps, rasters, cfg));
}

inline Tensor embed_tokens_values(ParamStore& ps,
                                  const std::vector<TokenSeq>& seqs,
                                  const EncoderConfig& cfg) {
  Tape t;
  return t.value(embed_tokens_batch(t, ps, seqs, cfg));
}

inline Tensor embed_spec_values(ParamStore& ps,
                                const std::vector<TransformSpec>& specs,
                                const EncoderConfig& cfg) {
  Tape t;
  return t.value(embed_spec_batch(t, ps, specs, cfg));
}

inline Tensor transform_fuse_values(ParamStore& ps, const Tensor& q_rows,
                                    const Tensor& spec_rows,
                                    const EncoderConfig& cfg) {
  Tape t;
  return t.value(transform_fuse_batch(t, ps, t.constant(q_rows),
                                      t.constant(spec_rows), cfg));
}

}  // namespace smx

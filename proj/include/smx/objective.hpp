#pragma once

#include <set>
#include <string>
#include <vector>

#include "smx/dataset.hpp"
#include "smx/encoders.hpp"

namespace smx {

// Settings for the contrastive objective. temperature_s scales similarity
// scores before the softmax; when learnable_temperature is set the scale
// lives in the parameter store (name "loss.s") and receives gradients.
// lambda_transform weights the transformation term in the joint objective.
struct LossConfig {
  double temperature_s = 10.0;
  bool learnable_temperature = false;
  double lambda_transform = 1.0;
  std::size_t batch_size_pairs = 32;
  std::size_t batch_size_triplets = 32;

  void validate() const {
    if (!(temperature_s > 0.0))
      throw ConfigError("temperature_s must be positive");
    if (lambda_transform < 0.0)
      throw ConfigError("lambda_transform must be non-negative");
    if (batch_size_pairs == 0 || batch_size_triplets == 0)
      throw ConfigError("batch sizes must be positive");
  }

  json to_json() const {
    return json{{"temperature_s", temperature_s},
                {"learnable_temperature", learnable_temperature},
                {"lambda_transform", lambda_transform},
                {"batch_size_pairs", batch_size_pairs},
                {"batch_size_triplets", batch_size_triplets}};
  }

  static LossConfig from_json(const json& j) {
    detail::reject_unknown_keys_config(
        j,
        {"temperature_s", "learnable_temperature", "lambda_transform",
         "batch_size_pairs", "batch_size_triplets"},
        "loss config");
    LossConfig c;
    if (j.contains("temperature_s")) c.temperature_s = j.at("temperature_s");
    if (j.contains("learnable_temperature"))
      c.learnable_temperature = j.at("learnable_temperature");
    if (j.contains("lambda_transform"))
      c.lambda_transform = j.at("lambda_transform");
    if (j.contains("batch_size_pairs"))
      c.batch_size_pairs = j.at("batch_size_pairs");
    if (j.contains("batch_size_triplets"))
      c.batch_size_triplets = j.at("batch_size_triplets");
    c.validate();
    return c;
  }
};

inline void init_loss_params(ParamStore& ps, const LossConfig& cfg) {
  if (cfg.learnable_temperature)
    ps.create("loss.s", Tensor::full({1}, cfg.temperature_s));
}

// In-batch softmax classification loss over all pairwise similarities:
// scores[i][j] = s * (a_i . b_j), the matching column is the label of row i.
// A batch of one is a zero-information task and yields exactly 0.
inline NodeId metric_loss_node(Tape& t, ParamStore& ps, NodeId a_rows,
                               NodeId b_rows, const LossConfig& cfg) {
  NodeId scores = t.matmul_nt(a_rows, b_rows);
  NodeId scaled = cfg.learnable_temperature
                      ? t.scale_by(scores, t.param(ps, "loss.s"))
                      : t.scale(scores, cfg.temperature_s);
  return t.softmax_cross_entropy_diag(scaled);
}

// Symmetrized alignment: mean of the A->B and B->A classification losses.
inline NodeId symmetric_metric_node(Tape& t, ParamStore& ps, NodeId a_rows,
                                    NodeId b_rows, const LossConfig& cfg) {
  NodeId ab = metric_loss_node(t, ps, a_rows, b_rows, cfg);
  NodeId ba = metric_loss_node(t, ps, b_rows, a_rows, cfg);
  return t.scale(t.add(ab, ba), 0.5);
}

// ---------------------------------------------------------------------------
// Batches of raw observations
// ---------------------------------------------------------------------------

// A batch of observations from a single domain: flattened rasters for the
// image domain ('A'), token sequences for the symbolic domain ('B').
struct ObsBatch {
  char domain = 'A';
  Tensor rasters;                // used when domain == 'A', one row per item
  std::vector<TokenSeq> tokens;  // used when domain == 'B'

  std::size_t size() const {
    return domain == 'A' ? rasters.rows() : tokens.size();
  }
};

inline NodeId embed_obs_batch(Tape& t, ParamStore& ps, const ObsBatch& batch,
                              const EncoderConfig& cfg) {
  if (batch.domain == 'A') return embed_grid_batch(t, ps, batch.rasters, cfg);
  if (batch.domain == 'B') return embed_tokens_batch(t, ps, batch.tokens, cfg);
  throw DataError(std::string("unknown observation domain '") + batch.domain +
                  "'");
}

// Aligned cross-domain views of the same scenes. ids carry the scene
// identity so duplicate scenes inside one batch can be rejected: a scene
// paired against itself in another row would be a false negative.
struct PairBatch {
  std::vector<std::string> ids;
  Tensor rasters;                // domain-A view, row i matches ids[i]
  std::vector<TokenSeq> tokens;  // domain-B view, entry i matches ids[i]
};

// (query, transformation, result) batch; sides may live in different domains.
struct TripletBatch {
  ObsBatch q;
  std::vector<TransformSpec> specs;
  ObsBatch r;
  std::vector<std::string> r_ids;  // bookkeeping for samplers; not validated
};

inline NodeId embed_loss(Tape& t, ParamStore& ps, const PairBatch& batch,
                         const EncoderConfig& enc, const LossConfig& cfg) {
  std::size_t n = batch.ids.size();
  if (n == 0) throw SamplingError("pair batch is empty");
  if (batch.rasters.rows() != n || batch.tokens.size() != n)
    throw DimensionError("pair batch sides disagree in length");
  std::set<std::string> distinct(batch.ids.begin(), batch.ids.end());
  if (distinct.size() != n)
    throw SamplingError("duplicate scene id in pair batch");
  NodeId a = embed_grid_batch(t, ps, batch.rasters, enc);
  NodeId b = embed_tokens_batch(t, ps, batch.tokens, enc);
  return symmetric_metric_node(t, ps, a, b, cfg);
}

inline NodeId transform_loss(Tape& t, ParamStore& ps,
                             const TripletBatch& batch,
                             const EncoderConfig& enc, const LossConfig& cfg) {
  std::size_t n = batch.q.size();
  if (n == 0) throw SamplingError("triplet batch is empty");
  if (batch.specs.size() != n || batch.r.size() != n)
    throw DimensionError("triplet batch sides disagree in length");
  NodeId q = embed_obs_batch(t, ps, batch.q, enc);
  NodeId spec = embed_spec_batch(t, ps, batch.specs, enc);
  NodeId composed = transform_fuse_batch(t, ps, q, spec, enc);
  NodeId r = embed_obs_batch(t, ps, batch.r, enc);
  return metric_loss_node(t, ps, composed, r, cfg);
}

// ---------------------------------------------------------------------------
// Joint objective
// ---------------------------------------------------------------------------

struct JointLoss {
  NodeId total = 0;
  bool has_embed = false;
  bool has_transform = false;
  double embed_component = 0.0;
  double transform_component = 0.0;
};

// total = embed + lambda * transform when both batches are given. With only
// triplets the transform term stands alone (unweighted); with only pairs, or
// with lambda == 0, the transform graph is never built, so the fusion head
// cannot receive gradients.
inline JointLoss joint_loss(Tape& t, ParamStore& ps, const PairBatch* pairs,
                            const TripletBatch* triplets,
                            const EncoderConfig& enc, const LossConfig& cfg) {
  JointLoss out;
  bool want_transform =
      triplets != nullptr && (pairs == nullptr || cfg.lambda_transform > 0.0);
  if (pairs == nullptr && !want_transform)
    throw ConfigError("joint loss needs at least one batch to act on");

  NodeId embed_node = 0;
  if (pairs != nullptr) {
    embed_node = embed_loss(t, ps, *pairs, enc, cfg);
    out.has_embed = true;
    out.embed_component = t.scalar(embed_node);
  }
  NodeId transform_node = 0;
  if (want_transform) {
    transform_node = transform_loss(t, ps, *triplets, enc, cfg);
    out.has_transform = true;
    out.transform_component = t.scalar(transform_node);
  }

  if (out.has_embed && out.has_transform)
    out.total = t.add(embed_node, t.scale(transform_node, cfg.lambda_transform));
  else if (out.has_embed)
    out.total = embed_node;
  else
    out.total = transform_node;
  return out;
}

}  // namespace smx

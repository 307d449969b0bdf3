#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "smx/augment.hpp"
#include "smx/dataset.hpp"
#include "smx/objective.hpp"

namespace smx {

// ---------------------------------------------------------------------------
// Training configuration
// ---------------------------------------------------------------------------

// The four experiment regimes. "A" is the raster domain, "B" the token
// domain. Direct regimes train the transformation head on triplets realized
// in fixed domains; transfer couples the alignment loss over cross-domain
// pairs with raster-domain triplets so the head can be reused across domains.
enum class Regime { InDomainA, InDomainB, CrossAB, Transfer };

inline const char* regime_name(Regime r) {
  switch (r) {
    case Regime::InDomainA: return "in_domain_A";
    case Regime::InDomainB: return "in_domain_B";
    case Regime::CrossAB: return "cross_AB";
    case Regime::Transfer: return "transfer";
  }
  throw ConfigError("unreachable regime");
}

inline Regime parse_regime(const std::string& s) {
  for (Regime r : {Regime::InDomainA, Regime::InDomainB, Regime::CrossAB,
                   Regime::Transfer})
    if (s == regime_name(r)) return r;
  throw ConfigError("unknown regime: '" + s +
                    "' (expected in_domain_A, in_domain_B, cross_AB or "
                    "transfer)");
}

// (query domain, result domain) a regime's triplets are realized in.
inline std::pair<char, char> regime_domains(Regime r) {
  switch (r) {
    case Regime::InDomainA: return {'A', 'A'};
    case Regime::InDomainB: return {'B', 'B'};
    case Regime::CrossAB: return {'A', 'B'};
    case Regime::Transfer: return {'A', 'A'};
  }
  throw ConfigError("unreachable regime");
}

enum class Optimizer { SgdMomentum, Adam };

inline const char* optimizer_name(Optimizer o) {
  return o == Optimizer::SgdMomentum ? "sgd_momentum" : "adam";
}

inline Optimizer parse_optimizer(const std::string& s) {
  if (s == "sgd_momentum") return Optimizer::SgdMomentum;
  if (s == "adam") return Optimizer::Adam;
  throw ConfigError("unknown optimizer: '" + s +
                    "' (expected sgd_momentum or adam)");
}

struct TrainConfig {
  std::uint64_t seed = 1;
  std::size_t iterations = 5000;
  double learning_rate = 0.01;
  Optimizer optimizer = Optimizer::SgdMomentum;
  double momentum = 0.9;
  EncoderConfig encoder;
  LossConfig loss;
  AugmentConfig augment;
  Regime regime = Regime::Transfer;
  bool two_phase = false;

  void validate() const {
    if (iterations == 0) throw ConfigError("iterations must be positive");
    if (!(learning_rate > 0.0))
      throw ConfigError("learning_rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0)
      throw ConfigError("momentum must lie in [0, 1)");
    if (two_phase && regime != Regime::Transfer)
      throw ConfigError("two_phase training is only defined for transfer");
    encoder.validate();
    loss.validate();
    augment.validate();
  }

  json to_json() const {
    return json{{"seed", seed},
                {"iterations", iterations},
                {"learning_rate", learning_rate},
                {"optimizer", optimizer_name(optimizer)},
                {"momentum", momentum},
                {"embed_dim", encoder.embed_dim},
                {"hidden_dim", encoder.hidden_dim},
                {"token_dim", encoder.token_dim},
                {"fusion_hidden", encoder.fusion_hidden},
                {"normalize", encoder.normalize},
                {"loss", loss.to_json()},
                {"augment", augment.to_json()},
                {"regime", regime_name(regime)},
                {"two_phase", two_phase}};
  }

  static TrainConfig from_json(const json& j) {
    detail::reject_unknown_keys_config(
        j,
        {"seed", "iterations", "learning_rate", "optimizer", "momentum",
         "embed_dim", "hidden_dim", "token_dim", "fusion_hidden", "normalize",
         "loss", "augment", "regime", "two_phase"},
        "train config");
    TrainConfig c;
    if (j.contains("seed")) c.seed = j.at("seed");
    if (j.contains("iterations")) c.iterations = j.at("iterations");
    if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate");
    if (j.contains("optimizer"))
      c.optimizer = parse_optimizer(j.at("optimizer"));
    if (j.contains("momentum")) c.momentum = j.at("momentum");
    if (j.contains("embed_dim")) c.encoder.embed_dim = j.at("embed_dim");
    if (j.contains("hidden_dim")) c.encoder.hidden_dim = j.at("hidden_dim");
    if (j.contains("token_dim")) c.encoder.token_dim = j.at("token_dim");
    if (j.contains("fusion_hidden"))
      c.encoder.fusion_hidden = j.at("fusion_hidden");
    if (j.contains("normalize")) c.encoder.normalize = j.at("normalize");
    if (j.contains("loss")) c.loss = LossConfig::from_json(j.at("loss"));
    if (j.contains("augment"))
      c.augment = AugmentConfig::from_json(j.at("augment"));
    if (j.contains("regime")) c.regime = parse_regime(j.at("regime"));
    if (j.contains("two_phase")) c.two_phase = j.at("two_phase");
    c.validate();
    return c;
  }
};

// ---------------------------------------------------------------------------
// Batch sampling
// ---------------------------------------------------------------------------

// Uniform without-replacement draw of `size` indices into `keys` such that
// the selected keys are pairwise distinct: a shuffled pass that skips
// repeated keys. With all-distinct keys this is a plain uniform draw, and
// size == keys.size() yields a permutation.
inline std::vector<std::size_t> sample_batch(Rng& rng,
                                             const std::vector<std::string>& keys,
                                             std::size_t size) {
  if (size > keys.size())
    throw SamplingError("batch size " + std::to_string(size) +
                        " exceeds dataset size " +
                        std::to_string(keys.size()));
  std::vector<std::size_t> perm(keys.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(perm);
  std::vector<std::size_t> out;
  out.reserve(size);
  std::set<std::string> used;
  for (std::size_t idx : perm) {
    if (!used.insert(keys[idx]).second) continue;
    out.push_back(idx);
    if (out.size() == size) return out;
  }
  throw SamplingError("cannot draw " + std::to_string(size) +
                      " batch entries with distinct keys from " +
                      std::to_string(keys.size()) + " candidates");
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  TrainConfig config;
  std::uint64_t manifest_hash = 0;
  std::uint64_t step_count = 0;
  double final_loss_embed = 0.0;
  double final_loss_transform = 0.0;
  ParamStore params;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof bits);
  put_u64(out, bits);
}

struct ByteReader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw FormatError("truncated checkpoint file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos++]))
           << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++]))
           << (8 * i);
    return v;
  }
  double f64() {
    std::uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, sizeof d);
    return d;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string out = buf.substr(pos, n);
    pos += n;
    return out;
  }
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& c) {
  std::string out;
  out += "SMXF";
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u64(out, c.manifest_hash);

  json blob{{"train_config", c.config.to_json()},
            {"step_count", c.step_count},
            {"final_loss_embed", c.final_loss_embed},
            {"final_loss_transform", c.final_loss_transform}};
  std::string blob_text = blob.dump();
  detail::put_u64(out, blob_text.size());
  out += blob_text;

  detail::put_u64(out, c.params.size());
  for (const auto& [name, entry] : c.params.entries()) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<std::uint32_t>(entry.value.rank()));
    for (std::size_t d : entry.value.shape) detail::put_u64(out, d);
    for (double v : entry.value.data) detail::put_f64(out, v);
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& buf) {
  detail::ByteReader r{buf};
  if (r.bytes(4) != "SMXF")
    throw FormatError("not a checkpoint file (bad magic)");
  std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(version) + " (expected " +
                      std::to_string(kCheckpointVersion) + ")");
  Checkpoint c;
  c.manifest_hash = r.u64();
  std::uint64_t blob_len = r.u64();
  json blob;
  try {
    blob = json::parse(r.bytes(blob_len));
  } catch (const json::exception& e) {
    throw FormatError(std::string("corrupt checkpoint config blob: ") +
                      e.what());
  }
  detail::reject_unknown_keys(
      blob,
      {"train_config", "step_count", "final_loss_embed",
       "final_loss_transform"},
      "checkpoint blob");
  c.config = TrainConfig::from_json(blob.at("train_config"));
  c.step_count = blob.at("step_count");
  c.final_loss_embed = blob.at("final_loss_embed");
  c.final_loss_transform = blob.at("final_loss_transform");

  std::uint64_t n_records = r.u64();
  for (std::uint64_t i = 0; i < n_records; ++i) {
    std::uint32_t name_len = r.u32();
    std::string name = r.bytes(name_len);
    std::uint32_t rank = r.u32();
    std::vector<std::size_t> shape(rank);
    std::size_t numel = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape[d] = static_cast<std::size_t>(r.u64());
      numel *= shape[d];
    }
    std::vector<double> data(numel);
    for (std::size_t k = 0; k < numel; ++k) data[k] = r.f64();
    c.params.create(name, Tensor(std::move(shape), std::move(data)));
  }
  if (r.pos != buf.size())
    throw FormatError("trailing bytes after checkpoint records");
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  detail::write_file(path, serialize_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(detail::read_file(path));
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct StepLog {
  std::uint64_t step = 0;
  double loss_embed = 0.0;
  double loss_transform = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<StepLog> log;
};

inline std::string log_jsonl(const std::vector<StepLog>& log) {
  std::string out;
  for (const StepLog& l : log) {
    out += json{{"step", l.step},
                {"loss_embed", l.loss_embed},
                {"loss_transform", l.loss_transform}}
               .dump();
    out += '\n';
  }
  return out;
}

class Trainer {
 public:
  Trainer(TrainConfig cfg, const Dataset& data)
      : cfg_(std::move(cfg)),
        data_(data),
        rng_pairs_(child_seed(cfg_.seed, 1)),
        rng_triplets_(child_seed(cfg_.seed, 2)),
        rng_onfly_(child_seed(cfg_.seed, 3)) {
    cfg_.validate();
    auto [qd, rd] = regime_domains(cfg_.regime);
    q_domain_ = qd;
    r_domain_ = rd;
    base_tag_ = (qd == rd) ? std::string(1, qd) : std::string{qd, rd};

    if (cfg_.regime == Regime::Transfer && data_.pair_ids.empty())
      throw ConfigError(
          "transfer regime requires a nonempty cross-domain pair set");

    // The regime decides how the stored triplets are realized as
    // observations: each one is re-tagged with the regime's domain pair and
    // from then on the tag, not the regime, drives rendering. Augmentation
    // transforms tags alongside triplets, so a reversed cross-domain triplet
    // really is trained in the opposite direction. Counterpart substitution
    // consumes the cross-domain pair labels, which are the transfer method's
    // supervision; the direct regimes train without pair labels, so for them
    // substitution has nothing to act on and only reversal applies.
    triplets_ = data_.train;
    for (Triplet& t : triplets_) t.domain = base_tag_;
    if (cfg_.augment.enable_transitive)
      triplets_ = augment_transitive(
          triplets_, cfg_.regime == Regime::Transfer
                         ? data_.pair_ids
                         : std::vector<std::string>{});
    if (cfg_.augment.enable_reverse) triplets_ = augment_reverse(triplets_);

    for (std::size_t i = 0; i < triplets_.size(); ++i) {
      const std::string& tag = triplets_[i].domain;
      auto it = std::find_if(groups_.begin(), groups_.end(),
                             [&](const Group& g) { return g.tag == tag; });
      if (it == groups_.end()) {
        groups_.push_back(make_group(tag));
        it = groups_.end() - 1;
      }
      it->idx.push_back(i);
      it->keys.push_back(digest_part(triplets_[i].r));
    }

    const bool needs_triplets = cfg_.regime != Regime::Transfer ||
                                cfg_.loss.lambda_transform > 0.0 ||
                                cfg_.two_phase;
    if (needs_triplets && triplets_.empty())
      throw ConfigError("regime " + std::string(regime_name(cfg_.regime)) +
                        " requires training triplets but the dataset has "
                        "none");

    init_encoder_params(params_, cfg_.encoder, cfg_.seed);
    init_loss_params(params_, cfg_.loss);
  }

  // The fixed triplet stream batches are drawn from: the stored triplets
  // re-tagged for the regime, then augmented. Each triplet's domain tag says
  // how it will be realized. With augmentation off this is the raw dataset
  // in its stored order.
  const std::vector<Triplet>& stream() const { return triplets_; }

  TrainResult run() {
    TrainResult result;
    // Phase layout: direct regimes train the transformation head only;
    // single-phase transfer trains the joint objective throughout;
    // two-phase transfer aligns first, then trains the head with the
    // per-domain encoders frozen.
    const std::uint64_t total = cfg_.iterations;
    const std::uint64_t phase1_end =
        cfg_.two_phase ? (total + 1) / 2 : (cfg_.regime == Regime::Transfer
                                                ? total
                                                : 0);

    double last_embed = 0.0, last_transform = 0.0;
    for (std::uint64_t step = 1; step <= total; ++step) {
      const bool in_phase1 = step <= phase1_end;
      const bool want_pairs =
          cfg_.regime == Regime::Transfer && (in_phase1 || !cfg_.two_phase);
      const bool want_triplets = cfg_.two_phase
                                     ? !in_phase1
                                     : cfg_.regime != Regime::Transfer ||
                                           cfg_.loss.lambda_transform > 0.0;

      PairBatch pb;
      TripletBatch tb;
      if (want_pairs) pb = draw_pair_batch();
      if (want_triplets) tb = draw_triplet_batch();

      Tape tape;
      JointLoss j =
          joint_loss(tape, params_, want_pairs ? &pb : nullptr,
                     want_triplets ? &tb : nullptr, cfg_.encoder, cfg_.loss);
      const double total_value = tape.scalar(j.total);
      if (!std::isfinite(total_value))
        throw NumericError(
            "loss diverged at step " + std::to_string(step) +
            " (loss_embed=" + std::to_string(j.embed_component) +
            ", loss_transform=" + std::to_string(j.transform_component) +
            ")");
      tape.backward(j.total);

      // Phase 2 freezes the per-domain encoders: only the transformation
      // encoder, the fusion head and the loss scale keep moving.
      static const std::vector<std::string> kPhase2 = {"enc_spec.", "fuse.",
                                                       "loss."};
      static const std::vector<std::string> kAll = {};
      const std::vector<std::string>& subset =
          (cfg_.two_phase && !in_phase1) ? kPhase2 : kAll;
      if (cfg_.optimizer == Optimizer::SgdMomentum)
        params_.sgd_step(cfg_.learning_rate, cfg_.momentum, subset);
      else
        params_.adam_step(cfg_.learning_rate, 0.9, 0.999, 1e-8, subset);

      last_embed = j.embed_component;
      last_transform = j.transform_component;
      if (step == 1 || step % 100 == 0 || step == total)
        result.log.push_back({step, last_embed, last_transform});
    }

    result.checkpoint.config = cfg_;
    result.checkpoint.manifest_hash = data_.manifest_hash;
    result.checkpoint.step_count = params_.step_count();
    result.checkpoint.final_loss_embed = last_embed;
    result.checkpoint.final_loss_transform = last_transform;
    result.checkpoint.params = params_;
    return result;
  }

 private:
  // Content digest of an id, ignoring the persisted/ephemeral prefix so an
  // on-the-fly scene and a stored scene with equal content collide.
  static std::string digest_part(const std::string& id) {
    return id.empty() ? id : id.substr(1);
  }

  PairBatch draw_pair_batch() {
    std::vector<std::size_t> idx =
        sample_batch(rng_pairs_, data_.pair_ids, cfg_.loss.batch_size_pairs);
    PairBatch pb;
    std::vector<std::vector<double>> rows;
    for (std::size_t i : idx) {
      const std::string& id = data_.pair_ids[i];
      const Scene& s = data_.scene(id);
      pb.ids.push_back(id);
      rows.push_back(render_grid_flat(s));
      pb.tokens.push_back(render_tokens(s));
    }
    pb.rasters = stack_rows(rows);
    return pb;
  }

  void push_side(ObsBatch& side, std::vector<std::vector<double>>& rows,
                 const Scene& s) {
    if (side.domain == 'A')
      rows.push_back(render_grid_flat(s));
    else
      side.tokens.push_back(render_tokens(s));
  }

  // One realization group of the augmented stream: all triplets sharing a
  // domain tag, batched together so each side of a batch stays single-domain.
  struct Group {
    std::string tag;
    char qd = 'A';
    char rd = 'A';
    std::vector<std::size_t> idx;        // positions in triplets_
    std::vector<std::string> keys;       // target digests, for sampling
  };

  static Group make_group(const std::string& tag) {
    Group g;
    g.tag = tag;
    if (tag.size() == 1) {
      g.qd = g.rd = tag[0];
    } else if (tag.size() == 2) {
      g.qd = tag[0];
      g.rd = tag[1];
    } else {
      throw DataError("unknown triplet domain tag '" + tag + "'");
    }
    if ((g.qd != 'A' && g.qd != 'B') || (g.rd != 'A' && g.rd != 'B'))
      throw DataError("unknown triplet domain tag '" + tag + "'");
    return g;
  }

  // Groups are weighted by size so the expected mix matches the stream;
  // a single-group stream draws nothing extra and so samples exactly as an
  // unaugmented run would.
  const Group& pick_group() {
    if (groups_.size() == 1) return groups_[0];
    std::uint64_t n = rng_triplets_.below(triplets_.size());
    for (const Group& g : groups_) {
      if (n < g.idx.size()) return g;
      n -= g.idx.size();
    }
    return groups_.back();
  }

  TripletBatch draw_triplet_batch() {
    const Group& group = pick_group();
    TripletBatch tb;
    tb.q.domain = group.qd;
    tb.r.domain = group.rd;
    std::vector<std::vector<double>> q_rows, r_rows;
    std::set<std::string> targets;

    std::vector<std::size_t> idx =
        sample_batch(rng_triplets_, group.keys, cfg_.loss.batch_size_triplets);
    for (std::size_t i : idx) {
      const Triplet& t = triplets_[group.idx[i]];
      push_side(tb.q, q_rows, data_.scene(t.q));
      push_side(tb.r, r_rows, data_.scene(t.r));
      tb.specs.push_back(t.t);
      tb.r_ids.push_back(t.r);
      targets.insert(digest_part(t.r));
    }

    // Fresh never-persisted examples. They are generated, not observed, so
    // they join only batches realized in the regime's own domains — the
    // supervision the regime is premised on. Draws whose target collides
    // with one already in the batch are discarded so the in-batch negatives
    // stay valid.
    const std::size_t want_onfly =
        group.tag == base_tag_
            ? static_cast<std::size_t>(cfg_.augment.onfly_per_step)
            : 0;
    std::size_t added = 0, attempts = 0;
    const std::size_t budget = 100 * (want_onfly + 1);
    while (added < want_onfly) {
      if (++attempts > budget)
        throw SamplingError(
            "could not generate enough on-the-fly examples with distinct "
            "targets");
      OnflyExample ex = onfly_examples(rng_onfly_, 1, data_.config).front();
      std::string rid = scene_id(ex.r, 'f');
      if (!targets.insert(digest_part(rid)).second) continue;
      push_side(tb.q, q_rows, ex.q);
      push_side(tb.r, r_rows, ex.r);
      tb.specs.push_back(ex.t);
      tb.r_ids.push_back(rid);
      ++added;
    }

    if (tb.q.domain == 'A') tb.q.rasters = stack_rows(q_rows);
    if (tb.r.domain == 'A') tb.r.rasters = stack_rows(r_rows);
    return tb;
  }

  TrainConfig cfg_;
  const Dataset& data_;
  Rng rng_pairs_;
  Rng rng_triplets_;
  Rng rng_onfly_;
  char q_domain_ = 'A';
  char r_domain_ = 'A';
  std::string base_tag_ = "A";
  std::vector<Triplet> triplets_;
  std::vector<Group> groups_;
  ParamStore params_;
};

inline TrainResult train(const TrainConfig& cfg, const Dataset& data) {
  return Trainer(cfg, data).run();
}

}  // namespace smx

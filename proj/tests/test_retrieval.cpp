#include <algorithm>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "catch2/catch_amalgamated.hpp"
#include "smx/retrieval.hpp"

using namespace smx;

namespace {

GenConfig retrieval_gen() {
  GenConfig g;
  g.seed = 21;
  g.base_scenes = 200;
  g.pairs = 40;
  g.train_triplets = 200;
  g.test_triplets = 50;
  return g;
}

const Dataset& shared_data() {
  static Dataset data = generate_dataset(retrieval_gen());
  return data;
}

Checkpoint fresh_checkpoint(const Dataset& data, std::uint64_t seed) {
  Checkpoint c;
  c.config.seed = seed;
  c.config.iterations = 1;
  c.manifest_hash = data.manifest_hash;
  c.step_count = 0;
  init_encoder_params(c.params, c.config.encoder, seed);
  init_loss_params(c.params, c.config.loss);
  return c;
}

// Independent ranking: score every candidate with a plain dot-product loop,
// sort (descending score, ascending id), truncate to k.
std::vector<std::string> oracle_rank(const EmbeddingIndex& index,
                                     const std::vector<double>& qvec,
                                     std::size_t k,
                                     const std::string& exclude) {
  std::vector<std::pair<double, std::string>> scored;
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index.ids[i] == exclude) continue;
    double s = 0.0;
    for (std::size_t j = 0; j < index.matrix.cols(); ++j)
      s += qvec[j] * index.matrix.data[i * index.matrix.cols() + j];
    scored.emplace_back(s, index.ids[i]);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  if (k < scored.size()) scored.resize(k);
  std::vector<std::string> ids;
  for (const auto& [s, id] : scored) ids.push_back(id);
  return ids;
}

std::vector<double> composed_query_vector(Checkpoint& ckpt,
                                          const Dataset& data,
                                          const Triplet& t, char q_domain) {
  Tensor q = embed_observation_rows(ckpt.params, ckpt.config.encoder,
                                    {data.scene(t.q)}, q_domain);
  Tensor s = embed_spec_values(ckpt.params, {t.t}, ckpt.config.encoder);
  Tensor fused =
      transform_fuse_values(ckpt.params, q, s, ckpt.config.encoder);
  return fused.data;
}

}  // namespace

TEST_CASE("composed retrieval matches an independent brute-force ranker") {
  const Dataset& data = shared_data();
  Checkpoint ckpt = fresh_checkpoint(data, 3);
  std::vector<std::pair<std::string, Scene>> pool;
  for (const std::string& id : data.pool_ids())
    pool.emplace_back(id, data.scene(id));
  EmbeddingIndex index =
      build_index(pool, 'B', ckpt.params, ckpt.config.encoder);
  REQUIRE(index.size() >= 200);

  std::size_t checked = 0;
  for (const Triplet& t : data.test) {
    RetrievalResult got =
        query_composed(ckpt.params, ckpt.config.encoder, data.scene(t.q), 'A',
                       t.t, index, 10);
    std::vector<double> qvec = composed_query_vector(ckpt, data, t, 'A');
    std::vector<std::string> want = oracle_rank(index, qvec, 10, "");
    REQUIRE(got.ranked == want);
    for (std::size_t i = 1; i < got.scores.size(); ++i)
      REQUIRE(got.scores[i - 1] >= got.scores[i]);
    ++checked;
  }
  REQUIRE(checked == 50);
}

TEST_CASE("recall_at_k equals a rank-counting oracle") {
  const Dataset& data = shared_data();
  Checkpoint ckpt = fresh_checkpoint(data, 4);
  std::vector<std::pair<std::string, Scene>> pool;
  for (const std::string& id : data.pool_ids())
    pool.emplace_back(id, data.scene(id));
  EmbeddingIndex index =
      build_index(pool, 'B', ckpt.params, ckpt.config.encoder);

  std::vector<RetrievalResult> results;
  std::vector<std::string> truths;
  std::map<std::size_t, std::size_t> oracle_hits;
  const std::vector<std::size_t> ks = {1, 5, 10};
  for (const Triplet& t : data.test) {
    results.push_back(query_composed(ckpt.params, ckpt.config.encoder,
                                     data.scene(t.q), 'A', t.t, index, 10));
    truths.push_back(t.r);

    // Oracle: the truth's rank is the number of candidates strictly better,
    // where "better" is higher score or an equal score with a smaller id.
    std::vector<double> qvec = composed_query_vector(ckpt, data, t, 'A');
    auto dot = [&](std::size_t i) {
      double s = 0.0;
      for (std::size_t j = 0; j < index.matrix.cols(); ++j)
        s += qvec[j] * index.matrix.data[i * index.matrix.cols() + j];
      return s;
    };
    const std::size_t truth_pos =
        std::lower_bound(index.ids.begin(), index.ids.end(), t.r) -
        index.ids.begin();
    REQUIRE(index.ids[truth_pos] == t.r);
    const double truth_score = dot(truth_pos);
    std::size_t rank = 0;
    for (std::size_t i = 0; i < index.size(); ++i) {
      if (i == truth_pos) continue;
      const double s = dot(i);
      if (s > truth_score || (s == truth_score && index.ids[i] < t.r)) ++rank;
    }
    for (std::size_t k : ks)
      if (rank < k) ++oracle_hits[k];
  }
  for (std::size_t k : ks) {
    const double want = 100.0 * static_cast<double>(oracle_hits[k]) /
                        static_cast<double>(truths.size());
    REQUIRE(recall_at_k(results, truths, k) == want);
  }
}

TEST_CASE("recall is monotone in k and rankings survive positive rescaling") {
  const Dataset& data = shared_data();
  Checkpoint ckpt = fresh_checkpoint(data, 5);
  std::vector<std::pair<std::string, Scene>> pool;
  for (const std::string& id : data.pool_ids())
    pool.emplace_back(id, data.scene(id));
  EmbeddingIndex index =
      build_index(pool, 'B', ckpt.params, ckpt.config.encoder);

  std::vector<RetrievalResult> results;
  std::vector<std::string> truths;
  for (const Triplet& t : data.test) {
    results.push_back(query_composed(ckpt.params, ckpt.config.encoder,
                                     data.scene(t.q), 'A', t.t, index, 10));
    truths.push_back(t.r);
  }
  const double r1 = recall_at_k(results, truths, 1);
  const double r5 = recall_at_k(results, truths, 5);
  const double r10 = recall_at_k(results, truths, 10);
  REQUIRE(r1 <= r5);
  REQUIRE(r5 <= r10);

  EmbeddingIndex scaled = index;
  for (double& v : scaled.matrix.data) v *= 3.7;
  for (const Triplet& t : data.test) {
    RetrievalResult a = query_composed(ckpt.params, ckpt.config.encoder,
                                       data.scene(t.q), 'A', t.t, index, 10);
    RetrievalResult b = query_composed(ckpt.params, ckpt.config.encoder,
                                       data.scene(t.q), 'A', t.t, scaled, 10);
    REQUIRE(a.ranked == b.ranked);
  }
}

TEST_CASE("ties break toward the smaller id and exclusion removes the query") {
  EmbeddingIndex index;
  index.domain = 'B';
  index.ids = {"a", "b", "c", "d"};
  index.matrix = Tensor::zeros({4, 2});
  index.matrix.at(0, 0) = 1.0;  // a: score 1
  index.matrix.at(1, 0) = 1.0;  // b: score 1 (tie with a)
  index.matrix.at(2, 0) = 0.5;  // c: score 0.5
  index.matrix.at(3, 0) = 2.0;  // d: score 2

  Tensor q = Tensor::zeros({1, 2});
  q.at(0, 0) = 1.0;
  std::vector<double> scores = detail::score_row(index, q, 0);
  RetrievalResult full = detail::rank_row(index, scores.data(), 4, "");
  REQUIRE(full.ranked == std::vector<std::string>{"d", "a", "b", "c"});
  RetrievalResult again = detail::rank_row(index, scores.data(), 4, "");
  REQUIRE(again.ranked == full.ranked);

  RetrievalResult excluded = detail::rank_row(index, scores.data(), 4, "a");
  REQUIRE(excluded.ranked == std::vector<std::string>{"d", "b", "c"});
}

TEST_CASE("own-source exclusion applies only when domains coincide") {
  const Dataset& data = shared_data();
  Checkpoint ckpt = fresh_checkpoint(data, 6);
  const Triplet* base_query = nullptr;
  std::set<std::string> base(data.base_ids.begin(), data.base_ids.end());
  for (const Triplet& t : data.test)
    if (base.count(t.q)) {
      base_query = &t;
      break;
    }
  REQUIRE(base_query != nullptr);

  std::vector<std::pair<std::string, Scene>> pool;
  for (const std::string& id : data.pool_ids())
    pool.emplace_back(id, data.scene(id));
  const std::size_t all = pool.size();

  EmbeddingIndex same =
      build_index(pool, 'A', ckpt.params, ckpt.config.encoder);
  RetrievalResult in_a = baseline_image_only(ckpt.params, ckpt.config.encoder,
                                             data.scene(base_query->q), 'A',
                                             same, all, base_query->q);
  REQUIRE(in_a.ranked.size() == all - 1);
  REQUIRE(std::find(in_a.ranked.begin(), in_a.ranked.end(), base_query->q) ==
          in_a.ranked.end());

  EmbeddingIndex cross =
      build_index(pool, 'B', ckpt.params, ckpt.config.encoder);
  RetrievalResult in_b = baseline_image_only(
      ckpt.params, ckpt.config.encoder, data.scene(base_query->q), 'A', cross,
      all);
  REQUIRE(in_b.ranked.size() == all);
  REQUIRE(std::find(in_b.ranked.begin(), in_b.ranked.end(), base_query->q) !=
          in_b.ranked.end());
}

TEST_CASE("index construction rejects bad inputs") {
  const Dataset& data = shared_data();
  Checkpoint ckpt = fresh_checkpoint(data, 7);
  REQUIRE_THROWS_AS(
      build_index({}, 'A', ckpt.params, ckpt.config.encoder), DataError);

  std::vector<std::pair<std::string, Scene>> dup = {
      {data.base_ids[0], data.scene(data.base_ids[0])},
      {data.base_ids[0], data.scene(data.base_ids[0])}};
  REQUIRE_THROWS_AS(build_index(dup, 'A', ckpt.params, ckpt.config.encoder),
                    DataError);

  std::vector<std::pair<std::string, Scene>> one = {
      {data.base_ids[0], data.scene(data.base_ids[0])}};
  REQUIRE_THROWS_AS(build_index(one, 'Z', ckpt.params, ckpt.config.encoder),
                    DataError);
}

TEST_CASE("spec decomposition for the arithmetic baseline") {
  const Dataset& data = shared_data();
  const Scene& s = data.scene(data.base_ids[0]);
  REQUIRE(!s.objects().empty());
  const SceneObject o = s.objects().front();

  auto [ap, am] = detail::arithmetic_tokens(TransformSpec::add(o));
  REQUIRE(ap == TokenSeq{size_token(o.size), color_token(o.color),
                         shape_token(o.shape), cell_token(o.cell)});
  REQUIRE(am.empty());

  Selector shape_only;
  shape_only.shape = o.shape;
  auto [rp, rm] = detail::arithmetic_tokens(TransformSpec::remove(shape_only));
  REQUIRE(rp.empty());
  REQUIRE(rm == TokenSeq{tok::WILD, tok::WILD, shape_token(o.shape),
                         tok::WILD});

  Selector pin;
  pin.color = o.color;
  const Color other = (o.color == Color::Red) ? Color::Blue : Color::Red;
  auto [cp, cm] =
      detail::arithmetic_tokens(TransformSpec::change(pin, AttrValue(other)));
  REQUIRE(cp == TokenSeq{color_token(other)});
  REQUIRE(cm == TokenSeq{color_token(o.color)});
}

TEST_CASE("arithmetic with an identity change ranks like image-only") {
  const Dataset& data = shared_data();
  Checkpoint ckpt = fresh_checkpoint(data, 8);
  std::vector<std::pair<std::string, Scene>> pool;
  for (const std::string& id : data.pool_ids())
    pool.emplace_back(id, data.scene(id));
  EmbeddingIndex index =
      build_index(pool, 'B', ckpt.params, ckpt.config.encoder);

  std::size_t checked = 0;
  for (const Triplet& t : data.test) {
    const Scene& q = data.scene(t.q);
    if (q.objects().empty()) continue;
    Selector pin;
    pin.color = q.objects().front().color;
    TransformSpec identity =
        TransformSpec::change(pin, AttrValue(q.objects().front().color));
    RetrievalResult arith =
        baseline_arithmetic(ckpt.params, ckpt.config.encoder, q, 'A',
                            identity, index, 10);
    RetrievalResult image = baseline_image_only(
        ckpt.params, ckpt.config.encoder, q, 'A', index, 10);
    REQUIRE(arith.ranked == image.ranked);
    if (++checked == 10) break;
  }
  REQUIRE(checked == 10);
}

TEST_CASE("arithmetic handles all spec kinds on real queries") {
  const Dataset& data = shared_data();
  Checkpoint ckpt = fresh_checkpoint(data, 9);
  std::vector<std::pair<std::string, Scene>> pool;
  for (const std::string& id : data.pool_ids())
    pool.emplace_back(id, data.scene(id));
  EmbeddingIndex index =
      build_index(pool, 'B', ckpt.params, ckpt.config.encoder);
  std::set<std::string> kinds_seen;
  for (const Triplet& t : data.test) {
    RetrievalResult r =
        baseline_arithmetic(ckpt.params, ckpt.config.encoder,
                            data.scene(t.q), 'A', t.t, index, 5);
    REQUIRE(r.ranked.size() == 5);
    kinds_seen.insert(spec_kind_name(spec_kind(t.t)));
  }
  REQUIRE(kinds_seen.count("add") == 1);
  REQUIRE(kinds_seen.count("remove") == 1);
  REQUIRE(kinds_seen.size() >= 4);
}

TEST_CASE("round-trip baseline falls back to image-only when the spec "
          "cannot apply") {
  const Dataset& data = shared_data();
  Checkpoint ckpt = fresh_checkpoint(data, 10);
  std::vector<std::pair<std::string, Scene>> pool;
  for (const std::string& id : data.pool_ids())
    pool.emplace_back(id, data.scene(id));
  EmbeddingIndex index =
      build_index(pool, 'B', ckpt.params, ckpt.config.encoder);
  TranslationDb db =
      build_translation_db(data, ckpt.params, ckpt.config.encoder);

  // No training-side scene shows the held-out color, so removing a
  // held-out-colored object can never apply to a recovered paired scene.
  Selector impossible;
  impossible.color = data.config.heldout_color;
  TransformSpec spec = TransformSpec::remove(impossible);
  const Triplet& t = data.test.front();
  RetrievalResult rt =
      baseline_roundtrip(ckpt.params, ckpt.config.encoder, data.scene(t.q),
                         'A', spec, db, index, 10);
  REQUIRE(rt.fallback_image_only);
  RetrievalResult image = baseline_image_only(
      ckpt.params, ckpt.config.encoder, data.scene(t.q), 'A', index, 10);
  REQUIRE(rt.ranked == image.ranked);

  std::size_t fallbacks = 0;
  for (const Triplet& q : data.test) {
    RetrievalResult r =
        baseline_roundtrip(ckpt.params, ckpt.config.encoder, data.scene(q.q),
                           'A', q.t, db, index, 10);
    REQUIRE(r.ranked.size() == 10);
    if (r.fallback_image_only) ++fallbacks;
  }
  REQUIRE(fallbacks < data.test.size());

  Dataset no_pairs = data;
  no_pairs.pair_ids.clear();
  REQUIRE_THROWS_AS(
      build_translation_db(no_pairs, ckpt.params, ckpt.config.encoder),
      DataError);
}

TEST_CASE("evaluate_cell validates its protocol") {
  const Dataset& data = shared_data();
  Checkpoint ckpt = fresh_checkpoint(data, 11);

  std::vector<Triplet> bad = {data.test.front()};
  bad.front().r = "s0000000000000000";
  REQUIRE_THROWS_AS(
      evaluate_cell(ckpt, data, bad, 'A', 'B', {1}, "x"), ProtocolError);

  REQUIRE_THROWS_AS(evaluate_cell(ckpt, data, {}, 'A', 'B', {1}, "x"),
                    ProtocolError);
  REQUIRE_THROWS_AS(
      evaluate_cell(ckpt, data, data.test, 'A', 'B', {}, "x"), ConfigError);
  REQUIRE_THROWS_AS(recall_at_k({}, {}, 1), ProtocolError);
}

TEST_CASE("per-kind breakdown averages back to overall recall") {
  const Dataset& data = shared_data();
  Checkpoint ckpt = fresh_checkpoint(data, 12);
  MetricsReport rep =
      evaluate_cell(ckpt, data, data.test, 'A', 'B', {1, 5, 10}, "cell");
  REQUIRE(rep.n_queries == data.test.size());
  REQUIRE(rep.r_at.size() == 3);

  std::map<std::string, std::size_t> kind_counts;
  for (const Triplet& t : data.test)
    ++kind_counts[spec_kind_name(spec_kind(t.t))];
  REQUIRE(rep.by_kind.size() == kind_counts.size());
  double weighted = 0.0;
  for (const auto& [kind, pct] : rep.by_kind)
    weighted += pct * static_cast<double>(kind_counts.at(kind));
  weighted /= static_cast<double>(data.test.size());
  REQUIRE_THAT(weighted, Catch::Matchers::WithinAbs(rep.r_at.at("1"), 1e-9));

  MetricsReport again =
      evaluate_cell(ckpt, data, data.test, 'A', 'B', {1, 5, 10}, "cell");
  REQUIRE(rep.to_json().dump() == again.to_json().dump());
}

TEST_CASE("untrained cross-domain composed retrieval sits near chance") {
  const Dataset& data = shared_data();
  Checkpoint ckpt = fresh_checkpoint(data, 13);
  MetricsReport rep =
      evaluate_cell(ckpt, data, data.test, 'A', 'B', {1}, "untrained");
  REQUIRE(rep.r_at.at("1") < 15.0);
}

TEST_CASE("run_matrix reports present cells and lists missing ones") {
  const Dataset& data = shared_data();
  std::map<Regime, Checkpoint> ckpts;
  ckpts.emplace(Regime::InDomainA, fresh_checkpoint(data, 14));

  MatrixOptions opt;
  opt.ks = {1, 5};
  opt.baselines = true;
  MatrixResult m = run_matrix(ckpts, data, opt);
  REQUIRE(m.reports.size() == 1);
  REQUIRE(m.reports.front().regime == "in_domain_A:A->A");
  REQUIRE(m.missing ==
          std::vector<std::string>{"cross_AB:A->B", "in_domain_B:B->B",
                                   "transfer:A->A", "transfer:A->B",
                                   "transfer:B->B",
                                   "baselines (need transfer checkpoint)"});

  ckpts.emplace(Regime::Transfer, fresh_checkpoint(data, 15));
  MatrixResult full = run_matrix(ckpts, data, opt);
  REQUIRE(full.reports.size() == 7);
  std::vector<std::string> labels;
  for (const MetricsReport& r : full.reports) labels.push_back(r.regime);
  REQUIRE(labels ==
          std::vector<std::string>{
              "in_domain_A:A->A", "transfer:A->A", "transfer:A->B",
              "transfer:B->B", "image_only:A->B", "arithmetic:A->B",
              "roundtrip:A->B"});
  REQUIRE(full.missing ==
          std::vector<std::string>{"cross_AB:A->B", "in_domain_B:B->B"});
}

TEST_CASE("the text table carries exactly the JSON numbers") {
  const Dataset& data = shared_data();
  std::map<Regime, Checkpoint> ckpts;
  ckpts.emplace(Regime::InDomainB, fresh_checkpoint(data, 16));
  MatrixOptions opt;
  opt.ks = {1, 5, 10};
  MatrixResult m = run_matrix(ckpts, data, opt);
  REQUIRE(m.reports.size() == 1);

  json j = matrix_json(m);
  REQUIRE(j.at("reports").size() == 1);
  REQUIRE(j.at("missing").size() == 5);
  const json& rep = j.at("reports")[0];
  REQUIRE(rep.at("regime") == "in_domain_B:B->B");
  REQUIRE(rep.at("n_queries") == data.test.size());
  REQUIRE(rep.at("checkpoint_hash").get<std::string>().size() == 16);
  REQUIRE(rep.at("dataset_hash") == hex16(data.manifest_hash));

  std::string table = matrix_table(m, opt.ks);
  for (const auto& [k, pct] : m.reports.front().r_at) {
    const std::string rendered = json(pct).dump();
    REQUIRE(table.find(rendered) != std::string::npos);
  }
  REQUIRE(table.find("in_domain_B:B->B") != std::string::npos);
  REQUIRE(table.find("transfer:A->B") != std::string::npos);  // missing row
  REQUIRE(table.find("--") != std::string::npos);
}

#include <cmath>
#include <set>
#include <vector>

#include "catch2/catch_amalgamated.hpp"
#include "smx/finite_diff.hpp"
#include "smx/param_store.hpp"
#include "smx/rng.hpp"
#include "smx/tape.hpp"
#include "smx/tensor.hpp"

using namespace smx;

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

// Independent matrix product written index-by-index (i,j then inner k) so it
// shares no code path with the accumulating kernels under test.
Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  Tensor c = Tensor::zeros({a.rows(), b.cols()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k)
        acc += a.at(i, k) * b.at(k, j);
      c.at(i, j) = acc;
    }
  return c;
}

Tensor transpose(const Tensor& a) {
  Tensor t = Tensor::zeros({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t.at(j, i) = a.at(i, j);
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.shape == b.shape);
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  return m;
}

}  // namespace

TEST_CASE("tensor shape bookkeeping", "[tensor]") {
  Tensor t = Tensor::zeros({2, 3});
  REQUIRE(t.numel() == 6);
  REQUIRE(t.rows() == 2);
  REQUIRE(t.cols() == 3);
  t.at(1, 2) = 5.0;
  REQUIRE(t.data[5] == 5.0);

  Tensor v = Tensor::row({1.0, 2.0, 3.0});
  REQUIRE(v.rank() == 1);
  REQUIRE(v.rows() == 1);
  REQUIRE(v.cols() == 3);

  REQUIRE_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
}

TEST_CASE("matmul kernels agree with a naive reference", "[tensor]") {
  Rng rng(42);
  for (int trial = 0; trial < 5; ++trial) {
    const std::size_t m = 1 + rng.below(6), k = 1 + rng.below(6),
                      n = 1 + rng.below(6);
    Tensor a = random_tensor(rng, {m, k});
    Tensor b = random_tensor(rng, {k, n});
    Tensor bt = transpose(b);  // [n,k]
    Tensor at = transpose(a);  // [k,m]

    Tensor c = Tensor::zeros({m, n});
    matmul_acc(c, a, b);
    REQUIRE(max_abs_diff(c, naive_matmul(a, b)) < 1e-14);

    Tensor cnt = Tensor::zeros({m, n});
    matmul_nt_acc(cnt, a, bt);
    REQUIRE(max_abs_diff(cnt, naive_matmul(a, b)) < 1e-14);

    Tensor ctn = Tensor::zeros({m, n});
    matmul_tn_acc(ctn, at, b);
    REQUIRE(max_abs_diff(ctn, naive_matmul(a, b)) < 1e-14);
  }
}

TEST_CASE("matmul rejects mismatched inner dimensions", "[tape]") {
  Tape t;
  NodeId a = t.constant(Tensor::zeros({2, 3}));
  NodeId b = t.constant(Tensor::zeros({4, 2}));
  REQUIRE_THROWS_AS(t.matmul(a, b), DimensionError);
  REQUIRE_THROWS_AS(t.matmul_nt(a, b), DimensionError);
}

TEST_CASE("parameter nodes snapshot values at record time", "[tape]") {
  ParamStore ps;
  ps.create("w", Tensor::row({1.0, 2.0}));
  Tape t;
  NodeId w = t.param(ps, "w");
  ps.value("w").data[0] = 99.0;
  REQUIRE(t.value(w).data[0] == 1.0);
}

TEST_CASE("gradients accumulate across shared subexpressions", "[tape]") {
  // y = sum(x*x + x); dy/dx = 2x + 1 exactly.
  ParamStore ps;
  ps.create("x", Tensor::row({0.5, -2.0, 3.0}));
  Tape t;
  NodeId x = t.param(ps, "x");
  NodeId y = t.sum(t.add(t.mul(x, x), x));
  t.backward(y);
  const Tensor& g = ps.grad("x");
  REQUIRE(g.data[0] == 2.0 * 0.5 + 1.0);
  REQUIRE(g.data[1] == 2.0 * -2.0 + 1.0);
  REQUIRE(g.data[2] == 2.0 * 3.0 + 1.0);
}

TEST_CASE("relu passes no gradient at exactly zero", "[tape]") {
  ParamStore ps;
  ps.create("x", Tensor::row({0.0, -1.0, 2.0}));
  Tape t;
  NodeId y = t.sum(t.relu(t.param(ps, "x")));
  t.backward(y);
  REQUIRE(ps.grad("x").data[0] == 0.0);
  REQUIRE(ps.grad("x").data[1] == 0.0);
  REQUIRE(ps.grad("x").data[2] == 1.0);
}

TEST_CASE("concat splits gradients at the seam", "[tape]") {
  ParamStore ps;
  ps.create("a", Tensor({2, 2}, {1, 2, 3, 4}));
  ps.create("b", Tensor({2, 1}, {5, 6}));
  Tape t;
  NodeId c = t.concat_cols(t.param(ps, "a"), t.param(ps, "b"));
  REQUIRE(t.value(c).shape == std::vector<std::size_t>{2, 3});
  REQUIRE(t.value(c).at(0, 2) == 5.0);
  REQUIRE(t.value(c).at(1, 0) == 3.0);
  NodeId mask = t.constant(Tensor({2, 3}, {1, 10, 100, 1000, 10000, 100000}));
  t.backward(t.sum(t.mul(c, mask)));
  REQUIRE(ps.grad("a").data == std::vector<double>{1, 10, 1000, 10000});
  REQUIRE(ps.grad("b").data == std::vector<double>{100, 100000});
}

TEST_CASE("concat tolerates an empty right operand", "[tape]") {
  Tape t;
  NodeId a = t.constant(Tensor({2, 2}, {1, 2, 3, 4}));
  NodeId b = t.constant(Tensor::zeros({2, 0}));
  NodeId c = t.concat_cols(a, b);
  REQUIRE(t.value(c).data == std::vector<double>{1, 2, 3, 4});
}

TEST_CASE("row normalization yields unit rows and rejects near-zero rows",
          "[tape]") {
  Rng rng(7);
  ParamStore ps;
  ps.create("x", random_tensor(rng, {8, 16}, -2.0, 2.0));
  Tape t;
  NodeId y = t.l2_normalize_rows(t.param(ps, "x"));
  for (std::size_t i = 0; i < 8; ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < 16; ++j)
      sq += t.value(y).at(i, j) * t.value(y).at(i, j);
    REQUIRE(std::abs(std::sqrt(sq) - 1.0) < 1e-9);
  }

  Tape t2;
  NodeId tiny = t2.constant(Tensor({1, 3}, {1e-9, 0.0, 0.0}));
  REQUIRE_THROWS_AS(t2.l2_normalize_rows(tiny), DegenerateEmbeddingError);
}

TEST_CASE("cross-entropy matches a direct per-row formula", "[tape]") {
  Rng rng(11);
  for (int trial = 0; trial < 4; ++trial) {
    const std::size_t n = 2 + rng.below(7);
    Tensor s = random_tensor(rng, {n, n}, -3.0, 3.0);

    long double expect = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
      long double z = 0.0L;
      for (std::size_t j = 0; j < n; ++j)
        z += std::exp(static_cast<long double>(s.at(i, j)));
      expect += -(static_cast<long double>(s.at(i, i)) - std::log(z));
    }
    expect /= static_cast<long double>(n);

    Tape t;
    NodeId loss = t.softmax_cross_entropy_diag(t.constant(s));
    REQUIRE(std::abs(t.scalar(loss) - static_cast<double>(expect)) < 1e-12);
  }
}

TEST_CASE("cross-entropy is invariant to per-row shifts", "[tape]") {
  Rng rng(13);
  Tensor s = random_tensor(rng, {6, 6}, -2.0, 2.0);
  Tensor shifted = s;
  for (std::size_t i = 0; i < 6; ++i) {
    const double c = rng.uniform(-100.0, 100.0);
    for (std::size_t j = 0; j < 6; ++j) shifted.at(i, j) += c;
  }
  Tape t;
  const double a = t.scalar(t.softmax_cross_entropy_diag(t.constant(s)));
  const double b = t.scalar(t.softmax_cross_entropy_diag(t.constant(shifted)));
  REQUIRE(std::abs(a - b) < 1e-12);
}

TEST_CASE("cross-entropy on a single row is exactly zero", "[tape]") {
  Tape t;
  NodeId loss = t.softmax_cross_entropy_diag(t.constant(Tensor({1, 1}, {3.7})));
  REQUIRE(t.scalar(loss) == 0.0);
}

TEST_CASE("cross-entropy gradient rows sum to zero", "[tape]") {
  Rng rng(17);
  ParamStore ps;
  ps.create("s", random_tensor(rng, {5, 5}, -2.0, 2.0));
  Tape t;
  NodeId s = t.param(ps, "s");
  t.backward(t.softmax_cross_entropy_diag(s));
  const Tensor& g = ps.grad("s");
  for (std::size_t i = 0; i < 5; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < 5; ++j) row += g.at(i, j);
    REQUIRE(std::abs(row) < 1e-14);
  }
  // Diagonal entries carry negative gradient (pull scores up).
  for (std::size_t i = 0; i < 5; ++i) REQUIRE(g.at(i, i) < 0.0);
}

TEST_CASE("token pooling gathers and scatters table rows", "[tape]") {
  ParamStore ps;
  ps.create("tab", Tensor({3, 2}, {1, 2, 10, 20, 100, 200}));
  Tape t;
  // Row 0 pools ids {0,2} with weights {0.5, 2}; row 1 pools id {1} with 3.
  NodeId out = t.embedding_rows(t.param(ps, "tab"), {0, 2, 1}, {0.5, 2.0, 3.0},
                                {0, 2, 3});
  REQUIRE(t.value(out).at(0, 0) == 0.5 * 1 + 2.0 * 100);
  REQUIRE(t.value(out).at(0, 1) == 0.5 * 2 + 2.0 * 200);
  REQUIRE(t.value(out).at(1, 0) == 3.0 * 10);

  NodeId mask = t.constant(Tensor({2, 2}, {1, 1, 1, 1}));
  t.backward(t.sum(t.mul(out, mask)));
  const Tensor& g = ps.grad("tab");
  REQUIRE(g.at(0, 0) == 0.5);
  REQUIRE(g.at(1, 0) == 3.0);
  REQUIRE(g.at(2, 1) == 2.0);

  Tape t2;
  REQUIRE_THROWS_AS(
      t2.embedding_rows(t2.param(ps, "tab"), {5}, {1.0}, {0, 1}),
      VocabularyError);
}

namespace {

// Exercises every differentiable op in one loss so the audit covers each
// backward rule, including interactions (normalize feeding concat, learned
// temperature scaling the score matrix, pooled table rows).
void build_omni_params(ParamStore& ps) {
  Rng rng(101);
  ps.create("w1", random_tensor(rng, {5, 3}, -0.8, 0.8));
  ps.create("b1", random_tensor(rng, {3}, -0.2, 0.2));
  ps.create("tab", random_tensor(rng, {6, 2}, -0.9, 0.9));
  ps.create("q", random_tensor(rng, {4, 5}, -0.7, 0.7));
  ps.create("s", Tensor::row({1.5}));
}

double omni_loss(ParamStore& ps, bool with_grad) {
  Rng rng(202);
  Tensor input = random_tensor(rng, {4, 5}, -1.0, 1.0);
  Tape t;
  NodeId x = t.constant(std::move(input));
  NodeId h = t.relu(
      t.add_rowwise(t.matmul(x, t.param(ps, "w1")), t.param(ps, "b1")));
  NodeId e = t.l2_normalize_rows(h);
  NodeId pooled = t.embedding_rows(t.param(ps, "tab"),
                                   {0, 3, 1, 4, 2, 5, 0, 2},
                                   {1.0, 0.5, 1.0, 0.5, 1.0, 0.5, 1.0, 0.5},
                                   {0, 2, 4, 6, 8});
  NodeId c = t.concat_cols(e, pooled);  // [4,5]
  NodeId scores = t.scale_by(t.matmul_nt(c, t.param(ps, "q")), t.param(ps, "s"));
  NodeId ce = t.softmax_cross_entropy_diag(scores);
  NodeId extra = t.sum(t.sub(t.mul(e, e), t.scale(e, 0.25)));
  NodeId loss = t.add(ce, t.scale(extra, 0.01));
  if (with_grad) t.backward(loss);
  return t.scalar(loss);
}

}  // namespace

TEST_CASE("central differences confirm every backward rule", "[tape][audit]") {
  ParamStore ps;
  build_omni_params(ps);
  FiniteDiffReport rep = finite_diff_check(ps, omni_loss, 120, 1e-5, 5);
  INFO("worst " << rep.worst_param << "[" << rep.worst_index << "] analytic "
                << rep.worst_analytic << " numeric " << rep.worst_numeric);
  REQUIRE(rep.max_rel_err < 1e-6);
}

TEST_CASE("the audit flags a deliberately corrupted gradient", "[audit]") {
  ParamStore ps;
  ps.create("w", Tensor::row({0.3, -0.7, 1.1}));
  auto bad = [](ParamStore& ps, bool with_grad) {
    Tape t;
    NodeId w = t.param(ps, "w");
    NodeId loss = t.sum(t.mul(w, w));
    if (with_grad) {
      t.backward(loss);
      for (double& g : ps.grad("w").data) g *= 1.02;  // 2% corruption
    }
    return t.scalar(loss);
  };
  FiniteDiffReport rep = finite_diff_check(ps, bad, 30, 1e-5, 3);
  REQUIRE(rep.max_rel_err > 1e-3);
}

TEST_CASE("quadratic gradients are reproduced to tight tolerance", "[audit]") {
  ParamStore ps;
  Rng rng(31);
  ps.create("w", random_tensor(rng, {4, 4}, -2.0, 2.0));
  Tensor target = random_tensor(rng, {4, 4}, -1.0, 1.0);
  auto quad = [&target](ParamStore& ps, bool with_grad) {
    Tape t;
    NodeId d = t.sub(t.param(ps, "w"), t.constant(target));
    NodeId loss = t.sum(t.mul(d, d));
    if (with_grad) t.backward(loss);
    return t.scalar(loss);
  };
  FiniteDiffReport rep = finite_diff_check(ps, quad, 64, 1e-5, 9);
  REQUIRE(rep.max_rel_err < 1e-8);

  // Closed form: d/dw sum((w-t)^2) = 2(w-t).
  ps.zero_grads();
  quad(ps, true);
  for (std::size_t i = 0; i < 16; ++i)
    REQUIRE(ps.grad("w").data[i] ==
            Catch::Approx(2.0 * (ps.value("w").data[i] - target.data[i]))
                .margin(1e-12));
}

TEST_CASE("sgd with momentum follows the two-step closed form", "[optim]") {
  ParamStore ps;
  ps.create("w", Tensor::row({1.0}));
  const double lr = 0.1, mu = 0.9, g = 0.5;

  ps.grad("w").data[0] = g;
  ps.sgd_step(lr, mu);
  const double w1 = 1.0 - lr * g;  // v1 = g
  REQUIRE(ps.value("w").data[0] == w1);
  REQUIRE(ps.grad("w").data[0] == 0.0);
  REQUIRE(ps.step_count() == 1);

  ps.grad("w").data[0] = g;
  ps.sgd_step(lr, mu);
  const double w2 = w1 - lr * (mu * g + g);  // v2 = mu*v1 + g
  REQUIRE(ps.value("w").data[0] == w2);
  REQUIRE(ps.step_count() == 2);
}

TEST_CASE("adam first step moves by lr*g/(|g|+eps)", "[optim]") {
  ParamStore ps;
  ps.create("w", Tensor::row({2.0, -3.0}));
  ps.grad("w").data = {0.25, -4.0};
  ps.adam_step(0.01);
  REQUIRE(ps.value("w").data[0] ==
          Catch::Approx(2.0 - 0.01 * 0.25 / (0.25 + 1e-8)).margin(1e-14));
  REQUIRE(ps.value("w").data[1] ==
          Catch::Approx(-3.0 + 0.01 * 4.0 / (4.0 + 1e-8)).margin(1e-14));
}

TEST_CASE("adam trajectory matches an independent scalar reference", "[optim]") {
  ParamStore ps;
  ps.create("w", Tensor::row({0.5, -1.5, 2.5}));
  const double lr = 0.05, b1 = 0.9, b2 = 0.999, eps = 1e-8;

  std::vector<double> w = {0.5, -1.5, 2.5};
  std::vector<double> m(3, 0.0), v(3, 0.0);
  Rng rng(77);
  for (int step = 1; step <= 20; ++step) {
    std::vector<double> g(3);
    for (double& x : g) x = rng.uniform(-1.0, 1.0);

    ps.grad("w").data = g;
    ps.adam_step(lr, b1, b2, eps);

    for (int i = 0; i < 3; ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, step));
      const double vh = v[i] / (1 - std::pow(b2, step));
      w[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
    for (int i = 0; i < 3; ++i)
      REQUIRE(ps.value("w").data[i] == Catch::Approx(w[i]).margin(1e-13));
  }
  REQUIRE(ps.step_count() == 20);
}

TEST_CASE("optimizer prefix filter freezes unselected parameters", "[optim]") {
  ParamStore ps;
  ps.create("enc.w", Tensor::row({1.0}));
  ps.create("head.w", Tensor::row({1.0}));
  ps.grad("enc.w").data[0] = 1.0;
  ps.grad("head.w").data[0] = 1.0;
  ps.sgd_step(0.1, 0.9, "head.");
  REQUIRE(ps.value("enc.w").data[0] == 1.0);   // frozen
  REQUIRE(ps.value("head.w").data[0] == 0.9);  // updated
  REQUIRE(ps.grad("enc.w").data[0] == 0.0);    // still cleared
}

TEST_CASE("parameter store guards names and orders them", "[store]") {
  ParamStore ps;
  ps.create("b", Tensor::row({1.0}));
  ps.create("a", Tensor::row({2.0}));
  REQUIRE_THROWS_AS(ps.create("a", Tensor::row({3.0})), ConfigError);
  REQUIRE_THROWS_AS(ps.value("zz"), ConfigError);
  REQUIRE(ps.names() == std::vector<std::string>{"a", "b"});

  const std::uint64_t h0 = ps.content_hash();
  ps.value("a").data[0] = 2.5;
  REQUIRE(ps.content_hash() != h0);

  REQUIRE_THROWS_AS(ps.load("a", Tensor::row({1.0, 2.0})), FormatError);
}

TEST_CASE("seeded generators replay exactly and split cleanly", "[rng]") {
  Rng a(123), b(123), c(124);
  bool diverged = false;
  for (int i = 0; i < 64; ++i) {
    const std::uint64_t x = a.next();
    REQUIRE(x == b.next());
    if (x != c.next()) diverged = true;
  }
  REQUIRE(diverged);

  std::set<std::uint64_t> seeds;
  for (std::uint64_t i = 0; i < 1000; ++i) seeds.insert(child_seed(9001, i));
  REQUIRE(seeds.size() == 1000);

  Rng u(5);
  for (int i = 0; i < 1000; ++i) {
    const double x = u.uniform();
    REQUIRE(x >= 0.0);
    REQUIRE(x < 1.0);
  }
}

TEST_CASE("hash primitive matches published reference values", "[rng]") {
  REQUIRE(fnv1a64("") == 0xcbf29ce484222325ULL);
  REQUIRE(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  REQUIRE(fnv1a64("foobar") == 0x85944171f73967e8ULL);
}

TEST_CASE("weighted draws never select zero-weight entries", "[rng]") {
  Rng rng(55);
  const std::vector<double> w = {0.0, 2.0, 0.0, 1.0};
  int ones = 0;
  for (int i = 0; i < 3000; ++i) {
    const std::size_t k = rng.weighted(w);
    REQUIRE((k == 1 || k == 3));
    if (k == 1) ++ones;
  }
  // Expect roughly 2/3 of draws on index 1.
  REQUIRE(ones > 1800);
  REQUIRE(ones < 2200);
}

TEST_CASE("shuffle is a seed-determined permutation", "[rng]") {
  std::vector<int> v1 = {1, 2, 3, 4, 5, 6, 7, 8};
  std::vector<int> v2 = v1;
  Rng a(9), b(9);
  a.shuffle(v1);
  b.shuffle(v2);
  REQUIRE(v1 == v2);
  std::multiset<int> sorted(v1.begin(), v1.end());
  REQUIRE(sorted == std::multiset<int>({1, 2, 3, 4, 5, 6, 7, 8}));
}

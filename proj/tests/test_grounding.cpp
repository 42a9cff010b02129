#include <cmath>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "vlg/chart.hpp"
#include "vlg/gradcheck.hpp"
#include "vlg/grounding.hpp"
#include "vlg/ops.hpp"

using namespace vlg;

namespace {

double direct_cos(const Tensor& a, std::size_t j, const Tensor& b, std::size_t k) {
  double s = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.dim(1); ++i) {
    s += a.at(j, i) * b.at(k, i);
    na += a.at(j, i) * a.at(j, i);
    nb += b.at(k, i) * b.at(k, i);
  }
  return s / std::sqrt(na * nb);
}

double direct_contrastive(const Tensor& s, double margin) {
  const std::size_t b = s.dim(0);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t m = 0; m < b; ++m) {
      if (m == i) continue;
      total += std::max(0.0, s.at(m, i) - s.at(i, i) + margin) + std::max(0.0, s.at(i, m) - s.at(i, i) + margin);
    }
  return total / (2.0 * b * (b - 1));
}

}  // namespace

TEST_CASE("cosine matrix") {
  std::mt19937_64 rng(1);
  ad::Tape tape;
  const Tensor a = testing::random_tensor({3, 4}, rng), b = testing::random_tensor({2, 4}, rng);
  const Tensor c = cosine_matrix(tape.constant(a), tape.constant(b)).value();
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t k = 0; k < 2; ++k) {
      CHECK(c.at(j, k) == doctest::Approx(direct_cos(a, j, b, k)).epsilon(1e-14));
      CHECK(std::abs(c.at(j, k)) <= 1.0);
    }
  std::size_t zeros = 0;
  const Tensor z = cosine_matrix(tape.constant(Tensor::zeros({1, 4})), tape.constant(b), &zeros).value();
  CHECK(zeros == 1);
  CHECK(z.at(0, 0) == 0.0);
  CHECK_THROWS_AS(cosine_matrix(tape.constant(a), tape.constant(Tensor::zeros({2, 3}))), DimensionError);
}

TEST_CASE("alignment score") {
  ad::Tape tape;
  SUBCASE("identical embeddings score one") {
    // m = 4 language tokens (3 spans of length >= 2 per tree), n = 3 parts
    const std::size_t m = 4, n = 3;
    Tensor lm = Tensor::zeros({all_spans(m).size()}), vm = Tensor::zeros({all_spans(n).size()});
    // marginals of the right-branching trees: each sums to length - 1
    const auto put = [](Tensor& t, std::size_t len, Span s) {
      const auto spans = all_spans(len);
      t[static_cast<std::size_t>(std::find(spans.begin(), spans.end(), s) - spans.begin())] = 1.0;
    };
    put(lm, m, {0, 4});
    put(lm, m, {1, 4});
    put(lm, m, {2, 4});
    put(vm, n, {0, 3});
    put(vm, n, {1, 3});
    const Tensor emb_l = Tensor::filled({lm.size(), 3}, 0.5), emb_v = Tensor::filled({vm.size(), 3}, 2.0);
    const ad::Var cos = cosine_matrix(tape.constant(emb_l), tape.constant(emb_v));
    CHECK(alignment_score(tape.constant(lm), tape.constant(vm), cos, m, n).item() == doctest::Approx(1.0).epsilon(1e-14));
  }
  SUBCASE("orthogonal embeddings score zero") {
    const Tensor emb_l = Tensor::matrix(1, 2, {1.0, 0.0}), emb_v = Tensor::matrix(1, 2, {0.0, 3.0});
    const ad::Var cos = cosine_matrix(tape.constant(emb_l), tape.constant(emb_v));
    CHECK(alignment_score(tape.constant(Tensor::vector({1.0})), tape.constant(Tensor::vector({1.0})), cos, 2, 2).item() ==
          0.0);
  }
  SUBCASE("three tokens and three parts match a direct double sum") {
    std::mt19937_64 rng(2);
    const Tensor lm = Tensor::vector({0.4, 1.0, 0.6}), vm = Tensor::vector({0.75, 1.0, 0.25});
    const Tensor el = testing::random_tensor({3, 5}, rng), ev = testing::random_tensor({3, 5}, rng);
    double expect = 0.0;
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t k = 0; k < 3; ++k) expect += lm[j] * vm[k] * direct_cos(el, j, ev, k);
    const ad::Var cos = cosine_matrix(tape.constant(el), tape.constant(ev));
    CHECK(alignment_score(tape.constant(lm), tape.constant(vm), cos, 3, 3).item() ==
          doctest::Approx(expect / 4.0).epsilon(1e-14));
    AlignmentOptions raw;
    raw.normalize = false;
    CHECK(alignment_score(tape.constant(lm), tape.constant(vm), cos, 3, 3, raw).item() ==
          doctest::Approx(expect).epsilon(1e-14));
    // positive rescaling of every embedding leaves the score unchanged
    Tensor el2 = el, ev2 = ev;
    for (double& v : el2.values()) v *= 7.5;
    for (double& v : ev2.values()) v *= 7.5;
    const ad::Var cos2 = cosine_matrix(tape.constant(el2), tape.constant(ev2));
    CHECK(alignment_score(tape.constant(lm), tape.constant(vm), cos2, 3, 3).item() ==
          doctest::Approx(expect / 4.0).epsilon(1e-13));
  }
  SUBCASE("singletons enter with marginal one") {
    const ad::Var full = with_singleton_marginals(tape.constant(Tensor::vector({0.4, 1.0, 0.6})), 3);
    // all_spans(3, 1): (0,1) (0,2) (0,3) (1,2) (1,3) (2,3)
    const std::vector<double> expect{1.0, 0.4, 1.0, 1.0, 0.6, 1.0};
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK(full.value()[i] == expect[i]);
    AlignmentOptions opts;
    opts.include_singletons = true;
    const ad::Var cos = cosine_matrix(tape.constant(Tensor::filled({6, 2}, 1.0)), tape.constant(Tensor::filled({6, 2}, 1.0)));
    CHECK(alignment_score(full, full, cos, 3, 3, opts).item() == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("contrastive loss") {
  ad::Tape tape;
  SUBCASE("equal scores pay the margin on every term") {
    CHECK(contrastive_loss(tape.constant(Tensor::filled({2, 2}, 0.3)), 0.2).item() == doctest::Approx(0.2).epsilon(1e-14));
  }
  SUBCASE("satisfied margins cost nothing") {
    const Tensor s = Tensor::matrix(3, 3, {0.9, 0.1, 0.2, 0.0, 0.8, 0.5, -0.3, 0.3, 0.75});
    CHECK(contrastive_loss(tape.constant(s), 0.2).item() == 0.0);
  }
  SUBCASE("random scores match direct evaluation; permutation invariance") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor s = testing::random_tensor({3, 3}, rng);
      const double loss = contrastive_loss(tape.constant(s), 0.2).item();
      CHECK(loss == doctest::Approx(direct_contrastive(s, 0.2)).epsilon(1e-14));
      CHECK(loss >= 0.0);
      const std::size_t perm[3] = {2, 0, 1};
      Tensor p = Tensor::zeros({3, 3});
      for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) p.at(i, j) = s.at(perm[i], perm[j]);
      CHECK(contrastive_loss(tape.constant(p), 0.2).item() == doctest::Approx(loss).epsilon(1e-14));
    }
  }
  SUBCASE("a batch of one is rejected") {
    CHECK_THROWS_AS(contrastive_loss(tape.constant(Tensor::filled({1, 1}, 0.0))), std::invalid_argument);
  }
  SUBCASE("gradient passes finite differences away from hinge kinks") {
    std::mt19937_64 rng(4);
    const std::vector<Tensor> inputs{testing::random_tensor({4, 4}, rng)};
    const auto loss = [](ad::Tape&, std::span<const ad::Var> v) { return contrastive_loss(v[0], 0.2); };
    CHECK(ad::gradcheck(loss, inputs).max_error < 1e-6);
  }
}

TEST_CASE("total loss") {
  ad::Tape tape;
  const ad::Var lw = tape.constant(2.0), lv = tape.constant(3.0), lc = tape.constant(0.5);
  CHECK(total_loss({1.0, 1.0, 1.0}, lw, lv, lc).total.item() == 5.5);
  CHECK(total_loss({1.0, 1.0, 0.0}, lw, lv, lc).total.item() == 5.0);
  CHECK(total_loss({0.0, 0.0, 1.0}, lw, lv, lc).total.item() == 0.5);
  CHECK(total_loss({0.5, 2.0, 4.0}, lw, lv, {}).total.item() == 7.0);
  CHECK_THROWS_AS(total_loss({}, {}, {}, {}), std::invalid_argument);
}

TEST_CASE("zero contrastive weight leaves each grammar's gradient untouched") {
  std::mt19937_64 rng(5);
  ad::Tape tape;
  const ad::Var a = tape.leaf(testing::random_tensor({3}, rng)), b = tape.leaf(testing::random_tensor({3}, rng));
  const ad::Var la = ad::sum(ad::square(a)), lb = ad::sum(ad::exp(b));
  const ad::Var lc = contrastive_loss(ad::reshape(ad::concat({a, ad::slice(b, 0, 0, 1)}), {2, 2}), 0.2);
  const auto g = tape.backward(total_loss({1.0, 1.0, 0.0}, la, lb, lc).total);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(g.wrt(a)[i] == 2.0 * a.value()[i]);
    CHECK(g.wrt(b)[i] == std::exp(b.value()[i]));
  }
}

TEST_CASE("alignment gradients flow into both grammars through span marginals") {
  // length-3 sentence and length-3 part sequence
  std::mt19937_64 rng(6);
  const std::size_t nn = 2, np = 2, nt = 4;
  const Tensor el = testing::random_tensor({3, 4}, rng), ev = testing::random_tensor({3, 4}, rng);
  const std::vector<Tensor> inputs{testing::random_tensor({nn}, rng),     testing::random_tensor({nn, nt * nt}, rng),
                                   testing::random_tensor({3, np}, rng),  testing::random_tensor({nn}, rng),
                                   testing::random_tensor({nn, nt * nt}, rng), testing::random_tensor({3, np}, rng),
                                   testing::random_tensor({3, 4}, rng)};
  const auto marg = [&](std::span<const ad::Var> v, std::size_t at) {
    ad::Var root = ad::log_softmax(v[at], 0);
    ad::Var binary = ad::reshape(ad::log_softmax(v[at + 1], 1), {nn, nt, nt});
    const DiffChart dc = diff_inside(root, binary, ad::log_softmax(v[at + 2], 1), nn, np);
    return diff_span_marginals(dc, root, binary);
  };
  const auto loss = [&](ad::Tape& tape, std::span<const ad::Var> v) {
    const ad::Var cos = cosine_matrix(ad::add(tape.constant(el), v[6]), tape.constant(ev));
    return alignment_score(marg(v, 0), marg(v, 3), cos, 3, 3);
  };
  CHECK(ad::gradcheck(loss, inputs).max_error < 1e-6);
  ad::Tape tape;
  std::vector<ad::Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t));
  const auto g = tape.backward(loss(tape, leaves));
  const auto nonzero = [](const Tensor& t) {
    double s = 0.0;
    for (double v : t.values()) s += std::abs(v);
    return s > 0.0;
  };
  CHECK(nonzero(g.wrt(leaves[1])));
  CHECK(nonzero(g.wrt(leaves[4])));
}

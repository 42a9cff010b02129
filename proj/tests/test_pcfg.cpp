#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "vlg/gradcheck.hpp"
#include "vlg/pcfg.hpp"

using namespace vlg;

namespace {

using Vec = std::vector<double>;

GrammarSpec language_spec(std::size_t n, std::size_t p, std::size_t v, std::size_t z) {
  GrammarSpec s;
  s.modality = Modality::language;
  s.n_nonterminals = n;
  s.n_preterminals = p;
  s.vocab_size = v;
  s.z_dim = z;
  s.symbol_embed_dim = 4;
  s.hidden_dim = 5;
  return s;
}

GrammarSpec vision_spec(std::size_t n, std::size_t p, std::size_t feat, std::size_t z) {
  GrammarSpec s;
  s.modality = Modality::vision;
  s.n_nonterminals = n;
  s.n_preterminals = p;
  s.feature_dim = feat;
  s.z_dim = z;
  s.symbol_embed_dim = 4;
  s.hidden_dim = 5;
  return s;
}

// Plain-loop evaluation of the stored networks.
struct Direct {
  const ParamStore& store;
  std::string prefix;

  const Tensor& p(const std::string& name) const { return store[store.id(prefix + "." + name)].value; }

  Vec row(const std::string& name, std::size_t r) const {
    const Tensor& t = p(name);
    const std::size_t w = t.size() / t.dim(0);
    return Vec(t.data() + r * w, t.data() + (r + 1) * w);
  }

  Vec mlp(const std::string& net, std::size_t depth, Vec x) const {
    for (std::size_t l = 0; l < depth; ++l) {
      const Tensor& w = p(net + "." + std::to_string(l) + ".weight");
      const Tensor& b = p(net + "." + std::to_string(l) + ".bias");
      Vec y(w.dim(0));
      for (std::size_t o = 0; o < w.dim(0); ++o) {
        double acc = b[o];
        for (std::size_t i = 0; i < w.dim(1); ++i) acc += w.at(o, i) * x[i];
        y[o] = std::tanh(acc);
      }
      x = y;
    }
    return x;
  }
};

Vec cat(Vec a, const Vec& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

double dotv(const Vec& a, const Vec& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double log_softmax_at(const Vec& scores, std::size_t i) {
  double z = 0.0;
  for (double s : scores) z += std::exp(s);
  return scores[i] - std::log(z);
}

void randomize(ParamStore& store, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& p : store.all())
    for (double& v : p.value.values()) v = u(rng);
}

void check_normalized(const RuleProbs& r, double tol) {
  const auto sum_exp = [](const double* p, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::exp(p[i]);
    return s;
  };
  CHECK(std::abs(sum_exp(r.root.data(), r.n_nonterminals) - 1.0) < tol);
  const std::size_t nt2 = r.n_symbols() * r.n_symbols();
  for (std::size_t a = 0; a < r.n_nonterminals; ++a) CHECK(std::abs(sum_exp(r.binary.data() + a * nt2, nt2) - 1.0) < tol);
  const std::size_t k = r.terminal.dim(1);
  for (std::size_t t = 0; t < r.n_preterminals; ++t) CHECK(std::abs(sum_exp(r.terminal.data() + t * k, k) - 1.0) < tol);
}

}  // namespace

TEST_CASE("zero parameters give uniform distributions") {
  ParamStore store;
  Rng rng(1);
  const CompoundPcfg g(language_spec(3, 2, 5, 2), store, "lang", rng);
  for (auto& p : store.all()) p.value = Tensor::zeros(p.value.shape());
  ad::Tape tape;
  Binder bind(tape, store);
  const RuleProbs r = rule_values(g.rule_probs_language(bind, tape.constant(Tensor::vector({0.3, -0.7}))), 3, 2);
  for (double v : r.root.values()) CHECK(v == doctest::Approx(std::log(1.0 / 3)).epsilon(1e-14));
  for (double v : r.binary.values()) CHECK(v == doctest::Approx(std::log(1.0 / 25)).epsilon(1e-14));
  for (double v : r.terminal.values()) CHECK(v == doctest::Approx(std::log(1.0 / 5)).epsilon(1e-14));
}

TEST_CASE("a single nonterminal takes the whole root mass") {
  ParamStore store;
  Rng rng(2);
  const CompoundPcfg g(language_spec(1, 2, 3, 0), store, "lang", rng);
  ad::Tape tape;
  Binder bind(tape, store);
  const RuleVars r = g.rule_probs_language(bind, {});
  CHECK(r.root.value()[0] == 0.0);
}

TEST_CASE("language rules match per-rule direct evaluation") {
  ParamStore store;
  Rng rng(3);
  const std::size_t n = 2, p = 2, v = 3, zd = 2, nt = 4;
  const CompoundPcfg g(language_spec(n, p, v, zd), store, "lang", rng);
  std::mt19937_64 draw(4);
  randomize(store, draw);
  const Vec z{0.4, -1.1};
  ad::Tape tape;
  Binder bind(tape, store);
  const RuleProbs r = rule_values(g.rule_probs_language(bind, tape.constant(Tensor::vector(z))), n, p);
  const Direct d{store, "lang"};

  const Vec hs = d.mlp("f_s", 2, cat(Vec(d.p("start_embed").data(), d.p("start_embed").data() + d.p("start_embed").size()), z));
  Vec root_scores;
  for (std::size_t a = 0; a < n; ++a) root_scores.push_back(dotv(d.row("root_out", a), hs));
  for (std::size_t a = 0; a < n; ++a) CHECK(r.root[a] == doctest::Approx(log_softmax_at(root_scores, a)).epsilon(1e-13));

  const Tensor& ubc = d.p("binary_out");
  for (std::size_t a = 0; a < n; ++a) {
    const Vec wa = cat(d.row("nonterminal_embed", a), z);
    Vec scores(nt * nt);
    for (std::size_t bc = 0; bc < nt * nt; ++bc)
      for (std::size_t i = 0; i < wa.size(); ++i) scores[bc] += wa[i] * ubc.at(i, bc);
    for (std::size_t b = 0; b < nt; ++b)
      for (std::size_t c = 0; c < nt; ++c)
        CHECK(r.binary_at(a, b, c) == doctest::Approx(log_softmax_at(scores, b * nt + c)).epsilon(1e-13));
  }

  const Tensor& uw = d.p("term_out");
  for (std::size_t t = 0; t < p; ++t) {
    const Vec ht = d.mlp("f_t", 2, cat(d.row("preterminal_embed", t), z));
    Vec scores(v);
    for (std::size_t w = 0; w < v; ++w)
      for (std::size_t i = 0; i < ht.size(); ++i) scores[w] += ht[i] * uw.at(i, w);
    for (std::size_t w = 0; w < v; ++w)
      CHECK(r.terminal.at(t, w) == doctest::Approx(log_softmax_at(scores, w)).epsilon(1e-13));
  }
}

TEST_CASE("z dimension is validated") {
  ParamStore store;
  Rng rng(5);
  const CompoundPcfg g(language_spec(2, 2, 3, 3), store, "lang", rng);
  ad::Tape tape;
  Binder bind(tape, store);
  CHECK_THROWS_AS(g.rule_probs_language(bind, tape.constant(Tensor::vector({1.0, 2.0}))), DimensionError);
  CHECK_THROWS_AS(g.rule_probs_language(bind, {}), DimensionError);
}

TEST_CASE("vision terminal scores") {
  ParamStore store;
  Rng rng(6);
  const CompoundPcfg g(vision_spec(2, 3, 4, 0), store, "vis", rng);
  const Tensor feats = Tensor::matrix(2, 4, {0.5, -1.0, 2.0, 0.25, 1.5, 0.0, -0.5, 3.0});

  SUBCASE("zero tag weights give zero scores") {
    store[g.tag_weight()].value = Tensor::zeros({3, 4});
    ad::Tape tape;
    Binder bind(tape, store);
    for (double v : g.terminal_scores_vision(bind, tape.constant(feats)).value().values()) CHECK(v == 0.0);
  }
  SUBCASE("one-hot tag weights project a coordinate") {
    Tensor w = Tensor::zeros({3, 4});
    w.at(0, 2) = 1.0;
    w.at(1, 0) = 1.0;
    w.at(2, 3) = 1.0;
    store[g.tag_weight()].value = w;
    ad::Tape tape;
    Binder bind(tape, store);
    const Tensor s = g.terminal_scores_vision(bind, tape.constant(feats)).value();
    REQUIRE(s.shape() == Shape{3, 2});
    CHECK(s.at(0, 0) == 2.0);
    CHECK(s.at(0, 1) == -0.5);
    CHECK(s.at(1, 1) == 1.5);
    CHECK(s.at(2, 0) == 0.25);
  }
  SUBCASE("random weights match direct bilinear evaluation") {
    std::mt19937_64 draw(7);
    randomize(store, draw);
    ad::Tape tape;
    Binder bind(tape, store);
    const Tensor s = g.terminal_scores_vision(bind, tape.constant(feats)).value();
    const Tensor& w = store[g.tag_weight()].value;
    const Tensor& b = store[g.tag_bias()].value;
    for (std::size_t t = 0; t < 3; ++t)
      for (std::size_t i = 0; i < 2; ++i) {
        double expect = b[t];
        for (std::size_t k = 0; k < 4; ++k) expect += w.at(t, k) * feats.at(i, k);
        CHECK(s.at(t, i) == doctest::Approx(expect).epsilon(1e-14));
      }
  }
  SUBCASE("empty part set is rejected") {
    ad::Tape tape;
    Binder bind(tape, store);
    CHECK_THROWS_AS(g.terminal_scores_vision(bind, tape.constant(Tensor::zeros({0, 4}))), DimensionError);
  }
}

TEST_CASE("vision terminal distributions normalize over batch parts") {
  ParamStore store;
  Rng rng(8);
  const CompoundPcfg g(vision_spec(2, 2, 3, 0), store, "vis", rng);
  store[g.tag_bias()].value = Tensor::zeros({2});

  SUBCASE("two parts with equal scores split evenly") {
    const Tensor feats = Tensor::matrix(2, 3, {1.0, 2.0, 3.0, 1.0, 2.0, 3.0});
    ad::Tape tape;
    Binder bind(tape, store);
    const std::vector<std::size_t> lengths{2};
    const Tensor lp = g.vision_terminal_log_probs(bind, tape.constant(feats), lengths).value();
    for (double v : lp.values()) CHECK(std::exp(v) == doctest::Approx(0.5).epsilon(1e-14));
  }
  SUBCASE("three parts with hand-set scores") {
    Tensor w = Tensor::zeros({2, 3});
    w.at(0, 0) = 1.0;
    w.at(1, 1) = 1.0;
    store[g.tag_weight()].value = w;
    // tag 0 scores (1, 2, 3); tag 1 scores (0, 0, ln 2)
    const Tensor feats = Tensor::matrix(3, 3, {1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 3.0, std::log(2.0), 0.0});
    ad::Tape tape;
    Binder bind(tape, store);
    const std::vector<std::size_t> lengths{1, 2};
    const Tensor lp = g.vision_terminal_log_probs(bind, tape.constant(feats), lengths).value();
    const double z0 = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    CHECK(std::exp(lp.at(0, 0)) == doctest::Approx(std::exp(1.0) / z0).epsilon(1e-14));
    CHECK(std::exp(lp.at(0, 2)) == doctest::Approx(std::exp(3.0) / z0).epsilon(1e-14));
    CHECK(std::exp(lp.at(1, 0)) == doctest::Approx(0.25).epsilon(1e-14));
    CHECK(std::exp(lp.at(1, 2)) == doctest::Approx(0.5).epsilon(1e-14));
  }
  SUBCASE("random batches sum to one per tag") {
    std::mt19937_64 draw(9);
    for (int trial = 0; trial < 20; ++trial) {
      randomize(store, draw, 2.0);
      const Tensor feats = testing::random_tensor({7, 3}, draw, -3, 3);
      ad::Tape tape;
      Binder bind(tape, store);
      const std::vector<std::size_t> lengths{3, 4};
      const Tensor lp = g.vision_terminal_log_probs(bind, tape.constant(feats), lengths).value();
      for (std::size_t t = 0; t < 2; ++t) {
        double s = 0.0;
        for (std::size_t i = 0; i < 7; ++i) s += std::exp(lp.at(t, i));
        CHECK(std::abs(s - 1.0) < 1e-9);
      }
    }
  }
  SUBCASE("lengths inconsistent with the part count are rejected") {
    const Tensor feats = Tensor::matrix(1, 3, {1.0, 2.0, 3.0});
    ad::Tape tape;
    Binder bind(tape, store);
    const std::vector<std::size_t> lengths{2};
    CHECK_THROWS_AS(g.rule_probs_vision(bind, {}, tape.constant(feats), lengths), std::invalid_argument);
  }
}

TEST_CASE("clustering posterior") {
  ParamStore store;
  Rng rng(10);
  const CompoundPcfg g(vision_spec(2, 4, 2, 0), store, "vis", rng);
  SUBCASE("equal scores give a uniform posterior") {
    store[g.tag_weight()].value = Tensor::zeros({4, 2});
    ad::Tape tape;
    Binder bind(tape, store);
    const Tensor post = g.clustering_posterior(bind, tape.constant(Tensor::matrix(1, 2, {0.3, 0.9}))).value();
    for (double v : post.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-14));
  }
  SUBCASE("a dominant score gives a one-hot posterior") {
    store[g.tag_weight()].value = Tensor::zeros({4, 2});
    store[g.tag_bias()].value = Tensor::vector({0.0, 1e3, 0.0, 0.0});
    ad::Tape tape;
    Binder bind(tape, store);
    const Tensor post = g.clustering_posterior(bind, tape.constant(Tensor::matrix(1, 2, {0.3, 0.9}))).value();
    CHECK(post.at(0, 1) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(post.at(0, 0) < 1e-300);
  }
  SUBCASE("rows sum to one") {
    std::mt19937_64 draw(11);
    randomize(store, draw, 3.0);
    ad::Tape tape;
    Binder bind(tape, store);
    const Tensor post = g.clustering_posterior(bind, tape.constant(testing::random_tensor({9, 2}, draw, -4, 4))).value();
    REQUIRE(post.shape() == Shape{9, 4});
    for (std::size_t i = 0; i < 9; ++i) {
      double s = 0.0;
      for (std::size_t t = 0; t < 4; ++t) s += post.at(i, t);
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("rule distributions normalize for 100 random draws") {
  ParamStore lang_store, vis_store;
  Rng rng(12);
  const CompoundPcfg lang(language_spec(3, 4, 6, 3), lang_store, "lang", rng);
  const CompoundPcfg vis(vision_spec(3, 4, 5, 3), vis_store, "vis", rng);
  std::mt19937_64 draw(13);
  std::normal_distribution<double> normal;
  for (int trial = 0; trial < 100; ++trial) {
    randomize(lang_store, draw, 1.5);
    randomize(vis_store, draw, 1.5);
    Tensor z = Tensor::zeros({3});
    for (double& v : z.values()) v = normal(draw);
    ad::Tape tape;
    Binder lb(tape, lang_store), vb(tape, vis_store);
    check_normalized(rule_values(lang.rule_probs_language(lb, tape.constant(z)), 3, 4), 1e-9);
    const std::vector<std::size_t> lengths{2, 3};
    const Tensor feats = testing::random_tensor({5, 5}, draw, -2, 2);
    check_normalized(rule_values(vis.rule_probs_vision(vb, tape.constant(z), tape.constant(feats), lengths), 3, 4), 1e-9);
  }
}

TEST_CASE("without a latent the rules are deterministic") {
  ParamStore store;
  Rng rng(14);
  const CompoundPcfg g(language_spec(3, 3, 4, 0), store, "lang", rng);
  const auto eval = [&] {
    ad::Tape tape;
    Binder bind(tape, store);
    return rule_values(g.rule_probs_language(bind, {}), 3, 3);
  };
  const RuleProbs a = eval(), b = eval();
  CHECK(std::ranges::equal(a.root.values(), b.root.values()));
  CHECK(std::ranges::equal(a.binary.values(), b.binary.values()));
  CHECK(std::ranges::equal(a.terminal.values(), b.terminal.values()));
}

TEST_CASE("rule gradients pass finite differences") {
  Rng rng(15);
  std::mt19937_64 draw(16);
  SUBCASE("language") {
    ParamStore store;
    const CompoundPcfg g(language_spec(2, 2, 3, 2), store, "lang", rng);
    std::vector<Tensor> inputs;
    for (const auto& p : store.all()) inputs.push_back(p.value);
    inputs.push_back(testing::random_tensor({2}, draw));
    const Tensor weights = testing::random_tensor({2 + 32 + 6}, draw);
    const auto loss = [&](ad::Tape& tape, std::span<const ad::Var> v) {
      Binder bind(tape, store);
      for (std::size_t i = 0; i + 1 < v.size(); ++i) bind.use(i, v[i]);
      const RuleVars r = g.rule_probs_language(bind, v.back());
      const ad::Var flat = ad::concat({r.root, ad::reshape(r.binary, {32}), ad::reshape(r.terminal, {6})});
      return ad::dot(flat, tape.constant(weights));
    };
    CHECK(ad::gradcheck(loss, inputs).max_error < 1e-6);
  }
  SUBCASE("vision") {
    ParamStore store;
    const CompoundPcfg g(vision_spec(2, 2, 3, 2), store, "vis", rng);
    randomize(store, draw);
    std::vector<Tensor> inputs;
    for (const auto& p : store.all()) inputs.push_back(p.value);
    inputs.push_back(testing::random_tensor({2}, draw));
    inputs.push_back(testing::random_tensor({4, 3}, draw));
    const Tensor weights = testing::random_tensor({2 + 32 + 8}, draw);
    const std::vector<std::size_t> lengths{2, 2};
    const auto loss = [&](ad::Tape& tape, std::span<const ad::Var> v) {
      Binder bind(tape, store);
      for (std::size_t i = 0; i + 2 < v.size(); ++i) bind.use(i, v[i]);
      const RuleVars r = g.rule_probs_vision(bind, v[v.size() - 2], v.back(), lengths);
      const ad::Var flat = ad::concat({r.root, ad::reshape(r.binary, {32}), ad::reshape(r.terminal, {8})});
      return ad::dot(flat, tape.constant(weights));
    };
    CHECK(ad::gradcheck(loss, inputs).max_error < 1e-6);
  }
}

#include "vlg/checks.hpp"

#include <random>

#include "vlg/gradcheck.hpp"
#include "vlg/trainer.hpp"

namespace vlg {

using ad::Var;

namespace {

Tensor uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.values()) v = d(rng);
  return t;
}

// Random linear functional of `v`, so every output coordinate gets a distinct weight.
Var probe(Var v, std::uint64_t salt) {
  Rng rng(salt);
  Tensor w = uniform(v.shape(), rng);
  return ad::sum(ad::mul(v, v.tape().constant(std::move(w))));
}

GradcheckEntry entry(const std::string& name, const ad::GradcheckResult& r, double tol) {
  return {name, r.max_error, tol, r.coordinates};
}

// Runs `build` with every parameter of `store` bound to a checked leaf.
ad::GradcheckResult params_check(const ParamStore& store, const std::function<Var(Binder&)>& build,
                                 std::vector<Tensor> extra = {},
                                 const std::function<Var(Binder&, std::span<const Var>)>& build_extra = {}) {
  std::vector<Tensor> inputs;
  for (const Parameter& p : store.all()) inputs.push_back(p.value);
  const std::size_t n_params = inputs.size();
  for (auto& t : extra) inputs.push_back(std::move(t));
  return ad::gradcheck(
      [&](ad::Tape& tape, std::span<const Var> leaves) {
        Binder bind(tape, store);
        for (std::size_t i = 0; i < n_params; ++i) bind.use(i, leaves[i]);
        return build_extra ? build_extra(bind, leaves.subspan(n_params)) : build(bind);
      },
      inputs);
}

}  // namespace

std::vector<GradcheckEntry> gradcheck_suite(std::uint64_t seed) {
  std::vector<GradcheckEntry> out;
  Rng rng(seed);

  {
    std::vector<Tensor> in{uniform({3, 4}, rng), uniform({4, 5}, rng), uniform({5}, rng)};
    auto r = ad::gradcheck(
        [](ad::Tape&, std::span<const Var> x) {
          Var h = ad::tanh(ad::affine(x[0], ad::transpose(x[1]), x[2]));  // [3, 5]
          Var s = ad::add(ad::log_softmax(ad::matmul(h, ad::transpose(x[1])), 1), ad::sigmoid(ad::relu(ad::matmul(h, ad::transpose(x[1])))));
          return ad::add(probe(s, 1), ad::add(ad::logsumexp(ad::exp(ad::scale(x[2], 0.5))), ad::dot(x[2], ad::square(x[2]))));
        },
        in);
    out.push_back(entry("tensor_autodiff.composite", r, kModuleGradTolerance));
  }

  const std::size_t nn = 3, np = 2, n = 4, nt = nn + np;
  auto chart_inputs = [&]() {
    return std::vector<Tensor>{uniform({nn}, rng, -2, 0), uniform({nn, nt, nt}, rng, -3, 0), uniform({n, np}, rng, -3, 0)};
  };
  {
    auto r = ad::gradcheck(
        [&](ad::Tape&, std::span<const Var> x) { return diff_inside(x[0], x[1], x[2], nn, np).log_z; }, chart_inputs());
    out.push_back(entry("chart_parser.log_partition", r, kModuleGradTolerance));
  }
  {
    auto r = ad::gradcheck(
        [&](ad::Tape&, std::span<const Var> x) {
          const DiffChart c = diff_inside(x[0], x[1], x[2], nn, np);
          return probe(diff_span_marginals(c, x[0], x[1]), 2);
        },
        chart_inputs());
    out.push_back(entry("chart_parser.span_marginals", r, kModuleGradTolerance));
  }

  {
    ParamStore store;
    GrammarSpec spec;
    spec.n_nonterminals = 2;
    spec.n_preterminals = 2;
    spec.vocab_size = 4;
    spec.symbol_embed_dim = 3;
    spec.z_dim = 2;
    spec.hidden_dim = 3;
    spec.mlp_depth = 1;
    CompoundPcfg g(spec, store, "g", rng);
    auto r = params_check(store, {}, {uniform({2}, rng)}, [&](Binder& bind, std::span<const Var> z) {
      const RuleVars rv = g.rule_probs_language(bind, z[0]);
      return ad::add(probe(rv.root, 3), ad::add(probe(rv.binary, 4), probe(rv.terminal, 5)));
    });
    out.push_back(entry("pcfg_core.language_rules", r, kModuleGradTolerance));
  }
  {
    ParamStore store;
    GrammarSpec spec;
    spec.modality = Modality::vision;
    spec.n_nonterminals = 2;
    spec.n_preterminals = 3;
    spec.feature_dim = 3;
    spec.symbol_embed_dim = 3;
    spec.z_dim = 2;
    spec.hidden_dim = 3;
    spec.mlp_depth = 1;
    spec.cluster_depth = 1;
    CompoundPcfg g(spec, store, "g", rng);
    const std::vector<std::size_t> lengths{2, 3};
    auto r = params_check(store, {}, {uniform({2}, rng), uniform({5, 3}, rng)}, [&](Binder& bind, std::span<const Var> x) {
      const RuleVars rv = g.rule_probs_vision(bind, x[0], x[1], lengths);
      return ad::add(probe(rv.binary, 6), ad::add(probe(rv.terminal, 7), probe(g.clustering_posterior(bind, x[1]), 8)));
    });
    out.push_back(entry("pcfg_core.vision_rules", r, kModuleGradTolerance));
  }

  {
    ParamStore store;
    LanguageEncoder enc({5, 3, 2, 2, 3}, store, "l", rng);
    const std::vector<std::size_t> tokens{1, 4, 0, 2};
    auto r = params_check(store, [&](Binder& bind) {
      Var s = enc.states(bind, tokens);
      Posterior q = enc.posterior(bind, s);
      Rng eps_rng(9);
      return ad::add(ad::add(gaussian_kl(q), probe(sample_latent(q, eps_rng), 10)), probe(enc.span_embeddings(bind, s), 11));
    });
    out.push_back(entry("encoders.language", r, kModuleGradTolerance));
  }
  {
    ParamStore store;
    VisionEncoderSpec vs;
    vs.raw_dim = 3;
    vs.feature_dim = 2;
    vs.perception_hidden = 3;
    vs.perception_depth = 2;
    vs.hidden_dim = 2;
    vs.z_dim = 2;
    vs.align_dim = 3;
    VisionEncoder enc(vs, store, "v", rng);
    const Tensor raw = uniform({3, 3}, rng);
    auto r = params_check(store, [&](Binder& bind) {
      Var f = enc.perceive(bind, bind.tape().constant(raw));
      Posterior q = enc.posterior(bind, f);
      return ad::add(ad::add(gaussian_kl(q), probe(q.mean, 12)), probe(enc.span_embeddings(bind, f, 1), 13));
    });
    out.push_back(entry("encoders.vision", r, kModuleGradTolerance));
  }

  {
    // m = 3 and n = 4: 3 and 6 spans of length >= 2, 6 and 10 with singletons
    std::vector<Tensor> in{uniform({3}, rng, 0.1, 1), uniform({6}, rng, 0.1, 1), uniform({3, 4}, rng), uniform({6, 4}, rng),
                           uniform({6, 4}, rng), uniform({10, 4}, rng), uniform({3, 3}, rng)};
    auto r = ad::gradcheck(
        [](ad::Tape&, std::span<const Var> x) {
          Var s = alignment_score(x[0], x[1], cosine_matrix(x[2], x[3]), 3, 4);
          Var s1 = alignment_score(with_singleton_marginals(x[0], 3), with_singleton_marginals(x[1], 4),
                                   cosine_matrix(x[4], x[5]), 3, 4, {true, true});
          return ad::add(ad::add(s, s1), contrastive_loss(ad::scale(x[6], 0.3), 0.2));
        },
        in);
    out.push_back(entry("grounding.alignment_and_contrastive", r, kModuleGradTolerance));
  }

  {
    const World world = default_world();
    const Corpus corpus = generate_corpus(world, 2, 1, seed);
    TrainConfig c;
    c.lang_nonterminals = 2;
    c.lang_preterminals = 3;
    c.vis_nonterminals = 2;
    c.vis_preterminals = 3;
    c.z_dim = 2;
    c.symbol_embed_dim = 3;
    c.grammar_hidden = 3;
    c.word_dim = 3;
    c.lstm_hidden = 2;
    c.align_dim = 3;
    c.perception_depth = 1;
    c.feature_dim = 4;
    c.seed = seed;
    const Model model(c, world.vocabulary.size(), world.options.feature_dim);
    PairedInstance a = corpus.train[0], b = corpus.train[1];
    a.tokens.resize(3);
    b.tokens.resize(3);
    a.parts.resize(3);
    b.parts.resize(3);
    const std::vector<const PairedInstance*> batch{&a, &b};
    Rng lr(seed + 1), vr(seed + 2);
    const BatchNoise noise = draw_noise(model, 2, LossPlan::from(c), lr, vr);
    out.push_back(entry("end_to_end.joint_loss", batch_gradcheck(model, batch, noise), kEndToEndGradTolerance));
  }
  return out;
}

}  // namespace vlg

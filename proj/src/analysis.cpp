#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "vlg/trainer.hpp"

namespace vlg {

using ad::Var;

namespace {

constexpr std::uint64_t kEvalStream = 6;

struct Decoded {
  BracketSet brackets;
  std::vector<double> pooled;
  double norm = 1.0;
};

Decoded decode(const RuleVars& vars, const GrammarSpec& spec, const Tensor& emissions, const Tensor& span_embeddings,
               std::size_t min_len, bool normalize) {
  const RuleProbs rules = rule_values(vars, spec.n_nonterminals, spec.n_preterminals);
  Chart chart = inside(rules, emissions);
  const SpanMarginals marg = outside_and_marginals(chart, rules);
  const std::size_t n = emissions.dim(0);
  Decoded d;
  d.brackets = BracketSet{n, mbr_decode(marg).brackets()};
  const std::vector<Span> spans = all_spans(n, min_len);
  const std::size_t dim = span_embeddings.dim(1);
  d.pooled.assign(dim, 0.0);
  for (std::size_t k = 0; k < spans.size(); ++k) {
    const double w = spans[k].length() == 1 ? 1.0 : marg.at(spans[k].start, spans[k].end);
    double sq = 0.0;
    for (std::size_t j = 0; j < dim; ++j) sq += span_embeddings.at(k, j) * span_embeddings.at(k, j);
    if (sq == 0.0) continue;
    const double inv = 1.0 / std::sqrt(sq);
    for (std::size_t j = 0; j < dim; ++j) d.pooled[j] += w * inv * span_embeddings.at(k, j);
  }
  if (normalize) d.norm = min_len == 1 ? 2.0 * n - 1.0 : n - 1.0;
  return d;
}

}  // namespace

std::vector<InstanceAnalysis> analyze(const Model& model, std::span<const PairedInstance> instances) {
  const TrainConfig& cfg = model.config;
  const std::size_t min_len = cfg.span_min_length();
  std::vector<InstanceAnalysis> out(instances.size());

  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& tokens = instances[i].tokens;
    ad::Tape tape;
    Binder bind(tape, model.store);
    Var states = model.lang_encoder.states(bind, tokens);
    Var z;
    if (cfg.z_dim) z = model.lang_encoder.posterior(bind, states).mean;
    const RuleVars r = model.lang_grammar.rule_probs_language(bind, z);
    const Tensor em = rule_values(r, cfg.lang_nonterminals, cfg.lang_preterminals).emissions(tokens);
    const Tensor emb = model.lang_encoder.span_embeddings(bind, states, min_len).value();
    Decoded d = decode(r, model.lang_grammar.spec(), em, emb, min_len, cfg.normalize_alignment);
    out[i].language = std::move(d.brackets);
    out[i].lang_pooled = std::move(d.pooled);
    out[i].lang_norm = d.norm;
  }

  std::vector<std::size_t> order(instances.size());
  std::iota(order.begin(), order.end(), 0);
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(kEvalStream)};
  Rng rng(seq);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
    const std::size_t e = std::min(order.size(), s + cfg.batch_size);
    std::vector<std::size_t> lengths;
    std::size_t total = 0;
    for (std::size_t k = s; k < e; ++k) total += instances[order[k]].parts.size();
    Tensor raw = Tensor::zeros({total, model.raw_dim});
    std::size_t row = 0;
    for (std::size_t k = s; k < e; ++k) {
      const auto& inst = instances[order[k]];
      lengths.push_back(inst.parts.size());
      for (const auto& p : inst.parts) {
        if (p.size() != model.raw_dim) throw DimensionError("instance " + inst.id + ": part width does not match the model");
        std::copy(p.begin(), p.end(), raw.data() + row++ * model.raw_dim);
      }
    }
    ad::Tape tape;
    Binder bind(tape, model.store);
    Var feats = model.vis_encoder.perceive(bind, tape.constant(std::move(raw)));
    Var terminal = model.vis_grammar.vision_terminal_log_probs(bind, feats, lengths);
    const Tensor post = model.vis_grammar.clustering_posterior(bind, feats).value();
    std::size_t off = 0;
    for (std::size_t k = s; k < e; ++k) {
      InstanceAnalysis& a = out[order[k]];
      const std::size_t n = lengths[k - s];
      for (std::size_t p = off; p < off + n; ++p) {
        std::size_t best = 0;
        for (std::size_t t = 1; t < post.dim(1); ++t) {
          if (post.at(p, t) > post.at(p, best)) best = t;
        }
        a.clusters.push_back(best);
      }
      Var f = ad::slice(feats, 0, off, off + n);
      Var z;
      if (cfg.z_dim) z = model.vis_encoder.posterior(bind, f).mean;
      const RuleVars r = model.vis_grammar.rule_probs_vision(bind, z, terminal);
      std::vector<std::size_t> cols(n);
      std::iota(cols.begin(), cols.end(), off);
      const Tensor em = rule_values(r, cfg.vis_nonterminals, cfg.vis_preterminals).emissions(cols);
      const Tensor emb = model.vis_encoder.span_embeddings(bind, f, min_len).value();
      Decoded d = decode(r, model.vis_grammar.spec(), em, emb, min_len, cfg.normalize_alignment);
      a.vision = std::move(d.brackets);
      a.vis_pooled = std::move(d.pooled);
      a.vis_norm = d.norm;
      off += n;
    }
  }
  return out;
}

double pair_score(const InstanceAnalysis& lang, const InstanceAnalysis& vis) {
  double s = 0.0;
  for (std::size_t j = 0; j < lang.lang_pooled.size(); ++j) s += lang.lang_pooled[j] * vis.vis_pooled[j];
  return s / (lang.lang_norm * vis.vis_norm);
}

namespace {

ModalityReport modality_report(const std::vector<BracketSet>& pred, const std::vector<BracketSet>& gold,
                               const std::vector<std::string>& categories) {
  ModalityReport r;
  r.model = parse_scores(pred, gold);
  std::vector<std::size_t> lengths;
  for (const auto& g : gold) lengths.push_back(g.length);
  r.left_branching = parse_scores(branching_baseline(lengths, false), gold);
  r.right_branching = parse_scores(branching_baseline(lengths, true), gold);
  for (const std::string& c : std::set<std::string>(categories.begin(), categories.end())) {
    std::vector<BracketSet> p, g;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      if (categories[i] == c) p.push_back(pred[i]), g.push_back(gold[i]);
    }
    r.per_category[c] = parse_scores(p, g);
  }
  return r;
}

EvalReport section_report(const Model& model, std::span<const PairedInstance> instances,
                          const std::vector<InstanceAnalysis>& analysis, const std::vector<std::size_t>& members) {
  EvalReport rep;
  rep.instances = members.size();
  if (members.empty()) return rep;
  std::vector<BracketSet> lp, lg, vp, vg;
  std::vector<std::string> cats;
  std::vector<std::size_t> pred, gold;
  std::size_t n_clusters = model.config.vis_preterminals;
  for (std::size_t i : members) {
    const PairedInstance& inst = instances[i];
    const InstanceAnalysis& a = analysis[i];
    lp.push_back(a.language);
    lg.push_back(BracketSet{inst.tokens.size(), inst.gold_lang_tree});
    vp.push_back(a.vision);
    vg.push_back(BracketSet{inst.parts.size(), inst.gold_vis_tree});
    cats.push_back(inst.category);
    pred.insert(pred.end(), a.clusters.begin(), a.clusters.end());
    gold.insert(gold.end(), inst.gold_part_tags.begin(), inst.gold_part_tags.end());
  }
  for (std::size_t g : gold) n_clusters = std::max(n_clusters, g + 1);
  rep.language = modality_report(lp, lg, cats);
  rep.vision = modality_report(vp, vg, cats);
  rep.clustering_accuracy = clustering_accuracy(pred, gold, n_clusters);
  if (members.size() >= model.config.retrieval_k && model.config.retrieval_trials > 0) {
    const RetrievalResult rr = retrieval_eval(
        members.size(),
        [&](std::size_t q, std::size_t c) { return pair_score(analysis[members[q]], analysis[members[c]]); },
        model.config.retrieval_k, model.config.retrieval_trials, model.config.seed);
    rep.retrieval_ir = rr.ir;
    rep.retrieval_tr = rr.tr;
  }
  return rep;
}

}  // namespace

std::map<std::string, EvalReport> evaluate(const Model& model, std::span<const PairedInstance> instances,
                                           const std::vector<std::string>& holdout) {
  const std::vector<InstanceAnalysis> analysis = analyze(model, instances);
  std::vector<std::size_t> all(instances.size()), seen, unseen;
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t i : all) {
    const bool held = std::find(holdout.begin(), holdout.end(), instances[i].category) != holdout.end();
    (held ? unseen : seen).push_back(i);
  }
  std::map<std::string, EvalReport> out;
  out["all"] = section_report(model, instances, analysis, all);
  if (!holdout.empty()) {
    out["seen"] = section_report(model, instances, analysis, seen);
    out["unseen"] = section_report(model, instances, analysis, unseen);
  }
  return out;
}

}  // namespace vlg

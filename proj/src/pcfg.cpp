#include "vlg/pcfg.hpp"

#include <numeric>
#include <stdexcept>

namespace vlg {

using ad::Var;

std::string modality_name(Modality m) { return m == Modality::language ? "language" : "vision"; }

void GrammarSpec::validate() const {
  if (n_nonterminals < 1 || n_preterminals < 1) {
    throw std::invalid_argument("grammar spec: need at least one nonterminal and one preterminal");
  }
  if (symbol_embed_dim < 1 || hidden_dim < 1) throw std::invalid_argument("grammar spec: zero-width embedding or hidden layer");
  if (modality == Modality::language && vocab_size < 1) throw std::invalid_argument("grammar spec: language grammar needs a vocabulary");
  if (modality == Modality::vision && vocab_size != 0) throw std::invalid_argument("grammar spec: vision grammar has no fixed vocabulary");
  if (modality == Modality::vision && feature_dim < 1) throw std::invalid_argument("grammar spec: vision grammar needs feature_dim");
}

Tensor RuleProbs::emissions(std::span<const std::size_t> columns) const {
  const std::size_t p = n_preterminals;
  const std::size_t k = terminal.dim(1);
  Tensor out = Tensor::zeros({columns.size(), p});
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] >= k) throw DimensionError("emissions: terminal index " + std::to_string(columns[i]) + " out of range");
    for (std::size_t t = 0; t < p; ++t) out[i * p + t] = terminal[t * k + columns[i]];
  }
  return out;
}

RuleProbs rule_values(const RuleVars& vars, std::size_t n_nonterminals, std::size_t n_preterminals) {
  RuleProbs r;
  r.n_nonterminals = n_nonterminals;
  r.n_preterminals = n_preterminals;
  r.root = vars.root.value();
  r.binary = vars.binary.value();
  if (vars.terminal.valid()) r.terminal = vars.terminal.value();
  return r;
}

CompoundPcfg::CompoundPcfg(const GrammarSpec& spec, ParamStore& store, const std::string& prefix, Rng& rng)
    : spec_(spec) {
  spec_.validate();
  const std::size_t n = spec.n_nonterminals, p = spec.n_preterminals, nt = spec.n_symbols();
  const std::size_t d = spec.symbol_embed_dim, z = spec.z_dim, h = spec.hidden_dim;
  start_embed_ = store.add_uniform(prefix + ".start_embed", {d}, 0.5, rng);
  nt_embed_ = store.add_uniform(prefix + ".nonterminal_embed", {n, d}, 0.5, rng);
  f_s_ = Mlp::create(store, prefix + ".f_s", d + z, h, spec.mlp_depth, Activation::tanh, rng);
  root_out_ = store.add_uniform(prefix + ".root_out", {n, f_s_.out_dim(d + z)}, 0.5, rng);
  binary_out_ = store.add_uniform(prefix + ".binary_out", {d + z, nt * nt}, 0.5, rng);
  if (spec.modality == Modality::language) {
    pt_embed_ = store.add_uniform(prefix + ".preterminal_embed", {p, d}, 0.5, rng);
    f_t_ = Mlp::create(store, prefix + ".f_t", d + z, h, spec.mlp_depth, Activation::tanh, rng);
    term_out_ = store.add_uniform(prefix + ".term_out", {f_t_.out_dim(d + z), spec.vocab_size}, 0.5, rng);
  } else {
    f_t_ = Mlp::create(store, prefix + ".f_t", spec.feature_dim, h, spec.cluster_depth, Activation::tanh, rng);
    tag_weight_ = store.add_uniform(prefix + ".tag_weight", {p, f_t_.out_dim(spec.feature_dim)}, 0.5, rng);
    tag_bias_ = store.add_zeros(prefix + ".tag_bias", {p});
  }
}

Var CompoundPcfg::check_z(Binder& bind, Var z) const {
  if (!z.valid()) {
    if (spec_.z_dim != 0) throw DimensionError("compound pcfg: missing z of dimension " + std::to_string(spec_.z_dim));
    return bind.tape().constant(Tensor::zeros({0}));
  }
  if (z.value().rank() != 1 || z.value().dim(0) != spec_.z_dim) {
    throw DimensionError("compound pcfg: z", z.shape(), Shape{spec_.z_dim});
  }
  return z;
}

namespace {

// [embeds ; z] row-wise for an [k, d] embedding matrix.
Var with_latent(Var embeds, Var z) {
  const std::size_t k = embeds.value().dim(0);
  if (z.size() == 0) return embeds;
  std::vector<Var> rows(k, z);
  return ad::concat({embeds, ad::stack(rows)}, 1);
}

}  // namespace

RuleVars CompoundPcfg::structural_rules(Binder& bind, Var z) const {
  z = check_z(bind, z);
  const std::size_t n = spec_.n_nonterminals, nt = spec_.n_symbols();
  RuleVars r;
  Var root_in = ad::concat({bind(start_embed_), z});
  r.root = ad::log_softmax(ad::matmul(bind(root_out_), f_s_(bind, root_in)), 0);
  Var scores = ad::matmul(with_latent(bind(nt_embed_), z), bind(binary_out_));  // [N, NT*NT]
  r.binary = ad::reshape(ad::log_softmax(scores, 1), {n, nt, nt});
  return r;
}

RuleVars CompoundPcfg::rule_probs_language(Binder& bind, Var z) const {
  if (spec_.modality != Modality::language) throw std::logic_error("rule_probs_language on a vision grammar");
  RuleVars r = structural_rules(bind, z);
  z = check_z(bind, z);
  Var hidden = f_t_(bind, with_latent(bind(pt_embed_), z));  // [P, h]
  r.terminal = ad::log_softmax(ad::matmul(hidden, bind(term_out_)), 1);
  return r;
}

Var CompoundPcfg::terminal_scores_vision(Binder& bind, Var features) const {
  if (spec_.modality != Modality::vision) throw std::logic_error("terminal_scores_vision on a language grammar");
  const Tensor& f = features.value();
  if (f.rank() != 2 || f.dim(0) == 0) throw DimensionError("terminal scores: empty part set " + shape_string(f.shape()));
  if (f.dim(1) != spec_.feature_dim) throw DimensionError("terminal scores", f.shape(), Shape{f.dim(0), spec_.feature_dim});
  Var scores = ad::affine(f_t_(bind, features), bind(tag_weight_), bind(tag_bias_));  // [parts, P]
  return ad::transpose(scores);
}

Var CompoundPcfg::vision_terminal_log_probs(Binder& bind, Var features, std::span<const std::size_t> lengths) const {
  const std::size_t parts = features.value().rank() == 2 ? features.value().dim(0) : 0;
  const std::size_t total = std::accumulate(lengths.begin(), lengths.end(), std::size_t{0});
  if (total != parts) {
    throw std::invalid_argument("vision rules: sequence lengths sum to " + std::to_string(total) + " but the batch has " +
                                std::to_string(parts) + " parts");
  }
  return ad::log_softmax(terminal_scores_vision(bind, features), 1);
}

RuleVars CompoundPcfg::rule_probs_vision(Binder& bind, Var z, Var batch_terminal) const {
  if (spec_.modality != Modality::vision) throw std::logic_error("rule_probs_vision on a language grammar");
  RuleVars r = structural_rules(bind, z);
  r.terminal = batch_terminal;
  return r;
}

RuleVars CompoundPcfg::rule_probs_vision(Binder& bind, Var z, Var features, std::span<const std::size_t> lengths) const {
  return rule_probs_vision(bind, z, vision_terminal_log_probs(bind, features, lengths));
}

Var CompoundPcfg::clustering_posterior(Binder& bind, Var features) const {
  return ad::transpose(ad::softmax(terminal_scores_vision(bind, features), 0));
}

}  // namespace vlg

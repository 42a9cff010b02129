#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "vlg/nn.hpp"

namespace vlg {

enum class Modality { language, vision };

std::string modality_name(Modality m);

/// Symbol inventories and network sizes of one modality's compound PCFG. Symbols
/// on the child axes of binary rules are ordered nonterminals first, then preterminals.
struct GrammarSpec {
  Modality modality = Modality::language;
  std::size_t n_nonterminals = 1;
  std::size_t n_preterminals = 1;
  std::size_t vocab_size = 0;       // language only
  std::size_t feature_dim = 0;      // vision only: width of the perception output
  std::size_t symbol_embed_dim = 32;
  std::size_t z_dim = 0;            // 0 gives a plain neural PCFG
  std::size_t hidden_dim = 64;      // width of f_s and f_t
  std::size_t mlp_depth = 2;        // layers in f_s and the language f_t
  std::size_t cluster_depth = 0;    // layers in the vision f_t; 0 is identity

  std::size_t n_symbols() const { return n_nonterminals + n_preterminals; }
  void validate() const;
};

/// Rule log-probabilities recorded on a tape.
///   root     [N]            log pi(S -> A)
///   binary   [N, NT, NT]    log pi(A -> B C)
///   terminal [P, K]         log pi(T -> x); K is the vocabulary (language) or the
///                           parts of the current batch (vision)
struct RuleVars {
  ad::Var root;
  ad::Var binary;
  ad::Var terminal;
};

/// Plain-value rule log-probabilities, same layout as RuleVars.
struct RuleProbs {
  std::size_t n_nonterminals = 0;
  std::size_t n_preterminals = 0;
  Tensor root;
  Tensor binary;
  Tensor terminal;

  std::size_t n_symbols() const { return n_nonterminals + n_preterminals; }
  double binary_at(std::size_t a, std::size_t b, std::size_t c) const {
    const std::size_t nt = n_symbols();
    return binary[(a * nt + b) * nt + c];
  }
  /// [n, P] emission log-probs for a sequence of terminal column indices.
  Tensor emissions(std::span<const std::size_t> columns) const;
};

RuleProbs rule_values(const RuleVars& vars, std::size_t n_nonterminals, std::size_t n_preterminals);

/// All learnable parameters of one modality's compound PCFG and the maps from
/// (parameters, z) to rule probabilities.
class CompoundPcfg {
 public:
  CompoundPcfg() = default;
  CompoundPcfg(const GrammarSpec& spec, ParamStore& store, const std::string& prefix, Rng& rng);

  const GrammarSpec& spec() const { return spec_; }

  /// Start and binary rules from z; `terminal` is left unset.
  RuleVars structural_rules(Binder& bind, ad::Var z) const;

  /// Language: all three distributions, terminals normalized over the vocabulary.
  RuleVars rule_probs_language(Binder& bind, ad::Var z) const;

  /// Raw scores s(T, v_i) = u_T . f_t(psi(v_i)) + b_T as a [P, parts] matrix.
  ad::Var terminal_scores_vision(Binder& bind, ad::Var features) const;

  /// Per-tag softmax over all parts of the batch: [P, parts]. `lengths` are the part
  /// counts of the batch's sequences and must sum to the number of feature rows.
  ad::Var vision_terminal_log_probs(Binder& bind, ad::Var features, std::span<const std::size_t> lengths) const;

  /// Vision rules for one instance, reusing the batch terminal distribution.
  RuleVars rule_probs_vision(Binder& bind, ad::Var z, ad::Var batch_terminal) const;
  RuleVars rule_probs_vision(Binder& bind, ad::Var z, ad::Var features, std::span<const std::size_t> lengths) const;

  /// p(T | v_i) as a [parts, P] matrix: softmax of the scores over tags.
  ad::Var clustering_posterior(Binder& bind, ad::Var features) const;

  /// Vision clustering head parameters, exposed for warm starts.
  ParamId tag_weight() const { return tag_weight_; }
  ParamId tag_bias() const { return tag_bias_; }
  const Mlp& cluster_net() const { return f_t_; }

 private:
  ad::Var check_z(Binder& bind, ad::Var z) const;

  GrammarSpec spec_;
  ParamId start_embed_ = 0;      // w_S [d]
  ParamId nt_embed_ = 0;         // w_A [N, d]
  ParamId pt_embed_ = 0;         // w_T [P, d] (language)
  ParamId root_out_ = 0;         // u_A [N, h]
  ParamId binary_out_ = 0;       // u_BC [d + z, NT*NT]
  ParamId term_out_ = 0;         // u_w [h, V] (language)
  ParamId tag_weight_ = 0;       // u_T [P, feat'] (vision)
  ParamId tag_bias_ = 0;         // b_T [P] (vision)
  Mlp f_s_;
  Mlp f_t_;
};

}  // namespace vlg

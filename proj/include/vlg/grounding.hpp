#pragma once

#include <cstddef>

#include "vlg/tape.hpp"

namespace vlg {

struct AlignmentOptions {
  bool include_singletons = false;  // length-1 spans enter the double sum with marginal 1
  bool normalize = true;            // divide by the product of the two marginal totals
};

/// Pairwise cosine similarities of the rows of a [m, d] and b [n, d]. Rows with zero
/// norm give cosine 0; their count is added to `zero_norm` when non-null.
ad::Var cosine_matrix(ad::Var a, ad::Var b, std::size_t* zero_norm = nullptr);

/// Marginals over all_spans(n, 2) extended to all_spans(n, 1) order, singletons fixed at 1.
ad::Var with_singleton_marginals(ad::Var marginals, std::size_t n);

/// S(w, v) = sum_jk p(w_j) p(v_k) cos(w_j, v_k), optionally divided by
/// (m-1)(n-1), or (2m-1)(2n-1) with singletons. Marginals and embeddings must use the
/// same span order; `m`, `n` are the sequence lengths.
ad::Var alignment_score(ad::Var lang_marginals, ad::Var vision_marginals, ad::Var cosines, std::size_t m,
                        std::size_t n, const AlignmentOptions& options = {});

/// Hinge loss over a [B, B] score matrix S[i][j] = S(w_i, v_j), both directions,
/// averaged by 2B(B-1). B >= 2.
ad::Var contrastive_loss(ad::Var scores, double margin = 0.2);

struct LossWeights {
  double language = 1.0;
  double vision = 1.0;
  double contrastive = 1.0;
};

struct LossBundle {
  ad::Var language;
  ad::Var vision;
  ad::Var contrastive;
  ad::Var total;
  LossWeights weights;
};

/// total = w_lang * language + w_vis * vision + w_con * contrastive. Any term may be
/// invalid (absent) and then counts as zero; at least one must be present.
LossBundle total_loss(const LossWeights& weights, ad::Var language, ad::Var vision, ad::Var contrastive);

}  // namespace vlg

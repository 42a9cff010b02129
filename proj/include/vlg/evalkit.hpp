#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "vlg/tree.hpp"

namespace vlg {

/// Unlabeled bracketing of one sequence.
struct BracketSet {
  std::size_t length = 0;
  std::vector<Bracket> spans;
};

/// Spans that count for F1: length >= 2 and not the whole sequence; deduplicated and sorted.
std::vector<Bracket> scored_spans(const BracketSet& s);

enum class F1Mode { corpus, instance };

/// Unlabeled span F1. Corpus mode pools counts; instance mode averages per-instance
/// F1 with empty-versus-empty scoring 1.
double span_f1(std::span<const BracketSet> pred, std::span<const BracketSet> gold, F1Mode mode);

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};
PrecisionRecall span_prf(const BracketSet& pred, const BracketSet& gold);

BracketSet left_branching_brackets(std::size_t n);
BracketSet right_branching_brackets(std::size_t n);
std::vector<BracketSet> branching_baseline(std::span<const std::size_t> lengths, bool right);

/// Maximum-weight assignment of rows to columns of a [rows x cols] matrix (rows <= cols
/// not required). Returns, per row, the assigned column or -1.
std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weights);

/// Accuracy after the best one-to-one matching of predicted to gold clusters.
/// Predicted ids must be below `n_clusters`.
double clustering_accuracy(std::span<const std::size_t> pred, std::span<const std::size_t> gold, std::size_t n_clusters);

struct RetrievalResult {
  double ir = 0.0;  // sentence query, vision candidates
  double tr = 0.0;  // vision query, sentence candidates
  std::size_t trials = 0;
  std::size_t ir_positive_first = 0;  // trials whose positive sat at candidate 0
  std::size_t tr_positive_first = 0;
};

/// score(i, j) = alignment of sentence i with object j.
using PairScorer = std::function<double(std::size_t, std::size_t)>;

/// 1-of-k retrieval: each trial draws a query, k-1 distinct distractors and a random
/// slot for the positive; argmax wins with ties to the lowest slot.
RetrievalResult retrieval_eval(std::size_t n_instances, const PairScorer& score, std::size_t k, std::size_t trials,
                               std::uint64_t seed);

struct ParseScores {
  double corpus_f1 = 0.0;
  double instance_f1 = 0.0;
};

ParseScores parse_scores(std::span<const BracketSet> pred, std::span<const BracketSet> gold);

struct ModalityReport {
  ParseScores model;
  ParseScores left_branching;
  ParseScores right_branching;
  std::map<std::string, ParseScores> per_category;
};

struct EvalReport {
  std::size_t instances = 0;
  ModalityReport language;
  ModalityReport vision;
  double clustering_accuracy = 0.0;
  double retrieval_ir = 0.0;
  double retrieval_tr = 0.0;
};

/// "prefix.language.instance_f1: 0.5" lines, sorted by key.
std::string report_text(const std::map<std::string, EvalReport>& sections);
std::string report_json(const std::map<std::string, EvalReport>& sections);

}  // namespace vlg

#pragma once

#include <compare>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace vlg {

/// Half-open interval [start, end) over sequence positions.
struct Span {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t length() const { return end - start; }
  auto operator<=>(const Span&) const = default;
};

using Bracket = std::pair<std::size_t, std::size_t>;

/// Every span [a, b) with b - a >= min_length over a sequence of length n, ordered by (a, b).
std::vector<Span> all_spans(std::size_t n, std::size_t min_length = 2);

/// Binary constituency tree. Leaves are single positions (preterminal ids), internal
/// nodes carry nonterminal ids; -1 marks an unlabeled node. Node 0 is the root.
class ParseTree {
 public:
  struct Node {
    Span span;
    int symbol = -1;
    int left = -1;
    int right = -1;
    bool is_leaf() const { return left < 0; }
  };

  ParseTree() = default;

  /// Builds the tree whose internal spans (length >= 2, root included) are `brackets`.
  /// Length-1 spans in the input are ignored. Throws std::invalid_argument if the
  /// brackets do not describe a full binary tree over n leaves.
  static ParseTree from_brackets(std::size_t n, std::vector<Bracket> brackets);
  static ParseTree left_branching(std::size_t n);
  static ParseTree right_branching(std::size_t n);

  /// Low-level constructor; validates the structure.
  explicit ParseTree(std::vector<Node> nodes);

  std::size_t length() const { return nodes_.empty() ? 0 : nodes_[0].span.end; }
  const std::vector<Node>& nodes() const { return nodes_; }
  const Node& root() const { return nodes_.at(0); }

  /// Spans of internal nodes (n - 1 of them, root included), ordered by (start, end).
  std::vector<Span> internal_spans() const;
  std::vector<Bracket> brackets() const;

  /// "(0,2) (0,3) ..." over internal spans.
  std::string to_span_list() const;
  /// S-expression; leaves print `leaf_text(position)`, labeled nodes print N<id>/T<id>.
  std::string to_sexpr(const std::function<std::string(std::size_t)>& leaf_text = {}) const;

  void validate() const;

 private:
  std::vector<Node> nodes_;
};

}  // namespace vlg

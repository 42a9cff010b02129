#include "vlg/tree.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>

namespace vlg {

std::vector<Span> all_spans(std::size_t n, std::size_t min_length) {
  std::vector<Span> spans;
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = a + std::max<std::size_t>(min_length, 1); b <= n; ++b) spans.push_back({a, b});
  return spans;
}

namespace {

int build(std::vector<ParseTree::Node>& nodes, const std::set<Span>& internal, std::set<Span>& used, Span span) {
  const int id = static_cast<int>(nodes.size());
  nodes.push_back({span, -1, -1, -1});
  if (span.length() == 1) return id;
  if (!internal.count(span)) {
    throw std::invalid_argument("parse tree: span (" + std::to_string(span.start) + "," + std::to_string(span.end) +
                                ") is not a constituent");
  }
  used.insert(span);
  // Left child is the longest bracket starting at span.start, or a single position.
  std::size_t split = span.start + 1;
  for (auto it = internal.lower_bound(Span{span.start, span.start + 2});
       it != internal.end() && it->start == span.start && it->end < span.end; ++it) {
    split = it->end;
  }
  const int left = build(nodes, internal, used, {span.start, split});
  const int right = build(nodes, internal, used, {split, span.end});
  nodes[id].left = left;
  nodes[id].right = right;
  return id;
}

}  // namespace

ParseTree ParseTree::from_brackets(std::size_t n, std::vector<Bracket> brackets) {
  if (n == 0) throw std::invalid_argument("parse tree: empty sequence");
  std::set<Span> internal;
  for (const auto& [a, b] : brackets) {
    if (a >= b || b > n) {
      throw std::invalid_argument("parse tree: bad span (" + std::to_string(a) + "," + std::to_string(b) + ") for length " +
                                  std::to_string(n));
    }
    if (b - a >= 2) internal.insert({a, b});
  }
  if (n >= 2 && !internal.count({0, n})) throw std::invalid_argument("parse tree: missing root span");
  std::vector<Node> nodes;
  std::set<Span> used;
  build(nodes, internal, used, {0, n});
  if (used.size() != internal.size()) throw std::invalid_argument("parse tree: crossing or unused brackets");
  return ParseTree(std::move(nodes));
}

ParseTree ParseTree::left_branching(std::size_t n) {
  std::vector<Bracket> b;
  for (std::size_t e = 2; e <= n; ++e) b.emplace_back(0, e);
  return from_brackets(n, std::move(b));
}

ParseTree ParseTree::right_branching(std::size_t n) {
  std::vector<Bracket> b;
  for (std::size_t s = 0; s + 2 <= n; ++s) b.emplace_back(s, n);
  return from_brackets(n, std::move(b));
}

ParseTree::ParseTree(std::vector<Node> nodes) : nodes_(std::move(nodes)) { validate(); }

void ParseTree::validate() const {
  if (nodes_.empty()) throw std::invalid_argument("parse tree: no nodes");
  const std::size_t n = nodes_[0].span.end;
  if (nodes_[0].span.start != 0 || n == 0) throw std::invalid_argument("parse tree: root must cover [0, n)");
  std::size_t leaves = 0, internal = 0;
  std::vector<bool> seen(nodes_.size(), false);
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size() || seen[id]) {
      throw std::invalid_argument("parse tree: malformed child links");
    }
    seen[id] = true;
    const Node& node = nodes_[id];
    if (node.is_leaf()) {
      if (node.span.length() != 1 || node.right >= 0) throw std::invalid_argument("parse tree: leaf must cover one position");
      ++leaves;
      continue;
    }
    ++internal;
    if (node.right < 0) throw std::invalid_argument("parse tree: internal node needs two children");
    const Span l = nodes_.at(node.left).span, r = nodes_.at(node.right).span;
    if (l.start != node.span.start || l.end != r.start || r.end != node.span.end || l.length() == 0 || r.length() == 0) {
      throw std::invalid_argument("parse tree: children do not partition their parent");
    }
    stack.push_back(node.right);
    stack.push_back(node.left);
  }
  if (leaves != n || internal != n - 1 || leaves + internal != nodes_.size()) {
    throw std::invalid_argument("parse tree: expected n leaves and n - 1 internal nodes");
  }
}

std::vector<Span> ParseTree::internal_spans() const {
  std::vector<Span> out;
  for (const Node& node : nodes_)
    if (!node.is_leaf()) out.push_back(node.span);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<Bracket> ParseTree::brackets() const {
  std::vector<Bracket> out;
  for (const Span& s : internal_spans()) out.emplace_back(s.start, s.end);
  return out;
}

std::string ParseTree::to_span_list() const {
  std::ostringstream out;
  bool first = true;
  for (const Span& s : internal_spans()) {
    if (!first) out << ' ';
    out << '(' << s.start << ',' << s.end << ')';
    first = false;
  }
  return out.str();
}

std::string ParseTree::to_sexpr(const std::function<std::string(std::size_t)>& leaf_text) const {
  std::ostringstream out;
  std::function<void(int)> emit = [&](int id) {
    const Node& node = nodes_[id];
    const std::string text = leaf_text ? leaf_text(node.span.start) : std::to_string(node.span.start);
    if (node.is_leaf()) {
      if (node.symbol >= 0) out << "(T" << node.symbol << ' ' << text << ')';
      else out << text;
      return;
    }
    out << '(';
    if (node.symbol >= 0) out << 'N' << node.symbol << ' ';
    emit(node.left);
    out << ' ';
    emit(node.right);
    out << ')';
  };
  emit(0);
  return out.str();
}

}  // namespace vlg

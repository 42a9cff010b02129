#include "vlg/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace vlg {

std::vector<Bracket> scored_spans(const BracketSet& s) {
  std::vector<Bracket> out;
  for (const auto& [a, b] : s.spans) {
    if (b > s.length || a >= b) throw std::invalid_argument("span f1: span outside the sequence");
    if (b - a >= 2 && !(a == 0 && b == s.length)) out.emplace_back(a, b);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

namespace {

struct Counts {
  std::size_t tp = 0;
  std::size_t pred = 0;
  std::size_t gold = 0;
};

Counts count(const BracketSet& pred, const BracketSet& gold) {
  if (pred.length != gold.length) throw std::invalid_argument("span f1: lengths differ within an instance");
  const auto p = scored_spans(pred), g = scored_spans(gold);
  std::vector<Bracket> common;
  std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::back_inserter(common));
  return {common.size(), p.size(), g.size()};
}

double f1_of(const Counts& c) {
  if (c.pred + c.gold == 0) return 1.0;
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(c.pred + c.gold);
}

}  // namespace

double span_f1(std::span<const BracketSet> pred, std::span<const BracketSet> gold, F1Mode mode) {
  if (pred.size() != gold.size()) {
    throw std::invalid_argument("span f1: " + std::to_string(pred.size()) + " predictions for " +
                                std::to_string(gold.size()) + " gold trees");
  }
  if (pred.empty()) throw std::invalid_argument("span f1: no instances");
  Counts pooled;
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Counts c = count(pred[i], gold[i]);
    pooled.tp += c.tp;
    pooled.pred += c.pred;
    pooled.gold += c.gold;
    sum += f1_of(c);
  }
  return mode == F1Mode::corpus ? f1_of(pooled) : sum / static_cast<double>(pred.size());
}

PrecisionRecall span_prf(const BracketSet& pred, const BracketSet& gold) {
  const Counts c = count(pred, gold);
  PrecisionRecall r;
  r.precision = c.pred ? static_cast<double>(c.tp) / static_cast<double>(c.pred) : 1.0;
  r.recall = c.gold ? static_cast<double>(c.tp) / static_cast<double>(c.gold) : 1.0;
  r.f1 = f1_of(c);
  return r;
}

BracketSet left_branching_brackets(std::size_t n) { return {n, ParseTree::left_branching(n).brackets()}; }
BracketSet right_branching_brackets(std::size_t n) { return {n, ParseTree::right_branching(n).brackets()}; }

std::vector<BracketSet> branching_baseline(std::span<const std::size_t> lengths, bool right) {
  std::vector<BracketSet> out;
  for (std::size_t n : lengths) out.push_back(right ? right_branching_brackets(n) : left_branching_brackets(n));
  return out;
}

std::vector<int> max_weight_assignment(const std::vector<std::vector<double>>& weights) {
  const std::size_t rows = weights.size();
  const std::size_t cols = rows ? weights[0].size() : 0;
  const std::size_t n = std::max(rows, cols);
  // Hungarian method on the square cost matrix -w, 1-based potentials
  const auto cost = [&](std::size_t i, std::size_t j) {
    return i < rows && j < cols ? -weights[i][j] : 0.0;
  };
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<std::size_t> match(n + 1, 0), way(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(n + 1, inf);
    std::vector<bool> used(n + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> assignment(rows, -1);
  for (std::size_t j = 1; j <= n; ++j) {
    const std::size_t i = match[j];
    if (i >= 1 && i <= rows && j <= cols) assignment[i - 1] = static_cast<int>(j - 1);
  }
  return assignment;
}

double clustering_accuracy(std::span<const std::size_t> pred, std::span<const std::size_t> gold, std::size_t n_clusters) {
  if (pred.size() != gold.size()) throw std::invalid_argument("clustering accuracy: length mismatch");
  if (pred.empty()) throw std::invalid_argument("clustering accuracy: no parts");
  std::size_t n_gold = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= n_clusters) {
      throw std::invalid_argument("clustering accuracy: predicted cluster " + std::to_string(pred[i]) +
                                  " exceeds the " + std::to_string(n_clusters) + " allowed");
    }
    n_gold = std::max(n_gold, gold[i] + 1);
  }
  std::vector<std::vector<double>> confusion(n_clusters, std::vector<double>(n_gold, 0.0));
  for (std::size_t i = 0; i < pred.size(); ++i) confusion[pred[i]][gold[i]] += 1.0;
  const std::vector<int> assignment = max_weight_assignment(confusion);
  double hits = 0.0;
  for (std::size_t c = 0; c < n_clusters; ++c)
    if (assignment[c] >= 0) hits += confusion[c][static_cast<std::size_t>(assignment[c])];
  return hits / static_cast<double>(pred.size());
}

RetrievalResult retrieval_eval(std::size_t n_instances, const PairScorer& score, std::size_t k, std::size_t trials,
                               std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("retrieval: need at least two candidates");
  if (n_instances < k) {
    throw std::invalid_argument("retrieval: " + std::to_string(n_instances) + " instances for 1-of-" + std::to_string(k));
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n_instances - 1), slot(0, k - 1);
  RetrievalResult r;
  r.trials = trials;
  std::size_t ir_hits = 0, tr_hits = 0;
  std::vector<std::size_t> candidates(k);
  for (int direction = 0; direction < 2; ++direction) {
    for (std::size_t t = 0; t < trials; ++t) {
      const std::size_t query = pick(rng);
      std::vector<std::size_t> distractors;
      while (distractors.size() + 1 < k) {
        const std::size_t d = pick(rng);
        if (d != query && std::find(distractors.begin(), distractors.end(), d) == distractors.end()) distractors.push_back(d);
      }
      const std::size_t pos = slot(rng);
      for (std::size_t c = 0, di = 0; c < k; ++c) candidates[c] = c == pos ? query : distractors[di++];
      std::size_t best = 0;
      double best_score = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < k; ++c) {
        const double s = direction == 0 ? score(query, candidates[c]) : score(candidates[c], query);
        if (s > best_score) {
          best_score = s;
          best = c;
        }
      }
      if (direction == 0) {
        ir_hits += best == pos;
        r.ir_positive_first += pos == 0;
      } else {
        tr_hits += best == pos;
        r.tr_positive_first += pos == 0;
      }
    }
  }
  if (trials) {
    r.ir = static_cast<double>(ir_hits) / static_cast<double>(trials);
    r.tr = static_cast<double>(tr_hits) / static_cast<double>(trials);
  }
  return r;
}

ParseScores parse_scores(std::span<const BracketSet> pred, std::span<const BracketSet> gold) {
  return {span_f1(pred, gold, F1Mode::corpus), span_f1(pred, gold, F1Mode::instance)};
}

namespace {

void flatten(const std::string& prefix, const ParseScores& s, std::map<std::string, double>& out) {
  out[prefix + ".corpus_f1"] = s.corpus_f1;
  out[prefix + ".instance_f1"] = s.instance_f1;
}

std::map<std::string, double> flatten(const std::string& section, const EvalReport& r) {
  std::map<std::string, double> out;
  out[section + ".instances"] = static_cast<double>(r.instances);
  for (const auto& [name, m] : {std::pair<std::string, const ModalityReport*>{"language", &r.language},
                                std::pair<std::string, const ModalityReport*>{"vision", &r.vision}}) {
    const std::string p = section + "." + name;
    flatten(p + ".model", m->model, out);
    flatten(p + ".left_branching", m->left_branching, out);
    flatten(p + ".right_branching", m->right_branching, out);
    for (const auto& [cat, s] : m->per_category) flatten(p + ".category." + cat, s, out);
  }
  out[section + ".clustering_accuracy"] = r.clustering_accuracy;
  out[section + ".retrieval.ir"] = r.retrieval_ir;
  out[section + ".retrieval.tr"] = r.retrieval_tr;
  return out;
}

}  // namespace

std::string report_text(const std::map<std::string, EvalReport>& sections) {
  std::string out;
  for (const auto& [name, report] : sections) {
    for (const auto& [key, value] : flatten(name, report)) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "%.6f", value);
      out += key + ": " + buf + "\n";
    }
  }
  return out;
}

std::string report_json(const std::map<std::string, EvalReport>& sections) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  const auto scores = [](const ParseScores& s) {
    return nlohmann::ordered_json{{"corpus_f1", s.corpus_f1}, {"instance_f1", s.instance_f1}};
  };
  const auto modality = [&](const ModalityReport& m) {
    nlohmann::ordered_json o{{"model", scores(m.model)},
                             {"left_branching", scores(m.left_branching)},
                             {"right_branching", scores(m.right_branching)}};
    nlohmann::ordered_json cats = nlohmann::ordered_json::object();
    for (const auto& [cat, s] : m.per_category) cats[cat] = scores(s);
    o["per_category"] = cats;
    return o;
  };
  for (const auto& [name, r] : sections) {
    j[name] = {{"instances", r.instances},
               {"language", modality(r.language)},
               {"vision", modality(r.vision)},
               {"clustering_accuracy", r.clustering_accuracy},
               {"retrieval", {{"ir", r.retrieval_ir}, {"tr", r.retrieval_tr}}}};
  }
  return j.dump(2) + "\n";
}

}  // namespace vlg

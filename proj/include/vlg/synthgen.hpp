#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "vlg/nn.hpp"
#include "vlg/tree.hpp"

namespace vlg {

/// One binary expansion of a ground-truth nonterminal. A child is a part tag when no
/// rules are registered for it.
struct Production {
  std::string left;
  std::string right;
  double prob = 1.0;
};

/// Explicit CNF grammar of one object category. Language is realized from the same
/// derivation: every internal node becomes (first (connective second)) with the two
/// children in either order and the connective picked by the head tag of the second;
/// runs of one part tag become (count (material (size plural))) with optional attributes.
struct GroundTruthGrammar {
  std::string category;
  std::string start;
  std::map<std::string, std::vector<Production>> rules;

  bool is_nonterminal(const std::string& symbol) const { return rules.count(symbol) != 0; }
  /// Throws std::invalid_argument unless every distribution sums to 1 and every symbol resolves.
  void validate(const std::vector<std::string>& part_tags) const;
};

struct PartTag {
  std::string name;
  std::string singular;
  std::string plural;
  std::vector<std::string> relations;  // connectives introducing a phrase headed by this tag; "and" if empty
};

struct GeneratorOptions {
  std::size_t feature_dim = 16;
  double separation = 4.0;        // tag-mean distance to the nearest-mean boundary, in sigmas
  double noise = 1.0;             // sigma of the isotropic feature noise
  double material_scale = 1.5;    // material code magnitude, in sigmas
  double size_scale = 1.0;        // size attribute magnitude, in sigmas
  double size_prob = 0.7;         // chance a part phrase carries a size word
  double material_prob = 0.8;     // chance a part phrase names the object material
  double swap_prob = 0.0;         // chance a function word is replaced by a same-class alternative
  double reorder_prob = 0.5;      // chance a phrase names its right child first
  double part_reorder_prob = 0.5; // chance a derivation node lays out its right child first
  std::size_t max_depth = 20;
};

/// Part tags, attribute words, category grammars and the shared vocabulary.
struct World {
  std::vector<PartTag> tags;
  std::vector<std::string> materials;
  std::vector<std::string> sizes;          // sizes[0] is small, sizes[1] is big
  std::vector<std::string> determiners;
  std::map<std::size_t, std::string> count_words;
  std::vector<GroundTruthGrammar> grammars;
  std::vector<std::string> vocabulary;
  GeneratorOptions options;

  /// Fills `vocabulary` from the word lists and connectives, sorted and deduplicated.
  void build_vocabulary();
  std::size_t word_id(const std::string& word) const;
  std::size_t tag_id(const std::string& name) const;
  const GroundTruthGrammar& grammar(const std::string& category) const;
  std::vector<std::string> categories() const;
  /// Feature-space layout: tag block, material block, size coordinate.
  std::size_t material_offset() const { return tags.size(); }
  std::size_t size_offset() const { return tags.size() + 2; }
  void validate() const;
};

/// Four categories (chair, table, bed, bag) over thirteen part tags.
World default_world(const GeneratorOptions& options = {});

struct PairedInstance {
  std::string id;
  std::string category;
  std::vector<std::size_t> tokens;
  std::vector<std::vector<double>> parts;
  std::vector<Bracket> gold_lang_tree;  // every constituent of length >= 2, root included
  std::vector<Bracket> gold_vis_tree;
  std::vector<std::size_t> gold_part_tags;
};

struct SampleStats {
  std::size_t resamples = 0;              // derivations rejected by the depth cap
  std::vector<std::size_t> rule_counts;   // per sampled instance: distinct binary rules plus distinct part tags
};

/// Draws one paired instance from `grammar`.
PairedInstance sample_instance(const World& world, const GroundTruthGrammar& grammar, Rng& rng,
                               SampleStats* stats = nullptr);

struct Corpus {
  std::vector<PairedInstance> train;
  std::vector<PairedInstance> test;
  SampleStats stats;
};

/// Round-robin over categories; held-out categories are absent from train and present in test.
/// Each instance uses its own seed derived from (seed, split, index).
Corpus generate_corpus(const World& world, long n_train, long n_test, std::uint64_t seed,
                       const std::vector<std::string>& holdout = {});

class DatasetError : public std::runtime_error {
 public:
  DatasetError(std::size_t line, const std::string& what);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// One JSON object per line; floats with 17 significant digits.
std::string format_instance(const PairedInstance& instance);
PairedInstance parse_instance(const std::string& line, std::size_t line_number);
void write_dataset(const std::string& path, const std::vector<PairedInstance>& instances);
std::vector<PairedInstance> read_dataset(const std::string& path);

void write_vocabulary(const std::string& path, const std::vector<std::string>& words);
std::vector<std::string> read_vocabulary(const std::string& path);

/// Writes train.jsonl, test.jsonl and vocab.txt under `dir`.
void write_corpus(const std::string& dir, const Corpus& corpus, const std::vector<std::string>& vocabulary);

/// Drops instances whose category is listed.
std::vector<PairedInstance> without_categories(const std::vector<PairedInstance>& instances,
                                               const std::vector<std::string>& categories);

}  // namespace vlg

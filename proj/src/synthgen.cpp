#include "vlg/synthgen.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

namespace vlg {

namespace {

constexpr double kProbTolerance = 1e-9;

struct DepthExceeded {};

struct DNode {
  std::string symbol;
  int left = -1;
  int right = -1;
  std::size_t start = 0;  // part span
  std::size_t end = 0;
  bool swapped = false;  // children laid out right-first
  bool leaf() const { return left < 0; }
};

struct Derivation {
  std::vector<DNode> nodes;  // node 0 is the root
  std::vector<std::string> leaves;
};

int expand(const GroundTruthGrammar& g, const std::string& symbol, std::size_t depth, std::size_t max_depth,
           double swap_prob, Rng& rng, Derivation& d) {
  if (depth > max_depth) throw DepthExceeded{};
  const int id = static_cast<int>(d.nodes.size());
  d.nodes.push_back({symbol});
  d.nodes[id].start = d.leaves.size();
  if (!g.is_nonterminal(symbol)) {
    d.leaves.push_back(symbol);
    d.nodes[id].end = d.leaves.size();
    return id;
  }
  const auto& options = g.rules.at(symbol);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double r = u(rng);
  std::size_t pick = options.size() - 1;
  for (std::size_t i = 0; i < options.size(); ++i) {
    if (r < options[i].prob) {
      pick = i;
      break;
    }
    r -= options[i].prob;
  }
  const Production& p = options[pick];
  std::bernoulli_distribution flip(swap_prob);
  const bool swapped = swap_prob > 0.0 && flip(rng);
  const int first = expand(g, swapped ? p.right : p.left, depth + 1, max_depth, swap_prob, rng, d);
  const int second = expand(g, swapped ? p.left : p.right, depth + 1, max_depth, swap_prob, rng, d);
  d.nodes[id].left = first;
  d.nodes[id].right = second;
  d.nodes[id].swapped = swapped;
  d.nodes[id].end = d.leaves.size();
  return id;
}

// Same tag on every leaf of a subtree with two or more leaves.
bool is_group(const Derivation& d, const DNode& n) {
  if (n.end - n.start < 2) return false;
  for (std::size_t i = n.start + 1; i < n.end; ++i)
    if (d.leaves[i] != d.leaves[n.start]) return false;
  return true;
}

// Materials sit evenly on the unit circle.
std::vector<double> material_code(std::size_t material, std::size_t count) {
  const double angle = 2.0 * std::acos(-1.0) * static_cast<double>(material) / static_cast<double>(count);
  return {std::cos(angle), std::sin(angle)};
}

struct Realizer {
  const World& world;
  const GroundTruthGrammar& grammar;
  const Derivation& d;
  const std::vector<int>& unit_size;      // per leaf: -1 none, 0 small, 1 big
  const std::vector<int>& unit_material;  // per leaf: -1 unnamed, else the object's material
  Rng& rng;
  std::vector<std::string> words;
  std::vector<Bracket> spans;

  std::string pick(const std::vector<std::string>& options, bool swappable) {
    std::uniform_int_distribution<std::size_t> idx(0, options.size() - 1);
    std::string word = options[0];
    if (options.size() > 1) word = options[idx(rng)];
    if (swappable && world.options.swap_prob > 0.0 && options.size() > 1) {
      std::bernoulli_distribution swap(world.options.swap_prob);
      if (swap(rng)) word = options[idx(rng)];
    }
    return word;
  }

  // Realizes a subtree; returns the tag of its first spoken unit.
  std::size_t phrase(int id) {
    const DNode& n = d.nodes[static_cast<std::size_t>(id)];
    const std::size_t begin = words.size();
    const int size = unit_size[n.start];
    if (n.leaf() || is_group(d, n)) {
      const std::size_t tag_id = world.tag_id(d.leaves[n.start]);
      const PartTag& tag = world.tags[tag_id];
      const std::size_t count = n.end - n.start;
      if (count == 1) {
        words.push_back(pick(world.determiners, true));
      } else {
        auto it = world.count_words.find(count);
        if (it == world.count_words.end()) throw std::logic_error("synthgen: no count word for " + std::to_string(count));
        words.push_back(it->second);
      }
      const int material = unit_material[n.start];
      if (material >= 0) words.push_back(world.materials[static_cast<std::size_t>(material)]);
      if (size >= 0) words.push_back(world.sizes[static_cast<std::size_t>(size)]);
      words.push_back(count == 1 ? tag.singular : tag.plural);
      for (std::size_t k = begin + 1; k + 1 < words.size(); ++k) spans.emplace_back(k, words.size());
      spans.emplace_back(begin, words.size());
      return tag_id;
    }
    std::bernoulli_distribution reorder(world.options.reorder_prob);
    const bool inverted = world.options.reorder_prob > 0.0 && reorder(rng);
    const int rule_left = n.swapped ? n.right : n.left;
    const int rule_right = n.swapped ? n.left : n.right;
    const std::size_t first = phrase(inverted ? rule_right : rule_left);
    // the connective is chosen by the phrase it introduces, so it goes in afterwards
    const std::size_t conn_at = words.size();
    const std::size_t inner = spans.size();
    const std::size_t head = phrase(inverted ? rule_left : rule_right);
    const auto& relations = world.tags[head].relations;
    words.insert(words.begin() + static_cast<std::ptrdiff_t>(conn_at),
                 relations.empty() ? std::string("and") : pick(relations, true));
    for (std::size_t k = inner; k < spans.size(); ++k) spans[k] = {spans[k].first + 1, spans[k].second + 1};
    spans.emplace_back(conn_at, words.size());
    spans.emplace_back(begin, words.size());
    return first;
  }
};

}  // namespace

void GroundTruthGrammar::validate(const std::vector<std::string>& part_tags) const {
  if (!is_nonterminal(start)) throw std::invalid_argument("grammar " + category + ": start symbol has no rules");
  for (const auto& [lhs, options] : rules) {
    if (options.empty()) throw std::invalid_argument("grammar " + category + ": " + lhs + " has no productions");
    double total = 0.0;
    for (const Production& p : options) {
      if (p.prob < 0.0) throw std::invalid_argument("grammar " + category + ": negative probability under " + lhs);
      total += p.prob;
      for (const std::string& child : {p.left, p.right}) {
        if (!is_nonterminal(child) && std::find(part_tags.begin(), part_tags.end(), child) == part_tags.end()) {
          throw std::invalid_argument("grammar " + category + ": unknown symbol " + child);
        }
      }
    }
    if (std::abs(total - 1.0) > kProbTolerance) {
      throw std::invalid_argument("grammar " + category + ": productions of " + lhs + " sum to " + std::to_string(total));
    }
  }
}

void World::build_vocabulary() {
  std::set<std::string> words(materials.begin(), materials.end());
  words.insert(sizes.begin(), sizes.end());
  words.insert(determiners.begin(), determiners.end());
  for (const auto& [count, word] : count_words) words.insert(word);
  for (const PartTag& t : tags) {
    words.insert(t.singular);
    words.insert(t.plural);
    words.insert(t.relations.begin(), t.relations.end());
  }
  words.insert("and");
  vocabulary.assign(words.begin(), words.end());
}

std::size_t World::word_id(const std::string& word) const {
  auto it = std::lower_bound(vocabulary.begin(), vocabulary.end(), word);
  if (it == vocabulary.end() || *it != word) throw std::out_of_range("world: word '" + word + "' not in vocabulary");
  return static_cast<std::size_t>(it - vocabulary.begin());
}

std::size_t World::tag_id(const std::string& name) const {
  for (std::size_t i = 0; i < tags.size(); ++i)
    if (tags[i].name == name) return i;
  throw std::out_of_range("world: unknown part tag '" + name + "'");
}

const GroundTruthGrammar& World::grammar(const std::string& category) const {
  for (const GroundTruthGrammar& g : grammars)
    if (g.category == category) return g;
  throw std::out_of_range("world: unknown category '" + category + "'");
}

std::vector<std::string> World::categories() const {
  std::vector<std::string> out;
  for (const GroundTruthGrammar& g : grammars) out.push_back(g.category);
  return out;
}

void World::validate() const {
  if (options.feature_dim < tags.size() + 3) {
    throw std::invalid_argument("world: feature_dim " + std::to_string(options.feature_dim) + " below " +
                                std::to_string(tags.size() + 3));
  }
  if (materials.empty() || sizes.size() != 2 || determiners.empty()) throw std::invalid_argument("world: word lists");
  std::vector<std::string> names;
  for (const PartTag& t : tags) names.push_back(t.name);
  for (const GroundTruthGrammar& g : grammars) g.validate(names);
}

World default_world(const GeneratorOptions& options) {
  World w;
  w.options = options;
  w.tags = {{"leg", "leg", "legs", {"on", "upon"}},
            {"seat", "seat", "seats", {"under", "below"}},
            {"back", "back", "backs", {"behind", "against"}},
            {"arm", "arm", "arms", {"with", "beside"}},
            {"top", "top", "tops", {"under", "beneath"}},
            {"drawer", "drawer", "drawers", {"with", "holding"}},
            {"headboard", "headboard", "headboards", {"facing", "near"}},
            {"mattress", "mattress", "mattresses", {"under", "supporting"}},
            {"frame", "frame", "frames", {"on", "over"}},
            {"body", "body", "bodies", {"with", "on"}},
            {"handle", "handle", "handles", {"with", "holding"}},
            {"pocket", "pocket", "pockets", {"with", "and"}},
            {"pillow", "pillow", "pillows", {"against", "by"}}};
  w.materials = {"wooden", "metal", "plastic", "leather", "glass"};
  w.sizes = {"small", "big"};
  w.determiners = {"a", "the"};
  w.count_words = {{2, "two"}, {3, "three"}, {4, "four"}};

  GroundTruthGrammar chair;
  chair.category = "chair";
  chair.start = "CHAIR";
  chair.rules["CHAIR"] = {{"C_UPPER", "C_BASE", 1.0}};
  chair.rules["C_UPPER"] = {{"back", "C_SEAT", 0.7}, {"back", "seat", 0.3}};
  chair.rules["C_SEAT"] = {{"ARMS", "seat", 1.0}};
  chair.rules["ARMS"] = {{"arm", "arm", 1.0}};
  chair.rules["C_BASE"] = {{"LEGS2", "LEGS2", 0.8}, {"leg", "LEGS2", 0.2}};
  chair.rules["LEGS2"] = {{"leg", "leg", 1.0}};

  GroundTruthGrammar table;
  table.category = "table";
  table.start = "TABLE";
  table.rules["TABLE"] = {{"top", "T_SUPPORT", 1.0}};
  table.rules["T_SUPPORT"] = {{"DRAWERS", "T_LEGS", 0.3}, {"frame", "T_LEGS", 0.7}};
  table.rules["DRAWERS"] = {{"drawer", "drawer", 1.0}};
  table.rules["T_LEGS"] = {{"LEGS2", "LEGS2", 1.0}};
  table.rules["LEGS2"] = {{"leg", "leg", 1.0}};

  GroundTruthGrammar bed;
  bed.category = "bed";
  bed.start = "BED";
  bed.rules["BED"] = {{"B_HEAD", "B_REST", 1.0}};
  bed.rules["B_HEAD"] = {{"headboard", "PILLOWS", 0.6}, {"headboard", "pillow", 0.4}};
  bed.rules["PILLOWS"] = {{"pillow", "pillow", 1.0}};
  bed.rules["B_REST"] = {{"B_SLEEP", "B_LEGS", 0.8}, {"B_SLEEP", "LEGS2", 0.2}};
  bed.rules["B_SLEEP"] = {{"mattress", "frame", 1.0}};
  bed.rules["B_LEGS"] = {{"LEGS2", "LEGS2", 1.0}};
  bed.rules["LEGS2"] = {{"leg", "leg", 1.0}};

  GroundTruthGrammar bag;
  bag.category = "bag";
  bag.start = "BAG";
  bag.rules["BAG"] = {{"body", "HANDLES", 0.6}, {"G_MAIN", "HANDLES", 0.4}};
  bag.rules["G_MAIN"] = {{"body", "POCKETS", 0.5}, {"body", "pocket", 0.5}};
  bag.rules["POCKETS"] = {{"pocket", "pocket", 1.0}};
  bag.rules["HANDLES"] = {{"handle", "handle", 1.0}};

  w.grammars = {chair, table, bed, bag};
  w.build_vocabulary();
  w.validate();
  return w;
}

PairedInstance sample_instance(const World& world, const GroundTruthGrammar& grammar, Rng& rng, SampleStats* stats) {
  const GeneratorOptions& opt = world.options;
  Derivation d;
  for (;;) {
    try {
      d = Derivation{};
      expand(grammar, grammar.start, 0, opt.max_depth, opt.part_reorder_prob, rng, d);
      break;
    } catch (const DepthExceeded&) {
      if (stats) ++stats->resamples;
    }
  }
  const std::size_t n_parts = d.leaves.size();
  if (n_parts < 2) throw std::logic_error("synthgen: derivation with fewer than two parts");

  PairedInstance inst;
  inst.category = grammar.category;

  // attributes per phrase unit: maximal single-tag groups, else single parts
  std::vector<int> unit_size(n_parts, -1), unit_material(n_parts, -1);
  std::bernoulli_distribution has_size(opt.size_prob), has_material(opt.material_prob);
  std::bernoulli_distribution big(0.5);
  std::uniform_int_distribution<int> pick_material(0, static_cast<int>(world.materials.size()) - 1);
  const int material = pick_material(rng);  // one per object, named by some phrases
  std::function<void(int)> assign = [&](int id) {
    const DNode& n = d.nodes[static_cast<std::size_t>(id)];
    if (n.leaf() || is_group(d, n)) {
      const int s = has_size(rng) ? (big(rng) ? 1 : 0) : -1;
      const int m = has_material(rng) ? material : -1;
      for (std::size_t i = n.start; i < n.end; ++i) {
        unit_size[i] = s;
        unit_material[i] = m;
      }
      return;
    }
    assign(n.left);
    assign(n.right);
  };
  assign(0);

  const std::vector<double> code = material_code(static_cast<std::size_t>(material), world.materials.size());
  std::normal_distribution<double> normal;
  const double mean_scale = std::sqrt(2.0) * opt.separation;
  for (std::size_t i = 0; i < n_parts; ++i) {
    const std::size_t tag = world.tag_id(d.leaves[i]);
    inst.gold_part_tags.push_back(tag);
    std::vector<double> f(opt.feature_dim, 0.0);
    f[tag] = mean_scale;
    for (std::size_t k = 0; k < 2; ++k) f[world.material_offset() + k] = opt.material_scale * code[k];
    if (unit_size[i] >= 0) f[world.size_offset()] = opt.size_scale * (unit_size[i] == 1 ? 1.0 : -1.0);
    for (double& v : f) v += opt.noise * normal(rng);
    inst.parts.push_back(std::move(f));
  }
  for (const DNode& n : d.nodes)
    if (!n.leaf()) inst.gold_vis_tree.emplace_back(n.start, n.end);
  std::sort(inst.gold_vis_tree.begin(), inst.gold_vis_tree.end());

  Realizer r{world, grammar, d, unit_size, unit_material, rng, {}, {}};
  r.phrase(0);
  for (const std::string& w : r.words) inst.tokens.push_back(world.word_id(w));
  inst.gold_lang_tree = r.spans;
  std::sort(inst.gold_lang_tree.begin(), inst.gold_lang_tree.end());

  if (stats) {
    std::set<std::string> used;
    for (const DNode& n : d.nodes) {
      if (n.leaf()) {
        used.insert("tag:" + n.symbol);
      } else {
        const std::string& a = d.nodes[static_cast<std::size_t>(n.left)].symbol;
        const std::string& b = d.nodes[static_cast<std::size_t>(n.right)].symbol;
        used.insert(n.symbol + "->" + (n.swapped ? b + " " + a : a + " " + b));
      }
    }
    stats->rule_counts.push_back(used.size());
  }
  return inst;
}

Corpus generate_corpus(const World& world, long n_train, long n_test, std::uint64_t seed,
                       const std::vector<std::string>& holdout) {
  if (n_train <= 0 || n_test <= 0) throw std::invalid_argument("generate_corpus: split sizes must be positive");
  const std::vector<std::string> all = world.categories();
  std::vector<std::string> seen;
  for (const std::string& c : all)
    if (std::find(holdout.begin(), holdout.end(), c) == holdout.end()) seen.push_back(c);
  for (const std::string& h : holdout) world.grammar(h);
  if (seen.empty()) throw std::invalid_argument("generate_corpus: every category is held out");

  Corpus corpus;
  const auto fill = [&](std::vector<PairedInstance>& out, long count, std::uint32_t split,
                        const std::vector<std::string>& cats, const char* prefix) {
    for (long i = 0; i < count; ++i) {
      std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), split,
                        static_cast<std::uint32_t>(i)};
      Rng rng(seq);
      const std::string& cat = cats[static_cast<std::size_t>(i) % cats.size()];
      PairedInstance inst = sample_instance(world, world.grammar(cat), rng, &corpus.stats);
      char id[32];
      std::snprintf(id, sizeof id, "%s-%06ld", prefix, i);
      inst.id = id;
      out.push_back(std::move(inst));
    }
  };
  fill(corpus.train, n_train, 0, seen, "train");
  fill(corpus.test, n_test, 1, all, "test");
  return corpus;
}

// ---- dataset files --------------------------------------------------------

DatasetError::DatasetError(std::size_t line, const std::string& what)
    : std::runtime_error("dataset line " + std::to_string(line) + ": " + what), line_(line) {}

namespace {

std::string json_string(const std::string& s) { return nlohmann::json(s).dump(); }

void append_double(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

template <class T>
void append_list(std::string& out, const std::vector<T>& values) {
  out += '[';
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(values[i]);
  }
  out += ']';
}

void append_brackets(std::string& out, const std::vector<Bracket>& brackets) {
  out += '[';
  for (std::size_t i = 0; i < brackets.size(); ++i) {
    if (i) out += ',';
    out += '[' + std::to_string(brackets[i].first) + ',' + std::to_string(brackets[i].second) + ']';
  }
  out += ']';
}

const nlohmann::json& field(const nlohmann::json& j, const char* name, std::size_t line) {
  auto it = j.find(name);
  if (it == j.end()) throw DatasetError(line, std::string("missing field '") + name + "'");
  return *it;
}

std::vector<std::size_t> index_list(const nlohmann::json& j, const char* name, std::size_t line) {
  if (!j.is_array()) throw DatasetError(line, std::string("field '") + name + "' is not a list");
  std::vector<std::size_t> out;
  for (const auto& v : j) {
    if (!v.is_number_unsigned()) throw DatasetError(line, std::string("field '") + name + "' holds a non-index value");
    out.push_back(v.get<std::size_t>());
  }
  return out;
}

std::vector<Bracket> bracket_list(const nlohmann::json& j, const char* name, std::size_t line) {
  if (!j.is_array()) throw DatasetError(line, std::string("field '") + name + "' is not a list");
  std::vector<Bracket> out;
  for (const auto& pair : j) {
    const auto ab = index_list(pair, name, line);
    if (ab.size() != 2 || ab[0] >= ab[1]) throw DatasetError(line, std::string("field '") + name + "' has a bad span");
    out.emplace_back(ab[0], ab[1]);
  }
  return out;
}

}  // namespace

std::string format_instance(const PairedInstance& inst) {
  std::string out = "{\"id\":" + json_string(inst.id) + ",\"category\":" + json_string(inst.category) + ",\"tokens\":";
  append_list(out, inst.tokens);
  out += ",\"parts\":[";
  for (std::size_t i = 0; i < inst.parts.size(); ++i) {
    if (i) out += ',';
    out += '[';
    for (std::size_t k = 0; k < inst.parts[i].size(); ++k) {
      if (k) out += ',';
      append_double(out, inst.parts[i][k]);
    }
    out += ']';
  }
  out += "],\"gold_lang_tree\":";
  append_brackets(out, inst.gold_lang_tree);
  out += ",\"gold_vis_tree\":";
  append_brackets(out, inst.gold_vis_tree);
  out += ",\"gold_part_tags\":";
  append_list(out, inst.gold_part_tags);
  out += '}';
  return out;
}

PairedInstance parse_instance(const std::string& line, std::size_t line_number) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw DatasetError(line_number, std::string("malformed record: ") + e.what());
  }
  if (!j.is_object()) throw DatasetError(line_number, "record is not an object");
  PairedInstance inst;
  const auto& id = field(j, "id", line_number);
  const auto& cat = field(j, "category", line_number);
  if (!id.is_string() || !cat.is_string()) throw DatasetError(line_number, "id and category must be strings");
  inst.id = id.get<std::string>();
  inst.category = cat.get<std::string>();
  inst.tokens = index_list(field(j, "tokens", line_number), "tokens", line_number);
  const auto& parts = field(j, "parts", line_number);
  if (!parts.is_array()) throw DatasetError(line_number, "field 'parts' is not a list");
  for (const auto& p : parts) {
    if (!p.is_array()) throw DatasetError(line_number, "field 'parts' holds a non-list");
    std::vector<double> f;
    for (const auto& v : p) {
      if (!v.is_number()) throw DatasetError(line_number, "field 'parts' holds a non-number");
      f.push_back(v.get<double>());
    }
    inst.parts.push_back(std::move(f));
  }
  inst.gold_lang_tree = bracket_list(field(j, "gold_lang_tree", line_number), "gold_lang_tree", line_number);
  inst.gold_vis_tree = bracket_list(field(j, "gold_vis_tree", line_number), "gold_vis_tree", line_number);
  inst.gold_part_tags = index_list(field(j, "gold_part_tags", line_number), "gold_part_tags", line_number);
  if (inst.tokens.size() < 2 || inst.parts.size() < 2) throw DatasetError(line_number, "sequences need length >= 2");
  if (inst.gold_part_tags.size() != inst.parts.size()) throw DatasetError(line_number, "one gold tag per part required");
  return inst;
}

namespace {

void write_atomic(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp);
    out << content;
    if (!out) throw std::runtime_error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

void write_dataset(const std::string& path, const std::vector<PairedInstance>& instances) {
  std::string content;
  for (const PairedInstance& inst : instances) content += format_instance(inst) + '\n';
  write_atomic(path, content);
}

std::vector<PairedInstance> read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset " + path);
  std::vector<PairedInstance> out;
  std::string line;
  for (std::size_t number = 1; std::getline(in, line); ++number) {
    if (line.empty()) continue;
    out.push_back(parse_instance(line, number));
  }
  return out;
}

void write_vocabulary(const std::string& path, const std::vector<std::string>& words) {
  std::string content;
  for (const std::string& w : words) content += w + '\n';
  write_atomic(path, content);
}

std::vector<std::string> read_vocabulary(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary " + path);
  std::vector<std::string> words;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) words.push_back(line);
  return words;
}

void write_corpus(const std::string& dir, const Corpus& corpus, const std::vector<std::string>& vocabulary) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  write_dataset((base / "train.jsonl").string(), corpus.train);
  write_dataset((base / "test.jsonl").string(), corpus.test);
  write_vocabulary((base / "vocab.txt").string(), vocabulary);
}

std::vector<PairedInstance> without_categories(const std::vector<PairedInstance>& instances,
                                               const std::vector<std::string>& categories) {
  std::vector<PairedInstance> out;
  for (const PairedInstance& inst : instances)
    if (std::find(categories.begin(), categories.end(), inst.category) == categories.end()) out.push_back(inst);
  return out;
}

}  // namespace vlg

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <variant>

#include "vlg/trainer.hpp"

namespace vlg {

static_assert(std::is_same_v<std::size_t, std::uint64_t>);

namespace {


template <class C>
auto fields(C& c) {
  // One entry per key, in text order.
  using F = std::conditional_t<std::is_const_v<C>, std::variant<const std::size_t*, const double*, const bool*, const std::string*>,
                               std::variant<std::size_t*, double*, bool*, std::string*>>;
  return std::vector<std::pair<const char*, F>>{
      {"data_dir", &c.data_dir},
      {"lang_nonterminals", &c.lang_nonterminals},
      {"lang_preterminals", &c.lang_preterminals},
      {"vis_nonterminals", &c.vis_nonterminals},
      {"vis_preterminals", &c.vis_preterminals},
      {"z_dim", &c.z_dim},
      {"symbol_embed_dim", &c.symbol_embed_dim},
      {"grammar_hidden", &c.grammar_hidden},
      {"mlp_depth", &c.mlp_depth},
      {"cluster_depth", &c.cluster_depth},
      {"word_dim", &c.word_dim},
      {"lstm_hidden", &c.lstm_hidden},
      {"align_dim", &c.align_dim},
      {"perception_depth", &c.perception_depth},
      {"perception_hidden", &c.perception_hidden},
      {"feature_dim", &c.feature_dim},
      {"lambda_language", &c.lambda_language},
      {"lambda_vision", &c.lambda_vision},
      {"lambda_contrastive", &c.lambda_contrastive},
      {"margin", &c.margin},
      {"include_singletons", &c.include_singletons},
      {"normalize_alignment", &c.normalize_alignment},
      {"learning_rate", &c.learning_rate},
      {"beta1", &c.beta1},
      {"beta2", &c.beta2},
      {"adam_eps", &c.adam_eps},
      {"grad_clip", &c.grad_clip},
      {"batch_size", &c.batch_size},
      {"epochs", &c.epochs},
      {"seed", &c.seed},
      {"curriculum_length", &c.curriculum_length},
      {"curriculum_epochs", &c.curriculum_epochs},
      {"eval_every", &c.eval_every},
      {"max_train_instances", &c.max_train_instances},
      {"warm_start", &c.warm_start},
      {"warm_start_restarts", &c.warm_start_restarts},
      {"retrieval_k", &c.retrieval_k},
      {"retrieval_trials", &c.retrieval_trials},
      {"holdout_categories", &c.holdout_categories},
  };
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_unsigned(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError("config: " + key + " expects a non-negative integer, got '" + v + "'");
  }
  try {
    return static_cast<T>(std::stoull(v));
  } catch (const std::out_of_range&) {
    throw ConfigError("config: " + key + " out of range: '" + v + "'");
  }
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& raw) {
  const std::string value = trim(raw);
  for (auto& [name, field] : fields(*this)) {
    if (key != name) continue;
    std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, std::string>) {
            *p = value;
          } else if constexpr (std::is_same_v<T, bool>) {
            if (value == "true" || value == "1") *p = true;
            else if (value == "false" || value == "0") *p = false;
            else throw ConfigError("config: " + key + " expects true or false, got '" + value + "'");
          } else if constexpr (std::is_same_v<T, double>) {
            std::size_t used = 0;
            double d = 0.0;
            try {
              d = std::stod(value, &used);
            } catch (const std::exception&) {
              used = 0;
            }
            if (used != value.size() || value.empty() || !std::isfinite(d)) {
              throw ConfigError("config: " + key + " expects a finite number, got '" + value + "'");
            }
            *p = d;
          } else {
            *p = parse_unsigned<T>(key, value);
          }
        },
        field);
    return;
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(number) + ": expected key = value");
    try {
      c.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(number) + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

TrainConfig TrainConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::ostringstream text;
  text << in.rdbuf();
  return parse(text.str());
}

std::string TrainConfig::to_text() const {
  std::ostringstream out;
  for (const auto& [name, field] : fields(*this)) {
    out << name << " = ";
    std::visit(
        [&](const auto* p) {
          using T = std::remove_cv_t<std::remove_pointer_t<decltype(p)>>;
          if constexpr (std::is_same_v<T, bool>) {
            out << (*p ? "true" : "false");
          } else if constexpr (std::is_same_v<T, double>) {
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.17g", *p);
            out << buf;
          } else {
            out << *p;
          }
        },
        field);
    out << '\n';
  }
  return out.str();
}

void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("config: " + what);
  };
  require(lang_nonterminals > 0 && lang_preterminals > 0, "language grammar needs symbols");
  require(vis_nonterminals > 0 && vis_preterminals > 0, "vision grammar needs symbols");
  require(symbol_embed_dim > 0 && grammar_hidden > 0 && word_dim > 0 && lstm_hidden > 0 && align_dim > 0,
          "network widths must be positive");
  require(perception_depth == 0 || (feature_dim > 0 && perception_hidden > 0), "perception needs positive widths");
  require(lambda_language >= 0 && lambda_vision >= 0 && lambda_contrastive >= 0, "loss weights must be non-negative");
  require(lambda_language + lambda_vision + lambda_contrastive > 0, "at least one loss weight must be positive");
  require(margin >= 0, "margin must be non-negative");
  require(learning_rate > 0, "learning_rate must be positive");
  require(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1, "Adam betas must lie in [0, 1)");
  require(adam_eps > 0, "adam_eps must be positive");
  require(grad_clip >= 0, "grad_clip must be non-negative");
  require(batch_size >= 2 || lambda_contrastive == 0, "contrastive training needs batch_size >= 2");
  require(batch_size >= 1, "batch_size must be positive");
  require(retrieval_k >= 2, "retrieval_k must be at least 2");
}

std::vector<std::string> TrainConfig::holdout() const {
  std::vector<std::string> out;
  std::istringstream in(holdout_categories);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

}  // namespace vlg

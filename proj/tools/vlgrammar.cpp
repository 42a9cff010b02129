#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "vlg/checks.hpp"
#include "vlg/trainer.hpp"

using namespace vlg;
namespace fs = std::filesystem;

namespace {

struct Dataset {
  std::vector<std::string> vocabulary;
  std::vector<PairedInstance> train;
  std::vector<PairedInstance> test;
  std::size_t raw_dim = 0;
};

std::vector<std::string> split_list(const std::string& s) {
  TrainConfig c;
  c.holdout_categories = s;
  return c.holdout();
}

Dataset load_data(const std::string& dir, bool need_train) {
  Dataset d;
  d.vocabulary = read_vocabulary((fs::path(dir) / "vocab.txt").string());
  if (need_train) d.train = read_dataset((fs::path(dir) / "train.jsonl").string());
  d.test = read_dataset((fs::path(dir) / "test.jsonl").string());
  for (const auto* set : {&d.train, &d.test}) {
    for (const auto& inst : *set) {
      for (const auto& p : inst.parts) {
        if (d.raw_dim == 0) d.raw_dim = p.size();
        if (p.size() != d.raw_dim) throw std::runtime_error("dataset " + dir + ": instance " + inst.id + " has parts of mixed width");
      }
    }
  }
  if (d.raw_dim == 0) throw std::runtime_error("dataset " + dir + ": no parts found");
  return d;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

void write_reports(const std::string& out_dir, const std::map<std::string, EvalReport>& rep) {
  if (out_dir.empty()) return;
  fs::create_directories(out_dir);
  write_text(fs::path(out_dir) / "report.txt", report_text(rep));
  write_text(fs::path(out_dir) / "metrics.json", report_json(rep) + "\n");
}

std::string words(const Dataset& d, const std::vector<std::size_t>& tokens, const BracketSet& b) {
  const ParseTree t = ParseTree::from_brackets(tokens.size(), b.spans);
  return t.to_sexpr([&](std::size_t i) { return d.vocabulary.at(tokens[i]); });
}

std::string parts(const World& world, const PairedInstance& inst, const InstanceAnalysis& a, const BracketSet& b) {
  const ParseTree t = ParseTree::from_brackets(inst.parts.size(), b.spans);
  return t.to_sexpr([&](std::size_t i) {
    std::string name = i < inst.gold_part_tags.size() && inst.gold_part_tags[i] < world.tags.size()
                           ? world.tags[inst.gold_part_tags[i]].name
                           : "part";
    return name + "#" + std::to_string(a.clusters.at(i));
  });
}

const PairedInstance& find_instance(const Dataset& d, const std::string& id) {
  for (const auto* set : {&d.test, &d.train}) {
    for (const auto& inst : *set) {
      if (inst.id == id) return inst;
    }
  }
  throw std::runtime_error("no instance with id '" + id + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint vision-language grammar induction with compound PCFGs"};
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  // generate
  auto* gen = app.add_subcommand("generate", "Write a synthetic paired corpus");
  std::uint64_t gen_seed = 1;
  long n_train = 400, n_test = 100;
  std::string gen_out = "data", gen_holdout;
  GeneratorOptions gen_opts;
  gen->add_option("--seed", gen_seed, "Corpus seed");
  gen->add_option("--out-dir", gen_out, "Output directory");
  gen->add_option("--n-train", n_train, "Training instances");
  gen->add_option("--n-test", n_test, "Test instances");
  gen->add_option("--holdout-categories", gen_holdout, "Comma separated categories kept out of the training split");
  gen->add_option("--separation", gen_opts.separation, "Tag separation in noise units");
  gen->add_option("--noise", gen_opts.noise, "Feature noise scale");
  gen->add_option("--swap-prob", gen_opts.swap_prob, "Determiner and connective swap probability");
  gen->add_option("--reorder-prob", gen_opts.reorder_prob, "Chance a phrase names its right child first");
  gen->add_option("--part-reorder-prob", gen_opts.part_reorder_prob, "Chance a node lays out its right child first");
  gen->add_option("--material-prob", gen_opts.material_prob, "Chance a part phrase names the material");

  // train
  auto* tr = app.add_subcommand("train", "Train a joint model");
  std::string config_path, train_out = "run", data_dir, holdout, resume;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  tr->add_option("--config", config_path, "Config file (key = value lines)");
  tr->add_option("--seed", seed, "Override the config seed");
  tr->add_option("--epochs", epochs, "Override the config epoch count");
  tr->add_option("--data-dir", data_dir, "Override the config data directory");
  tr->add_option("--out-dir", train_out, "Run directory for checkpoints, metrics and reports");
  tr->add_option("--holdout-categories", holdout, "Comma separated categories dropped from training");
  tr->add_option("--checkpoint", resume, "Resume from this checkpoint");

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  std::string ckpt, eval_out;
  ev->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  ev->add_option("--data-dir", data_dir, "Data directory (default: from the checkpoint config)");
  ev->add_option("--out-dir", eval_out, "Directory for report.txt and metrics.json");
  ev->add_option("--holdout-categories", holdout, "Categories reported as unseen (default: from the config)");

  // parse
  auto* pa = app.add_subcommand("parse", "Print decoded trees for test instances");
  std::string ids;
  std::size_t limit = 5;
  bool show_gold = false;
  pa->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  pa->add_option("--data-dir", data_dir, "Data directory");
  pa->add_option("--ids", ids, "Comma separated instance ids (default: the first --limit test instances)");
  pa->add_option("--limit", limit, "Number of instances when --ids is absent");
  pa->add_flag("--gold", show_gold, "Also print the gold trees");

  // retrieve
  auto* re = app.add_subcommand("retrieve", "Score one sentence against one object");
  std::string object_id, text, text_id;
  re->add_option("--checkpoint", ckpt, "Checkpoint file")->required();
  re->add_option("--data-dir", data_dir, "Data directory");
  re->add_option("--object", object_id, "Instance id supplying the object parts")->required();
  auto* text_opt = re->add_option("--text", text, "Sentence, space separated words");
  auto* text_id_opt = re->add_option("--text-id", text_id, "Instance id supplying the sentence");
  text_opt->excludes(text_id_opt);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Run the finite-difference gradient checks");
  std::uint64_t gc_seed = 1;
  gc->add_option("--seed", gc_seed, "Seed for the random test inputs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const World world = default_world(gen_opts);
      const Corpus corpus = generate_corpus(world, n_train, n_test, gen_seed, split_list(gen_holdout));
      write_corpus(gen_out, corpus, world.vocabulary);
      std::printf("wrote %zu train and %zu test instances to %s\n", corpus.train.size(), corpus.test.size(), gen_out.c_str());
      return 0;
    }

    if (*tr) {
      Trainer trainer = [&] {
        if (!resume.empty()) return Trainer::load(resume);
        TrainConfig c = config_path.empty() ? TrainConfig{} : TrainConfig::load(config_path);
        if (seed) c.seed = *seed;
        if (!data_dir.empty()) c.data_dir = data_dir;
        if (!holdout.empty()) c.holdout_categories = holdout;
        if (epochs) c.epochs = *epochs;
        c.validate();
        const Dataset d = load_data(c.data_dir, true);
        return Trainer(c, d.vocabulary.size(), d.raw_dim);
      }();
      TrainConfig& c = trainer.model().config;
      if (!resume.empty() && epochs) c.epochs = *epochs;
      const Dataset d = load_data(data_dir.empty() ? c.data_dir : data_dir, true);
      if (d.vocabulary.size() != trainer.model().vocab_size || d.raw_dim != trainer.model().raw_dim) {
        throw std::runtime_error("dataset does not match the model's vocabulary or part width");
      }
      const std::vector<PairedInstance> train_set = without_categories(d.train, c.holdout());
      fs::create_directories(train_out);
      write_text(fs::path(train_out) / "config.txt", c.to_text());
      if (resume.empty()) {
        trainer.initialize(train_set);
        trainer.save((fs::path(train_out) / "checkpoint.ckpt").string());
      }
      const auto records = train(trainer, train_set, d.test, train_out, c.holdout());
      for (const auto& r : records) {
        std::printf("epoch %zu loss %.6f (language %.6f vision %.6f contrastive %.6f)\n", r.epoch, r.mean.total,
                    r.mean.language, r.mean.vision, r.mean.contrastive);
      }
      const auto rep = !records.empty() && records.back().eval ? *records.back().eval : evaluate(trainer.model(), d.test, c.holdout());
      write_reports(train_out, rep);
      std::fputs(report_text(rep).c_str(), stdout);
      return 0;
    }

    if (*ev) {
      const Trainer t = Trainer::load(ckpt);
      const TrainConfig& c = t.model().config;
      const Dataset d = load_data(data_dir.empty() ? c.data_dir : data_dir, false);
      const auto rep = evaluate(t.model(), d.test, holdout.empty() ? c.holdout() : split_list(holdout));
      write_reports(eval_out, rep);
      std::fputs(report_text(rep).c_str(), stdout);
      return 0;
    }

    if (*pa) {
      const Trainer t = Trainer::load(ckpt);
      const Dataset d = load_data(data_dir.empty() ? t.model().config.data_dir : data_dir, false);
      std::vector<PairedInstance> chosen;
      if (ids.empty()) {
        for (std::size_t i = 0; i < std::min(limit, d.test.size()); ++i) chosen.push_back(d.test[i]);
      } else {
        for (const auto& id : split_list(ids)) chosen.push_back(find_instance(d, id));
      }
      const World world = default_world();
      const auto an = analyze(t.model(), chosen);
      for (std::size_t i = 0; i < chosen.size(); ++i) {
        const auto& inst = chosen[i];
        std::printf("%s (%s)\n  sentence: %s\n  object:   %s\n", inst.id.c_str(), inst.category.c_str(),
                    words(d, inst.tokens, an[i].language).c_str(), parts(world, inst, an[i], an[i].vision).c_str());
        if (show_gold) {
          std::printf("  gold sentence: %s\n  gold object:   %s\n",
                      words(d, inst.tokens, BracketSet{inst.tokens.size(), inst.gold_lang_tree}).c_str(),
                      parts(world, inst, an[i], BracketSet{inst.parts.size(), inst.gold_vis_tree}).c_str());
        }
      }
      return 0;
    }

    if (*re) {
      const Trainer t = Trainer::load(ckpt);
      const Dataset d = load_data(data_dir.empty() ? t.model().config.data_dir : data_dir, false);
      PairedInstance pair = find_instance(d, object_id);
      if (!text_id.empty()) {
        pair.tokens = find_instance(d, text_id).tokens;
      } else if (!text.empty()) {
        pair.tokens.clear();
        std::istringstream in(text);
        for (std::string w; in >> w;) {
          auto it = std::find(d.vocabulary.begin(), d.vocabulary.end(), w);
          if (it == d.vocabulary.end()) throw std::runtime_error("word '" + w + "' is not in the vocabulary");
          pair.tokens.push_back(static_cast<std::size_t>(it - d.vocabulary.begin()));
        }
        if (pair.tokens.size() < kMinParseLength) throw std::runtime_error("sentence needs at least two words");
      }
      const std::vector<PairedInstance> one{pair};
      const auto an = analyze(t.model(), one);
      const World world = default_world();
      std::printf("score: %.6f\n  sentence: %s\n  object:   %s\n", pair_score(an[0], an[0]),
                  words(d, pair.tokens, an[0].language).c_str(), parts(world, pair, an[0], an[0].vision).c_str());
      return 0;
    }

    if (*gc) {
      bool ok = true;
      for (const auto& e : gradcheck_suite(gc_seed)) {
        std::printf("%-40s max_rel_error %.3e  tol %.0e  coords %5zu  %s\n", e.name.c_str(), e.max_error, e.tolerance,
                    e.coordinates, e.pass() ? "ok" : "FAIL");
        ok &= e.pass();
      }
      return ok ? 0 : 1;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}

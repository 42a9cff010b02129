#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vlg/chart.hpp"
#include "vlg/encoders.hpp"
#include "vlg/evalkit.hpp"
#include "vlg/gradcheck.hpp"
#include "vlg/grounding.hpp"
#include "vlg/pcfg.hpp"
#include "vlg/synthgen.hpp"

namespace vlg {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Every tunable of a run. Text form is `key = value` lines with `#` comments.
struct TrainConfig {
  std::string data_dir = "data";

  std::size_t lang_nonterminals = 10;
  std::size_t lang_preterminals = 10;
  std::size_t vis_nonterminals = 8;
  std::size_t vis_preterminals = 13;
  std::size_t z_dim = 4;
  std::size_t symbol_embed_dim = 32;
  std::size_t grammar_hidden = 64;
  std::size_t mlp_depth = 2;
  std::size_t cluster_depth = 0;
  std::size_t word_dim = 32;
  std::size_t lstm_hidden = 32;
  std::size_t align_dim = 64;
  std::size_t perception_depth = 0;
  std::size_t perception_hidden = 64;
  std::size_t feature_dim = 16;

  double lambda_language = 1.0;
  double lambda_vision = 1.0;
  double lambda_contrastive = 5.0;
  double margin = 0.2;
  bool include_singletons = false;
  bool normalize_alignment = true;

  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 5.0;  // per modality; 0 disables

  std::size_t batch_size = 8;
  std::size_t epochs = 10;
  std::size_t seed = 1;
  std::size_t curriculum_length = 0;  // 0 disables
  std::size_t curriculum_epochs = 0;
  std::size_t eval_every = 0;         // epochs between evaluations; 0 evaluates only at the end
  std::size_t max_train_instances = 0;  // 0 keeps all
  bool warm_start = true;
  std::size_t warm_start_restarts = 10;  // k-means restarts; lowest inertia wins
  std::size_t retrieval_k = 8;
  std::size_t retrieval_trials = 2000;
  std::string holdout_categories;  // comma separated; drives the seen/unseen report sections

  /// Throws ConfigError naming the line for unknown keys or bad values.
  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::string& path);
  /// Applies one `key = value` assignment.
  void set(const std::string& key, const std::string& value);
  /// Every key in a fixed order; parse(to_text()) reproduces the config.
  std::string to_text() const;
  void validate() const;

  LossWeights weights() const { return {lambda_language, lambda_vision, lambda_contrastive}; }
  AlignmentOptions alignment() const { return {include_singletons, normalize_alignment}; }
  std::size_t span_min_length() const { return include_singletons ? 1 : 2; }
  std::vector<std::string> holdout() const;
};

/// Parameters and networks of the joint model.
class Model {
 public:
  Model(const TrainConfig& config, std::size_t vocab_size, std::size_t raw_dim);

  TrainConfig config;
  std::size_t vocab_size = 0;
  std::size_t raw_dim = 0;
  ParamStore store;
  CompoundPcfg lang_grammar;
  CompoundPcfg vis_grammar;
  LanguageEncoder lang_encoder;
  VisionEncoder vis_encoder;

  bool is_language(ParamId id) const { return store[id].name.rfind("lang.", 0) == 0; }
};

/// Standard-normal draws for one batch, one vector per instance and modality.
struct BatchNoise {
  std::vector<Tensor> language;
  std::vector<Tensor> vision;
};

/// Which parts of the objective a batch needs given the loss weights.
struct LossPlan {
  bool language = true;
  bool vision = true;
  bool contrastive = true;
  static LossPlan from(const TrainConfig& c);
};

BatchNoise draw_noise(const Model& model, std::size_t batch, const LossPlan& plan, Rng& lang_rng, Rng& vis_rng);

/// Joint objective for one batch on the binder's tape.
LossBundle batch_loss(const Model& model, Binder& bind, std::span<const PairedInstance* const> batch,
                      const BatchNoise& noise, const LossPlan& plan);

/// Finite-difference check of batch_loss against every model parameter.
ad::GradcheckResult batch_gradcheck(const Model& model, std::span<const PairedInstance* const> batch,
                                    const BatchNoise& noise, double h = 1e-5);

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::vector<std::uint64_t> steps;
};

/// Adam over a parameter store. Parameters absent from `grads` are left untouched.
class Adam {
 public:
  Adam() = default;
  Adam(const ParamStore& store, double lr, double beta1, double beta2, double eps);
  void update(ParamStore& store, const std::vector<std::pair<ParamId, Tensor>>& grads);

  AdamState state;
  double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

/// Scales each modality's gradients so their joint L2 norm is at most `max_norm`.
void clip_by_modality(const Model& model, std::vector<std::pair<ParamId, Tensor>>& grads, double max_norm);

/// Nearest-mean clustering head from k-means on the given parts; returns the k-means assignments.
std::vector<std::size_t> warm_start_clusters(Model& model, std::span<const PairedInstance> instances, std::uint64_t seed);

struct StepLosses {
  double total = 0.0;
  double language = 0.0;
  double vision = 0.0;
  double contrastive = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  StepLosses mean;
  std::optional<std::map<std::string, EvalReport>> eval;
};

/// Per-instance analysis of one split.
struct InstanceAnalysis {
  BracketSet language;
  BracketSet vision;
  std::vector<std::size_t> clusters;
  std::vector<double> lang_pooled;  // marginal-weighted sum of unit span embeddings
  std::vector<double> vis_pooled;
  double lang_norm = 1.0;
  double vis_norm = 1.0;
};

/// Decodes every instance with z at the posterior mean. Vision terminal distributions are
/// normalized over evaluation batches drawn by a seeded shuffle.
std::vector<InstanceAnalysis> analyze(const Model& model, std::span<const PairedInstance> instances);

/// S(w_i, v_j) from two analyses.
double pair_score(const InstanceAnalysis& lang, const InstanceAnalysis& vis);

/// Reports for "all" and, with held-out categories, "seen" and "unseen".
std::map<std::string, EvalReport> evaluate(const Model& model, std::span<const PairedInstance> instances,
                                           const std::vector<std::string>& holdout = {});

struct TrainState {
  std::size_t epoch = 0;
  std::size_t step = 0;
  Rng shuffle_rng;
  Rng lang_rng;
  Rng vis_rng;
};

class Trainer {
 public:
  Trainer(const TrainConfig& config, std::size_t vocab_size, std::size_t raw_dim);

  /// Warm start (if configured) from the training parts.
  void initialize(std::span<const PairedInstance> train);
  /// One optimizer step; returns the batch losses.
  StepLosses step(std::span<const PairedInstance* const> batch);
  /// One pass over `train` in seeded shuffled order.
  EpochRecord run_epoch(std::span<const PairedInstance> train);

  Model& model() { return model_; }
  const Model& model() const { return model_; }
  Adam& optimizer() { return adam_; }
  TrainState& state() { return state_; }
  const TrainState& state() const { return state_; }

  void save(const std::string& path) const;
  static Trainer load(const std::string& path);

 private:
  Model model_;
  Adam adam_;
  TrainState state_;
};

/// Full run: epochs of training with checkpoints and one metrics record per epoch.
/// Records go to `out_dir`/metrics.jsonl when `out_dir` is non-empty.
std::vector<EpochRecord> train(Trainer& trainer, std::span<const PairedInstance> train_set,
                               std::span<const PairedInstance> eval_set, const std::string& out_dir,
                               const std::vector<std::string>& holdout = {});

std::string format_record(const EpochRecord& r);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace vlg

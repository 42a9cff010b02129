#include "vlg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include "json.hpp"

namespace vlg {

using ad::Var;

namespace {

Rng stream(std::uint64_t seed, std::uint64_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id)};
  return Rng(seq);
}

enum Stream : std::uint64_t { kInit = 1, kShuffle = 2, kLanguage = 3, kVision = 4, kWarmStart = 5 };

GrammarSpec grammar_spec(const TrainConfig& c, Modality m, std::size_t vocab, std::size_t feature_dim) {
  GrammarSpec g;
  g.modality = m;
  g.n_nonterminals = m == Modality::language ? c.lang_nonterminals : c.vis_nonterminals;
  g.n_preterminals = m == Modality::language ? c.lang_preterminals : c.vis_preterminals;
  g.vocab_size = m == Modality::language ? vocab : 0;
  g.feature_dim = m == Modality::vision ? feature_dim : 0;
  g.symbol_embed_dim = c.symbol_embed_dim;
  g.z_dim = c.z_dim;
  g.hidden_dim = c.grammar_hidden;
  g.mlp_depth = c.mlp_depth;
  g.cluster_depth = c.cluster_depth;
  return g;
}

Var scalar_mean(const std::vector<Var>& terms) {
  Var acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = ad::add(acc, terms[i]);
  return ad::scale(acc, 1.0 / static_cast<double>(terms.size()));
}

Tensor stack_parts(std::span<const PairedInstance* const> batch, std::size_t raw_dim, std::vector<std::size_t>& lengths) {
  std::size_t total = 0;
  for (const auto* inst : batch) total += inst->parts.size();
  Tensor raw = Tensor::zeros({total, raw_dim});
  std::size_t row = 0;
  lengths.clear();
  for (const auto* inst : batch) {
    lengths.push_back(inst->parts.size());
    for (const auto& part : inst->parts) {
      if (part.size() != raw_dim) {
        throw DimensionError("instance " + inst->id + ": part of width " + std::to_string(part.size()) + ", model expects " +
                             std::to_string(raw_dim));
      }
      std::copy(part.begin(), part.end(), raw.data() + row * raw_dim);
      ++row;
    }
  }
  return raw;
}

Tensor normal_tensor(std::size_t n, Rng& rng) {
  std::normal_distribution<double> normal;
  Tensor t = Tensor::zeros({n});
  for (double& v : t.values()) v = normal(rng);
  return t;
}

}  // namespace

Model::Model(const TrainConfig& cfg, std::size_t vocab, std::size_t raw)
    : config(cfg), vocab_size(vocab), raw_dim(raw) {
  config.validate();
  if (vocab == 0 || raw == 0) throw std::invalid_argument("model: empty vocabulary or zero-width parts");
  Rng rng = stream(cfg.seed, kInit);
  lang_grammar = CompoundPcfg(grammar_spec(cfg, Modality::language, vocab, 0), store, "lang.grammar", rng);
  lang_encoder = LanguageEncoder({vocab, cfg.word_dim, cfg.lstm_hidden, cfg.z_dim, cfg.align_dim}, store, "lang.encoder", rng);
  VisionEncoderSpec vs;
  vs.raw_dim = raw;
  vs.feature_dim = cfg.perception_depth ? cfg.feature_dim : raw;
  vs.perception_hidden = cfg.perception_hidden;
  vs.perception_depth = cfg.perception_depth;
  vs.hidden_dim = cfg.lstm_hidden;
  vs.z_dim = cfg.z_dim;
  vs.align_dim = cfg.align_dim;
  vis_encoder = VisionEncoder(vs, store, "vis.encoder", rng);
  vis_grammar = CompoundPcfg(grammar_spec(cfg, Modality::vision, 0, vis_encoder.feature_dim()), store, "vis.grammar", rng);
}

LossPlan LossPlan::from(const TrainConfig& c) {
  LossPlan p;
  p.contrastive = c.lambda_contrastive > 0;
  p.language = c.lambda_language > 0 || p.contrastive;
  p.vision = c.lambda_vision > 0 || p.contrastive;
  return p;
}

BatchNoise draw_noise(const Model& model, std::size_t batch, const LossPlan& plan, Rng& lang_rng, Rng& vis_rng) {
  BatchNoise noise;
  const std::size_t z = model.config.z_dim;
  if (z == 0) return noise;
  for (std::size_t i = 0; plan.language && i < batch; ++i) noise.language.push_back(normal_tensor(z, lang_rng));
  for (std::size_t i = 0; plan.vision && i < batch; ++i) noise.vision.push_back(normal_tensor(z, vis_rng));
  return noise;
}

LossBundle batch_loss(const Model& model, Binder& bind, std::span<const PairedInstance* const> batch,
                      const BatchNoise& noise, const LossPlan& plan) {
  const TrainConfig& cfg = model.config;
  const std::size_t b = batch.size();
  if (b == 0) throw std::invalid_argument("batch_loss: empty batch");
  const std::size_t z_dim = cfg.z_dim, min_len = cfg.span_min_length();
  auto noise_for = [&](const std::vector<Tensor>& all, std::size_t i) -> const Tensor& {
    if (all.size() != b) throw std::invalid_argument("batch_loss: noise does not match the batch");
    return all[i];
  };
  std::vector<Var> lang_marg(b), vis_marg(b), lang_emb(b), vis_emb(b);
  Var lang_loss, vis_loss, con_loss;

  if (plan.language) {
    const CompoundPcfg& g = model.lang_grammar;
    std::vector<Var> terms;
    for (std::size_t i = 0; i < b; ++i) {
      const auto& tokens = batch[i]->tokens;
      for (std::size_t t : tokens) {
        if (t >= model.vocab_size) throw std::out_of_range("instance " + batch[i]->id + ": token id out of vocabulary");
      }
      Var states = model.lang_encoder.states(bind, tokens);
      Var z, kl;
      if (z_dim) {
        Posterior q = model.lang_encoder.posterior(bind, states);
        z = reparameterize(q, noise_for(noise.language, i));
        kl = gaussian_kl(q);
      }
      RuleVars r = g.rule_probs_language(bind, z);
      Var em = ad::transpose(ad::gather_cols(r.terminal, tokens));
      DiffChart chart = diff_inside(r.root, r.binary, em, g.spec().n_nonterminals, g.spec().n_preterminals);
      Var term = ad::neg(chart.log_z);
      terms.push_back(kl.valid() ? ad::add(term, kl) : term);
      if (plan.contrastive) {
        Var m = diff_span_marginals(chart, r.root, r.binary);
        lang_marg[i] = cfg.include_singletons ? with_singleton_marginals(m, tokens.size()) : m;
        lang_emb[i] = model.lang_encoder.span_embeddings(bind, states, min_len);
      }
    }
    if (cfg.lambda_language > 0) lang_loss = scalar_mean(terms);
  }

  if (plan.vision) {
    const CompoundPcfg& g = model.vis_grammar;
    std::vector<std::size_t> lengths;
    Var raw = bind.tape().constant(stack_parts(batch, model.raw_dim, lengths));
    Var feats = model.vis_encoder.perceive(bind, raw);
    Var terminal = g.vision_terminal_log_probs(bind, feats, lengths);
    std::vector<Var> terms;
    std::size_t off = 0;
    for (std::size_t j = 0; j < b; ++j) {
      const std::size_t n = lengths[j];
      Var f = ad::slice(feats, 0, off, off + n);
      Var z, kl;
      if (z_dim) {
        Posterior q = model.vis_encoder.posterior(bind, f);
        z = reparameterize(q, noise_for(noise.vision, j));
        kl = gaussian_kl(q);
      }
      RuleVars r = g.rule_probs_vision(bind, z, terminal);
      Var em = ad::transpose(ad::slice(terminal, 1, off, off + n));
      DiffChart chart = diff_inside(r.root, r.binary, em, g.spec().n_nonterminals, g.spec().n_preterminals);
      Var term = ad::neg(chart.log_z);
      terms.push_back(kl.valid() ? ad::add(term, kl) : term);
      if (plan.contrastive) {
        Var m = diff_span_marginals(chart, r.root, r.binary);
        vis_marg[j] = cfg.include_singletons ? with_singleton_marginals(m, n) : m;
        vis_emb[j] = model.vis_encoder.span_embeddings(bind, f, min_len);
      }
      off += n;
    }
    if (cfg.lambda_vision > 0) vis_loss = scalar_mean(terms);
  }

  if (plan.contrastive) {
    const AlignmentOptions opts = cfg.alignment();
    std::vector<Var> rows(b);
    for (std::size_t i = 0; i < b; ++i) {
      std::vector<Var> row(b);
      for (std::size_t j = 0; j < b; ++j) {
        Var cos = cosine_matrix(lang_emb[i], vis_emb[j]);
        row[j] = alignment_score(lang_marg[i], vis_marg[j], cos, batch[i]->tokens.size(), batch[j]->parts.size(), opts);
      }
      rows[i] = ad::stack(row);
    }
    con_loss = contrastive_loss(ad::stack(rows), cfg.margin);
  }
  return total_loss(cfg.weights(), lang_loss, vis_loss, con_loss);
}

ad::GradcheckResult batch_gradcheck(const Model& model, std::span<const PairedInstance* const> batch,
                                    const BatchNoise& noise, double h) {
  const LossPlan plan = LossPlan::from(model.config);
  std::vector<Tensor> inputs;
  for (const Parameter& p : model.store.all()) inputs.push_back(p.value);
  return ad::gradcheck(
      [&](ad::Tape& tape, std::span<const Var> leaves) {
        Binder bind(tape, model.store);
        for (std::size_t i = 0; i < leaves.size(); ++i) bind.use(i, leaves[i]);
        return batch_loss(model, bind, batch, noise, plan).total;
      },
      inputs, h);
}

Adam::Adam(const ParamStore& store, double lr_, double b1, double b2, double eps_)
    : lr(lr_), beta1(b1), beta2(b2), eps(eps_) {
  for (const Parameter& p : store.all()) {
    state.m.push_back(Tensor::zeros(p.value.shape()));
    state.v.push_back(Tensor::zeros(p.value.shape()));
    state.steps.push_back(0);
  }
}

void Adam::update(ParamStore& store, const std::vector<std::pair<ParamId, Tensor>>& grads) {
  if (state.m.size() != store.size()) throw std::logic_error("adam: state does not match the parameter store");
  for (const auto& [id, g] : grads) {
    Tensor& w = store[id].value;
    Tensor& m = state.m[id];
    Tensor& v = state.v[id];
    if (g.shape() != w.shape()) throw DimensionError("adam: " + store[id].name, g.shape(), w.shape());
    const double t = static_cast<double>(++state.steps[id]);
    const double c1 = 1.0 - std::pow(beta1, t), c2 = 1.0 - std::pow(beta2, t);
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
      v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
      w[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
    }
  }
}

void clip_by_modality(const Model& model, std::vector<std::pair<ParamId, Tensor>>& grads, double max_norm) {
  if (max_norm <= 0) return;
  for (int group = 0; group < 2; ++group) {
    const bool lang = group == 0;
    double sq = 0.0;
    for (const auto& [id, g] : grads) {
      if (model.is_language(id) != lang) continue;
      for (double x : g.values()) sq += x * x;
    }
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) continue;
    const double s = max_norm / norm;
    for (auto& [id, g] : grads) {
      if (model.is_language(id) != lang) continue;
      for (double& x : g.values()) x *= s;
    }
  }
}

namespace {

// k-means++ seeding then Lloyd iterations over the rows of x; returns the inertia.
double kmeans(const Tensor& x, std::size_t k, Rng& rng, std::vector<std::vector<double>>& centers,
              std::vector<std::size_t>& assign) {
  const std::size_t n = x.dim(0), d = x.dim(1);
  auto dist2 = [&](std::size_t i, const std::vector<double>& c) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += (x.at(i, j) - c[j]) * (x.at(i, j) - c[j]);
    return s;
  };
  auto row = [&](std::size_t i) { return std::vector<double>(x.data() + i * d, x.data() + (i + 1) * d); };
  centers.clear();
  centers.push_back(row(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)));
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  while (centers.size() < k) {
    for (std::size_t i = 0; i < n; ++i) nearest[i] = std::min(nearest[i], dist2(i, centers.back()));
    const double total = std::accumulate(nearest.begin(), nearest.end(), 0.0);
    std::size_t pick = 0;
    if (total > 0) {
      double u = std::uniform_real_distribution<double>(0.0, total)(rng);
      for (pick = 0; pick + 1 < n && u >= nearest[pick]; ++pick) u -= nearest[pick];
    }
    centers.push_back(row(pick));
  }
  assign.assign(n, k);
  for (int iter = 0; iter < 100; ++iter) {
    bool changed = false;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_d = dist2(i, centers[0]);
      for (std::size_t c = 1; c < k; ++c) {
        const double dc = dist2(i, centers[c]);
        if (dc < best_d) best_d = dc, best = c;
      }
      changed |= assign[i] != best;
      assign[i] = best;
    }
    if (!changed) break;
    std::vector<std::vector<double>> sum(k, std::vector<double>(d, 0.0));
    std::vector<std::size_t> count(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++count[assign[i]];
      for (std::size_t j = 0; j < d; ++j) sum[assign[i]][j] += x.at(i, j);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (count[c] == 0) {
        // reseed an empty cluster at the worst-fit point
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          const double di = dist2(i, centers[assign[i]]);
          if (di > far_d) far_d = di, far = i;
        }
        centers[c] = row(far);
        assign[far] = c;
        continue;
      }
      for (std::size_t j = 0; j < d; ++j) centers[c][j] = sum[c][j] / static_cast<double>(count[c]);
    }
  }
  double inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) inertia += dist2(i, centers[assign[i]]);
  return inertia;
}

}  // namespace

std::vector<std::size_t> warm_start_clusters(Model& model, std::span<const PairedInstance> instances, std::uint64_t seed) {
  const std::size_t k = model.config.vis_preterminals;
  std::vector<const PairedInstance*> ptrs;
  for (const auto& inst : instances) ptrs.push_back(&inst);
  if (ptrs.empty()) throw std::invalid_argument("warm start: no training instances");
  std::vector<std::size_t> lengths;
  ad::Tape tape;
  Binder bind(tape, model.store);
  Var feats = model.vis_grammar.cluster_net()(bind, model.vis_encoder.perceive(bind, tape.constant(stack_parts(ptrs, model.raw_dim, lengths))));
  const Tensor& x = feats.value();
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (n < k) throw std::invalid_argument("warm start: fewer parts than clusters");
  std::vector<std::vector<double>> centers;
  std::vector<std::size_t> assign;
  double best_inertia = std::numeric_limits<double>::infinity();
  for (std::size_t restart = 0; restart < std::max<std::size_t>(1, model.config.warm_start_restarts); ++restart) {
    Rng rng = stream(seed + restart * 0x9E3779B97F4A7C15ull, kWarmStart);
    std::vector<std::vector<double>> c;
    std::vector<std::size_t> a;
    const double inertia = kmeans(x, k, rng, c, a);
    if (inertia < best_inertia) {
      best_inertia = inertia;
      centers = std::move(c);
      assign = std::move(a);
    }
  }
  Tensor& w = model.store[model.vis_grammar.tag_weight()].value;
  Tensor& bias = model.store[model.vis_grammar.tag_bias()].value;
  for (std::size_t c = 0; c < k; ++c) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      w.at(c, j) = centers[c][j];
      sq += centers[c][j] * centers[c][j];
    }
    bias[c] = -0.5 * sq;
  }
  return assign;
}

Trainer::Trainer(const TrainConfig& config, std::size_t vocab_size, std::size_t raw_dim)
    : model_(config, vocab_size, raw_dim),
      adam_(model_.store, config.learning_rate, config.beta1, config.beta2, config.adam_eps) {
  state_.shuffle_rng = stream(config.seed, kShuffle);
  state_.lang_rng = stream(config.seed, kLanguage);
  state_.vis_rng = stream(config.seed, kVision);
}

void Trainer::initialize(std::span<const PairedInstance> train) {
  if (model_.config.warm_start && LossPlan::from(model_.config).vision) warm_start_clusters(model_, train, model_.config.seed);
}

StepLosses Trainer::step(std::span<const PairedInstance* const> batch) {
  const LossPlan plan = LossPlan::from(model_.config);
  BatchNoise noise = draw_noise(model_, batch.size(), plan, state_.lang_rng, state_.vis_rng);
  ad::Tape tape;
  Binder bind(tape, model_.store);
  LossBundle loss = batch_loss(model_, bind, batch, noise, plan);
  StepLosses out;
  out.total = loss.total.item();
  if (loss.language.valid()) out.language = loss.language.item();
  if (loss.vision.valid()) out.vision = loss.vision.item();
  if (loss.contrastive.valid()) out.contrastive = loss.contrastive.item();
  if (!std::isfinite(out.total)) throw ad::NonFiniteError("training: non-finite loss at step " + std::to_string(state_.step));
  const ad::Gradients grads = tape.backward(loss.total);
  std::vector<std::pair<ParamId, Tensor>> g;
  for (const auto& [id, leaf] : bind.bound()) {
    if (const Tensor* t = grads.find(leaf)) {
      if (!t->all_finite()) {
        throw ad::NonFiniteError("training: non-finite gradient for " + model_.store[id].name + " at step " +
                                 std::to_string(state_.step));
      }
      g.emplace_back(id, *t);
    }
  }
  std::sort(g.begin(), g.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  clip_by_modality(model_, g, model_.config.grad_clip);
  adam_.update(model_.store, g);
  ++state_.step;
  return out;
}

EpochRecord Trainer::run_epoch(std::span<const PairedInstance> train) {
  const TrainConfig& cfg = model_.config;
  std::vector<const PairedInstance*> pool;
  const std::size_t limit = cfg.max_train_instances ? std::min(cfg.max_train_instances, train.size()) : train.size();
  const bool curriculum = cfg.curriculum_length > 0 && state_.epoch < cfg.curriculum_epochs;
  for (std::size_t i = 0; i < limit; ++i) {
    if (curriculum && train[i].tokens.size() > cfg.curriculum_length) continue;
    pool.push_back(&train[i]);
  }
  if (pool.empty()) throw std::invalid_argument("training: no instances pass the curriculum filter");
  std::shuffle(pool.begin(), pool.end(), state_.shuffle_rng);
  std::vector<std::pair<std::size_t, std::size_t>> batches;
  for (std::size_t s = 0; s < pool.size(); s += cfg.batch_size) batches.emplace_back(s, std::min(pool.size(), s + cfg.batch_size));
  if (batches.size() > 1 && batches.back().second - batches.back().first < 2) {
    batches[batches.size() - 2].second = batches.back().second;
    batches.pop_back();
  }
  EpochRecord rec;
  double weight = 0.0;
  for (const auto& [s, e] : batches) {
    const StepLosses l = step(std::span<const PairedInstance* const>(pool.data() + s, e - s));
    const double w = static_cast<double>(e - s);
    rec.mean.total += w * l.total;
    rec.mean.language += w * l.language;
    rec.mean.vision += w * l.vision;
    rec.mean.contrastive += w * l.contrastive;
    weight += w;
  }
  rec.mean.total /= weight;
  rec.mean.language /= weight;
  rec.mean.vision /= weight;
  rec.mean.contrastive /= weight;
  ++state_.epoch;
  rec.epoch = state_.epoch;
  rec.step = state_.step;
  return rec;
}

std::string format_record(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["step"] = r.step;
  j["loss"] = {{"total", r.mean.total},
               {"language", r.mean.language},
               {"vision", r.mean.vision},
               {"contrastive", r.mean.contrastive}};
  if (r.eval) j["eval"] = nlohmann::ordered_json::parse(report_json(*r.eval));
  return j.dump();
}

std::vector<EpochRecord> train(Trainer& trainer, std::span<const PairedInstance> train_set,
                               std::span<const PairedInstance> eval_set, const std::string& out_dir,
                               const std::vector<std::string>& holdout) {
  namespace fs = std::filesystem;
  const TrainConfig& cfg = trainer.model().config;
  std::ofstream metrics;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    const bool resume = trainer.state().step > 0 || trainer.state().epoch > 0;
    metrics.open(fs::path(out_dir) / "metrics.jsonl", resume ? std::ios::app : std::ios::trunc);
    if (!metrics) throw std::runtime_error("training: cannot write metrics under " + out_dir);
  }
  std::vector<EpochRecord> records;
  while (trainer.state().epoch < cfg.epochs) {
    EpochRecord rec;
    try {
      rec = trainer.run_epoch(train_set);
    } catch (const ad::NonFiniteError&) {
      if (!out_dir.empty()) trainer.save((fs::path(out_dir) / "diverged.ckpt").string());
      throw;
    }
    const bool last = rec.epoch == cfg.epochs;
    if (!eval_set.empty() && (last || (cfg.eval_every && rec.epoch % cfg.eval_every == 0))) {
      rec.eval = evaluate(trainer.model(), eval_set, holdout);
    }
    if (!out_dir.empty()) {
      metrics << format_record(rec) << '\n';
      metrics.flush();
      trainer.save((fs::path(out_dir) / "checkpoint.ckpt").string());
    }
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace vlg

#include "vlg/encoders.hpp"

#include <cmath>
#include <stdexcept>

namespace vlg {

using ad::Var;

Var gaussian_kl(const Posterior& q) {
  // 0.5 * sum(mu^2 + exp(lv) - lv - 1)
  Var terms = ad::sub(ad::add(ad::square(q.mean), ad::exp(q.log_var)), q.log_var);
  return ad::scale(ad::add_constant(ad::sum(terms), -static_cast<double>(q.mean.size())), 0.5);
}

Var reparameterize(const Posterior& q, const Tensor& eps) {
  if (eps.shape() != q.mean.shape()) throw DimensionError("reparameterize", eps.shape(), q.mean.shape());
  Var sigma = ad::exp(ad::scale(q.log_var, 0.5));
  return ad::add(q.mean, ad::mul(sigma, q.mean.tape().constant(eps)));
}

Var sample_latent(const Posterior& q, Rng& rng) {
  std::normal_distribution<double> normal;
  Tensor eps = Tensor::zeros(q.mean.shape());
  for (double& v : eps.values()) v = normal(rng);
  return reparameterize(q, eps);
}

Tensor span_mean_matrix(std::size_t n, std::size_t min_length) {
  const std::vector<Span> spans = all_spans(n, min_length);
  Tensor m = Tensor::zeros({spans.size(), n});
  for (std::size_t k = 0; k < spans.size(); ++k) {
    const double w = 1.0 / static_cast<double>(spans[k].length());
    for (std::size_t l = spans[k].start; l < spans[k].end; ++l) m.at(k, l) = w;
  }
  return m;
}

Perception Perception::create(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden,
                              std::size_t out, std::size_t depth, Rng& rng) {
  Perception p;
  p.in_dim = in;
  std::size_t width = in;
  for (std::size_t i = 0; i < depth; ++i) {
    const std::size_t next = i + 1 == depth ? out : hidden;
    p.layers.push_back(Linear::create(store, name + "." + std::to_string(i), width, next, rng));
    width = next;
  }
  return p;
}

Var Perception::operator()(Binder& bind, Var raw) const {
  if (raw.value().rank() != 2 || raw.value().dim(1) != in_dim) {
    throw DimensionError("perception", raw.shape(), Shape{raw.value().rank() == 2 ? raw.value().dim(0) : 0, in_dim});
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    raw = layers[i](bind, raw);
    if (i + 1 < layers.size()) raw = ad::tanh(raw);
  }
  return raw;
}

namespace {

Posterior pooled_posterior(Binder& bind, Var states, const Linear& mean_head, const Linear& log_var_head) {
  Var pooled = ad::mean(states, 0);
  return {mean_head(bind, pooled), log_var_head(bind, pooled)};
}

Var embed_spans(Binder& bind, Var rows, const Linear& head, std::size_t min_length, const char* what) {
  const std::size_t n = rows.value().dim(0);
  if (n < min_length || n < 1) {
    throw std::invalid_argument(std::string(what) + ": sequence of length " + std::to_string(n) + " has no spans");
  }
  Var means = ad::matmul(rows.tape().constant(span_mean_matrix(n, min_length)), rows);
  return head(bind, means);
}

}  // namespace

LanguageEncoder::LanguageEncoder(const LanguageEncoderSpec& spec, ParamStore& store, const std::string& prefix,
                                 Rng& rng)
    : spec_(spec) {
  if (spec.vocab_size == 0) throw std::invalid_argument("language encoder: empty vocabulary");
  embed_ = Embedding::create(store, prefix + ".embed", spec.vocab_size, spec.word_dim, rng);
  lstm_ = BiLstm::create(store, prefix + ".lstm", spec.word_dim, spec.hidden_dim, rng);
  mean_head_ = Linear::zeros(store, prefix + ".z_mean", lstm_.out_dim(), spec.z_dim);
  log_var_head_ = Linear::zeros(store, prefix + ".z_log_var", lstm_.out_dim(), spec.z_dim);
  span_head_ = Linear::create(store, prefix + ".span", lstm_.out_dim(), spec.align_dim, rng);
}

Var LanguageEncoder::states(Binder& bind, std::span<const std::size_t> tokens) const {
  if (tokens.empty()) throw std::invalid_argument("language encoder: empty sequence");
  return lstm_(bind, embed_(bind, tokens));
}

Posterior LanguageEncoder::posterior(Binder& bind, Var states) const {
  return pooled_posterior(bind, states, mean_head_, log_var_head_);
}

Var LanguageEncoder::span_embeddings(Binder& bind, Var states, std::size_t min_length) const {
  return embed_spans(bind, states, span_head_, min_length, "language spans");
}

VisionEncoder::VisionEncoder(const VisionEncoderSpec& spec, ParamStore& store, const std::string& prefix, Rng& rng)
    : spec_(spec) {
  if (spec.raw_dim == 0) throw std::invalid_argument("vision encoder: zero raw dimension");
  const std::size_t feat = spec.perception_depth == 0 ? spec.raw_dim : spec.feature_dim;
  perception_ = Perception::create(store, prefix + ".psi", spec.raw_dim, spec.perception_hidden, feat,
                                   spec.perception_depth, rng);
  spec_.feature_dim = perception_.out_dim();
  lstm_ = BiLstm::create(store, prefix + ".lstm", spec_.feature_dim, spec.hidden_dim, rng);
  mean_head_ = Linear::zeros(store, prefix + ".z_mean", lstm_.out_dim(), spec.z_dim);
  log_var_head_ = Linear::zeros(store, prefix + ".z_log_var", lstm_.out_dim(), spec.z_dim);
  span_head_ = Linear::create(store, prefix + ".span", spec_.feature_dim, spec.align_dim, rng);
}

Var VisionEncoder::perceive(Binder& bind, Var raw) const { return perception_(bind, raw); }

Posterior VisionEncoder::posterior(Binder& bind, Var features) const {
  if (features.value().rank() != 2 || features.value().dim(0) == 0) {
    throw std::invalid_argument("vision encoder: empty sequence");
  }
  return pooled_posterior(bind, lstm_(bind, features), mean_head_, log_var_head_);
}

Var VisionEncoder::span_embeddings(Binder& bind, Var features, std::size_t min_length) const {
  return embed_spans(bind, features, span_head_, min_length, "vision spans");
}

}  // namespace vlg

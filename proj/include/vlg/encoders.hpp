#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "vlg/nn.hpp"
#include "vlg/tree.hpp"

namespace vlg {

/// Diagonal Gaussian q(z | x) given by its mean and log-variance.
struct Posterior {
  ad::Var mean;
  ad::Var log_var;
};

/// KL(q || N(0, I)) summed over dimensions, as a scalar.
ad::Var gaussian_kl(const Posterior& q);
/// z = mean + exp(log_var / 2) * eps.
ad::Var reparameterize(const Posterior& q, const Tensor& eps);
/// Same, drawing eps ~ N(0, I) from `rng`.
ad::Var sample_latent(const Posterior& q, Rng& rng);

/// [spans, n] matrix whose row for (a, b) averages positions a..b-1; rows follow all_spans(n, min_length).
Tensor span_mean_matrix(std::size_t n, std::size_t min_length);

/// Feed-forward perception map over raw part vectors. Zero layers is identity;
/// hidden layers use tanh and the last layer is affine.
struct Perception {
  std::vector<Linear> layers;
  std::size_t in_dim = 0;

  static Perception create(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden,
                           std::size_t out, std::size_t depth, Rng& rng);
  std::size_t out_dim() const { return layers.empty() ? in_dim : layers.back().out; }
  /// [parts, in] -> [parts, out]
  ad::Var operator()(Binder& bind, ad::Var raw) const;
};

struct LanguageEncoderSpec {
  std::size_t vocab_size = 0;
  std::size_t word_dim = 32;
  std::size_t hidden_dim = 32;  // per direction
  std::size_t z_dim = 0;
  std::size_t align_dim = 64;
};

/// Bidirectional LSTM over word embeddings shared by the posterior head and the span embedder.
class LanguageEncoder {
 public:
  LanguageEncoder() = default;
  LanguageEncoder(const LanguageEncoderSpec& spec, ParamStore& store, const std::string& prefix, Rng& rng);

  const LanguageEncoderSpec& spec() const { return spec_; }
  /// [n, 2h] hidden states.
  ad::Var states(Binder& bind, std::span<const std::size_t> tokens) const;
  Posterior posterior(Binder& bind, ad::Var states) const;
  /// [spans, align_dim] embeddings in all_spans(n, min_length) order.
  ad::Var span_embeddings(Binder& bind, ad::Var states, std::size_t min_length = 2) const;

  const Linear& span_head() const { return span_head_; }

 private:
  LanguageEncoderSpec spec_;
  Embedding embed_;
  BiLstm lstm_;
  Linear mean_head_;
  Linear log_var_head_;
  Linear span_head_;
};

struct VisionEncoderSpec {
  std::size_t raw_dim = 0;
  std::size_t feature_dim = 0;     // perception output; equals raw_dim when perception_depth is 0
  std::size_t perception_hidden = 64;
  std::size_t perception_depth = 0;
  std::size_t hidden_dim = 32;
  std::size_t z_dim = 0;
  std::size_t align_dim = 64;
};

/// Perception map, posterior encoder over perceived parts, and span embedder over perceived parts.
class VisionEncoder {
 public:
  VisionEncoder() = default;
  VisionEncoder(const VisionEncoderSpec& spec, ParamStore& store, const std::string& prefix, Rng& rng);

  const VisionEncoderSpec& spec() const { return spec_; }
  std::size_t feature_dim() const { return perception_.out_dim(); }
  /// psi(v) for [parts, raw_dim] input.
  ad::Var perceive(Binder& bind, ad::Var raw) const;
  /// Posterior from the perceived parts of one instance.
  Posterior posterior(Binder& bind, ad::Var features) const;
  ad::Var span_embeddings(Binder& bind, ad::Var features, std::size_t min_length = 2) const;

  const Linear& span_head() const { return span_head_; }

 private:
  VisionEncoderSpec spec_;
  Perception perception_;
  BiLstm lstm_;
  Linear mean_head_;
  Linear log_var_head_;
  Linear span_head_;
};

}  // namespace vlg

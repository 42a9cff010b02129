#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "vlg/ops.hpp"
#include "vlg/tape.hpp"

namespace vlg {

using Rng = std::mt19937_64;
using ParamId = std::size_t;

struct Parameter {
  std::string name;
  Tensor value;
};

/// Owns every learnable array of a model, in registration order.
class ParamStore {
 public:
  ParamId add(std::string name, Tensor init);
  /// Uniform(-scale, scale) initialization.
  ParamId add_uniform(std::string name, Shape shape, double scale, Rng& rng);
  ParamId add_zeros(std::string name, Shape shape);

  Parameter& operator[](ParamId id) { return params_.at(id); }
  const Parameter& operator[](ParamId id) const { return params_.at(id); }
  std::size_t size() const { return params_.size(); }
  /// Id of the named parameter; throws std::out_of_range when absent.
  ParamId id(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::vector<Parameter>& all() { return params_; }
  const std::vector<Parameter>& all() const { return params_; }

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, ParamId> index_;
};

/// Binds parameters to leaves of one tape on first use.
class Binder {
 public:
  Binder(ad::Tape& tape, const ParamStore& store) : tape_(&tape), store_(&store) {}

  ad::Var operator()(ParamId id);
  /// Binds `id` to an existing variable instead of a fresh leaf.
  void use(ParamId id, ad::Var v);
  ad::Tape& tape() const { return *tape_; }
  /// (parameter, leaf) for every parameter bound so far, in binding order.
  const std::vector<std::pair<ParamId, ad::Var>>& bound() const { return bound_; }

 private:
  ad::Tape* tape_;
  const ParamStore* store_;
  std::unordered_map<ParamId, ad::Var> leaves_;
  std::vector<std::pair<ParamId, ad::Var>> bound_;
};

enum class Activation { identity, tanh, relu };

struct Linear {
  ParamId weight = 0;  // [out, in]
  ParamId bias = 0;    // [out]
  std::size_t in = 0;
  std::size_t out = 0;

  static Linear create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng);
  static Linear zeros(ParamStore& store, const std::string& name, std::size_t in, std::size_t out);

  /// x of shape [in] or [rows, in].
  ad::Var operator()(Binder& bind, ad::Var x) const;
};

/// Stack of Linear layers with the activation applied after each. Zero layers is identity.
struct Mlp {
  std::vector<Linear> layers;
  Activation activation = Activation::tanh;

  static Mlp create(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden,
                    std::size_t depth, Activation activation, Rng& rng);
  std::size_t out_dim(std::size_t in) const { return layers.empty() ? in : layers.back().out; }
  ad::Var operator()(Binder& bind, ad::Var x) const;
};

struct Embedding {
  ParamId table = 0;  // [vocab, dim]
  std::size_t vocab = 0;
  std::size_t dim = 0;

  static Embedding create(ParamStore& store, const std::string& name, std::size_t vocab, std::size_t dim, Rng& rng);
  ad::Var operator()(Binder& bind, std::span<const std::size_t> ids) const;
};

/// Single-direction LSTM over the rows of an [n, in] input.
struct Lstm {
  ParamId weight = 0;  // [4h, in + h], gate order i, f, g, o
  ParamId bias = 0;    // [4h]
  std::size_t in = 0;
  std::size_t hidden = 0;

  static Lstm create(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden, Rng& rng);
  /// Hidden state per position, in input order regardless of direction.
  std::vector<ad::Var> run(Binder& bind, ad::Var inputs, bool reverse) const;
};

struct BiLstm {
  Lstm forward;
  Lstm backward;

  static BiLstm create(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden, Rng& rng);
  std::size_t out_dim() const { return forward.hidden + backward.hidden; }
  /// [n, in] -> [n, 2h]; row l is [forward h_l ; backward h_l].
  ad::Var operator()(Binder& bind, ad::Var inputs) const;
};

}  // namespace vlg

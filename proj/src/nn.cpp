#include "vlg/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace vlg {

using ad::Var;

ParamId ParamStore::add(std::string name, Tensor init) {
  if (index_.count(name)) throw std::invalid_argument("param store: duplicate parameter '" + name + "'");
  index_.emplace(name, params_.size());
  params_.push_back(Parameter{std::move(name), std::move(init)});
  return params_.size() - 1;
}

ParamId ParamStore::add_uniform(std::string name, Shape shape, double scale, Rng& rng) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return add(std::move(name), std::move(t));
}

ParamId ParamStore::add_zeros(std::string name, Shape shape) {
  return add(std::move(name), Tensor::zeros(std::move(shape)));
}

ParamId ParamStore::id(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("param store: no parameter '" + name + "'");
  return it->second;
}

Var Binder::operator()(ParamId id) {
  auto it = leaves_.find(id);
  if (it != leaves_.end()) return it->second;
  Var v = tape_->leaf((*store_)[id].value, true);
  leaves_.emplace(id, v);
  bound_.emplace_back(id, v);
  return v;
}

void Binder::use(ParamId id, Var v) {
  const Tensor& expect = (*store_)[id].value;
  if (v.shape() != expect.shape()) throw DimensionError("binder: " + (*store_)[id].name, v.shape(), expect.shape());
  if (!leaves_.emplace(id, v).second) throw std::logic_error("binder: parameter already bound");
  bound_.emplace_back(id, v);
}

Linear Linear::create(ParamStore& store, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(in, 1)));
  Linear l;
  l.in = in;
  l.out = out;
  l.weight = store.add_uniform(name + ".weight", {out, in}, scale, rng);
  l.bias = store.add_uniform(name + ".bias", {out}, scale, rng);
  return l;
}

Linear Linear::zeros(ParamStore& store, const std::string& name, std::size_t in, std::size_t out) {
  Linear l;
  l.in = in;
  l.out = out;
  l.weight = store.add_zeros(name + ".weight", {out, in});
  l.bias = store.add_zeros(name + ".bias", {out});
  return l;
}

Var Linear::operator()(Binder& bind, Var x) const { return ad::affine(x, bind(weight), bind(bias)); }

Mlp Mlp::create(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden,
                std::size_t depth, Activation activation, Rng& rng) {
  Mlp m;
  m.activation = activation;
  std::size_t width = in;
  for (std::size_t i = 0; i < depth; ++i) {
    m.layers.push_back(Linear::create(store, name + "." + std::to_string(i), width, hidden, rng));
    width = hidden;
  }
  return m;
}

Var Mlp::operator()(Binder& bind, Var x) const {
  for (const Linear& layer : layers) {
    x = layer(bind, x);
    switch (activation) {
      case Activation::tanh: x = ad::tanh(x); break;
      case Activation::relu: x = ad::relu(x); break;
      case Activation::identity: break;
    }
  }
  return x;
}

Embedding Embedding::create(ParamStore& store, const std::string& name, std::size_t vocab, std::size_t dim, Rng& rng) {
  Embedding e;
  e.vocab = vocab;
  e.dim = dim;
  e.table = store.add_uniform(name, {vocab, dim}, 0.5, rng);
  return e;
}

Var Embedding::operator()(Binder& bind, std::span<const std::size_t> ids) const {
  return ad::gather_rows(bind(table), ids);
}

Lstm Lstm::create(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden, Rng& rng) {
  Lstm l;
  l.in = in;
  l.hidden = hidden;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hidden));
  l.weight = store.add_uniform(name + ".weight", {4 * hidden, in + hidden}, scale, rng);
  Tensor b = Tensor::zeros({4 * hidden});
  for (std::size_t i = hidden; i < 2 * hidden; ++i) b[i] = 1.0;  // forget gate
  l.bias = store.add(name + ".bias", std::move(b));
  return l;
}

std::vector<Var> Lstm::run(Binder& bind, Var inputs, bool reverse) const {
  const Tensor& x = inputs.value();
  if (x.rank() != 2 || x.dim(1) != in) throw DimensionError("lstm", x.shape(), Shape{0, in});
  const std::size_t n = x.dim(0);
  ad::Tape& tape = bind.tape();
  Var w = bind(weight);
  Var b = bind(bias);
  Var h = tape.constant(Tensor::zeros({hidden}));
  Var c = tape.constant(Tensor::zeros({hidden}));
  std::vector<Var> states(n);
  for (std::size_t step = 0; step < n; ++step) {
    const std::size_t t = reverse ? n - 1 - step : step;
    Var gates = ad::affine(ad::concat({ad::row(inputs, t), h}), w, b);
    Var i_gate = ad::sigmoid(ad::slice(gates, 0, 0, hidden));
    Var f_gate = ad::sigmoid(ad::slice(gates, 0, hidden, 2 * hidden));
    Var g_gate = ad::tanh(ad::slice(gates, 0, 2 * hidden, 3 * hidden));
    Var o_gate = ad::sigmoid(ad::slice(gates, 0, 3 * hidden, 4 * hidden));
    c = ad::add(ad::mul(f_gate, c), ad::mul(i_gate, g_gate));
    h = ad::mul(o_gate, ad::tanh(c));
    states[t] = h;
  }
  return states;
}

BiLstm BiLstm::create(ParamStore& store, const std::string& name, std::size_t in, std::size_t hidden, Rng& rng) {
  BiLstm b;
  b.forward = Lstm::create(store, name + ".fwd", in, hidden, rng);
  b.backward = Lstm::create(store, name + ".bwd", in, hidden, rng);
  return b;
}

Var BiLstm::operator()(Binder& bind, Var inputs) const {
  const std::vector<Var> f = forward.run(bind, inputs, false);
  const std::vector<Var> r = backward.run(bind, inputs, true);
  std::vector<Var> rows;
  rows.reserve(f.size());
  for (std::size_t t = 0; t < f.size(); ++t) rows.push_back(ad::concat({f[t], r[t]}));
  return ad::stack(rows);
}

}  // namespace vlg

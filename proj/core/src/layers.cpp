#include "iroam/layers.hpp"

#include <cmath>

#include "iroam/errors.hpp"

namespace iroam::nn {

Parameter& ParameterSet::create(const std::string& name, std::vector<int> shape) {
  if (find(name) != nullptr) throw std::invalid_argument("duplicate parameter name: " + name);
  Tensor value(shape, 0.0);
  Tensor grad(std::move(shape), 0.0);
  params_.push_back(Parameter{name, std::move(value), std::move(grad)});
  return params_.back();
}

Parameter& ParameterSet::create_normal(const std::string& name, std::vector<int> shape,
                                       double stddev) {
  Parameter& p = create(name, std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& v : p.value.vec()) v = dist(rng_);
  return p;
}

Parameter& ParameterSet::create_const(const std::string& name, std::vector<int> shape,
                                      double value) {
  Parameter& p = create(name, std::move(shape));
  p.value.fill(value);
  return p;
}

std::vector<Parameter*> ParameterSet::all() {
  std::vector<Parameter*> out;
  for (Parameter& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Parameter*> ParameterSet::all() const {
  std::vector<const Parameter*> out;
  for (const Parameter& p : params_) out.push_back(&p);
  return out;
}

Parameter* ParameterSet::find(const std::string& name) {
  for (Parameter& p : params_)
    if (p.name == name) return &p;
  return nullptr;
}

size_t ParameterSet::count() const {
  size_t n = 0;
  for (const Parameter& p : params_) n += p.value.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (Parameter& p : params_) p.zero_grad();
}

Linear Linear::create(ParameterSet& ps, const std::string& name, int in, int out) {
  Linear l;
  l.weight = &ps.create_normal(name + ".weight", {in, out}, std::sqrt(1.0 / in));
  l.bias = &ps.create_const(name + ".bias", {1, out}, 0.0);
  return l;
}

Var Linear::operator()(Graph& g, Var x) const {
  return linear(x, g.param(*weight), g.param(*bias));
}

Conv2d Conv2d::create(ParameterSet& ps, const std::string& name, int cin, int cout, int kernel,
                      int stride, int pad) {
  Conv2d c;
  const int fan_in = cin * kernel * kernel;
  c.weight = &ps.create_normal(name + ".weight", {cout, fan_in}, std::sqrt(2.0 / fan_in));
  c.bias = &ps.create_const(name + ".bias", {1, cout}, 0.0);
  c.kernel = kernel;
  c.stride = stride;
  c.pad = pad;
  return c;
}

Var Conv2d::operator()(Graph& g, Var x) const {
  return conv2d(x, g.param(*weight), g.param(*bias), kernel, stride, pad);
}

LayerNorm LayerNorm::create(ParameterSet& ps, const std::string& name, int dim) {
  LayerNorm ln;
  ln.gamma = &ps.create_const(name + ".gamma", {1, dim}, 1.0);
  ln.beta = &ps.create_const(name + ".beta", {1, dim}, 0.0);
  return ln;
}

Var LayerNorm::operator()(Graph& g, Var x) const {
  return layer_norm(x, g.param(*gamma), g.param(*beta));
}

MultiHeadAttention MultiHeadAttention::create(ParameterSet& ps, const std::string& name, int dim,
                                              int heads) {
  if (heads <= 0 || dim % heads != 0) throw ShapeError("attention dim must be divisible by heads");
  MultiHeadAttention a;
  a.q = Linear::create(ps, name + ".q", dim, dim);
  a.k = Linear::create(ps, name + ".k", dim, dim);
  a.v = Linear::create(ps, name + ".v", dim, dim);
  a.o = Linear::create(ps, name + ".o", dim, dim);
  a.heads = heads;
  return a;
}

Var MultiHeadAttention::operator()(Graph& g, Var query, Var key, Var value,
                                   std::vector<Tensor>* probs) const {
  const Var qp = q(g, query);
  const Var kp = k(g, key);
  const Var vp = v(g, value);
  const int dim = qp.cols();
  const int hd = dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(hd));
  std::vector<Var> outs;
  outs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    const Var qh = heads == 1 ? qp : slice_cols(qp, h * hd, (h + 1) * hd);
    const Var kh = heads == 1 ? kp : slice_cols(kp, h * hd, (h + 1) * hd);
    const Var vh = heads == 1 ? vp : slice_cols(vp, h * hd, (h + 1) * hd);
    const Var att = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt));
    if (probs != nullptr) probs->push_back(att.value());
    outs.push_back(matmul(att, vh));
  }
  const Var merged = heads == 1 ? outs[0] : concat_cols(outs);
  return o(g, merged);
}

FeedForward FeedForward::create(ParameterSet& ps, const std::string& name, int dim, int hidden) {
  FeedForward f;
  f.fc1 = Linear::create(ps, name + ".fc1", dim, hidden);
  f.fc2 = Linear::create(ps, name + ".fc2", hidden, dim);
  return f;
}

Var FeedForward::operator()(Graph& g, Var x) const { return fc2(g, relu(fc1(g, x))); }

}  // namespace iroam::nn

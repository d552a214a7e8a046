#include "iroam/autograd.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "iroam/errors.hpp"
#include "iroam/geometry.hpp"

namespace iroam::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;

MatMap mat(Tensor& t, int rows, int cols) { return MatMap(t.data(), rows, cols); }
CMatMap mat(const Tensor& t, int rows, int cols) { return CMatMap(t.data(), rows, cols); }
MatMap mat(Tensor& t) { return mat(t, t.rows(), t.cols()); }
CMatMap mat(const Tensor& t) { return mat(t, t.rows(), t.cols()); }
VecMap vec(Tensor& t) { return VecMap(t.data(), static_cast<Eigen::Index>(t.size())); }
CVecMap vec(const Tensor& t) { return CVecMap(t.data(), static_cast<Eigen::Index>(t.size())); }

Graph& graph_of(Var a) {
  if (!a.valid()) throw std::invalid_argument("uninitialized Var");
  return *a.graph();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                     " vs " + shape_string(b.shape()));
  }
}

// Forward-mode dual number with four tangent directions, used to
// differentiate GIoU exactly.
struct Dual {
  double v = 0.0;
  std::array<double, 4> d{};
  Dual() = default;
  Dual(double x) : v(x) {}  // NOLINT: implicit by design of the arithmetic
};
Dual operator+(Dual a, const Dual& b) {
  a.v += b.v;
  for (int i = 0; i < 4; ++i) a.d[i] += b.d[i];
  return a;
}
Dual operator-(Dual a, const Dual& b) {
  a.v -= b.v;
  for (int i = 0; i < 4; ++i) a.d[i] -= b.d[i];
  return a;
}
Dual operator*(const Dual& a, const Dual& b) {
  Dual r(a.v * b.v);
  for (int i = 0; i < 4; ++i) r.d[i] = a.d[i] * b.v + a.v * b.d[i];
  return r;
}
Dual operator*(double s, Dual a) {
  a.v *= s;
  for (double& x : a.d) x *= s;
  return a;
}
Dual operator/(const Dual& a, const Dual& b) {
  Dual r(a.v / b.v);
  for (int i = 0; i < 4; ++i) r.d[i] = (a.d[i] * b.v - a.v * b.d[i]) / (b.v * b.v);
  return r;
}
bool operator<(const Dual& a, double b) { return a.v < b; }
const Dual& max(const Dual& a, const Dual& b) { return a.v < b.v ? b : a; }
const Dual& min(const Dual& a, const Dual& b) { return b.v < a.v ? b : a; }

}  // namespace

// ---------------------------------------------------------------------------

const Tensor& Var::value() const { return g_->value(id_); }
bool Var::requires_grad() const { return g_->requires_grad(id_); }
Tensor Var::grad() const { return g_->grad(id_); }

Var Graph::constant(Tensor t) {
  nodes_.push_back(Node{std::move(t), {}, false, {}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::input(Tensor t) {
  nodes_.push_back(Node{std::move(t), {}, grad_enabled_, {}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::param(Parameter& p) {
  if (!grad_enabled_) return constant(p.value);
  Parameter* ptr = &p;
  BackwardFn fn = [ptr](Graph&, const Tensor& g) {
    if (ptr->grad.size() != g.size()) ptr->grad = Tensor(ptr->value.shape(), 0.0);
    vec(ptr->grad) += vec(g);
  };
  nodes_.push_back(Node{p.value, {}, true, std::move(fn)});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Var Graph::make(Tensor value, std::span<const Var> parents, BackwardFn backward) {
  bool rg = false;
  if (grad_enabled_) {
    for (const Var& p : parents) {
      if (p.graph() != this) throw std::invalid_argument("Var from a different graph");
      rg = rg || requires_grad(p.id());
    }
  }
  nodes_.push_back(Node{std::move(value), {}, rg, rg ? std::move(backward) : BackwardFn{}});
  return Var(this, static_cast<int>(nodes_.size() - 1));
}

Tensor& Graph::grad_buffer(int id) {
  Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

Tensor Graph::grad(int id) const {
  const Node& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.size() != n.value.size()) return Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Graph::backward(Var loss) {
  if (loss.graph() != this) throw std::invalid_argument("loss from a different graph");
  if (loss.value().size() != 1) throw ShapeError("backward needs a scalar loss");
  if (!requires_grad(loss.id())) return;
  grad_buffer(loss.id())[0] += 1.0;
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<size_t>(id)];
    if (!n.requires_grad || !n.backward || n.grad.size() != n.value.size()) continue;
    n.backward(*this, n.grad);
  }
}

// ---------------------------------------------------------------------------

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const int m = A.rows(), k = A.cols(), n = B.cols();
  if (B.rows() != k) throw ShapeError("matmul: inner dimension mismatch");
  Tensor out({m, n});
  mat(out).noalias() = mat(A) * mat(B);
  const int ia = a.id(), ib = b.id();
  const Var ps[] = {a, b};
  return g.make(std::move(out), ps, [ia, ib, m, k, n](Graph& g, const Tensor& go) {
    if (g.requires_grad(ia))
      mat(g.grad_buffer(ia), m, k).noalias() += mat(go, m, n) * mat(g.value(ib), k, n).transpose();
    if (g.requires_grad(ib))
      mat(g.grad_buffer(ib), k, n).noalias() += mat(g.value(ia), m, k).transpose() * mat(go, m, n);
  });
}

Var matmul_nt(Var a, Var b) {
  Graph& g = graph_of(a);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  const int m = A.rows(), k = A.cols(), n = B.rows();
  if (B.cols() != k) throw ShapeError("matmul_nt: inner dimension mismatch");
  Tensor out({m, n});
  mat(out).noalias() = mat(A) * mat(B).transpose();
  const int ia = a.id(), ib = b.id();
  const Var ps[] = {a, b};
  return g.make(std::move(out), ps, [ia, ib, m, k, n](Graph& g, const Tensor& go) {
    if (g.requires_grad(ia))
      mat(g.grad_buffer(ia), m, k).noalias() += mat(go, m, n) * mat(g.value(ib), n, k);
    if (g.requires_grad(ib))
      mat(g.grad_buffer(ib), n, k).noalias() += mat(go, m, n).transpose() * mat(g.value(ia), m, k);
  });
}

Var linear(Var x, Var w, Var b) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  const Tensor& W = w.value();
  const int m = X.rows(), k = X.cols(), n = W.cols();
  if (W.rows() != k) throw ShapeError("linear: weight rows must equal input cols");
  if (static_cast<int>(b.value().size()) != n) throw ShapeError("linear: bias size mismatch");
  Tensor out({m, n});
  auto O = mat(out);
  O.noalias() = mat(X) * mat(W);
  O.rowwise() += mat(b.value(), 1, n).row(0);
  const int ix = x.id(), iw = w.id(), ib = b.id();
  const Var ps[] = {x, w, b};
  return g.make(std::move(out), ps, [ix, iw, ib, m, k, n](Graph& g, const Tensor& go) {
    auto G = mat(go, m, n);
    if (g.requires_grad(ix))
      mat(g.grad_buffer(ix), m, k).noalias() += G * mat(g.value(iw), k, n).transpose();
    if (g.requires_grad(iw))
      mat(g.grad_buffer(iw), k, n).noalias() += mat(g.value(ix), m, k).transpose() * G;
    if (g.requires_grad(ib)) mat(g.grad_buffer(ib), 1, n) += G.colwise().sum();
  });
}

Var add(Var a, Var b) {
  Graph& g = graph_of(a);
  require_same_shape(a.value(), b.value(), "add");
  Tensor out = a.value();
  vec(out) += vec(b.value());
  const int ia = a.id(), ib = b.id();
  const Var ps[] = {a, b};
  return g.make(std::move(out), ps, [ia, ib](Graph& g, const Tensor& go) {
    if (g.requires_grad(ia)) vec(g.grad_buffer(ia)) += vec(go);
    if (g.requires_grad(ib)) vec(g.grad_buffer(ib)) += vec(go);
  });
}

Var sub(Var a, Var b) {
  Graph& g = graph_of(a);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor out = a.value();
  vec(out) -= vec(b.value());
  const int ia = a.id(), ib = b.id();
  const Var ps[] = {a, b};
  return g.make(std::move(out), ps, [ia, ib](Graph& g, const Tensor& go) {
    if (g.requires_grad(ia)) vec(g.grad_buffer(ia)) += vec(go);
    if (g.requires_grad(ib)) vec(g.grad_buffer(ib)) -= vec(go);
  });
}

Var mul(Var a, Var b) {
  Graph& g = graph_of(a);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor out = a.value();
  vec(out).array() *= vec(b.value()).array();
  const int ia = a.id(), ib = b.id();
  const Var ps[] = {a, b};
  return g.make(std::move(out), ps, [ia, ib](Graph& g, const Tensor& go) {
    if (g.requires_grad(ia)) vec(g.grad_buffer(ia)).array() += vec(go).array() * vec(g.value(ib)).array();
    if (g.requires_grad(ib)) vec(g.grad_buffer(ib)).array() += vec(go).array() * vec(g.value(ia)).array();
  });
}

Var scale(Var a, double s) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  vec(out) *= s;
  const int ia = a.id();
  const Var ps[] = {a};
  return g.make(std::move(out), ps, [ia, s](Graph& g, const Tensor& go) {
    vec(g.grad_buffer(ia)) += s * vec(go);
  });
}

Var add_const(Var a, const Tensor& c) {
  Graph& g = graph_of(a);
  if (a.value().size() != c.size()) throw ShapeError("add_const: size mismatch");
  Tensor out = a.value();
  vec(out) += vec(c);
  const int ia = a.id();
  const Var ps[] = {a};
  return g.make(std::move(out), ps, [ia](Graph& g, const Tensor& go) {
    vec(g.grad_buffer(ia)) += vec(go);
  });
}

Var relu(Var a) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  vec(out) = vec(out).cwiseMax(0.0);
  const int ia = a.id();
  const Var ps[] = {a};
  return g.make(std::move(out), ps, [ia](Graph& g, const Tensor& go) {
    const Tensor& x = g.value(ia);
    Tensor& gx = g.grad_buffer(ia);
    for (size_t i = 0; i < x.size(); ++i)
      if (x[i] > 0.0) gx[i] += go[i];
  });
}

Var sigmoid(Var a) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (double& v : out.vec()) v = 1.0 / (1.0 + std::exp(-v));
  Tensor saved = out;
  const int ia = a.id();
  const Var ps[] = {a};
  return g.make(std::move(out), ps, [ia, saved = std::move(saved)](Graph& g, const Tensor& go) {
    vec(g.grad_buffer(ia)).array() +=
        vec(go).array() * vec(saved).array() * (1.0 - vec(saved).array());
  });
}

Var exp(Var a) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (double& v : out.vec()) v = std::exp(v);
  const int ia = a.id();
  Tensor saved = out;
  const Var ps[] = {a};
  return g.make(std::move(out), ps, [ia, saved = std::move(saved)](Graph& g, const Tensor& go) {
    vec(g.grad_buffer(ia)).array() += vec(go).array() * vec(saved).array();
  });
}

Var log(Var a) {
  Graph& g = graph_of(a);
  Tensor out = a.value();
  for (double& v : out.vec()) {
    if (!(v > 0.0)) throw std::domain_error("log of a non-positive value");
    v = std::log(v);
  }
  const int ia = a.id();
  const Var ps[] = {a};
  return g.make(std::move(out), ps, [ia](Graph& g, const Tensor& go) {
    vec(g.grad_buffer(ia)).array() += vec(go).array() / vec(g.value(ia)).array();
  });
}

Tensor softmax_rows(const Tensor& a) {
  Tensor out = a;
  const int r = a.rows(), c = a.cols();
  for (int i = 0; i < r; ++i) {
    double* row = out.data() + static_cast<size_t>(i) * static_cast<size_t>(c);
    const double mx = *std::max_element(row, row + c);
    double s = 0.0;
    for (int j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - mx);
      s += row[j];
    }
    for (int j = 0; j < c; ++j) row[j] /= s;
  }
  return out;
}

std::vector<int> argmax_rows(const Tensor& a) {
  const int r = a.rows(), c = a.cols();
  std::vector<int> out(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    const double* row = a.data() + static_cast<size_t>(i) * static_cast<size_t>(c);
    out[static_cast<size_t>(i)] = static_cast<int>(std::max_element(row, row + c) - row);
  }
  return out;
}

Var softmax_rows(Var a) {
  Graph& g = graph_of(a);
  Tensor out = softmax_rows(a.value());
  Tensor saved = out;
  const int ia = a.id();
  const int r = out.rows(), c = out.cols();
  const Var ps[] = {a};
  return g.make(std::move(out), ps, [ia, r, c, saved = std::move(saved)](Graph& g, const Tensor& go) {
    auto Y = mat(saved, r, c);
    auto G = mat(go, r, c);
    Eigen::VectorXd dots = (Y.array() * G.array()).rowwise().sum();
    auto GX = mat(g.grad_buffer(ia), r, c);
    GX.array() += Y.array() * (G.colwise() - dots).array();
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  const int r = X.rows(), c = X.cols();
  if (static_cast<int>(gamma.value().size()) != c || static_cast<int>(beta.value().size()) != c)
    throw ShapeError("layer_norm: gain/bias size mismatch");
  Tensor xhat({r, c});
  std::vector<double> inv_std(static_cast<size_t>(r));
  auto XM = mat(X);
  auto H = mat(xhat);
  for (int i = 0; i < r; ++i) {
    const double mu = XM.row(i).mean();
    const double var = (XM.row(i).array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = is;
    H.row(i) = (XM.row(i).array() - mu) * is;
  }
  Tensor out({r, c});
  auto O = mat(out);
  O = H.array().rowwise() * mat(gamma.value(), 1, c).row(0).array();
  O.rowwise() += mat(beta.value(), 1, c).row(0);
  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  const Var ps[] = {x, gamma, beta};
  return g.make(std::move(out), ps,
                [ix, ig, ib, r, c, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                    Graph& g, const Tensor& go) {
                  auto G = mat(go, r, c);
                  auto H = mat(xhat, r, c);
                  if (g.requires_grad(ig))
                    mat(g.grad_buffer(ig), 1, c) += (G.array() * H.array()).colwise().sum().matrix();
                  if (g.requires_grad(ib)) mat(g.grad_buffer(ib), 1, c) += G.colwise().sum();
                  if (g.requires_grad(ix)) {
                    auto gam = mat(g.value(ig), 1, c);
                    auto GX = mat(g.grad_buffer(ix), r, c);
                    for (int i = 0; i < r; ++i) {
                      Eigen::RowVectorXd dh = G.row(i).cwiseProduct(gam);
                      const double m1 = dh.mean();
                      const double m2 = dh.cwiseProduct(H.row(i)).mean();
                      GX.row(i) += inv_std[static_cast<size_t>(i)] *
                                   (dh.array() - m1 - H.row(i).array() * m2).matrix();
                    }
                  }
                });
}

Var transpose(Var a) {
  Graph& g = graph_of(a);
  const int r = a.rows(), c = a.cols();
  Tensor out({c, r});
  mat(out) = mat(a.value()).transpose();
  const int ia = a.id();
  const Var ps[] = {a};
  return g.make(std::move(out), ps, [ia, r, c](Graph& g, const Tensor& go) {
    mat(g.grad_buffer(ia), r, c) += mat(go, c, r).transpose();
  });
}

Var reshape(Var a, std::vector<int> shape) {
  Graph& g = graph_of(a);
  Tensor out = a.value().reshaped(std::move(shape));
  const int ia = a.id();
  const Var ps[] = {a};
  return g.make(std::move(out), ps, [ia](Graph& g, const Tensor& go) {
    vec(g.grad_buffer(ia)) += vec(go);
  });
}

Var slice_cols(Var a, int c0, int c1) {
  Graph& g = graph_of(a);
  const int r = a.rows(), c = a.cols();
  if (c0 < 0 || c1 > c || c0 >= c1) throw ShapeError("slice_cols: bad range");
  const int w = c1 - c0;
  Tensor out({r, w});
  mat(out) = mat(a.value()).middleCols(c0, w);
  const int ia = a.id();
  const Var ps[] = {a};
  return g.make(std::move(out), ps, [ia, r, c, c0, w](Graph& g, const Tensor& go) {
    mat(g.grad_buffer(ia), r, c).middleCols(c0, w) += mat(go, r, w);
  });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  Graph& g = graph_of(parts[0]);
  const int r = parts[0].rows();
  int c = 0;
  std::vector<int> offsets, widths, ids;
  for (const Var& p : parts) {
    if (p.rows() != r) throw ShapeError("concat_cols: row mismatch");
    offsets.push_back(c);
    widths.push_back(p.cols());
    ids.push_back(p.id());
    c += p.cols();
  }
  Tensor out({r, c});
  for (size_t i = 0; i < parts.size(); ++i)
    mat(out).middleCols(offsets[i], widths[i]) = mat(parts[i].value());
  return g.make(std::move(out), parts, [ids, offsets, widths, r, c](Graph& g, const Tensor& go) {
    for (size_t i = 0; i < ids.size(); ++i) {
      if (!g.requires_grad(ids[i])) continue;
      mat(g.grad_buffer(ids[i]), r, widths[i]) += mat(go, r, c).middleCols(offsets[i], widths[i]);
    }
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  Graph& g = graph_of(parts[0]);
  const int c = parts[0].cols();
  int r = 0;
  std::vector<size_t> offsets, sizes;
  std::vector<int> ids;
  for (const Var& p : parts) {
    if (p.cols() != c) throw ShapeError("concat_rows: col mismatch");
    offsets.push_back(static_cast<size_t>(r) * static_cast<size_t>(c));
    sizes.push_back(p.value().size());
    ids.push_back(p.id());
    r += p.rows();
  }
  Tensor out({r, c});
  for (size_t i = 0; i < parts.size(); ++i)
    std::copy(parts[i].value().data(), parts[i].value().data() + sizes[i], out.data() + offsets[i]);
  return g.make(std::move(out), parts, [ids, offsets, sizes](Graph& g, const Tensor& go) {
    for (size_t i = 0; i < ids.size(); ++i) {
      if (!g.requires_grad(ids[i])) continue;
      Tensor& gb = g.grad_buffer(ids[i]);
      for (size_t j = 0; j < sizes[i]; ++j) gb[j] += go[offsets[i] + j];
    }
  });
}

Var gather_rows(Var a, std::span<const int> rows) {
  Graph& g = graph_of(a);
  const int r = a.rows(), c = a.cols();
  const int n = static_cast<int>(rows.size());
  Tensor out({n, c});
  for (int i = 0; i < n; ++i) {
    const int src = rows[static_cast<size_t>(i)];
    if (src < 0 || src >= r) throw ShapeError("gather_rows: index out of range");
    mat(out).row(i) = mat(a.value()).row(src);
  }
  std::vector<int> idx(rows.begin(), rows.end());
  const int ia = a.id();
  const Var ps[] = {a};
  return g.make(std::move(out), ps, [ia, r, c, idx = std::move(idx)](Graph& g, const Tensor& go) {
    auto GA = mat(g.grad_buffer(ia), r, c);
    auto G = mat(go, static_cast<int>(idx.size()), c);
    for (size_t i = 0; i < idx.size(); ++i) GA.row(idx[i]) += G.row(static_cast<Eigen::Index>(i));
  });
}

Var sum(Var a) {
  Graph& g = graph_of(a);
  Tensor out = Tensor::scalar(vec(a.value()).sum());
  const int ia = a.id();
  const Var ps[] = {a};
  return g.make(std::move(out), ps, [ia](Graph& g, const Tensor& go) {
    vec(g.grad_buffer(ia)).array() += go[0];
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return scale(sum(a), 1.0 / n);
}

Var weighted_sum(std::span<const Var> scalars, std::span<const double> weights) {
  if (scalars.empty() || scalars.size() != weights.size())
    throw ShapeError("weighted_sum: size mismatch");
  Graph& g = graph_of(scalars[0]);
  double total = 0.0;
  std::vector<int> ids;
  for (size_t i = 0; i < scalars.size(); ++i) {
    if (scalars[i].value().size() != 1) throw ShapeError("weighted_sum: non-scalar input");
    total += weights[i] * scalars[i].item();
    ids.push_back(scalars[i].id());
  }
  std::vector<double> w(weights.begin(), weights.end());
  return g.make(Tensor::scalar(total), scalars, [ids, w](Graph& g, const Tensor& go) {
    for (size_t i = 0; i < ids.size(); ++i)
      if (g.requires_grad(ids[i])) g.grad_buffer(ids[i])[0] += w[i] * go[0];
  });
}

Var average(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("average: no inputs");
  Graph& g = graph_of(parts[0]);
  Tensor out = parts[0].value();
  for (size_t i = 1; i < parts.size(); ++i) {
    require_same_shape(out, parts[i].value(), "average");
    vec(out) += vec(parts[i].value());
  }
  const double inv = 1.0 / static_cast<double>(parts.size());
  vec(out) *= inv;
  std::vector<int> ids;
  for (const Var& p : parts) ids.push_back(p.id());
  return g.make(std::move(out), parts, [ids, inv](Graph& g, const Tensor& go) {
    for (int id : ids)
      if (g.requires_grad(id)) vec(g.grad_buffer(id)) += inv * vec(go);
  });
}

Var l1_loss(Var a, const Tensor& target) {
  Graph& g = graph_of(a);
  if (a.value().size() != target.size()) throw ShapeError("l1_loss: size mismatch");
  const Tensor& x = a.value();
  double s = 0.0;
  Tensor sign(x.shape());
  for (size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - target[i];
    s += std::abs(d);
    sign[i] = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
  }
  const int ia = a.id();
  const Var ps[] = {a};
  return g.make(Tensor::scalar(s), ps, [ia, sign = std::move(sign)](Graph& g, const Tensor& go) {
    vec(g.grad_buffer(ia)) += go[0] * vec(sign);
  });
}

Var focal_loss_rows(Var logits, std::span<const int> targets, double gamma) {
  Graph& g = graph_of(logits);
  const Tensor& z = logits.value();
  const int r = z.rows(), c = z.cols();
  if (static_cast<int>(targets.size()) != r) throw ShapeError("focal_loss_rows: target count mismatch");
  Tensor p = softmax_rows(z);
  Tensor dz(z.shape(), 0.0);
  double total = 0.0;
  for (int i = 0; i < r; ++i) {
    const int t = targets[static_cast<size_t>(i)];
    if (t < 0) continue;
    if (t >= c) throw ShapeError("focal_loss_rows: target out of range");
    const double* zr = z.data() + static_cast<size_t>(i) * static_cast<size_t>(c);
    const double* pr = p.data() + static_cast<size_t>(i) * static_cast<size_t>(c);
    const double mx = *std::max_element(zr, zr + c);
    double lse = 0.0;
    for (int j = 0; j < c; ++j) lse += std::exp(zr[j] - mx);
    const double log_pt = zr[t] - mx - std::log(lse);
    const double pt = pr[t];
    const double q = 1.0 - pt;
    const double w = std::pow(q, gamma);
    total += -w * log_pt;
    // dL/dz_j = [gamma q^(gamma-1) log pt * pt - q^gamma] (delta_tj - p_j)
    const double coeff = (gamma > 0.0 ? gamma * std::pow(q, gamma - 1.0) * log_pt * pt : 0.0) - w;
    double* dr = dz.data() + static_cast<size_t>(i) * static_cast<size_t>(c);
    for (int j = 0; j < c; ++j) dr[j] = coeff * ((j == t ? 1.0 : 0.0) - pr[j]);
  }
  const int il = logits.id();
  const Var ps[] = {logits};
  return g.make(Tensor::scalar(total), ps, [il, dz = std::move(dz)](Graph& g, const Tensor& go) {
    vec(g.grad_buffer(il)) += go[0] * vec(dz);
  });
}

Var giou_loss_rows(Var boxes, const Tensor& targets) {
  Graph& g = graph_of(boxes);
  const Tensor& b = boxes.value();
  if (b.cols() != 4 || targets.size() != b.size()) throw ShapeError("giou_loss_rows: expected (R, 4)");
  const int r = b.rows();
  Tensor db(b.shape(), 0.0);
  double total = 0.0;
  for (int i = 0; i < r; ++i) {
    std::array<Dual, 4> pb;
    std::array<Dual, 4> tb;
    for (int k = 0; k < 4; ++k) {
      pb[static_cast<size_t>(k)] = Dual(b.at(i, k));
      pb[static_cast<size_t>(k)].d[static_cast<size_t>(k)] = 1.0;
      tb[static_cast<size_t>(k)] = Dual(targets.at(i, k));
    }
    const Dual gi = generalized_iou(pb, tb);
    total += 1.0 - gi.v;
    for (int k = 0; k < 4; ++k) db.at(i, k) = -gi.d[static_cast<size_t>(k)];
  }
  const int ib = boxes.id();
  const Var ps[] = {boxes};
  return g.make(Tensor::scalar(total), ps, [ib, db = std::move(db)](Graph& g, const Tensor& go) {
    vec(g.grad_buffer(ib)) += go[0] * vec(db);
  });
}

// ---------------------------------------------------------------------------

Var conv2d(Var x, Var weight, Var bias, int kernel, int stride, int pad) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  if (X.rank() != 3) throw ShapeError("conv2d: input must be (C, H, W)");
  const int cin = X.dim(0), h = X.dim(1), w = X.dim(2);
  const int cout = weight.rows();
  const int kk = cin * kernel * kernel;
  if (weight.cols() != kk) throw ShapeError("conv2d: weight must be (Cout, Cin*k*k)");
  if (static_cast<int>(bias.value().size()) != cout) throw ShapeError("conv2d: bias size mismatch");
  const int ho = (h + 2 * pad - kernel) / stride + 1;
  const int wo = (w + 2 * pad - kernel) / stride + 1;
  if (ho <= 0 || wo <= 0) throw ShapeError("conv2d: input smaller than kernel");
  const int npos = ho * wo;

  Tensor cols({kk, npos}, 0.0);
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        double* dst = cols.data() + static_cast<size_t>((c * kernel + ky) * kernel + kx) * static_cast<size_t>(npos);
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          const double* src = X.data() + (static_cast<size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[oy * wo + ox] = src[ix];
          }
        }
      }
    }
  }
  Tensor out({cout, ho, wo});
  auto O = mat(out, cout, npos);
  O.noalias() = mat(weight.value(), cout, kk) * mat(cols, kk, npos);
  O.colwise() += mat(bias.value(), cout, 1).col(0);

  const int ixd = x.id(), iw = weight.id(), ib = bias.id();
  const Var ps[] = {x, weight, bias};
  return g.make(std::move(out), ps,
                [=, cols = std::move(cols)](Graph& g, const Tensor& go) {
                  auto G = mat(go, cout, npos);
                  if (g.requires_grad(iw))
                    mat(g.grad_buffer(iw), cout, kk).noalias() += G * mat(cols, kk, npos).transpose();
                  if (g.requires_grad(ib)) mat(g.grad_buffer(ib), cout, 1) += G.rowwise().sum();
                  if (!g.requires_grad(ixd)) return;
                  RowMat dcols = mat(g.value(iw), cout, kk).transpose() * G;
                  Tensor& gx = g.grad_buffer(ixd);
                  for (int c = 0; c < cin; ++c) {
                    for (int ky = 0; ky < kernel; ++ky) {
                      for (int kx = 0; kx < kernel; ++kx) {
                        const double* src = dcols.data() + static_cast<size_t>((c * kernel + ky) * kernel + kx) * static_cast<size_t>(npos);
                        for (int oy = 0; oy < ho; ++oy) {
                          const int iy = oy * stride - pad + ky;
                          if (iy < 0 || iy >= h) continue;
                          double* dst = gx.data() + (static_cast<size_t>(c) * h + iy) * w;
                          for (int ox = 0; ox < wo; ++ox) {
                            const int ix = ox * stride - pad + kx;
                            if (ix >= 0 && ix < w) dst[ix] += src[oy * wo + ox];
                          }
                        }
                      }
                    }
                  }
                });
}

Var upsample_nearest2x(Var x) {
  Graph& g = graph_of(x);
  const Tensor& X = x.value();
  if (X.rank() != 3) throw ShapeError("upsample_nearest2x: input must be (C, H, W)");
  const int c = X.dim(0), h = X.dim(1), w = X.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx)
        out[(static_cast<size_t>(ch) * 2 * h + y) * 2 * w + xx] =
            X[(static_cast<size_t>(ch) * h + y / 2) * w + xx / 2];
  const int ix = x.id();
  const Var ps[] = {x};
  return g.make(std::move(out), ps, [ix, c, h, w](Graph& g, const Tensor& go) {
    Tensor& gx = g.grad_buffer(ix);
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < 2 * h; ++y)
        for (int xx = 0; xx < 2 * w; ++xx)
          gx[(static_cast<size_t>(ch) * h + y / 2) * w + xx / 2] +=
              go[(static_cast<size_t>(ch) * 2 * h + y) * 2 * w + xx];
  });
}

Var map_to_tokens(Var x) {
  const Tensor& X = x.value();
  if (X.rank() != 3) throw ShapeError("map_to_tokens: input must be (C, H, W)");
  const int c = X.dim(0), hw = X.dim(1) * X.dim(2);
  return transpose(reshape(x, {c, hw}));
}

}  // namespace iroam::nn

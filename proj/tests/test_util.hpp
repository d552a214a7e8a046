#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "iroam/autograd.hpp"
#include "iroam/layers.hpp"

namespace iroam::testing {

inline nn::Tensor random_tensor(std::vector<int> shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  nn::Tensor t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& x : t.vec()) x = u(rng);
  return t;
}

struct GradCheck {
  int checked = 0;
  int failed = 0;
  double worst = 0.0;  // largest |a - n| / (rel_tol * max(|a|, |n|) + abs_tol)
  std::string worst_name;

  bool ok() const { return checked > 0 && failed == 0; }
};

inline bool grad_close(double analytic, double numeric, double rel_tol, double abs_tol, double* ratio = nullptr) {
  const double bound = rel_tol * std::max(std::abs(analytic), std::abs(numeric)) + abs_tol;
  if (ratio) *ratio = std::abs(analytic - numeric) / bound;
  return std::abs(analytic - numeric) <= bound;
}

/// Central differences on sampled entries of every parameter whose name
/// starts with `prefix`. `loss` builds a fresh graph; when its argument is
/// true it must also run backward.
inline GradCheck check_parameter_gradients(nn::ParameterSet& ps, const std::function<double(bool)>& loss,
                                           const std::string& prefix, int per_tensor, std::mt19937_64& rng,
                                           double rel_tol = 1e-4, double abs_tol = 1e-7, double h = 1e-5) {
  ps.zero_grad();
  loss(true);
  GradCheck out;
  for (nn::Parameter* p : ps.all()) {
    if (p->name.rfind(prefix, 0) != 0) continue;
    const nn::Tensor analytic = p->grad;
    std::vector<size_t> idx(p->value.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(idx.size(), static_cast<size_t>(per_tensor)));
    for (size_t i : idx) {
      const double x = p->value[i];
      p->value[i] = x + h;
      const double fp = loss(false);
      p->value[i] = x - h;
      const double fm = loss(false);
      p->value[i] = x;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic.size() ? analytic[i] : 0.0;
      double ratio = 0.0;
      ++out.checked;
      if (!grad_close(a, numeric, rel_tol, abs_tol, &ratio)) ++out.failed;
      if (ratio > out.worst) {
        out.worst = ratio;
        out.worst_name = p->name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return out;
}

/// Gradient of a scalar op with respect to each input tensor, analytic vs
/// central differences on every entry.
inline GradCheck check_input_gradients(const std::function<nn::Var(nn::Graph&, std::vector<nn::Var>&)>& f,
                                       std::vector<nn::Tensor> inputs, double rel_tol = 1e-5, double abs_tol = 1e-8,
                                       double h = 1e-6) {
  std::vector<nn::Tensor> analytic;
  {
    nn::Graph g;
    std::vector<nn::Var> vars;
    for (const nn::Tensor& t : inputs) vars.push_back(g.input(t));
    g.backward(f(g, vars));
    for (const nn::Var& v : vars) analytic.push_back(v.grad());
  }
  auto value = [&]() {
    nn::Graph g;
    g.set_grad_enabled(false);
    std::vector<nn::Var> vars;
    for (const nn::Tensor& t : inputs) vars.push_back(g.constant(t));
    return f(g, vars).item();
  };
  GradCheck out;
  for (size_t k = 0; k < inputs.size(); ++k) {
    for (size_t i = 0; i < inputs[k].size(); ++i) {
      const double x = inputs[k][i];
      inputs[k][i] = x + h;
      const double fp = value();
      inputs[k][i] = x - h;
      const double fm = value();
      inputs[k][i] = x;
      double ratio = 0.0;
      ++out.checked;
      if (!grad_close(analytic[k][i], (fp - fm) / (2.0 * h), rel_tol, abs_tol, &ratio)) ++out.failed;
      if (ratio > out.worst) {
        out.worst = ratio;
        out.worst_name = "input" + std::to_string(k) + "[" + std::to_string(i) + "]";
      }
    }
  }
  return out;
}

}  // namespace iroam::testing

#pragma once

#include <cstdint>
#include <deque>
#include <random>
#include <string>
#include <vector>

#include "iroam/autograd.hpp"

namespace iroam::nn {

/// Owns parameters with stable addresses, in creation order.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;

  Parameter& create(const std::string& name, std::vector<int> shape);
  /// Normal(0, stddev) init from the set's generator.
  Parameter& create_normal(const std::string& name, std::vector<int> shape, double stddev);
  Parameter& create_const(const std::string& name, std::vector<int> shape, double value);

  void seed(std::uint64_t s) { rng_.seed(s); }
  std::mt19937_64& rng() { return rng_; }

  std::vector<Parameter*> all();
  std::vector<const Parameter*> all() const;
  Parameter* find(const std::string& name);
  size_t count() const;
  void zero_grad();

 private:
  std::deque<Parameter> params_;
  std::mt19937_64 rng_{0};
};

struct Linear {
  Parameter* weight = nullptr;  // (in, out)
  Parameter* bias = nullptr;    // (1, out)

  static Linear create(ParameterSet& ps, const std::string& name, int in, int out);
  Var operator()(Graph& g, Var x) const;
  int in() const { return weight->value.dim(0); }
  int out() const { return weight->value.dim(1); }
};

struct Conv2d {
  Parameter* weight = nullptr;  // (Cout, Cin*k*k)
  Parameter* bias = nullptr;    // (1, Cout)
  int kernel = 3;
  int stride = 1;
  int pad = 1;

  static Conv2d create(ParameterSet& ps, const std::string& name, int cin, int cout,
                       int kernel, int stride, int pad);
  Var operator()(Graph& g, Var x) const;
};

struct LayerNorm {
  Parameter* gamma = nullptr;
  Parameter* beta = nullptr;

  static LayerNorm create(ParameterSet& ps, const std::string& name, int dim);
  Var operator()(Graph& g, Var x) const;
};

/// Multi-head scaled dot-product attention.
struct MultiHeadAttention {
  Linear q, k, v, o;
  int heads = 4;

  static MultiHeadAttention create(ParameterSet& ps, const std::string& name, int dim, int heads);
  /// `query` (Nq, C) attends over `key`/`value` (Nk, C). When `probs` is
  /// non-null the per-head attention matrices are appended to it.
  Var operator()(Graph& g, Var query, Var key, Var value,
                 std::vector<Tensor>* probs = nullptr) const;
};

struct FeedForward {
  Linear fc1, fc2;

  static FeedForward create(ParameterSet& ps, const std::string& name, int dim, int hidden);
  Var operator()(Graph& g, Var x) const;
};

}  // namespace iroam::nn

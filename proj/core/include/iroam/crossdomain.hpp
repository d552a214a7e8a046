#pragma once

#include <span>
#include <vector>

#include "iroam/autograd.hpp"
#include "iroam/geometry.hpp"
#include "iroam/interaction.hpp"

namespace iroam {

/// Query indices picked from one domain's Q^d.
struct DomainSamples {
  std::vector<int> positives;  // assigned query of each ground truth, in GT order
  std::vector<int> negatives;  // unassigned queries with the lowest best-case score
};

/// Positives are the Hungarian-assigned queries. Negatives are the K
/// unassigned queries whose maximum score over all ground truths is lowest,
/// ties broken by query index. Throws TooFewQueries if N < 2K.
DomainSamples sample_queries(const MatchResult& match);

/// Merged cross-domain sets: rows of Q^P and Q^N, roadside first.
struct SampleSets {
  nn::Var positives;  // (K, C)
  nn::Var negatives;  // (K, C)
  std::vector<Domain> domains;  // per row, shared by both sets

  int size() const { return positives.rows(); }
};

SampleSets merge_samples(nn::Var roadside_queries, const DomainSamples& roadside,
                         nn::Var vehicle_queries, const DomainSamples& vehicle);

struct SemanticGeometrySplit {
  nn::Var semantic;  // first C/2 channels
  nn::Var geometry;  // last C/2 channels
};

/// Exact channel bisection. Throws OddChannelError when C is odd.
SemanticGeometrySplit decouple(nn::Var rows);

/// sigmoid(cosine(a, b)) for i != j, 0 for i == j. Throws ZeroVector when
/// either norm is below 1e-12 and i != j.
double similarity(std::span<const double> a, std::span<const double> b, int i, int j);

/// (K, 2K) labels over the columns [Q^P, Q^N]: 1 iff the column is a
/// positive other than the row itself.
nn::Tensor similarity_labels(int k);

enum class ContrastiveNormalization { None, ByK, ByKSquared };

struct ContrastiveOptions {
  bool decouple = true;  // use only the semantic half of each query
  ContrastiveNormalization normalization = ContrastiveNormalization::None;
};

/// sum_i sum_j |s_ij - label_ij| over i in [0, K), j in [0, 2K).
nn::Var contrastive_loss(const SampleSets& sets, const ContrastiveOptions& opts = {});

/// Same value computed on plain arrays, no tape.
double contrastive_loss_value(const nn::Tensor& positives, const nn::Tensor& negatives,
                              const ContrastiveOptions& opts = {});

/// (K, 2K) similarity matrix on rows already restricted to the channels in use.
nn::Tensor similarity_matrix(const nn::Tensor& positives, const nn::Tensor& negatives);

}  // namespace iroam

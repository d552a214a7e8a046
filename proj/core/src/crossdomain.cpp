#include "iroam/crossdomain.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "iroam/errors.hpp"

namespace iroam {

using nn::Tensor;
using nn::Var;

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMatMap = Eigen::Map<const RowMat>;

constexpr double kMinNorm = 1e-12;

double normalization_factor(ContrastiveNormalization n, int k) {
  switch (n) {
    case ContrastiveNormalization::None: return 1.0;
    case ContrastiveNormalization::ByK: return 1.0 / k;
    case ContrastiveNormalization::ByKSquared: return 1.0 / (static_cast<double>(k) * k);
  }
  return 1.0;
}

// Unit rows of X; throws ZeroVector on a degenerate row.
RowMat unit_rows(const RowMat& x, Eigen::VectorXd& norms) {
  norms = x.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i)
    if (norms[i] < kMinNorm) throw ZeroVector("query with zero semantic norm");
  return norms.cwiseInverse().asDiagonal() * x;
}

}  // namespace

DomainSamples sample_queries(const MatchResult& match) {
  const int n = match.num_queries();
  const int k = match.num_gt();
  if (k < 1) throw EmptyGT("query sampling needs at least one ground truth");
  if (n < 2 * k) throw TooFewQueries("need at least 2K queries to draw K negatives");
  DomainSamples out;
  out.positives = match.gt_to_query;
  const std::vector<int> q2g = match.query_to_gt();
  std::vector<std::pair<double, int>> candidates;
  for (int q = 0; q < n; ++q) {
    if (q2g[static_cast<size_t>(q)] >= 0) continue;
    double best = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < k; ++j) best = std::max(best, match.score.at(q, j));
    candidates.emplace_back(best, q);
  }
  std::sort(candidates.begin(), candidates.end());
  for (int i = 0; i < k; ++i) out.negatives.push_back(candidates[static_cast<size_t>(i)].second);
  return out;
}

SampleSets merge_samples(Var roadside_queries, const DomainSamples& roadside, Var vehicle_queries,
                         const DomainSamples& vehicle) {
  if (roadside.positives.size() != roadside.negatives.size() ||
      vehicle.positives.size() != vehicle.negatives.size())
    throw std::invalid_argument("positive and negative sets must have equal size");
  SampleSets s;
  const Var pos[] = {nn::gather_rows(roadside_queries, roadside.positives),
                     nn::gather_rows(vehicle_queries, vehicle.positives)};
  const Var neg[] = {nn::gather_rows(roadside_queries, roadside.negatives),
                     nn::gather_rows(vehicle_queries, vehicle.negatives)};
  s.positives = nn::concat_rows(pos);
  s.negatives = nn::concat_rows(neg);
  s.domains.assign(roadside.positives.size(), Domain::Roadside);
  s.domains.insert(s.domains.end(), vehicle.positives.size(), Domain::Vehicle);
  return s;
}

SemanticGeometrySplit decouple(Var rows) {
  const int c = rows.cols();
  if (c % 2 != 0) throw OddChannelError("cannot bisect an odd channel count");
  return {nn::slice_cols(rows, 0, c / 2), nn::slice_cols(rows, c / 2, c)};
}

double similarity(std::span<const double> a, std::span<const double> b, int i, int j) {
  if (i == j) return 0.0;
  if (a.size() != b.size()) throw ShapeError("similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t t = 0; t < a.size(); ++t) {
    dot += a[t] * b[t];
    na += a[t] * a[t];
    nb += b[t] * b[t];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < kMinNorm || nb < kMinNorm) throw ZeroVector("similarity of a zero vector");
  return 1.0 / (1.0 + std::exp(-dot / (na * nb)));
}

Tensor similarity_labels(int k) {
  Tensor out({k, 2 * k}, 0.0);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j)
      if (i != j) out.at(i, j) = 1.0;
  return out;
}

Tensor similarity_matrix(const Tensor& positives, const Tensor& negatives) {
  const int k = positives.rows();
  const int c = positives.cols();
  if (negatives.rows() != k || negatives.cols() != c) throw ShapeError("similarity_matrix: set shape mismatch");
  RowMat x(2 * k, c);
  x.topRows(k) = CMatMap(positives.data(), k, c);
  x.bottomRows(k) = CMatMap(negatives.data(), k, c);
  Eigen::VectorXd norms;
  const RowMat u = unit_rows(x, norms);
  const RowMat cos = u.topRows(k) * u.transpose();
  Tensor s({k, 2 * k});
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < 2 * k; ++j) s.at(i, j) = i == j ? 0.0 : 1.0 / (1.0 + std::exp(-cos(i, j)));
  return s;
}

namespace {

Var contrastive_l1(Var positives, Var negatives, double factor) {
  nn::Graph& g = *positives.graph();
  const int k = positives.rows();
  const int c = positives.cols();
  if (k < 1) throw EmptyGT("contrastive loss needs at least one positive");
  if (negatives.rows() != k || negatives.cols() != c) throw ShapeError("contrastive loss: set shape mismatch");

  RowMat x(2 * k, c);
  x.topRows(k) = CMatMap(positives.value().data(), k, c);
  x.bottomRows(k) = CMatMap(negatives.value().data(), k, c);
  Eigen::VectorXd norms;
  const RowMat u = unit_rows(x, norms);
  const RowMat gram = u * u.transpose();  // (2K, 2K)

  // weights(i, j) = d loss / d cos_ij for the K x 2K block.
  RowMat weights = RowMat::Zero(2 * k, 2 * k);
  double loss = 0.0;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < 2 * k; ++j) {
      if (i == j) continue;
      const double s = 1.0 / (1.0 + std::exp(-gram(i, j)));
      const double label = j < k ? 1.0 : 0.0;
      const double d = s - label;
      loss += std::abs(d);
      weights(i, j) = (d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0)) * s * (1.0 - s);
    }
  }
  const RowMat sym = weights + weights.transpose();
  RowMat du = sym * u;
  const Eigen::VectorXd radial = (sym.array() * gram.array()).rowwise().sum();
  du -= radial.asDiagonal() * u;
  RowMat dx = norms.cwiseInverse().asDiagonal() * du;
  dx *= factor;

  Tensor dpos({k, c}), dneg({k, c});
  Eigen::Map<RowMat>(dpos.data(), k, c) = dx.topRows(k);
  Eigen::Map<RowMat>(dneg.data(), k, c) = dx.bottomRows(k);
  const int ip = positives.id(), in = negatives.id();
  const Var ps[] = {positives, negatives};
  return g.make(Tensor::scalar(loss * factor), ps,
                [ip, in, dpos = std::move(dpos), dneg = std::move(dneg)](nn::Graph& g, const Tensor& go) {
                  if (g.requires_grad(ip)) {
                    Tensor& gp = g.grad_buffer(ip);
                    for (size_t t = 0; t < gp.size(); ++t) gp[t] += go[0] * dpos[t];
                  }
                  if (g.requires_grad(in)) {
                    Tensor& gn = g.grad_buffer(in);
                    for (size_t t = 0; t < gn.size(); ++t) gn[t] += go[0] * dneg[t];
                  }
                });
}

}  // namespace

Var contrastive_loss(const SampleSets& sets, const ContrastiveOptions& opts) {
  const int k = sets.size();
  const double factor = normalization_factor(opts.normalization, k);
  if (!opts.decouple) return contrastive_l1(sets.positives, sets.negatives, factor);
  return contrastive_l1(decouple(sets.positives).semantic, decouple(sets.negatives).semantic, factor);
}

double contrastive_loss_value(const Tensor& positives, const Tensor& negatives,
                              const ContrastiveOptions& opts) {
  nn::Graph g;
  g.set_grad_enabled(false);
  SampleSets s;
  s.positives = g.constant(positives);
  s.negatives = g.constant(negatives);
  return contrastive_loss(s, opts).item();
}

}  // namespace iroam

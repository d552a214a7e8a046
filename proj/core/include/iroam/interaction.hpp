#pragma once

#include <span>
#include <string>
#include <vector>

#include "iroam/autograd.hpp"
#include "iroam/geometry.hpp"
#include "iroam/layers.hpp"
#include "iroam/model_config.hpp"

namespace iroam {

/// Fixed 2D sine/cosine embedding, (h*w, channels); the first half of the
/// channels encodes the row, the second half the column. `channels` must be
/// divisible by 4.
nn::Tensor sine_position_embedding(int h, int w, int channels);

/// Stack of pre-norm blocks, each a self-attention layer and an FFN.
class TransformerEncoder {
 public:
  TransformerEncoder(nn::ParameterSet& ps, const std::string& prefix, int channels, int heads,
                     int hidden, int blocks);

  /// `tokens` is (L, C); `pos` (L, C) is added to the input sequence once.
  /// Attention matrices are appended to `probs` when non-null.
  nn::Var operator()(nn::Graph& g, nn::Var tokens, const nn::Tensor& pos,
                     std::vector<nn::Tensor>* probs = nullptr) const;

  int blocks() const { return static_cast<int>(blocks_.size()); }

 private:
  struct Block {
    nn::LayerNorm ln1, ln2;
    nn::MultiHeadAttention attn;
    nn::FeedForward ffn;
  };
  std::vector<Block> blocks_;
  nn::LayerNorm out_norm_;
};

/// Encoder outputs the decoder attends to. Position terms are added to the
/// attention keys only.
struct Embeddings {
  nn::Var content;      // (L, C)
  nn::Var depth;        // (L, C)
  nn::Var content_pos;  // (L, C) sine/cosine
  nn::Var depth_pos;    // (L, C) learnable, indexed by predicted depth bin
};

/// Blocks of depth cross-attention, query self-attention, content
/// cross-attention and FFN.
class DepthAwareDecoder {
 public:
  DepthAwareDecoder(nn::ParameterSet& ps, const ModelConfig& cfg, const std::string& prefix = "decoder");

  /// Rows of the learnable depth positional table for each cell's bin.
  nn::Var depth_positions(nn::Graph& g, std::span<const int> cell_bins) const;
  /// (N, C) queries -> updated (N, C) queries.
  nn::Var operator()(nn::Graph& g, nn::Var queries, const Embeddings& emb) const;

 private:
  struct Block {
    nn::LayerNorm ln_depth, ln_self, ln_content, ln_ffn;
    nn::MultiHeadAttention depth_attn, self_attn, content_attn;
    nn::FeedForward ffn;
  };
  std::vector<Block> blocks_;
  nn::LayerNorm out_norm_;
  nn::Parameter* depth_table_ = nullptr;  // (D+1, C)
};

/// Decoded per-query predictions.
struct HeadOutputs {
  nn::Var logits;       // (N, K_cls + 1), last column is no-object
  nn::Var box2d;        // (N, 4) normalized cx, cy, w, h
  nn::Var center;       // (N, 2) normalized projected 3D center
  nn::Var dims;         // (N, 3) meters, h w l
  nn::Var orientation;  // (N, 2) sin, cos of yaw
  nn::Var depth;        // (N, 1) meters

  int num_queries() const { return logits.rows(); }
};

/// The classifier reads the semantic half of each query, every regression
/// head the geometry half, unless `heads_use_full_query` is set.
class PredictionHeads {
 public:
  PredictionHeads(nn::ParameterSet& ps, const ModelConfig& cfg, const std::string& prefix = "heads");

  HeadOutputs operator()(nn::Graph& g, nn::Var qd) const;
  bool full_query() const { return full_query_; }

 private:
  bool full_query_;
  bool geometric_depth_;
  int channels_;
  nn::Linear cls_;
  nn::Linear reg_hidden_;
  nn::Linear box_, center_, dims_, ori_, depth_;
};

struct LossWeights {
  double cls = 2.0;
  double center3d = 10.0;
  double edge = 5.0;
  double giou = 2.0;
  double dim = 1.0;
  double ori = 1.0;
  double depth = 1.0;

  bool operator==(const LossWeights&) const = default;
};

struct CostTerms {
  double cls = 0.0;
  double center3d = 0.0;
  double edge = 0.0;
  double giou = 0.0;
};

/// lambda1*cls + lambda2*center3d + lambda3*edge + lambda4*giou.
double combine_cost(const CostTerms& t, const LossWeights& w);

/// -(1-p)^gamma log p for the ground-truth class probability p.
double class_focal_cost(double p, double gamma);

/// Individual cost terms of one (query, label) pair.
CostTerms pair_cost_terms(const HeadOutputs& pred, int query, const ObjectLabel& label, double gamma);

/// (N, K) matching cost. Throws EmptyGT when there are no labels.
nn::Tensor matching_cost(const HeadOutputs& pred, std::span<const ObjectLabel> labels,
                         const LossWeights& w, double gamma);

struct MatchResult {
  std::vector<int> gt_to_query;  // size K
  nn::Tensor cost;               // (N, K)
  nn::Tensor score;              // -cost
  double total_cost = 0.0;

  int num_queries() const { return cost.rows(); }
  int num_gt() const { return static_cast<int>(gt_to_query.size()); }
  /// -1 for unassigned queries.
  std::vector<int> query_to_gt() const;
};

/// Minimum-cost injective assignment of every column (ground truth) of an
/// (N, K) cost matrix to a row (query). Throws InfeasibleError if N < K.
MatchResult hungarian(const nn::Tensor& cost);

struct PairLoss {
  nn::Var total;  // sum over all N queries, not yet divided by K
  double cls_matched = 0.0;
  double cls_noobject = 0.0;
  double center3d = 0.0;
  double edge = 0.0;
  double giou = 0.0;
  double dim = 0.0;
  double ori = 0.0;
  double depth = 0.0;
  int matched = 0;
};

/// Matched queries contribute the full pair loss, the rest focal loss
/// toward the no-object class.
PairLoss pair_loss(nn::Graph& g, const HeadOutputs& pred, std::span<const ObjectLabel> labels,
                   const MatchResult& match, const LossWeights& w, double gamma);

}  // namespace iroam

#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <vector>

#include "iroam/encoder.hpp"
#include "iroam/geometry.hpp"
#include "iroam/image.hpp"
#include "iroam/interaction.hpp"

namespace iroam {

/// Everything one domain branch produces for a single image.
struct BranchOutput {
  FeatureMaps maps;
  nn::Var content;       // (C, H/16, W/16)
  nn::Var depth_feature; // (C, H/16, W/16)
  nn::Var depth_logits;  // (D+1, H/16, W/16)
  std::vector<int> cell_bins;
  Embeddings embeddings;
  nn::Var queries;  // Q^d, (N, C)
  HeadOutputs heads;
};

/// Feature encoder, content/depth transformer encoders, depth-aware decoder
/// and prediction heads behind one parameter set.
class Detector {
 public:
  Detector(const ModelConfig& cfg, std::uint64_t seed);
  Detector(const Detector&) = delete;
  Detector& operator=(const Detector&) = delete;

  BranchOutput forward(nn::Graph& g, const Image& image, Domain domain) const;
  /// Same, starting from a (3, H, W) tensor leaf already on the graph.
  BranchOutput forward(nn::Graph& g, nn::Var image, Domain domain) const;

  const ModelConfig& config() const { return cfg_; }
  nn::ParameterSet& parameters() { return params_; }
  const nn::ParameterSet& parameters() const { return params_; }

  const FeatureEncoder& encoder() const { return encoder_; }
  FeatureEncoder& encoder() { return encoder_; }
  const TransformerEncoder& content_encoder() const { return content_encoder_; }
  const TransformerEncoder& depth_encoder() const { return depth_encoder_; }
  const DepthAwareDecoder& decoder() const { return decoder_; }
  const PredictionHeads& heads() const { return heads_; }
  nn::Parameter& query_embedding() { return *query_embed_; }

  /// Number of forward passes run for each domain since the last reset.
  long branch_calls(Domain d) const { return calls_[static_cast<size_t>(d)].load(); }
  void reset_counters();

 private:
  ModelConfig cfg_;
  nn::ParameterSet params_;
  FeatureEncoder encoder_;
  TransformerEncoder content_encoder_;
  TransformerEncoder depth_encoder_;
  DepthAwareDecoder decoder_;
  PredictionHeads heads_;
  nn::Parameter* query_embed_ = nullptr;
  nn::Tensor pos_;
  mutable std::array<std::atomic<long>, 2> calls_{};
};

}  // namespace iroam

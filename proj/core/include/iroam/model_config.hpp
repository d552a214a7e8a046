#pragma once

#include <array>

namespace iroam {

/// Architecture hyper-parameters shared by the encoder, the query
/// interaction stack and the heads.
struct ModelConfig {
  int image_width = 256;
  int image_height = 160;
  int channels = 64;  // C, query and feature width
  std::array<int, 4> backbone_channels{16, 32, 64, 64};
  int depth_bins = 64;  // D
  double depth_min = 2.0;
  double depth_max = 65.0;
  int attention_heads = 4;
  int ffn_hidden = 128;
  int content_encoder_blocks = 3;
  int depth_encoder_blocks = 1;
  int decoder_blocks = 3;
  int num_queries = 50;
  int num_classes = 1;  // foreground classes; one extra no-object logit
  bool heads_use_full_query = false;
  bool mask_background = false;  // exclude background cells from L_dmap
  double focal_gamma = 2.0;
  // Depth head predicts a log-residual on predicted 3D height over predicted
  // 2D box height instead of depth directly.
  bool geometric_depth = true;
  // Initial output biases of the exponential decoders.
  std::array<double, 3> dims_prior{1.55, 1.75, 4.3};
  double depth_prior = 20.0;

  bool operator==(const ModelConfig&) const = default;
};

}  // namespace iroam

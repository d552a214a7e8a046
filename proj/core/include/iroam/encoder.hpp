#pragma once

#include <span>
#include <string>
#include <vector>

#include "iroam/autograd.hpp"
#include "iroam/layers.hpp"
#include "iroam/model_config.hpp"

namespace iroam {

class Image;

/// Multi-scale backbone output, each map (C, H/s, W/s) for s = 8, 16, 32.
struct FeatureMaps {
  nn::Var f8;
  nn::Var f16;
  nn::Var f32;
};

/// Linear-increasing depth discretization of [min, max] into D bins with
/// quadratic edges, plus one background class at index D.
class DepthBins {
 public:
  DepthBins(int bins, double min_depth, double max_depth);

  int bins() const { return bins_; }
  int background() const { return bins_; }
  double min_depth() const { return min_; }
  double max_depth() const { return max_; }
  /// D + 1 ascending edges, first = min, last = max.
  const std::vector<double>& edges() const { return edges_; }
  /// Bin index in [0, D-1] for a depth inside [min, max].
  int index(double depth) const;
  /// Depth at the center of a bin.
  double center(int bin) const;
  /// Classification target for a depth_gt cell: bin index, background()
  /// for the background sentinel (or -1 when background is masked), -1 for
  /// depths outside [min, max].
  int target(double depth_gt, bool mask_background) const;

 private:
  int bins_;
  double min_;
  double max_;
  double bin_size_;
  std::vector<double> edges_;
};

inline constexpr double kBackgroundDepth = -1.0;

/// (3, H, W) tensor of an image, normalized to roughly zero mean.
nn::Tensor image_to_tensor(const Image& image);

/// Backbone, scale unification, depth feature and foreground depth head.
class FeatureEncoder {
 public:
  FeatureEncoder(nn::ParameterSet& ps, const ModelConfig& cfg, const std::string& prefix = "encoder");

  /// `image` is (3, H, W). Throws ShapeError if H or W is not divisible by 32.
  FeatureMaps backbone(nn::Graph& g, nn::Var image) const;
  /// Nearest x2 upsampling of the 1/32 map, stride-2 convolution of the 1/8
  /// map, element-wise mean with the 1/16 map.
  nn::Var unify_scales(nn::Graph& g, const FeatureMaps& fm) const;
  /// Two 3x3 convolutions with a ReLU between them.
  nn::Var depth_feature(nn::Graph& g, nn::Var content) const;
  /// 3x3 convolution to D+1 per-cell logits, shape (D+1, H/16, W/16).
  nn::Var depth_map_head(nn::Graph& g, nn::Var depth_feature) const;

  nn::Conv2d& downsample_conv() { return down8_; }
  const DepthBins& bins() const { return bins_; }

 private:
  nn::Conv2d stem_, stage8_, stage16_, stage32_;
  nn::Conv2d lateral8_, lateral16_, lateral32_;
  nn::Conv2d down8_;
  nn::Conv2d depth1_, depth2_;
  nn::Conv2d depth_head_;
  DepthBins bins_;
};

/// Focal loss over depth-bin classification, averaged over supervised
/// cells. `depth_gt` is (H/16)*(W/16) meters, row-major, with
/// kBackgroundDepth for background.
nn::Var depth_map_loss(nn::Graph& g, nn::Var logits, std::span<const float> depth_gt,
                       const DepthBins& bins, double gamma, bool mask_background);

}  // namespace iroam

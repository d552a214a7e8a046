#include "iroam/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "iroam/errors.hpp"
#include "iroam/image.hpp"

namespace iroam {

using nn::Var;

DepthBins::DepthBins(int bins, double min_depth, double max_depth)
    : bins_(bins), min_(min_depth), max_(max_depth) {
  if (bins < 1 || !(max_depth > min_depth)) throw std::invalid_argument("invalid depth bins");
  bin_size_ = 2.0 * (max_ - min_) / (static_cast<double>(bins_) * (bins_ + 1));
  edges_.resize(static_cast<size_t>(bins_) + 1);
  for (int i = 0; i <= bins_; ++i) edges_[static_cast<size_t>(i)] = min_ + bin_size_ * i * (i + 1) / 2.0;
  edges_.back() = max_;
}

int DepthBins::index(double depth) const {
  const double x = -0.5 + 0.5 * std::sqrt(1.0 + 8.0 * (depth - min_) / bin_size_);
  const int i = static_cast<int>(std::floor(x));
  return std::clamp(i, 0, bins_ - 1);
}

double DepthBins::center(int bin) const {
  const auto b = static_cast<size_t>(std::clamp(bin, 0, bins_ - 1));
  return 0.5 * (edges_[b] + edges_[b + 1]);
}

int DepthBins::target(double depth_gt, bool mask_background) const {
  if (depth_gt == kBackgroundDepth) return mask_background ? -1 : background();
  if (!(depth_gt >= min_ && depth_gt <= max_)) return -1;
  return index(depth_gt);
}

nn::Tensor image_to_tensor(const Image& image) {
  const int h = image.height(), w = image.width();
  nn::Tensor t({3, h, w});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        t[(static_cast<size_t>(c) * h + y) * w + x] = (image.at(x, y, c) - 0.5) / 0.25;
  return t;
}

FeatureEncoder::FeatureEncoder(nn::ParameterSet& ps, const ModelConfig& cfg, const std::string& prefix)
    : bins_(cfg.depth_bins, cfg.depth_min, cfg.depth_max) {
  const auto& bc = cfg.backbone_channels;
  const int c = cfg.channels;
  stem_ = nn::Conv2d::create(ps, prefix + ".stem", 3, bc[0], 4, 4, 0);
  stage8_ = nn::Conv2d::create(ps, prefix + ".stage8", bc[0], bc[1], 3, 2, 1);
  stage16_ = nn::Conv2d::create(ps, prefix + ".stage16", bc[1], bc[2], 3, 2, 1);
  stage32_ = nn::Conv2d::create(ps, prefix + ".stage32", bc[2], bc[3], 3, 2, 1);
  lateral8_ = nn::Conv2d::create(ps, prefix + ".lateral8", bc[1], c, 1, 1, 0);
  lateral16_ = nn::Conv2d::create(ps, prefix + ".lateral16", bc[2], c, 1, 1, 0);
  lateral32_ = nn::Conv2d::create(ps, prefix + ".lateral32", bc[3], c, 1, 1, 0);
  down8_ = nn::Conv2d::create(ps, prefix + ".down8", c, c, 3, 2, 1);
  depth1_ = nn::Conv2d::create(ps, prefix + ".depth1", c, c, 3, 1, 1);
  depth2_ = nn::Conv2d::create(ps, prefix + ".depth2", c, c, 3, 1, 1);
  depth_head_ = nn::Conv2d::create(ps, prefix + ".depth_head", c, cfg.depth_bins + 1, 3, 1, 1);
}

FeatureMaps FeatureEncoder::backbone(nn::Graph& g, Var image) const {
  const auto& shape = image.shape();
  if (shape.size() != 3 || shape[0] != 3) throw ShapeError("backbone expects a (3, H, W) image");
  if (shape[1] % 32 != 0 || shape[2] % 32 != 0)
    throw ShapeError("image height and width must be divisible by 32, got " + nn::shape_string(shape));
  const Var x4 = nn::relu(stem_(g, image));
  const Var x8 = nn::relu(stage8_(g, x4));
  const Var x16 = nn::relu(stage16_(g, x8));
  const Var x32 = nn::relu(stage32_(g, x16));
  return {lateral8_(g, x8), lateral16_(g, x16), lateral32_(g, x32)};
}

Var FeatureEncoder::unify_scales(nn::Graph& g, const FeatureMaps& fm) const {
  const Var up = nn::upsample_nearest2x(fm.f32);
  const Var down = down8_(g, fm.f8);
  if (up.shape() != fm.f16.shape() || down.shape() != fm.f16.shape())
    throw ShapeError("unify_scales: scale mismatch " + nn::shape_string(fm.f8.shape()) + " / " +
                     nn::shape_string(fm.f16.shape()) + " / " + nn::shape_string(fm.f32.shape()));
  const Var parts[] = {down, fm.f16, up};
  return nn::average(parts);
}

Var FeatureEncoder::depth_feature(nn::Graph& g, Var content) const {
  return depth2_(g, nn::relu(depth1_(g, content)));
}

Var FeatureEncoder::depth_map_head(nn::Graph& g, Var fd) const { return depth_head_(g, fd); }

Var depth_map_loss(nn::Graph& g, Var logits, std::span<const float> depth_gt, const DepthBins& bins,
                   double gamma, bool mask_background) {
  const auto& shape = logits.shape();
  if (shape.size() != 3 || shape[0] != bins.bins() + 1)
    throw ShapeError("depth_map_loss: logits must be (D+1, H, W)");
  const size_t cells = static_cast<size_t>(shape[1]) * static_cast<size_t>(shape[2]);
  if (depth_gt.size() != cells)
    throw ShapeError("depth_map_loss: depth_gt has " + std::to_string(depth_gt.size()) +
                     " cells, expected " + std::to_string(cells));
  std::vector<int> targets(cells);
  int valid = 0;
  for (size_t i = 0; i < cells; ++i) {
    targets[i] = bins.target(depth_gt[i], mask_background);
    if (targets[i] >= 0) ++valid;
  }
  if (valid == 0) return g.constant(nn::Tensor::scalar(0.0));
  const Var rows = nn::map_to_tokens(logits);
  return nn::scale(nn::focal_loss_rows(rows, targets, gamma), 1.0 / valid);
}

}  // namespace iroam

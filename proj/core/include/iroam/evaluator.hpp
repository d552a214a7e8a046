#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "iroam/geometry.hpp"
#include "iroam/interaction.hpp"
#include "iroam/tensor.hpp"

namespace iroam {

class Detector;
struct DomainSample;

/// Head outputs detached from the tape.
struct RawPredictions {
  nn::Tensor logits;       // (N, classes + 1)
  nn::Tensor box2d;        // (N, 4)
  nn::Tensor center;       // (N, 2)
  nn::Tensor dims;         // (N, 3)
  nn::Tensor orientation;  // (N, 2)
  nn::Tensor depth;        // (N, 1)

  static RawPredictions from(const HeadOutputs& heads);
};

/// Keeps queries whose best foreground probability is at least `threshold`
/// and decodes them into the camera's rig frame. No NMS.
std::vector<Detection> filter_predictions(const RawPredictions& raw, const CameraModel& cam,
                                          double threshold = 0.2);

enum class IouKind { ThreeD, Bev };
std::string_view to_string(IouKind k);

using BoxIou = std::function<double(const Box3D&, const Box3D&)>;
BoxIou iou_function(IouKind k);

/// AP at 40 recall positions, times 100. Ground truths harder than
/// `difficulty` are ignore regions. Empty when no ground truth qualifies.
std::optional<double> ap_at_40(std::span<const std::vector<Detection>> dets,
                               std::span<const std::vector<ObjectLabel>> gts, const BoxIou& iou,
                               double threshold, Difficulty difficulty);

struct EvalCell {
  IouKind metric = IouKind::ThreeD;
  double iou = 0.5;
  Difficulty difficulty = Difficulty::Moderate;
  std::optional<double> ap;

  bool operator==(const EvalCell&) const = default;
};

struct EvalConfig {
  double score_threshold = 0.2;
  std::vector<double> iou_thresholds{0.5, 0.7};

  bool operator==(const EvalConfig&) const = default;
};

struct EvalReport {
  std::vector<EvalCell> cells;
  int frames = 0;
  int predictions = 0;
  std::array<int, 3> gt_counts{};  // cumulative easy, mod, hard
  EvalConfig config;
  std::string source;  // free-form description of what was evaluated

  /// Throws std::out_of_range when the cell is not in the grid.
  std::optional<double> at(IouKind metric, double iou, Difficulty d) const;
  std::string to_json() const;
  static EvalReport from_json(const std::string& text);
  /// Aligned text table, one row per IoU threshold.
  std::string to_table() const;

  bool operator==(const EvalReport&) const = default;
};

/// Metric grid over per-frame detections and labels.
EvalReport evaluate_detections(std::span<const std::vector<Detection>> dets,
                               std::span<const std::vector<ObjectLabel>> gts, const EvalConfig& cfg = {});

/// Inference over samples with gradients disabled.
std::vector<Detection> predict(const Detector& det, const DomainSample& sample, double threshold = 0.2);
EvalReport evaluate(const Detector& det, std::span<const DomainSample> samples, const EvalConfig& cfg = {});

struct BevPlotOptions {
  double x_min = -20.0;
  double x_max = 20.0;
  double z_max = 70.0;
  double pixels_per_meter = 8.0;
};

/// Top-down view: labels green, predictions red, camera frustum grey.
/// Throws IoError when the file cannot be written.
void bev_plot(std::span<const Detection> dets, std::span<const ObjectLabel> gts, const CameraModel& cam,
              const std::filesystem::path& out_path, const BevPlotOptions& opts = {});

}  // namespace iroam

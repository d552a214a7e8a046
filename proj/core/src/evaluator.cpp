#include "iroam/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "iroam/detector.hpp"
#include "iroam/errors.hpp"
#include "iroam/image.hpp"
#include "iroam/synthdata.hpp"
#include "json.hpp"

namespace iroam {

using json = nlohmann::json;

RawPredictions RawPredictions::from(const HeadOutputs& h) {
  return {h.logits.value(), h.box2d.value(), h.center.value(), h.dims.value(), h.orientation.value(), h.depth.value()};
}

std::vector<Detection> filter_predictions(const RawPredictions& raw, const CameraModel& cam, double threshold) {
  std::vector<Detection> out;
  if (raw.logits.size() == 0) return out;
  const nn::Tensor prob = nn::softmax_rows(raw.logits);
  const int n = prob.rows();
  const int fg = prob.cols() - 1;
  for (int q = 0; q < n; ++q) {
    double score = 0.0;
    for (int c = 0; c < fg; ++c) score = std::max(score, prob.at(q, c));
    if (score < threshold) continue;
    const double depth = raw.depth.at(q, 0);
    if (!(depth > 0.0)) continue;
    Detection d;
    d.score = score;
    d.box2d = {raw.box2d.at(q, 0), raw.box2d.at(q, 1), raw.box2d.at(q, 2), raw.box2d.at(q, 3)};
    d.box3d.center = unproject(raw.center.at(q, 0), raw.center.at(q, 1), depth, cam);
    d.box3d.dims = {raw.dims.at(q, 0), raw.dims.at(q, 1), raw.dims.at(q, 2)};
    d.box3d.yaw = std::atan2(raw.orientation.at(q, 0), raw.orientation.at(q, 1));
    d.box3d.validate();
    out.push_back(d);
  }
  return out;
}

std::string_view to_string(IouKind k) { return k == IouKind::ThreeD ? "AP3D" : "APBEV"; }

BoxIou iou_function(IouKind k) {
  if (k == IouKind::ThreeD) return [](const Box3D& a, const Box3D& b) { return iou_3d(a, b); };
  return [](const Box3D& a, const Box3D& b) { return iou_bev(a, b); };
}

std::optional<double> ap_at_40(std::span<const std::vector<Detection>> dets,
                               std::span<const std::vector<ObjectLabel>> gts, const BoxIou& iou, double threshold,
                               Difficulty difficulty) {
  if (dets.size() != gts.size()) throw std::invalid_argument("ap_at_40: frame count mismatch");
  struct Scored {
    double score;
    bool tp;
  };
  std::vector<Scored> scored;
  int n_gt = 0;
  for (size_t f = 0; f < dets.size(); ++f) {
    const auto& frame_gt = gts[f];
    std::vector<bool> valid(frame_gt.size()), used(frame_gt.size(), false);
    for (size_t j = 0; j < frame_gt.size(); ++j) {
      valid[j] = frame_gt[j].box3d.difficulty <= difficulty;
      n_gt += valid[j] ? 1 : 0;
    }
    std::vector<size_t> order(dets[f].size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t a, size_t b) { return dets[f][a].score > dets[f][b].score; });
    for (size_t i : order) {
      const Detection& d = dets[f][i];
      int best_valid = -1, best_ignored = -1;
      double iou_valid = threshold, iou_ignored = threshold;
      for (size_t j = 0; j < frame_gt.size(); ++j) {
        if (used[j]) continue;
        const double o = iou(d.box3d, frame_gt[j].box3d);
        if (valid[j] && o >= iou_valid && (best_valid < 0 || o > iou_valid)) {
          best_valid = static_cast<int>(j);
          iou_valid = o;
        } else if (!valid[j] && o >= iou_ignored && (best_ignored < 0 || o > iou_ignored)) {
          best_ignored = static_cast<int>(j);
          iou_ignored = o;
        }
      }
      if (best_valid >= 0) {
        used[static_cast<size_t>(best_valid)] = true;
        scored.push_back({d.score, true});
      } else if (best_ignored >= 0) {
        used[static_cast<size_t>(best_ignored)] = true;
      } else {
        scored.push_back({d.score, false});
      }
    }
  }
  if (n_gt == 0) return std::nullopt;
  std::stable_sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
  std::vector<double> recall, precision;
  int tp = 0, fp = 0;
  for (size_t i = 0; i < scored.size(); ++i) {
    (scored[i].tp ? tp : fp) += 1;
    if (i + 1 < scored.size() && scored[i + 1].score == scored[i].score) continue;
    recall.push_back(static_cast<double>(tp) / n_gt);
    precision.push_back(static_cast<double>(tp) / (tp + fp));
  }
  // Running max from the right gives the interpolated precision envelope.
  for (size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double total = 0.0;
  size_t k = 0;
  for (int r = 1; r <= 40; ++r) {
    const double target = r / 40.0;
    while (k < recall.size() && recall[k] < target - 1e-12) ++k;
    if (k < recall.size()) total += precision[k];
  }
  return 100.0 * total / 40.0;
}

std::optional<double> EvalReport::at(IouKind metric, double iou, Difficulty d) const {
  for (const EvalCell& c : cells)
    if (c.metric == metric && c.iou == iou && c.difficulty == d) return c.ap;
  throw std::out_of_range("no such cell in the report");
}

std::string EvalReport::to_json() const {
  json jc = json::array();
  for (const EvalCell& c : cells) {
    jc.push_back({{"metric", std::string(to_string(c.metric))},
                  {"iou", c.iou},
                  {"difficulty", std::string(to_string(c.difficulty))},
                  {"ap", c.ap ? json(*c.ap) : json(nullptr)}});
  }
  const json j = {{"cells", jc},
                  {"frames", frames},
                  {"predictions", predictions},
                  {"gt_counts", {{"easy", gt_counts[0]}, {"mod", gt_counts[1]}, {"hard", gt_counts[2]}}},
                  {"config", {{"score_threshold", config.score_threshold}, {"iou_thresholds", config.iou_thresholds}}},
                  {"source", source}};
  return j.dump(1);
}

EvalReport EvalReport::from_json(const std::string& text) {
  EvalReport r;
  try {
    const json j = json::parse(text);
    for (const json& c : j.at("cells")) {
      EvalCell cell;
      cell.metric = c.at("metric").get<std::string>() == "AP3D" ? IouKind::ThreeD : IouKind::Bev;
      cell.iou = c.at("iou");
      cell.difficulty = difficulty_from_string(c.at("difficulty").get<std::string>());
      if (!c.at("ap").is_null()) cell.ap = c.at("ap").get<double>();
      r.cells.push_back(cell);
    }
    r.frames = j.at("frames");
    r.predictions = j.at("predictions");
    r.gt_counts = {j.at("gt_counts").at("easy"), j.at("gt_counts").at("mod"), j.at("gt_counts").at("hard")};
    r.config.score_threshold = j.at("config").at("score_threshold");
    r.config.iou_thresholds = j.at("config").at("iou_thresholds").get<std::vector<double>>();
    r.source = j.at("source");
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed report: ") + e.what());
  }
  return r;
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  char buf[128];
  std::snprintf(buf, sizeof(buf), "%-6s | %-23s | %-23s\n", "", "AP3D", "APBEV");
  os << buf;
  std::snprintf(buf, sizeof(buf), "%-6s | %7s %7s %7s | %7s %7s %7s\n", "IoU", "Easy", "Mod", "Hard", "Easy", "Mod",
                "Hard");
  os << buf;
  for (double t : config.iou_thresholds) {
    std::snprintf(buf, sizeof(buf), "%-6.2f |", t);
    os << buf;
    for (IouKind m : {IouKind::ThreeD, IouKind::Bev}) {
      for (Difficulty d : {Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard}) {
        const auto ap = at(m, t, d);
        if (ap)
          std::snprintf(buf, sizeof(buf), " %7.2f", *ap);
        else
          std::snprintf(buf, sizeof(buf), " %7s", "-");
        os << buf;
      }
      if (m == IouKind::ThreeD) os << " |";
    }
    os << "\n";
  }
  return os.str();
}

EvalReport evaluate_detections(std::span<const std::vector<Detection>> dets,
                               std::span<const std::vector<ObjectLabel>> gts, const EvalConfig& cfg) {
  EvalReport r;
  r.config = cfg;
  r.frames = static_cast<int>(gts.size());
  for (const auto& f : dets) r.predictions += static_cast<int>(f.size());
  for (const auto& f : gts)
    for (const ObjectLabel& l : f)
      for (int d = static_cast<int>(l.box3d.difficulty); d < 3; ++d) ++r.gt_counts[static_cast<size_t>(d)];
  for (IouKind m : {IouKind::ThreeD, IouKind::Bev}) {
    const BoxIou fn = iou_function(m);
    for (double t : cfg.iou_thresholds)
      for (Difficulty d : {Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard})
        r.cells.push_back({m, t, d, ap_at_40(dets, gts, fn, t, d)});
  }
  return r;
}

std::vector<Detection> predict(const Detector& det, const DomainSample& sample, double threshold) {
  nn::Graph g;
  g.set_grad_enabled(false);
  const BranchOutput out = det.forward(g, sample.image, sample.domain);
  return filter_predictions(RawPredictions::from(out.heads), sample.cam, threshold);
}

EvalReport evaluate(const Detector& det, std::span<const DomainSample> samples, const EvalConfig& cfg) {
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<ObjectLabel>> gts;
  for (const DomainSample& s : samples) {
    dets.push_back(predict(det, s, cfg.score_threshold));
    gts.push_back(s.labels);
  }
  return evaluate_detections(dets, gts, cfg);
}

namespace {

struct Canvas {
  Image img;
  void pixel(int x, int y, std::array<std::uint8_t, 3> c) {
    if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) return;
    for (int k = 0; k < 3; ++k) img.set(x, y, k, c[static_cast<size_t>(k)]);
  }
  void line(double x0, double y0, double x1, double y1, std::array<std::uint8_t, 3> c) {
    const int steps = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      pixel(static_cast<int>(std::lround(x0 + t * (x1 - x0))), static_cast<int>(std::lround(y0 + t * (y1 - y0))), c);
    }
  }
};

}  // namespace

void bev_plot(std::span<const Detection> dets, std::span<const ObjectLabel> gts, const CameraModel& cam,
              const std::filesystem::path& out_path, const BevPlotOptions& o) {
  const int w = static_cast<int>(std::lround((o.x_max - o.x_min) * o.pixels_per_meter));
  const int h = static_cast<int>(std::lround(o.z_max * o.pixels_per_meter)) + 16;
  Canvas cv{Image(w, h)};
  std::fill(cv.img.bytes().begin(), cv.img.bytes().end(), 255);
  auto px = [&](double x) { return (x - o.x_min) * o.pixels_per_meter; };
  auto py = [&](double z) { return (o.z_max - z) * o.pixels_per_meter; };
  const std::array<std::uint8_t, 3> grid{225, 225, 225}, grey{120, 120, 120}, green{0, 170, 0}, red{220, 0, 0},
      black{0, 0, 0};
  for (double z = 0.0; z <= o.z_max; z += 10.0) cv.line(0, py(z), w - 1, py(z), grid);
  for (double x = std::ceil(o.x_min / 10.0) * 10.0; x <= o.x_max; x += 10.0) cv.line(px(x), 0, px(x), py(0.0), grid);
  for (double u : {0.0, 1.0}) {
    const double slope = (u * cam.width - cam.cx) / cam.fx;  // x per unit z
    cv.line(px(0.0), py(0.0), px(slope * o.z_max), py(o.z_max), grey);
  }
  for (int dy = -3; dy <= 3; ++dy)
    for (int dx = -3; dx <= 3; ++dx)
      if (std::abs(dx) + std::abs(dy) <= 3) cv.pixel(static_cast<int>(px(0.0)) + dx, static_cast<int>(py(0.0)) + dy, black);
  auto draw_box = [&](const Box3D& b, std::array<std::uint8_t, 3> c) {
    const auto fp = bev_footprint(b);
    for (int i = 0; i < 4; ++i) {
      const Vec2& p = fp[static_cast<size_t>(i)];
      const Vec2& q = fp[static_cast<size_t>((i + 1) % 4)];
      cv.line(px(p[0]), py(p[1]), px(q[0]), py(q[1]), c);
    }
    // Heading tick from the center toward the front face.
    const double fx = b.center[0] + 0.5 * b.length() * std::cos(b.yaw);
    const double fz = b.center[2] - 0.5 * b.length() * std::sin(b.yaw);
    cv.line(px(b.center[0]), py(b.center[2]), px(fx), py(fz), c);
  };
  for (const ObjectLabel& l : gts) draw_box(l.box3d, green);
  for (const Detection& d : dets) draw_box(d.box3d, red);
  write_png(out_path, cv.img);
}

}  // namespace iroam

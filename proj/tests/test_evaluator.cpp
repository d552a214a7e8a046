#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <numbers>
#include <random>

#include "iroam/errors.hpp"
#include "iroam/evaluator.hpp"
#include "iroam/image.hpp"

using namespace iroam;
namespace fs = std::filesystem;

namespace {

using Frames = std::vector<std::vector<Detection>>;
using Labels = std::vector<std::vector<ObjectLabel>>;

ObjectLabel gt_at(double x, double z, Difficulty d = Difficulty::Easy) {
  ObjectLabel l;
  l.box3d.center = {x, -0.75, z};
  l.box3d.dims = {1.5, 1.8, 4.0};
  l.box3d.yaw = 0.3;
  l.box3d.difficulty = d;
  l.depth = z;
  return l;
}

Detection det_at(double x, double z, double score) {
  Detection d;
  d.box3d = gt_at(x, z).box3d;
  d.score = score;
  return d;
}

// Independent reference: per-frame matching by explicit search, then the
// full PR curve over every distinct score cut, interpolated precision taken
// as the max precision over all cuts reaching the recall target.
double oracle_ap(const Frames& dets, const Labels& gts, const BoxIou& iou, double thr, Difficulty diff) {
  std::vector<std::pair<double, int>> marks;  // score, 1 tp / 0 fp
  int n_gt = 0;
  for (size_t f = 0; f < dets.size(); ++f) {
    const auto& g = gts[f];
    for (const auto& l : g) n_gt += l.box3d.difficulty <= diff;
    std::vector<int> taken(g.size(), 0);
    std::vector<Detection> ds = dets[f];
    std::stable_sort(ds.begin(), ds.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
    for (const Detection& d : ds) {
      double bv = -1, bi = -1;
      size_t jv = g.size(), ji = g.size();
      for (size_t j = 0; j < g.size(); ++j) {
        if (taken[j]) continue;
        const double o = iou(d.box3d, g[j].box3d);
        if (o < thr) continue;
        if (g[j].box3d.difficulty <= diff) {
          if (o > bv) bv = o, jv = j;
        } else if (o > bi) {
          bi = o, ji = j;
        }
      }
      if (jv < g.size()) {
        taken[jv] = 1;
        marks.push_back({d.score, 1});
      } else if (ji < g.size()) {
        taken[ji] = 1;
      } else {
        marks.push_back({d.score, 0});
      }
    }
  }
  std::vector<double> cuts;
  for (const auto& m : marks) cuts.push_back(m.first);
  std::vector<std::pair<double, double>> pr;  // recall, precision
  for (double c : cuts) {
    int tp = 0, all = 0;
    for (const auto& m : marks)
      if (m.first >= c) tp += m.second, ++all;
    pr.push_back({static_cast<double>(tp) / n_gt, static_cast<double>(tp) / all});
  }
  double s = 0;
  for (int r = 1; r <= 40; ++r) {
    double best = 0;
    for (const auto& [rec, prec] : pr)
      if (rec >= r / 40.0 - 1e-12) best = std::max(best, prec);
    s += best;
  }
  return 100.0 * s / 40.0;
}

struct Instance {
  Frames dets;
  Labels gts;
};

Instance random_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> nf(1, 10), nb(0, 5), dd(0, 2);
  std::uniform_real_distribution<double> u(0, 1), x(-8, 8), z(5, 45), jit(-0.8, 0.8);
  Instance in;
  const int frames = nf(rng);
  for (int f = 0; f < frames; ++f) {
    std::vector<ObjectLabel> g;
    std::vector<Detection> d;
    const int n = nb(rng);
    for (int k = 0; k < n; ++k) {
      // Lanes keep boxes within a frame apart.
      g.push_back(gt_at(-8 + 4.0 * k, z(rng), static_cast<Difficulty>(dd(rng))));
      if (u(rng) < 0.7) d.push_back(det_at(g.back().box3d.center[0] + jit(rng), g.back().box3d.center[2] + jit(rng), u(rng)));
    }
    for (int k = nb(rng) / 2; k > 0; --k) d.push_back(det_at(x(rng), z(rng), u(rng)));
    in.gts.push_back(g);
    in.dets.push_back(d);
  }
  return in;
}

RawPredictions raw_with_scores(const std::vector<double>& p) {
  const int n = static_cast<int>(p.size());
  RawPredictions r;
  r.logits = nn::Tensor({n, 2});
  r.box2d = nn::Tensor({n, 4}, 0.5);
  r.center = nn::Tensor({n, 2}, 0.5);
  r.dims = nn::Tensor({n, 3}, 1.5);
  r.orientation = nn::Tensor({n, 2});
  r.depth = nn::Tensor({n, 1}, 10.0);
  for (int q = 0; q < n; ++q) {
    r.logits.at(q, 0) = std::log(p[static_cast<size_t>(q)]);
    r.logits.at(q, 1) = std::log(1.0 - p[static_cast<size_t>(q)]);
    r.orientation.at(q, 0) = 1.0;
  }
  return r;
}

CameraModel level_cam() {
  CameraModel c;
  c.width = 256;
  c.height = 160;
  c.fx = c.fy = 230.4;
  c.cx = 128;
  c.cy = 80;
  c.height_above_ground = 1.5;
  return c;
}

Image plot(const std::vector<Detection>& d, const std::vector<ObjectLabel>& g, const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("iroam_bev_" + name + ".png");
  bev_plot(d, g, level_cam(), p);
  Image img = read_png(p);
  fs::remove(p);
  return img;
}

// Mean pixel position of one exact color.
std::array<double, 3> color_centroid(const Image& img, std::array<int, 3> c) {
  double sx = 0, sy = 0, n = 0;
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      if (img.raw(x, y, 0) == c[0] && img.raw(x, y, 1) == c[1] && img.raw(x, y, 2) == c[2]) sx += x, sy += y, ++n;
  return {n ? sx / n : 0, n ? sy / n : 0, n};
}

constexpr std::array<int, 3> kRed{220, 0, 0}, kGreen{0, 170, 0}, kBlack{0, 0, 0};

}  // namespace

TEST(Filter, ThresholdKeepsTwoOfThree) {
  const auto d = filter_predictions(raw_with_scores({0.9, 0.19, 0.21}), level_cam());
  ASSERT_EQ(d.size(), 2u);
  EXPECT_NEAR(d[0].score, 0.9, 1e-12);
  EXPECT_NEAR(d[1].score, 0.21, 1e-12);
}

TEST(Filter, EmptyInput) { EXPECT_TRUE(filter_predictions(RawPredictions{}, level_cam()).empty()); }

TEST(Filter, OverlappingPredictionsBothSurvive) {
  const auto d = filter_predictions(raw_with_scores({0.8, 0.8}), level_cam());
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d[0].box3d, d[1].box3d);
}

TEST(Filter, DecodesIntoRigFrame) {
  const auto d = filter_predictions(raw_with_scores({0.9}), level_cam());
  ASSERT_EQ(d.size(), 1u);
  // Principal point at depth 10 from a camera 1.5 m above the ground.
  EXPECT_NEAR(d[0].box3d.center[0], 0.0, 1e-12);
  EXPECT_NEAR(d[0].box3d.center[1], -1.5, 1e-12);
  EXPECT_NEAR(d[0].box3d.center[2], 10.0, 1e-12);
  EXPECT_NEAR(d[0].box3d.yaw, 0.5 * std::numbers::pi, 1e-12);
  EXPECT_EQ(d[0].box3d.dims, (Vec3{1.5, 1.5, 1.5}));
}

TEST(Ap40, PerfectAndMissed) {
  const BoxIou fn = iou_function(IouKind::ThreeD);
  const Labels g{{gt_at(0, 20)}};
  EXPECT_DOUBLE_EQ(*ap_at_40(Frames{{det_at(0, 20, 0.5)}}, g, fn, 0.7, Difficulty::Easy), 100.0);
  EXPECT_DOUBLE_EQ(*ap_at_40(Frames{{det_at(0, 22, 0.5)}}, g, fn, 0.7, Difficulty::Easy), 0.0);
  EXPECT_DOUBLE_EQ(*ap_at_40(Frames{{}}, g, fn, 0.7, Difficulty::Easy), 0.0);
}

TEST(Ap40, NoGroundTruthIsAbsent) {
  const BoxIou fn = iou_function(IouKind::Bev);
  EXPECT_FALSE(ap_at_40(Frames{{det_at(0, 20, 0.5)}}, Labels{{}}, fn, 0.5, Difficulty::Hard).has_value());
  // Only a hard object, evaluated at easy.
  EXPECT_FALSE(ap_at_40(Frames{{}}, Labels{{gt_at(0, 20, Difficulty::Hard)}}, fn, 0.5, Difficulty::Easy));
}

TEST(Ap40, TwoGroundTruthsOneFalsePositive) {
  const Labels g{{gt_at(-4, 20), gt_at(4, 30)}};
  const Frames d{{det_at(-4, 20, 0.9), det_at(12, 40, 0.8), det_at(4, 30, 0.7)}};
  const BoxIou fn = iou_function(IouKind::ThreeD);
  const double ap = *ap_at_40(d, g, fn, 0.5, Difficulty::Easy);
  // 20 recall points at precision 1, 20 at 2/3.
  EXPECT_NEAR(ap, 100.0 * (20.0 + 20.0 * 2.0 / 3.0) / 40.0, 1e-9);
  EXPECT_NEAR(ap, oracle_ap(d, g, fn, 0.5, Difficulty::Easy), 1e-9);
}

TEST(Ap40, HarderObjectsAreIgnoreRegions) {
  const Labels g{{gt_at(-4, 20, Difficulty::Easy), gt_at(4, 40, Difficulty::Hard)}};
  const Frames d{{det_at(4, 40, 0.9), det_at(-4, 20, 0.6)}};
  const BoxIou fn = iou_function(IouKind::ThreeD);
  EXPECT_DOUBLE_EQ(*ap_at_40(d, g, fn, 0.7, Difficulty::Easy), 100.0);
  EXPECT_DOUBLE_EQ(*ap_at_40(d, g, fn, 0.7, Difficulty::Hard), 100.0);
}

TEST(Ap40, MatchesBruteForceOracle) {
  std::mt19937_64 rng(2024);
  for (int t = 0; t < 300; ++t) {
    const Instance in = random_instance(rng);
    for (IouKind k : {IouKind::ThreeD, IouKind::Bev})
      for (double thr : {0.5, 0.7})
        for (Difficulty d : {Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard}) {
          const auto ap = ap_at_40(in.dets, in.gts, iou_function(k), thr, d);
          if (!ap) continue;
          EXPECT_NEAR(*ap, oracle_ap(in.dets, in.gts, iou_function(k), thr, d), 1e-9) << "trial " << t;
          EXPECT_GE(*ap, 0.0);
          EXPECT_LE(*ap, 100.0);
        }
  }
}

TEST(Report, OracleDetectorScoresFullGrid) {
  Labels g{{gt_at(-4, 10, Difficulty::Easy), gt_at(4, 25, Difficulty::Moderate)}, {gt_at(0, 45, Difficulty::Hard)}};
  Frames d;
  for (const auto& f : g) {
    d.emplace_back();
    for (const auto& l : f) d.back().push_back({l.box3d, l.box2d, 1.0});
  }
  const EvalReport r = evaluate_detections(d, g);
  ASSERT_EQ(r.cells.size(), 12u);
  for (const EvalCell& c : r.cells) EXPECT_DOUBLE_EQ(c.ap.value(), 100.0);
  EXPECT_EQ(r.gt_counts, (std::array<int, 3>{1, 2, 3}));
  EXPECT_EQ(r.frames, 2);
  EXPECT_EQ(r.predictions, 3);
}

TEST(Report, InvariantToFrameOrderAndScoreTransform) {
  std::mt19937_64 rng(9);
  for (int t = 0; t < 50; ++t) {
    Instance in = random_instance(rng);
    const EvalReport base = evaluate_detections(in.dets, in.gts);
    std::vector<size_t> perm(in.dets.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Frames d2;
    Labels g2;
    for (size_t i : perm) d2.push_back(in.dets[i]), g2.push_back(in.gts[i]);
    EXPECT_EQ(evaluate_detections(d2, g2).cells, base.cells);
    for (auto& f : in.dets)
      for (auto& x : f) x.score = std::exp(3.0 * x.score) - 0.5;
    EXPECT_EQ(evaluate_detections(in.dets, in.gts).cells, base.cells);
  }
}

TEST(Report, LowScoreFalsePositiveNeverHelps) {
  std::mt19937_64 rng(10);
  for (int t = 0; t < 100; ++t) {
    Instance in = random_instance(rng);
    const EvalReport before = evaluate_detections(in.dets, in.gts);
    in.dets[0].push_back(det_at(30.0, 60.0, -1.0));
    const EvalReport after = evaluate_detections(in.dets, in.gts);
    for (size_t c = 0; c < before.cells.size(); ++c)
      if (before.cells[c].ap) {
        EXPECT_LE(*after.cells[c].ap, *before.cells[c].ap + 1e-12);
      }
  }
}

TEST(Report, StricterIouNeverScoresHigher) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 200; ++t) {
    const Instance in = random_instance(rng);
    const EvalReport r = evaluate_detections(in.dets, in.gts);
    for (IouKind k : {IouKind::ThreeD, IouKind::Bev})
      for (Difficulty d : {Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard}) {
        const auto lo = r.at(k, 0.5, d), hi = r.at(k, 0.7, d);
        if (lo) {
          EXPECT_LE(*hi, *lo + 1e-12);
        }
      }
  }
}

TEST(Report, JsonRoundTripAndTable) {
  std::mt19937_64 rng(12);
  const Instance in = random_instance(rng);
  EvalReport r = evaluate_detections(in.dets, in.gts);
  r.source = "unit";
  EXPECT_EQ(EvalReport::from_json(r.to_json()), r);
  const std::string table = r.to_table();
  EXPECT_NE(table.find("AP3D"), std::string::npos);
  EXPECT_NE(table.find("0.70"), std::string::npos);
  EXPECT_THROW(r.at(IouKind::Bev, 0.6, Difficulty::Easy), std::out_of_range);
}

TEST(BevPlot, LabelsOnlyWhenNoDetections) {
  const Image img = plot({}, {gt_at(0, 20)}, "labels");
  EXPECT_GT(color_centroid(img, kGreen)[2], 0);
  EXPECT_EQ(color_centroid(img, kRed)[2], 0);
  EXPECT_GT(color_centroid(img, kBlack)[2], 0);
}

TEST(BevPlot, ByteIdenticalForSameInput) {
  const fs::path a = fs::temp_directory_path() / "iroam_bev_a.png", b = fs::temp_directory_path() / "iroam_bev_b.png";
  const std::vector<Detection> d{det_at(1, 15, 0.5)};
  const std::vector<ObjectLabel> g{gt_at(0, 20)};
  bev_plot(d, g, level_cam(), a);
  bev_plot(d, g, level_cam(), b);
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  const std::string sa((std::istreambuf_iterator<char>(fa)), {}), sb((std::istreambuf_iterator<char>(fb)), {});
  EXPECT_FALSE(sa.empty());
  EXPECT_EQ(sa, sb);
  fs::remove(a);
  fs::remove(b);
}

TEST(BevPlot, NearDetectionDrawnNearerTheCamera) {
  const auto origin = color_centroid(plot({}, {gt_at(0, 20)}, "o"), kBlack);
  const auto near = color_centroid(plot({det_at(0, 10, 0.5)}, {}, "near"), kRed);
  const auto far = color_centroid(plot({det_at(0, 40, 0.5)}, {}, "far"), kRed);
  const auto dist = [&](const std::array<double, 3>& p) { return std::hypot(p[0] - origin[0], p[1] - origin[1]); };
  EXPECT_LT(dist(near), dist(far));
  // 8 px per meter: the centers sit about 80 and 320 px from the marker.
  EXPECT_NEAR(dist(near), 80.0, 6.0);
  EXPECT_NEAR(dist(far), 320.0, 6.0);
}

TEST(BevPlot, UnwritablePathIsIoError) {
  EXPECT_THROW(bev_plot({}, {}, level_cam(), "/nonexistent/dir/p.png"), IoError);
}

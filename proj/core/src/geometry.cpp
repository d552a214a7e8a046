#include "iroam/geometry.hpp"

#include <algorithm>
#include <stdexcept>

#include "iroam/errors.hpp"

namespace iroam {

namespace {

constexpr double kNearPlane = 0.1;

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

double signed_area(std::span<const Vec2> poly) {
  double s = 0.0;
  for (size_t i = 0; i < poly.size(); ++i) {
    const Vec2& p = poly[i];
    const Vec2& q = poly[(i + 1) % poly.size()];
    s += p[0] * q[1] - q[0] * p[1];
  }
  return 0.5 * s;
}

std::vector<Vec2> ccw(std::span<const Vec2> poly) {
  std::vector<Vec2> out(poly.begin(), poly.end());
  if (signed_area(out) < 0.0) std::reverse(out.begin(), out.end());
  return out;
}

Vec2 segment_line_intersection(const Vec2& p, const Vec2& q, const Vec2& a,
                               const Vec2& b) {
  // Point on segment pq where it crosses the infinite line ab.
  const double cp = cross(a, b, p);
  const double cq = cross(a, b, q);
  const double t = cp / (cp - cq);
  return {p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])};
}

}  // namespace

std::string_view to_string(Difficulty d) {
  switch (d) {
    case Difficulty::Easy: return "easy";
    case Difficulty::Moderate: return "mod";
    case Difficulty::Hard: return "hard";
  }
  return "hard";
}

std::string_view to_string(Domain d) {
  return d == Domain::Vehicle ? "vehicle" : "roadside";
}

Difficulty difficulty_from_string(std::string_view s) {
  if (s == "easy") return Difficulty::Easy;
  if (s == "mod" || s == "moderate") return Difficulty::Moderate;
  if (s == "hard") return Difficulty::Hard;
  throw std::invalid_argument("unknown difficulty: " + std::string(s));
}

Domain domain_from_string(std::string_view s) {
  if (s == "vehicle") return Domain::Vehicle;
  if (s == "roadside") return Domain::Roadside;
  throw std::invalid_argument("unknown domain: " + std::string(s));
}

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(a + std::numbers::pi, two_pi);
  if (r < 0.0) r += two_pi;
  r -= std::numbers::pi;
  // fmod can land exactly on +pi after the shift due to rounding.
  if (r >= std::numbers::pi) r -= two_pi;
  return r;
}

void Box3D::validate() {
  for (double d : dims) {
    if (!(d > 0.0)) throw std::invalid_argument("Box3D dims must be positive");
  }
  for (double c : center) {
    if (!std::isfinite(c)) throw std::invalid_argument("Box3D center must be finite");
  }
  yaw = wrap_angle(yaw);
}

Vec3 CameraModel::to_camera(const Vec3& rig) const {
  const double s = std::sin(pitch), c = std::cos(pitch);
  const double dx = rig[0];
  const double dy = rig[1] + height_above_ground;
  const double dz = rig[2];
  // Camera y axis in rig frame: (0, c, s); optical axis: (0, -s, c).
  return {dx, c * dy + s * dz, -s * dy + c * dz};
}

Vec3 CameraModel::to_rig(const Vec3& cam) const {
  const double s = std::sin(pitch), c = std::cos(pitch);
  return {cam[0], c * cam[1] - s * cam[2] - height_above_ground,
          s * cam[1] + c * cam[2]};
}

Vec3 CameraModel::ray_direction(double u, double v) const {
  const double xc = (u * width - cx) / fx;
  const double yc = (v * height - cy) / fy;
  const Vec3 o = origin();
  const Vec3 p = to_rig({xc, yc, 1.0});
  return {p[0] - o[0], p[1] - o[1], p[2] - o[2]};
}

Vec2 project_point(const Vec3& rig, const CameraModel& cam) {
  const Vec3 p = cam.to_camera(rig);
  if (!(p[2] > 0.0)) throw NonPositiveDepth("point is not in front of the camera");
  return {(cam.fx * p[0] / p[2] + cam.cx) / cam.width,
          (cam.fy * p[1] / p[2] + cam.cy) / cam.height};
}

Vec2 project_center(const Box3D& box, const CameraModel& cam) {
  return project_point(box.center, cam);
}

double camera_depth(const Box3D& box, const CameraModel& cam) {
  return cam.to_camera(box.center)[2];
}

Vec3 unproject(double u, double v, double depth, const CameraModel& cam) {
  const double xc = (u * cam.width - cam.cx) / cam.fx * depth;
  const double yc = (v * cam.height - cam.cy) / cam.fy * depth;
  return cam.to_rig({xc, yc, depth});
}

std::array<Vec3, 8> box_corners(const Box3D& box) {
  const auto fp = bev_footprint(box);
  const double yb = box.center[1] + 0.5 * box.height();
  const double yt = box.center[1] - 0.5 * box.height();
  std::array<Vec3, 8> out{};
  for (int i = 0; i < 4; ++i) {
    out[i] = {fp[i][0], yb, fp[i][1]};
    out[i + 4] = {fp[i][0], yt, fp[i][1]};
  }
  return out;
}

std::array<Vec2, 4> bev_footprint(const Box3D& box) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const double hl = 0.5 * box.length(), hw = 0.5 * box.width();
  const std::array<Vec2, 4> local = {{{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  std::array<Vec2, 4> out{};
  for (int i = 0; i < 4; ++i) {
    const double lx = local[i][0], lz = local[i][1];
    out[i] = {box.center[0] + c * lx + s * lz, box.center[2] - s * lx + c * lz};
  }
  if (signed_area(out) < 0.0) std::reverse(out.begin(), out.end());
  return out;
}

std::optional<Box2D> enclosing_box2d(const Box3D& box, const CameraModel& cam) {
  double u0 = 1e300, u1 = -1e300, v0 = 1e300, v1 = -1e300;
  bool any = false;
  for (const Vec3& corner : box_corners(box)) {
    if (cam.to_camera(corner)[2] <= kNearPlane) continue;
    const Vec2 uv = project_point(corner, cam);
    u0 = std::min(u0, uv[0]);
    u1 = std::max(u1, uv[0]);
    v0 = std::min(v0, uv[1]);
    v1 = std::max(v1, uv[1]);
    any = true;
  }
  if (!any) return std::nullopt;
  u0 = std::clamp(u0, 0.0, 1.0);
  u1 = std::clamp(u1, 0.0, 1.0);
  v0 = std::clamp(v0, 0.0, 1.0);
  v1 = std::clamp(v1, 0.0, 1.0);
  if (u1 - u0 <= 0.0 || v1 - v0 <= 0.0) return std::nullopt;
  return Box2D{0.5 * (u0 + u1), 0.5 * (v0 + v1), u1 - u0, v1 - v0};
}

double polygon_area(std::span<const Vec2> poly) {
  if (poly.size() < 3) return 0.0;
  return std::abs(signed_area(poly));
}

std::vector<Vec2> clip_convex(std::span<const Vec2> subject,
                              std::span<const Vec2> clip) {
  std::vector<Vec2> out = ccw(subject);
  const std::vector<Vec2> clip_poly = ccw(clip);
  for (size_t e = 0; e < clip_poly.size() && !out.empty(); ++e) {
    const Vec2& a = clip_poly[e];
    const Vec2& b = clip_poly[(e + 1) % clip_poly.size()];
    std::vector<Vec2> input;
    input.swap(out);
    for (size_t i = 0; i < input.size(); ++i) {
      const Vec2& p = input[i];
      const Vec2& q = input[(i + 1) % input.size()];
      const bool p_in = cross(a, b, p) >= 0.0;
      const bool q_in = cross(a, b, q) >= 0.0;
      if (p_in) out.push_back(p);
      if (p_in != q_in) out.push_back(segment_line_intersection(p, q, a, b));
    }
  }
  return out;
}

double iou_2d(const Box2D& a, const Box2D& b) {
  const double iw = std::min(a.x1(), b.x1()) - std::max(a.x0(), b.x0());
  const double ih = std::min(a.y1(), b.y1()) - std::max(a.y0(), b.y0());
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  return uni > 0.0 ? std::clamp(inter / uni, 0.0, 1.0) : 0.0;
}

namespace {

double bev_intersection(const Box3D& a, const Box3D& b) {
  const auto pa = bev_footprint(a);
  const auto pb = bev_footprint(b);
  return polygon_area(clip_convex(pa, pb));
}

}  // namespace

double iou_bev(const Box3D& a, const Box3D& b) {
  const double inter = bev_intersection(a, b);
  const double uni = a.length() * a.width() + b.length() * b.width() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou_3d(const Box3D& a, const Box3D& b) {
  const double top = std::max(a.center[1] - 0.5 * a.height(), b.center[1] - 0.5 * b.height());
  const double bottom = std::min(a.center[1] + 0.5 * a.height(), b.center[1] + 0.5 * b.height());
  const double overlap_h = bottom - top;
  if (overlap_h <= 0.0) return 0.0;
  const double inter = bev_intersection(a, b) * overlap_h;
  const double va = a.length() * a.width() * a.height();
  const double vb = b.length() * b.width() * b.height();
  const double uni = va + vb - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

}  // namespace iroam

#pragma once

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace iroam {

using Vec2 = std::array<double, 2>;
using Vec3 = std::array<double, 3>;

enum class Category { Car };
enum class Difficulty { Easy = 0, Moderate = 1, Hard = 2 };
enum class Domain { Vehicle = 0, Roadside = 1 };

std::string_view to_string(Difficulty d);
std::string_view to_string(Domain d);
Difficulty difficulty_from_string(std::string_view s);
Domain domain_from_string(std::string_view s);

/// Wraps an angle into [-pi, pi).
double wrap_angle(double a);

/// Oriented cuboid. The frame is the level camera rig: x right, y down,
/// z forward, origin on the ground directly below the camera. `dims` is
/// (h, w, l); yaw rotates about the vertical axis, KITTI convention, so the
/// length axis points along (cos yaw, -sin yaw) in the (x, z) plane.
struct Box3D {
  Vec3 center{0.0, 0.0, 0.0};
  Vec3 dims{1.0, 1.0, 1.0};
  double yaw = 0.0;
  Category category = Category::Car;
  Difficulty difficulty = Difficulty::Easy;

  double height() const { return dims[0]; }
  double width() const { return dims[1]; }
  double length() const { return dims[2]; }

  /// Throws std::invalid_argument if dims are not strictly positive or the
  /// center is not finite. Wraps yaw.
  void validate();
  bool operator==(const Box3D&) const = default;
};

/// Axis-aligned image box in normalized coordinates (center, size).
struct Box2D {
  double cx = 0.5;
  double cy = 0.5;
  double w = 0.0;
  double h = 0.0;

  double x0() const { return cx - 0.5 * w; }
  double x1() const { return cx + 0.5 * w; }
  double y0() const { return cy - 0.5 * h; }
  double y1() const { return cy + 0.5 * h; }
  bool operator==(const Box2D&) const = default;
};

/// Pinhole intrinsics plus a rig pose (height above ground and pitch about
/// the x axis, negative pitch looks down).
struct CameraModel {
  double fx = 100.0;
  double fy = 100.0;
  double cx = 64.0;
  double cy = 64.0;
  double height_above_ground = 0.0;
  double pitch = 0.0;
  int width = 128;
  int height = 128;

  /// Rig frame -> camera frame.
  Vec3 to_camera(const Vec3& rig) const;
  /// Camera frame -> rig frame.
  Vec3 to_rig(const Vec3& cam) const;
  /// Rig-frame direction of the ray through a normalized image point.
  Vec3 ray_direction(double u, double v) const;
  /// Rig-frame position of the camera center.
  Vec3 origin() const { return {0.0, -height_above_ground, 0.0}; }

  bool operator==(const CameraModel&) const = default;
};

struct Detection {
  Box3D box3d;
  Box2D box2d;
  double score = 0.0;
};

/// Ground-truth object as seen from one camera.
struct ObjectLabel {
  int object_id = 0;
  Box3D box3d;
  Box2D box2d;
  Vec2 center2d{0.5, 0.5};  // normalized projected 3D center
  double depth = 0.0;       // optical-axis depth of the 3D center
  std::array<double, 3> albedo{0.5, 0.5, 0.5};

  bool operator==(const ObjectLabel&) const = default;
};

/// Normalized projection of a rig-frame point. Throws NonPositiveDepth when
/// the point is not in front of the camera.
Vec2 project_point(const Vec3& rig, const CameraModel& cam);

/// Normalized projection of the cuboid center.
Vec2 project_center(const Box3D& box, const CameraModel& cam);

/// Depth of the box center along the optical axis.
double camera_depth(const Box3D& box, const CameraModel& cam);

/// Inverse of project_center: normalized image point plus optical-axis depth
/// back to a rig-frame point.
Vec3 unproject(double u, double v, double depth, const CameraModel& cam);

/// 8 rig-frame corners. Order: bottom face (y = center + h/2) then top face,
/// each counter-clockwise in BEV starting from front-left.
std::array<Vec3, 8> box_corners(const Box3D& box);

/// Ground-plane (x, z) footprint, 4 corners counter-clockwise.
std::array<Vec2, 4> bev_footprint(const Box3D& box);

/// 2D box enclosing the projected corners that lie in front of the camera,
/// clipped to the image. Empty when nothing projects inside the image.
std::optional<Box2D> enclosing_box2d(const Box3D& box, const CameraModel& cam);

/// Area of a simple polygon (shoelace, absolute value).
double polygon_area(std::span<const Vec2> poly);

/// Intersection of two convex polygons (Sutherland-Hodgman clipping).
std::vector<Vec2> clip_convex(std::span<const Vec2> subject,
                              std::span<const Vec2> clip);

double iou_2d(const Box2D& a, const Box2D& b);
double iou_bev(const Box3D& a, const Box3D& b);
double iou_3d(const Box3D& a, const Box3D& b);

/// Generalized IoU for (cx, cy, w, h) boxes. Templated so the loss code can
/// evaluate it on dual numbers.
template <class T>
T generalized_iou(const std::array<T, 4>& a, const std::array<T, 4>& b) {
  using std::max;
  using std::min;
  const T ax0 = a[0] - 0.5 * a[2], ax1 = a[0] + 0.5 * a[2];
  const T ay0 = a[1] - 0.5 * a[3], ay1 = a[1] + 0.5 * a[3];
  const T bx0 = b[0] - 0.5 * b[2], bx1 = b[0] + 0.5 * b[2];
  const T by0 = b[1] - 0.5 * b[3], by1 = b[1] + 0.5 * b[3];
  T iw = min(ax1, bx1) - max(ax0, bx0);
  T ih = min(ay1, by1) - max(ay0, by0);
  if (iw < 0.0) iw = T(0.0);
  if (ih < 0.0) ih = T(0.0);
  const T inter = iw * ih;
  const T uni = a[2] * a[3] + b[2] * b[3] - inter;
  const T hull = (max(ax1, bx1) - min(ax0, bx0)) * (max(ay1, by1) - min(ay0, by0));
  return inter / uni - (hull - uni) / hull;
}

}  // namespace iroam

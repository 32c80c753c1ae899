#pragma once

#include <array>
#include <numbers>
#include <span>
#include <vector>

namespace labelformer::geometry {

inline constexpr double kPi = std::numbers::pi;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

// Oriented bird's-eye-view box. Center (x, y), length along the heading,
// width across it, heading theta in radians.
struct BevBox {
  double x = 0.0;
  double y = 0.0;
  double l = 1.0;
  double w = 1.0;
  double theta = 0.0;
};

struct Pose {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
};

// LiDAR return: position in meters plus capture timestamp in seconds.
struct Point4 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double t = 0.0;
};

using PointList = std::vector<Point4>;

// Maps theta to [-pi, pi). Throws std::invalid_argument on NaN/Inf.
double normalize_angle(double theta);

// Smallest absolute angle between two headings, in [0, pi].
double angular_distance(double a, double b);

inline Pose pose_of(const BevBox& b) { return {b.x, b.y, b.theta}; }

// Corners in counter-clockwise order starting at (+l/2, +w/2) in the box frame.
std::array<Vec2, 4> box_corners(const BevBox& b);

double polygon_area(std::span<const Vec2> polygon);

// Area of the intersection of two convex polygons given counter-clockwise.
double convex_intersection_area(std::span<const Vec2> subject, std::span<const Vec2> clip);

// Rotated IoU in BEV. Throws std::invalid_argument for near-zero-area boxes.
double rotated_iou(const BevBox& a, const BevBox& b);

// IoU of the axis-aligned rectangles [x +- l/2] x [y +- w/2]; theta is ignored.
double aligned_iou(const BevBox& a, const BevBox& b);

// Points whose BEV projection lies inside b with l and w scaled by (1 + enlarge).
PointList crop_points(std::span<const Point4> points, const BevBox& b, double enlarge = 0.10);

bool contains(const BevBox& b, double x, double y, double enlarge = 0.0);

// Rigid SE(2) transform p -> R(theta) p + t. Composes and inverts exactly.
struct Transform2 {
  double tx = 0.0;
  double ty = 0.0;
  double theta = 0.0;

  static Transform2 from_pose(const Pose& p) { return {p.x, p.y, p.theta}; }
  // The transform mapping world coordinates into the frame of `p`.
  static Transform2 world_to_local(const Pose& p);

  Transform2 inverse() const;
  Vec2 apply(double x, double y) const;
  Point4 apply(const Point4& p) const;
  BevBox apply(const BevBox& b) const;
};

struct TrajectoryFrame {
  std::vector<BevBox> boxes;
  std::vector<PointList> points;
  Transform2 world_to_trajectory;
};

// Re-expresses boxes and points so that box M/2 sits at pose (0, 0, 0).
// `points` may be empty or have one list per box.
TrajectoryFrame to_trajectory_frame(std::span<const BevBox> boxes,
                                    std::span<const PointList> points = {});

PointList to_object_frame(std::span<const Point4> points, const BevBox& b);
PointList from_object_frame(std::span<const Point4> points, const BevBox& b);

// Majority-vote 180 degree heading flip relative to the first box.
std::vector<BevBox> canonicalize_headings(std::span<const BevBox> boxes);

}  // namespace labelformer::geometry

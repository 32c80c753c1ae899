#include "labelformer/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace labelformer::geometry {

namespace {

constexpr double kTwoPi = 2.0 * kPi;
constexpr double kMinArea = 1e-9;

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

// Intersection of segment p-q with the infinite line through a-b.
Vec2 line_intersection(const Vec2& p, const Vec2& q, const Vec2& a, const Vec2& b) {
  const double dp = cross(a, b, p);
  const double dq = cross(a, b, q);
  const double t = dp / (dp - dq);
  return {p.x + t * (q.x - p.x), p.y + t * (q.y - p.y)};
}

void check_box(const BevBox& b, const char* op) {
  if (!std::isfinite(b.x) || !std::isfinite(b.y) || !std::isfinite(b.l) || !std::isfinite(b.w) ||
      !std::isfinite(b.theta)) {
    throw std::invalid_argument(std::string(op) + ": non-finite box");
  }
  if (!(b.l > 0.0) || !(b.w > 0.0) || b.l * b.w < kMinArea) {
    throw std::invalid_argument(std::string(op) + ": degenerate box (l=" + std::to_string(b.l) +
                                ", w=" + std::to_string(b.w) + ")");
  }
}

}  // namespace

double normalize_angle(double theta) {
  if (!std::isfinite(theta)) throw std::invalid_argument("normalize_angle: non-finite angle");
  double r = std::fmod(theta + kPi, kTwoPi);
  if (r < 0.0) r += kTwoPi;
  if (r >= kTwoPi) r -= kTwoPi;
  return r - kPi;
}

double angular_distance(double a, double b) { return std::abs(normalize_angle(a - b)); }

std::array<Vec2, 4> box_corners(const BevBox& b) {
  const double c = std::cos(b.theta);
  const double s = std::sin(b.theta);
  const double hl = 0.5 * b.l;
  const double hw = 0.5 * b.w;
  const std::array<Vec2, 4> local{{{hl, hw}, {-hl, hw}, {-hl, -hw}, {hl, -hw}}};
  std::array<Vec2, 4> out;
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = {b.x + c * local[i].x - s * local[i].y, b.y + s * local[i].x + c * local[i].y};
  }
  return out;
}

double polygon_area(std::span<const Vec2> polygon) {
  const std::size_t n = polygon.size();
  if (n < 3) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& p = polygon[i];
    const Vec2& q = polygon[(i + 1) % n];
    acc += p.x * q.y - q.x * p.y;
  }
  return 0.5 * acc;
}

// Sutherland-Hodgman: clip `subject` against each edge of the convex `clip`.
double convex_intersection_area(std::span<const Vec2> subject, std::span<const Vec2> clip) {
  std::vector<Vec2> output(subject.begin(), subject.end());
  std::vector<Vec2> input;
  const std::size_t n = clip.size();
  for (std::size_t e = 0; e < n && !output.empty(); ++e) {
    const Vec2& a = clip[e];
    const Vec2& b = clip[(e + 1) % n];
    input.swap(output);
    output.clear();
    for (std::size_t i = 0; i < input.size(); ++i) {
      const Vec2& cur = input[i];
      const Vec2& prev = input[(i + input.size() - 1) % input.size()];
      const bool cur_in = cross(a, b, cur) >= 0.0;
      const bool prev_in = cross(a, b, prev) >= 0.0;
      if (cur_in) {
        if (!prev_in) output.push_back(line_intersection(prev, cur, a, b));
        output.push_back(cur);
      } else if (prev_in) {
        output.push_back(line_intersection(prev, cur, a, b));
      }
    }
  }
  return std::max(0.0, polygon_area(output));
}

double rotated_iou(const BevBox& a, const BevBox& b) {
  check_box(a, "rotated_iou");
  check_box(b, "rotated_iou");
  const double area_a = a.l * a.w;
  const double area_b = b.l * b.w;
  // Quick reject on circumscribed circles.
  const double ra = 0.5 * std::hypot(a.l, a.w);
  const double rb = 0.5 * std::hypot(b.l, b.w);
  if (std::hypot(a.x - b.x, a.y - b.y) > ra + rb) return 0.0;
  const auto ca = box_corners(a);
  const auto cb = box_corners(b);
  const double inter = std::min({convex_intersection_area(ca, cb), area_a, area_b});
  const double uni = area_a + area_b - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double aligned_iou(const BevBox& a, const BevBox& b) {
  check_box(a, "aligned_iou");
  check_box(b, "aligned_iou");
  // Interval overlap in a form that is exact for identical intervals.
  auto overlap = [](double c1, double s1, double c2, double s2) {
    return std::min({s1, s2, 0.5 * (s1 + s2) - std::abs(c1 - c2)});
  };
  const double ix = overlap(a.x, a.l, b.x, b.l);
  const double iy = overlap(a.y, a.w, b.y, b.w);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.l * a.w + b.l * b.w - inter);
}

bool contains(const BevBox& b, double x, double y, double enlarge) {
  const double dx = x - b.x;
  const double dy = y - b.y;
  const double c = std::cos(b.theta);
  const double s = std::sin(b.theta);
  const double u = c * dx + s * dy;
  const double v = -s * dx + c * dy;
  const double scale = 1.0 + enlarge;
  return std::abs(u) <= 0.5 * b.l * scale && std::abs(v) <= 0.5 * b.w * scale;
}

PointList crop_points(std::span<const Point4> points, const BevBox& b, double enlarge) {
  if (enlarge < 0.0) throw std::invalid_argument("crop_points: enlarge must be >= 0");
  PointList out;
  for (const Point4& p : points) {
    if (contains(b, p.x, p.y, enlarge)) out.push_back(p);
  }
  return out;
}

Transform2 Transform2::world_to_local(const Pose& p) { return from_pose(p).inverse(); }

Transform2 Transform2::inverse() const {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  return {-(c * tx + s * ty), -(-s * tx + c * ty), -theta};
}

Vec2 Transform2::apply(double x, double y) const {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  return {c * x - s * y + tx, s * x + c * y + ty};
}

Point4 Transform2::apply(const Point4& p) const {
  const Vec2 q = apply(p.x, p.y);
  return {q.x, q.y, p.z, p.t};
}

BevBox Transform2::apply(const BevBox& b) const {
  const Vec2 q = apply(b.x, b.y);
  return {q.x, q.y, b.l, b.w, normalize_angle(b.theta + theta)};
}

namespace {

// world -> local for pose p, written as rotate(-theta) * (q - t) so that the
// reference pose itself maps to exactly (0, 0, 0).
struct LocalFrame {
  double x0, y0, theta0, c, s;
  explicit LocalFrame(const Pose& p)
      : x0(p.x), y0(p.y), theta0(p.theta), c(std::cos(p.theta)), s(std::sin(p.theta)) {}
  Vec2 map(double x, double y) const {
    const double dx = x - x0;
    const double dy = y - y0;
    return {c * dx + s * dy, -s * dx + c * dy};
  }
  Point4 map(const Point4& p) const {
    const Vec2 q = map(p.x, p.y);
    return {q.x, q.y, p.z, p.t};
  }
  BevBox map(const BevBox& b) const {
    const Vec2 q = map(b.x, b.y);
    return {q.x, q.y, b.l, b.w, normalize_angle(b.theta - theta0)};
  }
};

}  // namespace

TrajectoryFrame to_trajectory_frame(std::span<const BevBox> boxes,
                                    std::span<const PointList> points) {
  if (boxes.empty()) throw std::invalid_argument("to_trajectory_frame: empty trajectory");
  if (!points.empty() && points.size() != boxes.size()) {
    throw std::invalid_argument("to_trajectory_frame: points/boxes length mismatch");
  }
  const std::size_t m = boxes.size() / 2;
  const LocalFrame frame(pose_of(boxes[m]));
  TrajectoryFrame out;
  out.world_to_trajectory = Transform2::world_to_local(pose_of(boxes[m]));
  out.boxes.reserve(boxes.size());
  for (const BevBox& b : boxes) out.boxes.push_back(frame.map(b));
  out.points.reserve(points.size());
  for (const PointList& list : points) {
    PointList mapped;
    mapped.reserve(list.size());
    for (const Point4& p : list) mapped.push_back(frame.map(p));
    out.points.push_back(std::move(mapped));
  }
  return out;
}

PointList to_object_frame(std::span<const Point4> points, const BevBox& b) {
  const LocalFrame frame(pose_of(b));
  PointList out;
  out.reserve(points.size());
  for (const Point4& p : points) out.push_back(frame.map(p));
  return out;
}

PointList from_object_frame(std::span<const Point4> points, const BevBox& b) {
  const Transform2 tf = Transform2::from_pose(pose_of(b));
  PointList out;
  out.reserve(points.size());
  for (const Point4& p : points) out.push_back(tf.apply(p));
  return out;
}

std::vector<BevBox> canonicalize_headings(std::span<const BevBox> boxes) {
  std::vector<BevBox> out(boxes.begin(), boxes.end());
  if (out.empty()) return out;
  const double reference = out.front().theta;
  std::vector<bool> in_a(out.size());
  std::size_t count_a = 0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    in_a[i] = angular_distance(out[i].theta, reference) < 0.5 * kPi;
    if (in_a[i]) ++count_a;
  }
  const std::size_t count_b = out.size() - count_a;
  // Ties flip group B, so the reference frame keeps its heading.
  const bool flip_a = count_a < count_b;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (in_a[i] == flip_a) out[i].theta = normalize_angle(out[i].theta + kPi);
  }
  return out;
}

}  // namespace labelformer::geometry

#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <string_view>

namespace ctxmem {

inline constexpr double kPi = std::numbers::pi;
inline constexpr double kDefaultFovDegrees = 52.67;
inline constexpr double kGeomEps = 1e-9;

constexpr double deg_to_rad(double deg) { return deg * kPi / 180.0; }
constexpr double rad_to_deg(double rad) { return rad * 180.0 / kPi; }

/// Wraps an angle into (-pi, pi]. Values already in range are returned
/// unchanged, bit for bit.
double normalize_angle(double rad);

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend constexpr Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend constexpr Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend constexpr Vec2 operator*(double s, Vec2 v) { return {s * v.x, s * v.y}; }
  friend constexpr bool operator==(Vec2, Vec2) = default;
};

constexpr double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
constexpr double cross(Vec2 a, Vec2 b) { return a.x * b.y - a.y * b.x; }
inline double norm(Vec2 v) { return std::hypot(v.x, v.y); }
inline double distance(Vec2 a, Vec2 b) { return norm(a - b); }
inline Vec2 unit_from_angle(double rad) { return {std::cos(rad), std::sin(rad)}; }

/// Axis-aligned rectangle on the ground plane.
struct Bounds {
  double min_x = 0.0;
  double min_y = 0.0;
  double max_x = 0.0;
  double max_y = 0.0;

  double width() const { return max_x - min_x; }
  double height() const { return max_y - min_y; }
  double area() const { return width() * height(); }
  Vec2 center() const { return {0.5 * (min_x + max_x), 0.5 * (min_y + max_y)}; }
  bool valid() const { return max_x > min_x && max_y > min_y; }
  bool contains(Vec2 p) const { return p.x >= min_x && p.x <= max_x && p.y >= min_y && p.y <= max_y; }
  Vec2 clamp(Vec2 p) const;
  friend bool operator==(const Bounds&, const Bounds&) = default;
};

/// Planar camera: position on the ground plane, heading about +z and the
/// full horizontal field of view. Yaw is kept normalized to (-pi, pi].
class CameraPose {
 public:
  /// Throws ValidationError("fov") unless fov is in (0, pi), and
  /// ValidationError("x"/"y"/"yaw") for non-finite components.
  CameraPose(double x, double y, double yaw, double fov = deg_to_rad(kDefaultFovDegrees));
  CameraPose() : CameraPose(0.0, 0.0, 0.0) {}

  double x() const noexcept { return x_; }
  double y() const noexcept { return y_; }
  double yaw() const noexcept { return yaw_; }
  double fov() const noexcept { return fov_; }
  double half_fov() const noexcept { return 0.5 * fov_; }
  Vec2 position() const noexcept { return {x_, y_}; }

  CameraPose with_position(Vec2 p) const { return {p.x, p.y, yaw_, fov_}; }
  CameraPose with_yaw(double yaw) const { return {x_, y_, yaw, fov_}; }

  /// Moves `forward` metres along the heading, `left` metres to its left,
  /// then turns by `dyaw`.
  CameraPose moved(double forward, double left, double dyaw) const;

  friend bool operator==(const CameraPose&, const CameraPose&) = default;

 private:
  double x_;
  double y_;
  double yaw_;
  double fov_;
};

/// Planar rigid motion: rotate about the origin by `rotation`, then translate.
struct RigidMotion {
  double rotation = 0.0;
  Vec2 translation;

  Vec2 apply(Vec2 p) const;
  CameraPose apply(const CameraPose& pose) const;
};

struct Ray {
  Vec2 origin;
  Vec2 direction;  // unit length

  static Ray from_angle(Vec2 origin, double angle) { return {origin, unit_from_angle(angle)}; }
  Vec2 at(double t) const { return origin + t * direction; }
};

struct FovRays {
  Ray left;   // heading + fov/2
  Ray right;  // heading - fov/2
};

FovRays fov_rays(const CameraPose& pose);

struct RayHit {
  Vec2 point;
  double t_a = 0.0;
  double t_b = 0.0;
  bool colinear = false;
};

/// Intersection of the two supporting lines, with the signed ray parameters
/// of the crossing point. Parallel distinct lines have no crossing. Colinear
/// lines report a representative common point: the start of the overlap when
/// the rays point the same way, the midpoint between the origins when they
/// point opposite ways.
std::optional<RayHit> line_intersect(const Ray& a, const Ray& b);

/// Forward-only intersection: a crossing with t_a >= 0 and t_b >= 0, or the
/// nearest common point of overlapping colinear rays.
std::optional<RayHit> ray_intersect(const Ray& a, const Ray& b);

enum class RayPairing {
  Cross,  // query.left x cand.right, query.right x cand.left
  Same,   // query.left x cand.left, query.right x cand.right
};

/// Which ray parameters must be non-negative for a line crossing to count.
enum class ForwardRule {
  Both,    // ahead of both cameras
  Either,  // ahead of at least one camera
};

struct OverlapConfig {
  double d_min = 0.25;
  double d_max = 20.0;
  RayPairing pairing = RayPairing::Cross;
  ForwardRule forward = ForwardRule::Either;
  bool require_all_in_range = true;
  int oracle_samples = 4096;

  /// Throws ValidationError naming the first invalid field.
  void validate() const;
  friend bool operator==(const OverlapConfig&, const OverlapConfig&) = default;
};

enum class OverlapReason { NoIntersection, TooNear, TooFar, DegenerateAccepted };

std::string_view to_string(OverlapReason reason);
std::string_view to_string(RayPairing pairing);
std::string_view to_string(ForwardRule rule);
RayPairing parse_pairing(std::string_view text);
ForwardRule parse_forward_rule(std::string_view text);

struct Intersection {
  Vec2 point;
  double distance = 0.0;  // from the query origin
};

struct OverlapVerdict {
  bool overlaps = false;
  std::array<Intersection, 2> points{};
  std::size_t point_count = 0;
  /// Set whenever the verdict is a rejection, and for accepted degenerate
  /// (coincident-origin or colinear) configurations.
  std::optional<OverlapReason> reason;

  std::span<const Intersection> intersections() const { return {points.data(), point_count}; }
};

/// Precomputed per-pose ray geometry; what the store keeps per frame so the
/// overlap test does no trigonometry.
struct Fan {
  Vec2 origin;
  double yaw = 0.0;
  double half_fov = 0.0;
  Ray left;
  Ray right;
};

Fan make_fan(const CameraPose& pose);

/// Four-ray overlap test. The query camera is the frame being predicted and
/// the distance filter is measured from its origin only.
OverlapVerdict fan_overlap(const Fan& query, const Fan& cand, const OverlapConfig& cfg);
OverlapVerdict fov_overlap_heuristic(const CameraPose& query, const CameraPose& cand,
                                     const OverlapConfig& cfg);

/// True when `p` lies inside the circular sector of `pose` with radius `radius`.
bool point_in_sector(Vec2 p, const CameraPose& pose, double radius);

/// Fraction of `a`'s sector (radius d_max) that lies inside `b`'s sector,
/// estimated on an area-uniform stratified polar grid of cfg.oracle_samples cells.
double sector_overlap_fraction(const CameraPose& a, const CameraPose& b, const OverlapConfig& cfg);

/// Exact-intent sector intersection test used to audit the heuristic.
/// Symmetric: samples both sectors against each other.
bool sector_oracle(const CameraPose& a, const CameraPose& b, const OverlapConfig& cfg);

/// Largest origin separation at which fan_overlap can accept a candidate with
/// field of view `cand_fov`, given cfg. Infinite when the distance filter only
/// constrains one intersection point.
double max_accept_distance(const OverlapConfig& cfg, double cand_fov);

}  // namespace ctxmem

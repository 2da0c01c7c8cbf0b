#include "ctxmem/geometry.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "ctxmem/errors.hpp"

namespace ctxmem {

double normalize_angle(double rad) {
  if (rad > -kPi && rad <= kPi) return rad;
  double wrapped = std::remainder(rad, 2.0 * kPi);  // [-pi, pi]
  if (wrapped <= -kPi) wrapped += 2.0 * kPi;
  return wrapped;
}

Vec2 Bounds::clamp(Vec2 p) const {
  return {std::clamp(p.x, min_x, max_x), std::clamp(p.y, min_y, max_y)};
}

CameraPose::CameraPose(double x, double y, double yaw, double fov) : x_(x), y_(y), yaw_(0.0), fov_(fov) {
  if (!std::isfinite(x)) throw ValidationError("x", "must be finite");
  if (!std::isfinite(y)) throw ValidationError("y", "must be finite");
  if (!std::isfinite(yaw)) throw ValidationError("yaw", "must be finite");
  if (!(fov > 0.0 && fov < kPi)) throw ValidationError("fov", "must lie in (0, pi) radians");
  yaw_ = normalize_angle(yaw);
}

CameraPose CameraPose::moved(double forward, double left, double dyaw) const {
  const Vec2 heading = unit_from_angle(yaw_);
  const Vec2 side{-heading.y, heading.x};
  const Vec2 p = position() + forward * heading + left * side;
  return {p.x, p.y, yaw_ + dyaw, fov_};
}

Vec2 RigidMotion::apply(Vec2 p) const {
  const double c = std::cos(rotation);
  const double s = std::sin(rotation);
  return Vec2{c * p.x - s * p.y, s * p.x + c * p.y} + translation;
}

CameraPose RigidMotion::apply(const CameraPose& pose) const {
  const Vec2 p = apply(pose.position());
  return {p.x, p.y, pose.yaw() + rotation, pose.fov()};
}

FovRays fov_rays(const CameraPose& pose) {
  return {Ray::from_angle(pose.position(), normalize_angle(pose.yaw() + pose.half_fov())),
          Ray::from_angle(pose.position(), normalize_angle(pose.yaw() - pose.half_fov()))};
}

std::optional<RayHit> line_intersect(const Ray& a, const Ray& b) {
  const Vec2 offset = b.origin - a.origin;
  const double denom = cross(a.direction, b.direction);
  if (std::abs(denom) > kGeomEps) {
    const double t_a = cross(offset, b.direction) / denom;
    const double t_b = cross(offset, a.direction) / denom;
    return RayHit{a.at(t_a), t_a, t_b, false};
  }
  // Parallel: distinct lines never meet.
  const double scale = std::max(1.0, norm(offset));
  if (std::abs(cross(a.direction, offset)) > kGeomEps * scale) return std::nullopt;

  const double along = dot(offset, a.direction);  // b.origin position along a
  if (dot(a.direction, b.direction) > 0.0) {
    if (along >= 0.0) return RayHit{b.origin, along, 0.0, true};
    return RayHit{a.origin, 0.0, -along, true};
  }
  // Opposite directions: midpoint keeps the result symmetric under swapping.
  const double half = 0.5 * along;
  return RayHit{a.at(half), half, half, true};
}

std::optional<RayHit> ray_intersect(const Ray& a, const Ray& b) {
  auto hit = line_intersect(a, b);
  if (!hit) return std::nullopt;
  if (hit->t_a < -kGeomEps || hit->t_b < -kGeomEps) return std::nullopt;
  return hit;
}

void OverlapConfig::validate() const {
  if (!(std::isfinite(d_min) && d_min >= 0.0)) throw ValidationError("d_min", "must be finite and >= 0");
  if (!(std::isfinite(d_max) && d_max > d_min)) throw ValidationError("d_max", "must be finite and > d_min");
  if (oracle_samples < 1000) throw ValidationError("oracle_samples", "must be >= 1000");
}

std::string_view to_string(OverlapReason reason) {
  switch (reason) {
    case OverlapReason::NoIntersection: return "NoIntersection";
    case OverlapReason::TooNear: return "TooNear";
    case OverlapReason::TooFar: return "TooFar";
    case OverlapReason::DegenerateAccepted: return "DegenerateAccepted";
  }
  return "?";
}

std::string_view to_string(RayPairing pairing) {
  return pairing == RayPairing::Cross ? "cross" : "same";
}

std::string_view to_string(ForwardRule rule) {
  return rule == ForwardRule::Both ? "both" : "either";
}

RayPairing parse_pairing(std::string_view text) {
  if (text == "cross") return RayPairing::Cross;
  if (text == "same") return RayPairing::Same;
  throw ValidationError("pairing", "expected 'cross' or 'same', got '" + std::string(text) + "'");
}

ForwardRule parse_forward_rule(std::string_view text) {
  if (text == "both") return ForwardRule::Both;
  if (text == "either") return ForwardRule::Either;
  throw ValidationError("forward", "expected 'both' or 'either', got '" + std::string(text) + "'");
}

Fan make_fan(const CameraPose& pose) {
  const FovRays rays = fov_rays(pose);
  return {pose.position(), pose.yaw(), pose.half_fov(), rays.left, rays.right};
}

OverlapVerdict fan_overlap(const Fan& query, const Fan& cand, const OverlapConfig& cfg) {
  OverlapVerdict verdict;

  // Shared apex: the wedges overlap iff their angular intervals do.
  if (distance(query.origin, cand.origin) <= kGeomEps) {
    const double dyaw = std::abs(normalize_angle(cand.yaw - query.yaw));
    if (dyaw <= query.half_fov + cand.half_fov + kGeomEps) {
      verdict.overlaps = true;
      verdict.points[0] = {query.origin, cfg.d_min};
      verdict.point_count = 1;
      verdict.reason = OverlapReason::DegenerateAccepted;
    } else {
      verdict.reason = OverlapReason::NoIntersection;
    }
    return verdict;
  }

  const Ray* pairs[2][2];
  if (cfg.pairing == RayPairing::Cross) {
    pairs[0][0] = &query.left;  pairs[0][1] = &cand.right;
    pairs[1][0] = &query.right; pairs[1][1] = &cand.left;
  } else {
    pairs[0][0] = &query.left;  pairs[0][1] = &cand.left;
    pairs[1][0] = &query.right; pairs[1][1] = &cand.right;
  }

  bool any_colinear = false;
  for (const auto& pair : pairs) {
    const auto hit = line_intersect(*pair[0], *pair[1]);
    if (!hit) {
      verdict.reason = OverlapReason::NoIntersection;
      return verdict;
    }
    const bool ahead_q = hit->t_a >= -kGeomEps;
    const bool ahead_c = hit->t_b >= -kGeomEps;
    const bool forward = cfg.forward == ForwardRule::Both ? (ahead_q && ahead_c) : (ahead_q || ahead_c);
    if (!forward) {
      verdict.reason = OverlapReason::NoIntersection;
      return verdict;
    }
    any_colinear = any_colinear || hit->colinear;
    verdict.points[verdict.point_count++] = {hit->point, distance(hit->point, query.origin)};
  }

  const auto in_range = [&](const Intersection& p) { return p.distance >= cfg.d_min && p.distance <= cfg.d_max; };
  const auto failure = [&]() {
    for (const auto& p : verdict.intersections()) {
      if (p.distance > cfg.d_max) return OverlapReason::TooFar;
    }
    return OverlapReason::TooNear;
  };

  if (cfg.require_all_in_range) {
    if (!std::all_of(verdict.points.begin(), verdict.points.begin() + verdict.point_count, in_range)) {
      verdict.reason = failure();
      return verdict;
    }
  } else {
    std::size_t kept = 0;
    for (std::size_t i = 0; i < verdict.point_count; ++i) {
      if (in_range(verdict.points[i])) verdict.points[kept++] = verdict.points[i];
    }
    if (kept == 0) {
      verdict.reason = failure();
      return verdict;
    }
    verdict.point_count = kept;
  }

  verdict.overlaps = true;
  if (any_colinear) verdict.reason = OverlapReason::DegenerateAccepted;
  return verdict;
}

OverlapVerdict fov_overlap_heuristic(const CameraPose& query, const CameraPose& cand, const OverlapConfig& cfg) {
  return fan_overlap(make_fan(query), make_fan(cand), cfg);
}

namespace {

struct Sector {
  Vec2 apex;
  Vec2 heading;
  double cos_half;
  double radius;

  Sector(const CameraPose& pose, double r)
      : apex(pose.position()), heading(unit_from_angle(pose.yaw())), cos_half(std::cos(pose.half_fov())), radius(r) {}

  bool contains(Vec2 p) const {
    const Vec2 rel = p - apex;
    const double r = norm(rel);
    if (r > radius) return false;
    if (r <= kGeomEps) return true;
    return dot(rel, heading) >= r * cos_half;
  }
};

int grid_side(int samples) { return static_cast<int>(std::ceil(std::sqrt(static_cast<double>(samples)))); }

// Calls fn(point) for every stratified sample of `pose`'s sector; stops early
// when fn returns true. Returns whether any call returned true.
template <typename Fn>
bool for_each_sample(const CameraPose& pose, double radius, int samples, Fn&& fn) {
  const int side = grid_side(samples);
  const Vec2 apex = pose.position();
  for (int j = 0; j < side; ++j) {
    const double frac = (j + 0.5) / side;
    const Vec2 dir = unit_from_angle(pose.yaw() - pose.half_fov() + frac * pose.fov());
    for (int i = 0; i < side; ++i) {
      const double r = radius * std::sqrt((i + 0.5) / side);
      if (fn(apex + r * dir)) return true;
    }
  }
  return false;
}

}  // namespace

bool point_in_sector(Vec2 p, const CameraPose& pose, double radius) { return Sector(pose, radius).contains(p); }

double sector_overlap_fraction(const CameraPose& a, const CameraPose& b, const OverlapConfig& cfg) {
  const int side = grid_side(cfg.oracle_samples);
  const Sector into(b, cfg.d_max);
  long inside = 0;
  for_each_sample(a, cfg.d_max, cfg.oracle_samples, [&](Vec2 p) {
    if (into.contains(p)) ++inside;
    return false;
  });
  return static_cast<double>(inside) / (static_cast<double>(side) * side);
}

bool sector_oracle(const CameraPose& a, const CameraPose& b, const OverlapConfig& cfg) {
  if (distance(a.position(), b.position()) > 2.0 * cfg.d_max) return false;
  const auto hits = [&](const CameraPose& from, const CameraPose& to) {
    const Sector into(to, cfg.d_max);
    return for_each_sample(from, cfg.d_max, cfg.oracle_samples, [&](Vec2 p) { return into.contains(p); });
  };
  return hits(a, b) || hits(b, a);
}

double max_accept_distance(const OverlapConfig& cfg, double cand_fov) {
  if (!cfg.require_all_in_range) return std::numeric_limits<double>::infinity();
  // Both intersection points lie on the candidate's two ray lines within
  // d_max of the query, so both lines pass within d_max of the query origin.
  // Two lines through one point at angle fov can both do so only while the
  // point is within d_max / sin(min(fov, pi - fov) / 2).
  const double spread = std::min(cand_fov, kPi - cand_fov);
  return cfg.d_max / std::sin(0.5 * spread) * (1.0 + 1e-9) + kGeomEps;
}

}  // namespace ctxmem

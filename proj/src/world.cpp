#include "ctxmem/world.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <limits>
#include <unordered_map>

#include "ctxmem/errors.hpp"
#include "ctxmem/rng.hpp"
#include "ctxmem/text_io.hpp"

namespace ctxmem {

namespace {

constexpr std::array<const char*, 6> kColors = {"red", "green", "blue", "yellow", "purple", "orange"};

// Nearest positive ray parameter at which the ray enters the disk, if any.
std::optional<double> ray_circle(Vec2 origin, Vec2 dir, Vec2 center, double radius) {
  const Vec2 rel = center - origin;
  const double along = dot(rel, dir);
  const double perp2 = dot(rel, rel) - along * along;
  const double r2 = radius * radius;
  if (perp2 > r2) return std::nullopt;
  const double half_chord = std::sqrt(r2 - perp2);
  const double t0 = along - half_chord;
  if (t0 > 0.0) return t0;
  const double t1 = along + half_chord;
  if (t1 > 0.0) return t1;  // origin inside the disk
  return std::nullopt;
}

std::optional<double> ray_segment(Vec2 origin, Vec2 dir, const Segment& s) {
  const Vec2 e = s.b - s.a;
  const double denom = cross(dir, e);
  if (std::abs(denom) <= kGeomEps) return std::nullopt;
  const Vec2 w = s.a - origin;
  const double t = cross(w, e) / denom;
  const double u = cross(w, dir) / denom;
  if (t > 0.0 && u >= 0.0 && u <= 1.0) return t;
  return std::nullopt;
}

double orient(Vec2 a, Vec2 b, Vec2 c) { return cross(b - a, c - a); }

bool on_segment(Vec2 a, Vec2 b, Vec2 p) {
  return std::min(a.x, b.x) - kGeomEps <= p.x && p.x <= std::max(a.x, b.x) + kGeomEps &&
         std::min(a.y, b.y) - kGeomEps <= p.y && p.y <= std::max(a.y, b.y) + kGeomEps;
}

}  // namespace

void WorldSpec::validate() const {
  if (!(density > 0.0)) throw ValidationError("density", "must be > 0");
  if (occluder_count < 0) throw ValidationError("occluder_count", "must be >= 0");
  if (!bounds.valid()) throw ValidationError("bounds", "must be a non-degenerate rectangle");
  if (!(min_spacing > 0.0)) throw ValidationError("min_spacing", "must be > 0");
  if (!(min_radius > 0.0 && max_radius >= min_radius)) throw ValidationError("min_radius", "need 0 < min <= max");
}

WorldModel generate_world(const WorldSpec& spec) {
  spec.validate();
  WorldModel world;
  world.bounds = spec.bounds;
  world.seed = spec.seed;

  Rng rng = Rng::keyed(spec.seed, 1);
  const auto target = static_cast<std::size_t>(std::llround(spec.density * spec.bounds.area() / 100.0));
  const double cell = spec.min_spacing;
  const auto key = [&](Vec2 p) {
    const auto ix = static_cast<std::int64_t>(std::floor((p.x - spec.bounds.min_x) / cell));
    const auto iy = static_cast<std::int64_t>(std::floor((p.y - spec.bounds.min_y) / cell));
    return std::pair{ix, iy};
  };
  std::unordered_map<std::int64_t, std::vector<Vec2>> grid;
  const auto pack = [](std::int64_t ix, std::int64_t iy) { return (ix << 32) ^ (iy & 0xffffffff); };

  const std::size_t max_darts = 30 * target + 100;
  for (std::size_t dart = 0; dart < max_darts && world.landmarks.size() < target; ++dart) {
    const Vec2 p{rng.uniform(spec.bounds.min_x, spec.bounds.max_x), rng.uniform(spec.bounds.min_y, spec.bounds.max_y)};
    const auto [ix, iy] = key(p);
    bool clear = true;
    for (std::int64_t dx = -1; dx <= 1 && clear; ++dx) {
      for (std::int64_t dy = -1; dy <= 1 && clear; ++dy) {
        const auto it = grid.find(pack(ix + dx, iy + dy));
        if (it == grid.end()) continue;
        for (Vec2 q : it->second) {
          if (distance(p, q) < spec.min_spacing) {
            clear = false;
            break;
          }
        }
      }
    }
    if (!clear) continue;
    grid[pack(ix, iy)].push_back(p);
    Landmark lm;
    lm.id = static_cast<int>(world.landmarks.size());
    lm.position = p;
    lm.radius = rng.uniform(spec.min_radius, spec.max_radius);
    lm.color = kColors[rng.below(kColors.size())];
    world.landmarks.push_back(std::move(lm));
  }

  Rng occ_rng = Rng::keyed(spec.seed, 2);
  for (int i = 0; i < spec.occluder_count; ++i) {
    const Vec2 c{occ_rng.uniform(spec.bounds.min_x, spec.bounds.max_x),
                 occ_rng.uniform(spec.bounds.min_y, spec.bounds.max_y)};
    const double len = occ_rng.uniform(spec.min_occluder_len, spec.max_occluder_len);
    const Vec2 half = (0.5 * len) * unit_from_angle(occ_rng.uniform(-kPi, kPi));
    world.occluders.push_back({c - half, c + half});
  }
  return world;
}

bool segments_intersect(Vec2 p, Vec2 q, const Segment& s) {
  const double o1 = orient(p, q, s.a);
  const double o2 = orient(p, q, s.b);
  const double o3 = orient(s.a, s.b, p);
  const double o4 = orient(s.a, s.b, q);
  if (((o1 > 0 && o2 < 0) || (o1 < 0 && o2 > 0)) && ((o3 > 0 && o4 < 0) || (o3 < 0 && o4 > 0))) return true;
  if (o1 == 0 && on_segment(p, q, s.a)) return true;
  if (o2 == 0 && on_segment(p, q, s.b)) return true;
  if (o3 == 0 && on_segment(s.a, s.b, p)) return true;
  if (o4 == 0 && on_segment(s.a, s.b, q)) return true;
  return false;
}

std::vector<int> visible_set(const WorldModel& world, const CameraPose& pose, const OverlapConfig& cfg) {
  std::vector<int> ids;
  const Vec2 eye = pose.position();
  const Vec2 heading = unit_from_angle(pose.yaw());
  const double cos_half = std::cos(pose.half_fov());
  for (const auto& lm : world.landmarks) {
    const Vec2 rel = lm.position - eye;
    const double d = norm(rel);
    if (d > cfg.d_max) continue;
    if (d > 0.0 && dot(rel, heading) < d * cos_half) continue;
    const bool blocked = std::any_of(world.occluders.begin(), world.occluders.end(),
                                     [&](const Segment& s) { return segments_intersect(eye, lm.position, s); });
    if (!blocked) ids.push_back(lm.id);
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

Panorama render_panorama(const WorldModel& world, const CameraPose& pose, const OverlapConfig& cfg, int columns) {
  if (columns < 2) throw ValidationError("columns", "must be >= 2");
  Panorama pano;
  pano.columns.resize(static_cast<std::size_t>(columns));
  const Vec2 eye = pose.position();
  const double left_edge = pose.yaw() + pose.half_fov();
  const double step = pose.fov() / (columns - 1);

  // Only landmarks that can intersect the sector matter.
  std::vector<const Landmark*> near;
  for (const auto& lm : world.landmarks) {
    if (distance(lm.position, eye) <= cfg.d_max + lm.radius) near.push_back(&lm);
  }

  for (int c = 0; c < columns; ++c) {
    const Vec2 dir = unit_from_angle(left_edge - step * c);
    double best = std::numeric_limits<double>::infinity();
    int best_id = -1;
    for (const Landmark* lm : near) {
      if (const auto t = ray_circle(eye, dir, lm->position, lm->radius); t && *t < best) {
        best = *t;
        best_id = lm->id;
      }
    }
    if (best_id < 0 || best > cfg.d_max) continue;
    for (const auto& s : world.occluders) {
      if (const auto t = ray_segment(eye, dir, s); t && *t < best) {
        best_id = -1;
        break;
      }
    }
    if (best_id >= 0) pano.columns[static_cast<std::size_t>(c)] = {best_id, best};
  }
  return pano;
}

std::uint64_t panorama_digest(const Panorama& pano) {
  std::vector<std::byte> bytes;
  bytes.reserve(pano.columns.size() * 12);
  const auto put = [&](std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes.push_back(static_cast<std::byte>((v >> (8 * i)) & 0xff));
  };
  for (const auto& col : pano.columns) {
    put(static_cast<std::uint32_t>(col.landmark), 4);
    put(std::bit_cast<std::uint64_t>(col.depth), 8);
  }
  return fnv1a64(bytes);
}

nlohmann::json world_to_json(const WorldModel& world) {
  nlohmann::json lms = nlohmann::json::array();
  for (const auto& lm : world.landmarks) {
    lms.push_back({{"id", lm.id}, {"x", lm.position.x}, {"y", lm.position.y}, {"radius", lm.radius}, {"color", lm.color}});
  }
  nlohmann::json occ = nlohmann::json::array();
  for (const auto& s : world.occluders) occ.push_back({s.a.x, s.a.y, s.b.x, s.b.y});
  return {{"seed", world.seed},
          {"bounds", {world.bounds.min_x, world.bounds.min_y, world.bounds.max_x, world.bounds.max_y}},
          {"landmarks", std::move(lms)},
          {"occluders", std::move(occ)}};
}

WorldModel world_from_json(const nlohmann::json& j) {
  WorldModel world;
  try {
    world.seed = j.value("seed", std::uint64_t{0});
    const auto& b = j.at("bounds");
    world.bounds = {b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>(), b.at(3).get<double>()};
    for (const auto& lm : j.at("landmarks")) {
      world.landmarks.push_back({lm.at("id").get<int>(),
                                 {lm.at("x").get<double>(), lm.at("y").get<double>()},
                                 lm.at("radius").get<double>(),
                                 lm.value("color", std::string{})});
    }
    for (const auto& s : j.at("occluders")) {
      world.occluders.push_back({{s.at(0).get<double>(), s.at(1).get<double>()},
                                 {s.at(2).get<double>(), s.at(3).get<double>()}});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("world", e.what());
  }
  if (!world.bounds.valid()) throw ValidationError("world.bounds", "must be a non-degenerate rectangle");
  std::vector<int> ids;
  for (const auto& lm : world.landmarks) {
    if (!(lm.radius > 0.0)) throw ValidationError("world.landmarks.radius", "must be > 0");
    ids.push_back(lm.id);
  }
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw ValidationError("world.landmarks.id", "ids must be unique");
  }
  return world;
}

nlohmann::json panorama_to_json(const Panorama& pano) {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : pano.columns) cols.push_back({c.landmark, c.depth});
  return cols;
}

Panorama panorama_from_json(const nlohmann::json& j) {
  Panorama pano;
  for (const auto& c : j) pano.columns.push_back({c.at(0).get<int>(), c.at(1).get<double>()});
  return pano;
}

}  // namespace ctxmem

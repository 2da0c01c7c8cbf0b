#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxmem/geometry.hpp"

namespace ctxmem {

struct Landmark {
  int id = 0;
  Vec2 position;
  double radius = 0.5;
  std::string color;
  friend bool operator==(const Landmark&, const Landmark&) = default;
};

struct Segment {
  Vec2 a;
  Vec2 b;
  friend bool operator==(const Segment&, const Segment&) = default;
};

/// Static procedural scene. Immutable after generation; every query on it is
/// a pure function.
struct WorldModel {
  std::vector<Landmark> landmarks;
  std::vector<Segment> occluders;
  Bounds bounds;
  std::uint64_t seed = 0;
  friend bool operator==(const WorldModel&, const WorldModel&) = default;
};

struct WorldSpec {
  double density = 0.5;  // landmarks per 100 m^2
  int occluder_count = 0;
  Bounds bounds{0.0, 0.0, 100.0, 100.0};
  std::uint64_t seed = 0;
  double min_spacing = 1.0;
  double min_radius = 0.2;
  double max_radius = 0.6;
  double min_occluder_len = 2.0;
  double max_occluder_len = 8.0;

  void validate() const;
};

/// Poisson-disk landmark placement by dart throwing (target count =
/// density * area / 100, never closer than min_spacing) plus random occluder
/// segments.
WorldModel generate_world(const WorldSpec& spec);

/// True when segment p-q properly crosses or touches segment s.
bool segments_intersect(Vec2 p, Vec2 q, const Segment& s);

/// Landmarks whose centre lies within fov/2 of the heading, within d_max, and
/// with an occluder-free line of sight. Sorted ascending.
std::vector<int> visible_set(const WorldModel& world, const CameraPose& pose, const OverlapConfig& cfg);

inline constexpr int kPanoramaColumns = 128;

struct PanoramaColumn {
  int landmark = -1;    // -1 when the ray hits no landmark
  double depth = 0.0;   // in (0, d_max] when landmark >= 0, else 0
  friend bool operator==(const PanoramaColumn&, const PanoramaColumn&) = default;
};

/// Column i looks along yaw + fov/2 - i * fov / (columns - 1), so the first
/// and last columns sit exactly on the left and right FOV edges.
struct Panorama {
  std::vector<PanoramaColumn> columns;
  friend bool operator==(const Panorama&, const Panorama&) = default;
};

Panorama render_panorama(const WorldModel& world, const CameraPose& pose, const OverlapConfig& cfg,
                         int columns = kPanoramaColumns);

/// Stable 64-bit hash of the panorama's canonical byte encoding.
std::uint64_t panorama_digest(const Panorama& pano);

nlohmann::json world_to_json(const WorldModel& world);
WorldModel world_from_json(const nlohmann::json& j);

nlohmann::json panorama_to_json(const Panorama& pano);
Panorama panorama_from_json(const nlohmann::json& j);

}  // namespace ctxmem

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include "ctxmem/geometry.hpp"

namespace ctxmem {

inline constexpr int kFps = 30;
inline constexpr int kSegmentLen = 77;

struct TrajectoryFrame {
  std::int64_t time_index = 0;  // frame count at kFps
  CameraPose pose;
  friend bool operator==(const TrajectoryFrame&, const TrajectoryFrame&) = default;
};

struct Trajectory {
  std::vector<TrajectoryFrame> frames;
  int segment_len = kSegmentLen;
  int fps = kFps;
  std::uint64_t seed = 0;

  std::size_t size() const { return frames.size(); }
  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

/// Per-segment motion limits for roaming trajectories.
struct SegmentConstraints {
  int segment_len = kSegmentLen;
  double min_displacement = 3.0;
  double max_displacement = 6.0;
  double max_net_yaw_deg = 60.0;         // |yaw_end - yaw_start|, exclusive
  double max_cumulative_yaw_deg = 90.0;  // sum of |per-frame yaw change|, inclusive
};

struct SegmentReport {
  std::size_t first_frame = 0;
  std::size_t last_frame = 0;
  double displacement = 0.0;
  double net_yaw_deg = 0.0;
  double cumulative_yaw_deg = 0.0;
  bool pass = false;
};

struct ConstraintReport {
  std::vector<SegmentReport> segments;
  bool pass = false;
};

/// One entry per complete, non-overlapping segment; a trailing partial
/// segment is not reported. Passes iff there is at least one segment and all
/// segments pass.
ConstraintReport check_constraints(const Trajectory& traj, const SegmentConstraints& limits = {});

struct RoamSpec {
  int num_frames = 1001;
  Bounds bounds{0.0, 0.0, 60.0, 60.0};
  int num_control_points = 12;
  std::uint64_t seed = 0;
  double fov = deg_to_rad(kDefaultFovDegrees);
  double segment_arc_length = 4.5;  // metres travelled per segment (constant speed)
  int yaw_smoothing_window = 15;
  int max_attempts = 200;
  SegmentConstraints constraints;

  void validate() const;
};

/// Random B-spline roam. Control points are a bounded-turn random walk inside
/// `bounds`; positions follow the clamped cubic B-spline at constant speed and
/// yaw is the smoothed tangent heading. Retries with fresh control points until
/// check_constraints passes; throws ConstraintUnsatisfiable after max_attempts.
Trajectory generate_roam(const RoamSpec& spec);

/// Deterministic part of generate_roam for given control points. Throws
/// ConstraintUnsatisfiable when the spline is too short for num_frames.
Trajectory roam_from_control_points(std::span<const Vec2> control_points, const RoamSpec& spec);

struct LoopSpec {
  Vec2 center;
  double radius = 12.0;
  double radial_jitter = 2.0;
  int num_control_points = 8;
  double laps = 2.0;
  std::uint64_t seed = 0;
  double fov = deg_to_rad(kDefaultFovDegrees);
  double segment_arc_length = 4.5;
  int yaw_smoothing_window = 15;
};

/// Closed roam: a periodic cubic B-spline through jittered points on a circle,
/// traversed `laps` times so later laps revisit earlier places.
Trajectory generate_loop_roam(const LoopSpec& spec);

/// Camera fixed at `start`; yaw sweeps linearly to start.yaw + degrees over the
/// first half of the frames and back over the second half. The final frame is
/// exactly `start`. num_frames must be even and >= 2.
Trajectory rotate_and_return(const CameraPose& start, double degrees, int num_frames);

/// JSONL: a header `{"fps":..,"segment_len":..,"seed":..}` then one
/// `{"t":..,"x":..,"y":..,"yaw":..,"fov":..}` per frame, doubles printed with
/// 17 significant digits.
void write_trajectory_jsonl(std::ostream& out, const Trajectory& traj);
Trajectory read_trajectory_jsonl(std::istream& in);
void save_trajectory(const std::filesystem::path& path, const Trajectory& traj);
Trajectory load_trajectory(const std::filesystem::path& path);

}  // namespace ctxmem

#pragma once

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "ctxmem/geometry.hpp"
#include "ctxmem/memory_store.hpp"
#include "ctxmem/rng.hpp"

namespace ctxmem::testing {

inline CameraPose deg_pose(double x, double y, double yaw_deg, double fov_deg = kDefaultFovDegrees) {
  return {x, y, deg_to_rad(yaw_deg), deg_to_rad(fov_deg)};
}

inline CameraPose random_pose(Rng& rng, double extent, double fov = deg_to_rad(kDefaultFovDegrees)) {
  return {rng.uniform(0.0, extent), rng.uniform(0.0, extent), rng.uniform(-kPi, kPi), fov};
}

inline std::vector<FrameRecord> random_records(Rng& rng, std::size_t n, double extent) {
  std::vector<FrameRecord> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].time_index = static_cast<std::int64_t>(i);
    out[i].pose = random_pose(rng, extent);
  }
  return out;
}

/// Later-as-query all-pairs edge set, straight from the heuristic.
inline std::vector<std::vector<FrameId>> all_pairs_edges(const std::vector<FrameRecord>& records,
                                                        const OverlapConfig& cfg) {
  std::vector<std::vector<FrameId>> edges(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      if (fov_overlap_heuristic(records[i].pose, records[j].pose, cfg).overlaps) {
        edges[i].push_back(static_cast<FrameId>(j));
      }
    }
  }
  return edges;
}

inline std::vector<FrameId> scan_covisible(const std::vector<FrameRecord>& records, const CameraPose& target,
                                           const OverlapConfig& cfg) {
  std::vector<FrameId> out;
  for (std::size_t j = 0; j < records.size(); ++j) {
    if (fov_overlap_heuristic(target, records[j].pose, cfg).overlaps) out.push_back(static_cast<FrameId>(j));
  }
  return out;
}

/// Unique scratch path under the system temp directory.
inline std::filesystem::path temp_path(const std::string& name) {
  static int counter = 0;
  return std::filesystem::temp_directory_path() /
         ("ctxmem_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++) + "_" + name);
}

}  // namespace ctxmem::testing

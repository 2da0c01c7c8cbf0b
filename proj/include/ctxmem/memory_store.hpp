#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "ctxmem/geometry.hpp"
#include "ctxmem/world.hpp"

namespace ctxmem {

using FrameId = std::uint32_t;

struct FrameRecord {
  FrameId frame_id = 0;  // assigned by the store on append
  std::int64_t time_index = 0;
  CameraPose pose;
  std::uint64_t payload_digest = 0;
  std::optional<Panorama> panorama;
  friend bool operator==(const FrameRecord&, const FrameRecord&) = default;
};

enum class SnapshotFormat { Binary, Jsonl };

struct StoreOptions {
  /// Grid cell edge in metres; <= 0 means d_max / 4.
  double cell_size = 0.0;
  /// Keep panoramas in the records (and snapshots) when provided.
  bool keep_panoramas = true;
  friend bool operator==(const StoreOptions&, const StoreOptions&) = default;
};

struct QueryStats {
  std::uint64_t candidates = 0;  // heuristic evaluations performed
  std::uint64_t cells_visited = 0;
};

/// Append-only frame history with a uniform spatial hash over frame origins
/// and co-visibility edges computed as frames arrive.
///
/// Edge (i, j), i > j, exists iff fov_overlap_heuristic(pose_i, pose_j) passed
/// when frame i was appended. Candidates come from the grid cells within
/// max_accept_distance of the new frame, which is exact: no accepted pair lies
/// outside that radius.
///
/// Not internally synchronized. One writer at a time; readers must not run
/// concurrently with append (callers wrap the store in a shared lock).
class MemoryStore {
 public:
  explicit MemoryStore(OverlapConfig cfg = {}, StoreOptions options = {});

  /// Appends and returns the new frame id. Throws OutOfOrder if the time
  /// index is below the last one.
  FrameId append(FrameRecord record);

  /// Frames whose stored pose passes the heuristic with `target` as query,
  /// ascending by id. Grid-pruned.
  std::vector<FrameId> query_covisible(const CameraPose& target, QueryStats* stats = nullptr) const;

  /// Same contract as query_covisible by full linear scan.
  std::vector<FrameId> query_covisible_naive(const CameraPose& target) const;

  /// Earlier frames j with an edge (id, j), ascending.
  std::span<const FrameId> edges_from(FrameId id) const { return edges_.at(id); }
  /// True if an edge exists between a and b in either direction.
  bool has_edge(FrameId a, FrameId b) const;
  const std::vector<std::vector<FrameId>>& edges() const { return edges_; }
  std::uint64_t edge_count() const;

  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const FrameRecord& record(FrameId id) const { return records_.at(id); }
  const std::vector<FrameRecord>& records() const { return records_; }
  const OverlapConfig& config() const { return cfg_; }
  const StoreOptions& options() const { return options_; }
  double cell_size() const { return cell_size_; }
  /// Current pruning radius for candidate origins.
  double search_radius() const;

  /// Heuristic evaluations spent building edges so far.
  std::uint64_t build_pairs_evaluated() const { return build_pairs_; }

  /// Frame ids grouped by grid cell, for consistency checks.
  std::size_t occupied_cells() const { return grid_.size(); }
  bool grid_consistent() const;

  void snapshot(const std::filesystem::path& path, SnapshotFormat format = SnapshotFormat::Binary) const;
  /// Reads either format (sniffed from the first bytes), rebuilds the grid and
  /// edges, and verifies the stored edges match. Throws CorruptFile.
  static MemoryStore load(const std::filesystem::path& path);

  std::string to_jsonl() const;
  static MemoryStore from_jsonl(const std::string& text);

  friend bool operator==(const MemoryStore& a, const MemoryStore& b) {
    return a.cfg_ == b.cfg_ && a.records_ == b.records_ && a.edges_ == b.edges_;
  }

 private:
  using CellKey = std::uint64_t;

  CellKey cell_of(Vec2 p) const;
  template <typename Fn>
  void for_each_candidate(Vec2 center, double radius, QueryStats* stats, Fn&& fn) const;

  OverlapConfig cfg_;
  StoreOptions options_;
  double cell_size_;
  std::vector<FrameRecord> records_;
  std::vector<Fan> fans_;
  std::vector<std::vector<FrameId>> edges_;
  std::unordered_map<CellKey, std::vector<FrameId>> grid_;
  double max_radius_factor_ = 0.0;  // largest max_accept_distance over stored fovs
  std::uint64_t build_pairs_ = 0;
};

/// All-pairs reference for the edge set (later frame as query).
std::vector<std::vector<FrameId>> build_edges_naive(std::span<const FrameRecord> records, const OverlapConfig& cfg,
                                                    std::uint64_t* pairs_evaluated = nullptr);

}  // namespace ctxmem

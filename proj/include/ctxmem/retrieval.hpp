#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "ctxmem/memory_store.hpp"
#include "ctxmem/rng.hpp"
#include "ctxmem/trajectory.hpp"
#include "ctxmem/world.hpp"

namespace ctxmem {

/// Every strategy keeps the most recent frame (the first frame of the segment
/// being predicted). FirstFrame stops there; FirstFramePlusRandom adds a
/// uniform sample of the history.
enum class StrategyKind {
  FirstFrame,
  FirstFramePlusRandom,
  RecentWindow,
  ExponentialTimestamps,  // present - 1, present - 2, present - 4, ...
  FovRandom,
  FovNonAdj,
  FovNonAdjFarSpaceTime,
};

inline constexpr std::array<StrategyKind, 7> kAllStrategies = {
    StrategyKind::FirstFrame,   StrategyKind::FirstFramePlusRandom, StrategyKind::RecentWindow,
    StrategyKind::ExponentialTimestamps, StrategyKind::FovRandom, StrategyKind::FovNonAdj,
    StrategyKind::FovNonAdjFarSpaceTime,
};

/// CLI/JSON spelling: first-frame, first-frame-random, recent-window,
/// exp-timestamps, fov-random, fov-nonadj, fov-nonadj-fst.
std::string_view to_string(StrategyKind kind);
StrategyKind parse_strategy(std::string_view text);
bool is_fov_strategy(StrategyKind kind);

struct RetrievalConfig {
  int k = 20;
  StrategyKind strategy = StrategyKind::FovNonAdj;
  int far_slots = 2;
  double time_scale = 1.0;  // seconds of separation worth one metre
  std::uint64_t seed = 0;
  double recent_only_prob = 0.10;
  /// Far-space-time picks may come from the whole history, not only
  /// FOV-passing frames. Breaks the "every frame passes the FOV test" property.
  bool far_from_all_history = false;
  /// When the target is itself a stored frame, read its co-visible set from
  /// the precomputed edges instead of re-running the heuristic.
  bool use_cached_edges = false;

  void validate() const;
  friend bool operator==(const RetrievalConfig&, const RetrievalConfig&) = default;
};

/// Why a frame ended up in the context.
enum class SelectionStage { MostRecent, FovPass, DedupSurvivor, FarSlot, Baseline, Fill };
std::string_view to_string(SelectionStage stage);

struct RetrievedFrame {
  FrameId id = 0;
  SelectionStage stage = SelectionStage::Baseline;
};

struct RetrievalResult {
  std::vector<FrameId> ids;              // ascending
  std::vector<RetrievedFrame> frames;    // ascending by id, same members as ids
  std::vector<FrameId> fov_candidates;   // FOV-passing history before budgeting (Fov* only)
};

/// Splits ascending `ids` into maximal runs of consecutive integers and keeps
/// one uniformly chosen member of each run. Output ascending.
std::vector<FrameId> dedup_non_adjacent(std::span<const FrameId> ids, Rng& rng);
std::vector<FrameId> dedup_non_adjacent(std::span<const FrameId> ids, std::uint64_t seed);

struct SpaceTimePoint {
  Vec2 position;
  double time_index = 0.0;  // frames
};

/// ||p1 - p2|| + |t1 - t2| / (fps * time_scale)
double space_time_distance(const SpaceTimePoint& a, const SpaceTimePoint& b, double time_scale);

/// Greedy farthest-point sampling: first pick is the candidate farthest from
/// `target`, each later pick maximizes its distance to the nearest earlier
/// pick. Exact ties are broken uniformly. Returns min(m, |candidates|) ids in
/// pick order.
std::vector<FrameId> far_space_time_select(std::span<const FrameId> candidates, const MemoryStore& store,
                                           const SpaceTimePoint& target, int m, double time_scale, Rng& rng);

/// Context for predicting at `target`: at most cfg.k ids, always including
/// `most_recent` when the store is non-empty. The random stream is keyed by
/// (cfg.seed, store.size()).
RetrievalResult retrieve_context_detailed(const MemoryStore& store, const CameraPose& target,
                                          const RetrievalConfig& cfg, std::optional<FrameId> most_recent,
                                          std::optional<FrameId> target_frame = std::nullopt);
std::vector<FrameId> retrieve_context(const MemoryStore& store, const CameraPose& target, const RetrievalConfig& cfg,
                                      std::optional<FrameId> most_recent);

/// Co-visible frames of a stored frame read from the edge set, both
/// directions, ascending.
std::vector<FrameId> covisible_from_edges(const MemoryStore& store, FrameId frame);

struct TrainingSample {
  FrameId segment_first = 0;
  FrameId segment_last = 0;  // inclusive
  std::vector<FrameId> context_ids;  // ascending, contains segment_first
  bool recent_only = false;
};

/// Training-time context sampler over a fully known trajectory. Builds the
/// store (and its co-visibility edges) once; each sample() is a pure function
/// of its seed.
class TrainingSampler {
 public:
  TrainingSampler(const Trajectory& traj, const WorldModel& world, const OverlapConfig& overlap,
                  const RetrievalConfig& cfg);

  /// Picks a segment uniformly; with probability recent_only_prob the context
  /// is the segment's first frame alone, otherwise k-1 frames outside the
  /// segment (strategy first, uniform top-up) plus the first frame.
  TrainingSample sample(std::uint64_t seed) const;

  const MemoryStore& store() const { return store_; }
  int segment_len() const { return segment_len_; }

 private:
  MemoryStore store_;
  RetrievalConfig cfg_;
  int segment_len_;
  std::vector<std::vector<FrameId>> later_edges_;  // j > i with edge (j, i)
};

TrainingSample training_sample(const Trajectory& traj, const WorldModel& world, const OverlapConfig& overlap,
                               const RetrievalConfig& cfg, std::uint64_t seed);

}  // namespace ctxmem

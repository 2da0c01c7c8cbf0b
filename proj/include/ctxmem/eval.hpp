#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxmem/memory_store.hpp"
#include "ctxmem/retrieval.hpp"
#include "ctxmem/trajectory.hpp"
#include "ctxmem/world.hpp"

namespace ctxmem {

inline constexpr int kEvalReportVersion = 1;
inline constexpr const char* kCoverageProxyNote =
    "coverage and precision/recall are geometric proxies for memory capability; no video model is run, so no "
    "PSNR/LPIPS/FID/FVD values are produced";

/// |visible(target) ∩ ⋃ visible(context)| / |visible(target)|, 1.0 when the
/// target sees nothing.
double coverage(const WorldModel& world, const CameraPose& target, std::span<const FrameId> context_ids,
                const MemoryStore& store, const OverlapConfig& cfg);

/// Same, from precomputed sorted visible sets.
double coverage_from_sets(std::span<const int> target_visible, std::span<const std::vector<int>* const> context_sets);

/// Ground-truth co-visibility: the sorted sets share at least one landmark.
bool sets_intersect(std::span<const int> a, std::span<const int> b);

struct PrecisionRecall {
  double precision = 1.0;
  double recall = 1.0;             // returned ids against the relevant set
  double recall_pre_budget = 1.0;  // pre-budget candidate pool against the relevant set
  std::size_t relevant = 0;
};

/// Relevant set = stored frames sharing a visible landmark with `target`.
/// `pre_budget` defaults to the returned ids. Empty denominators give 1.0.
PrecisionRecall retrieval_pr(const MemoryStore& store, const WorldModel& world, const CameraPose& target,
                             std::span<const FrameId> returned_ids, const OverlapConfig& cfg,
                             std::optional<std::span<const FrameId>> pre_budget = std::nullopt);

struct GenerationStep {
  std::size_t segment_index = 0;
  std::size_t first_frame = 0;  // trajectory indices, inclusive
  std::size_t last_frame = 0;
  std::size_t store_size_before = 0;
};

/// Streaming generation loop: the store starts with trajectory frame 0, then
/// for each block of up to segment_len following frames `on_segment` runs
/// against the current store (target = the block's last pose) and the whole
/// block is appended. Returns the final store.
MemoryStore run_generation_loop(const Trajectory& traj, const WorldModel& world, const OverlapConfig& cfg,
                                const std::function<void(const MemoryStore&, const GenerationStep&)>& on_segment);

struct EvalFixture {
  std::string name;
  WorldModel world;
  Trajectory trajectory;
};

/// 5 worlds x {rotate-and-return 180, rotate-and-return 360, two-lap loop}.
std::vector<EvalFixture> standard_fixtures(std::uint64_t base_seed = 7, int world_count = 5);

struct EvalConfig {
  OverlapConfig overlap;
  RetrievalConfig retrieval;  // strategy and seed are overridden per run
  std::vector<StrategyKind> strategies{kAllStrategies.begin(), kAllStrategies.end()};
  std::vector<std::uint64_t> seeds{7};
  bool timing = false;      // latency makes the report machine-dependent
  bool keep_series = true;  // per-segment rows for CSV

  void validate() const;
};

struct StrategyStats {
  StrategyKind strategy = StrategyKind::FovNonAdj;
  std::size_t samples = 0;
  double mean_coverage = 0.0;
  double p10_coverage = 0.0;
  double mean_precision = 0.0;
  double mean_recall = 0.0;
  double mean_recall_pre_budget = 0.0;
  double mean_context_size = 0.0;
  double mean_latency_us = 0.0;  // 0 unless timing
};

struct Confusion {
  std::uint64_t true_positive = 0;   // heuristic accepts, landmarks shared
  std::uint64_t false_positive = 0;  // heuristic accepts, nothing shared
  std::uint64_t false_negative = 0;  // heuristic rejects, landmarks shared
  std::uint64_t true_negative = 0;
  std::uint64_t total() const { return true_positive + false_positive + false_negative + true_negative; }
  double agreement() const;
};

struct SeriesRow {
  std::string fixture;
  StrategyKind strategy = StrategyKind::FovNonAdj;
  std::uint64_t seed = 0;
  std::size_t segment = 0;
  std::size_t target_frame = 0;
  double coverage = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  std::size_t context_size = 0;
};

struct EvalReport {
  std::vector<StrategyStats> strategies;
  Confusion calibration;
  std::uint64_t calibration_pairs = 0;
  nlohmann::json metadata;
  std::vector<SeriesRow> series;

  const StrategyStats& stats(StrategyKind kind) const;
};

EvalReport compare_strategies(std::span<const EvalFixture> fixtures, const EvalConfig& cfg);

nlohmann::json report_to_json(const EvalReport& report);
std::string report_table(const EvalReport& report);
std::string report_csv(const EvalReport& report);

nlohmann::json to_json(const OverlapConfig& cfg);
nlohmann::json to_json(const RetrievalConfig& cfg);

enum class BenchLayout { Uniform, SingleCell };

struct BenchConfig {
  std::size_t frames = 10000;
  std::size_t queries = 1000;
  double world_size = 200.0;
  BenchLayout layout = BenchLayout::Uniform;
  std::uint64_t seed = 7;
  OverlapConfig overlap;
};

struct BenchReport {
  std::size_t frames = 0;
  std::size_t queries = 0;
  double naive_build_ms = 0.0;
  double grid_build_ms = 0.0;
  std::uint64_t naive_build_pairs = 0;
  std::uint64_t grid_build_pairs = 0;
  double naive_query_ms = 0.0;
  double grid_query_ms = 0.0;
  std::uint64_t grid_query_candidates = 0;
  bool edges_identical = false;
  bool queries_identical = false;

  double pair_fraction() const;
  double query_speedup() const;
  double build_speedup() const;
};

/// Naive all-pairs vs grid-pruned edge build and query timing on seeded poses.
/// Throws ValidationError when frames < 100.
BenchReport bench_retrieval(const BenchConfig& cfg);
nlohmann::json bench_to_json(const BenchReport& report);

}  // namespace ctxmem

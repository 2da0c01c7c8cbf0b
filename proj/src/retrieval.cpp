#include "ctxmem/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <unordered_set>

#include "ctxmem/errors.hpp"

namespace ctxmem {

std::string_view to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::FirstFrame: return "first-frame";
    case StrategyKind::FirstFramePlusRandom: return "first-frame-random";
    case StrategyKind::RecentWindow: return "recent-window";
    case StrategyKind::ExponentialTimestamps: return "exp-timestamps";
    case StrategyKind::FovRandom: return "fov-random";
    case StrategyKind::FovNonAdj: return "fov-nonadj";
    case StrategyKind::FovNonAdjFarSpaceTime: return "fov-nonadj-fst";
  }
  return "?";
}

StrategyKind parse_strategy(std::string_view text) {
  for (StrategyKind k : kAllStrategies) {
    if (to_string(k) == text) return k;
  }
  throw ValidationError("strategy", "unknown strategy '" + std::string(text) + "'");
}

bool is_fov_strategy(StrategyKind kind) {
  return kind == StrategyKind::FovRandom || kind == StrategyKind::FovNonAdj ||
         kind == StrategyKind::FovNonAdjFarSpaceTime;
}

std::string_view to_string(SelectionStage stage) {
  switch (stage) {
    case SelectionStage::MostRecent: return "most-recent";
    case SelectionStage::FovPass: return "fov-pass";
    case SelectionStage::DedupSurvivor: return "dedup-survivor";
    case SelectionStage::FarSlot: return "far-slot";
    case SelectionStage::Baseline: return "baseline";
    case SelectionStage::Fill: return "fill";
  }
  return "?";
}

void RetrievalConfig::validate() const {
  if (k < 1) throw ValidationError("k", "must be >= 1");
  if (far_slots < 0 || far_slots >= k) throw ValidationError("far_slots", "must satisfy 0 <= far_slots < k");
  if (!(time_scale > 0.0) || !std::isfinite(time_scale)) throw ValidationError("time_scale", "must be > 0");
  if (!(recent_only_prob >= 0.0 && recent_only_prob <= 1.0)) {
    throw ValidationError("recent_only_prob", "must lie in [0, 1]");
  }
}

std::vector<FrameId> dedup_non_adjacent(std::span<const FrameId> ids, Rng& rng) {
  std::vector<FrameId> out;
  std::size_t start = 0;
  while (start < ids.size()) {
    std::size_t end = start + 1;
    while (end < ids.size() && ids[end] == ids[end - 1] + 1) ++end;
    out.push_back(ids[start + rng.below(end - start)]);
    start = end;
  }
  return out;
}

std::vector<FrameId> dedup_non_adjacent(std::span<const FrameId> ids, std::uint64_t seed) {
  Rng rng(seed);
  return dedup_non_adjacent(ids, rng);
}

double space_time_distance(const SpaceTimePoint& a, const SpaceTimePoint& b, double time_scale) {
  return distance(a.position, b.position) + std::abs(a.time_index - b.time_index) / (kFps * time_scale);
}

std::vector<FrameId> far_space_time_select(std::span<const FrameId> candidates, const MemoryStore& store,
                                           const SpaceTimePoint& target, int m, double time_scale, Rng& rng) {
  std::vector<FrameId> picks;
  if (m <= 0 || candidates.empty()) return picks;
  std::vector<SpaceTimePoint> pts;
  pts.reserve(candidates.size());
  for (FrameId id : candidates) {
    const auto& r = store.record(id);
    pts.push_back({r.pose.position(), static_cast<double>(r.time_index)});
  }
  std::vector<double> score(candidates.size());
  for (std::size_t i = 0; i < pts.size(); ++i) score[i] = space_time_distance(pts[i], target, time_scale);
  std::vector<bool> taken(candidates.size(), false);
  std::vector<std::size_t> ties;

  const auto pick = [&]() {
    double best = -1.0;
    ties.clear();
    for (std::size_t i = 0; i < score.size(); ++i) {
      if (taken[i]) continue;
      if (score[i] > best) {
        best = score[i];
        ties.assign(1, i);
      } else if (score[i] == best) {
        ties.push_back(i);
      }
    }
    return ties[rng.below(ties.size())];
  };

  const std::size_t want = std::min(static_cast<std::size_t>(m), candidates.size());
  while (picks.size() < want) {
    const std::size_t i = pick();
    taken[i] = true;
    picks.push_back(candidates[i]);
    // From the second pick on, distance is to the nearest earlier pick.
    for (std::size_t j = 0; j < score.size(); ++j) {
      if (taken[j]) continue;
      const double d = space_time_distance(pts[j], pts[i], time_scale);
      score[j] = picks.size() == 1 ? d : std::min(score[j], d);
    }
  }
  return picks;
}

std::vector<FrameId> covisible_from_edges(const MemoryStore& store, FrameId frame) {
  std::vector<FrameId> out(store.edges_from(frame).begin(), store.edges_from(frame).end());
  for (FrameId j = frame + 1; j < store.size(); ++j) {
    if (store.has_edge(j, frame)) out.push_back(j);
  }
  return out;
}

namespace {

struct Selection {
  std::vector<RetrievedFrame> frames;
  std::unordered_set<FrameId> chosen;

  void add(FrameId id, SelectionStage stage) {
    if (chosen.insert(id).second) frames.push_back({id, stage});
  }
};

// Budgeted non-adjacent selection over `candidates` (ascending). Frames
// already in `sel` represent their runs. Round one keeps one frame per run
// that has no representative yet; later rounds repeat over the frames not
// chosen and not adjacent to a chosen frame, so the result never holds two
// consecutive ids from these rounds.
void fill_non_adjacent(std::span<const FrameId> candidates, std::size_t budget, Selection& sel, Rng& rng) {
  std::size_t remaining = budget;
  {
    std::vector<FrameId> merged(candidates.begin(), candidates.end());
    for (FrameId id : sel.chosen) merged.push_back(id);
    std::sort(merged.begin(), merged.end());
    merged.erase(std::unique(merged.begin(), merged.end()), merged.end());
    std::vector<FrameId> open_runs;
    std::size_t start = 0;
    while (start < merged.size()) {
      std::size_t end = start + 1;
      while (end < merged.size() && merged[end] == merged[end - 1] + 1) ++end;
      const bool represented =
          std::any_of(merged.begin() + static_cast<std::ptrdiff_t>(start),
                      merged.begin() + static_cast<std::ptrdiff_t>(end), [&](FrameId id) { return sel.chosen.count(id); });
      if (!represented) open_runs.insert(open_runs.end(), merged.begin() + static_cast<std::ptrdiff_t>(start),
                                         merged.begin() + static_cast<std::ptrdiff_t>(end));
      start = end;
    }
    auto reps = dedup_non_adjacent(open_runs, rng);
    if (reps.size() > remaining) reps = sample_without_replacement<FrameId>(reps, remaining, rng);
    for (FrameId id : reps) sel.add(id, SelectionStage::DedupSurvivor);
    remaining -= reps.size();
  }
  while (remaining > 0) {
    std::vector<FrameId> eligible;
    for (FrameId id : candidates) {
      if (sel.chosen.count(id) || sel.chosen.count(id + 1) || (id > 0 && sel.chosen.count(id - 1))) continue;
      eligible.push_back(id);
    }
    if (eligible.empty()) break;
    auto reps = dedup_non_adjacent(eligible, rng);
    if (reps.size() > remaining) reps = sample_without_replacement<FrameId>(reps, remaining, rng);
    for (FrameId id : reps) sel.add(id, SelectionStage::DedupSurvivor);
    remaining -= reps.size();
  }
}

struct SelectionContext {
  const MemoryStore& store;
  std::span<const FrameId> history;     // ascending, anchor excluded
  std::span<const FrameId> fov_cands;   // ascending, anchor excluded
  std::optional<FrameId> anchor;
  SpaceTimePoint target;
  std::size_t budget;                   // slots besides the anchor
};

std::vector<FrameId> without(std::span<const FrameId> ids, const std::unordered_set<FrameId>& drop) {
  std::vector<FrameId> out;
  for (FrameId id : ids) {
    if (!drop.count(id)) out.push_back(id);
  }
  return out;
}

void select_frames(const SelectionContext& ctx, const RetrievalConfig& cfg, Selection& sel, Rng& rng) {
  const std::size_t budget = ctx.budget;
  if (budget == 0) return;
  const auto& history = ctx.history;
  switch (cfg.strategy) {
    case StrategyKind::FirstFrame:
      break;
    case StrategyKind::FirstFramePlusRandom:
      for (FrameId id : sample_without_replacement(history, budget, rng)) sel.add(id, SelectionStage::Baseline);
      break;
    case StrategyKind::RecentWindow: {
      const FrameId limit = ctx.anchor ? *ctx.anchor : std::numeric_limits<FrameId>::max();
      std::size_t added = 0;
      for (auto it = history.rbegin(); it != history.rend() && added < budget; ++it) {
        if (*it >= limit) continue;
        sel.add(*it, SelectionStage::Baseline);
        ++added;
      }
      break;
    }
    case StrategyKind::ExponentialTimestamps: {
      if (!ctx.anchor) break;
      const std::int64_t present = static_cast<std::int64_t>(*ctx.anchor) + 1;
      std::size_t added = 0;
      for (std::int64_t offset = 2; present - offset >= 0 && added < budget; offset *= 2) {
        const auto id = static_cast<FrameId>(present - offset);
        if (std::binary_search(history.begin(), history.end(), id)) {
          sel.add(id, SelectionStage::Baseline);
          ++added;
        }
      }
      break;
    }
    case StrategyKind::FovRandom:
      for (FrameId id : sample_without_replacement(ctx.fov_cands, budget, rng)) sel.add(id, SelectionStage::FovPass);
      break;
    case StrategyKind::FovNonAdj:
      fill_non_adjacent(ctx.fov_cands, budget, sel, rng);
      break;
    case StrategyKind::FovNonAdjFarSpaceTime: {
      const auto slots = std::min<std::size_t>(static_cast<std::size_t>(cfg.far_slots), budget);
      const auto pool = cfg.far_from_all_history ? history : ctx.fov_cands;
      const auto far =
          far_space_time_select(pool, ctx.store, ctx.target, static_cast<int>(slots), cfg.time_scale, rng);
      for (FrameId id : far) sel.add(id, SelectionStage::FarSlot);
      fill_non_adjacent(without(ctx.fov_cands, sel.chosen), budget - far.size(), sel, rng);
      break;
    }
  }
}

RetrievalResult finish(Selection&& sel, std::vector<FrameId> fov_cands) {
  RetrievalResult out;
  std::sort(sel.frames.begin(), sel.frames.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  out.frames = std::move(sel.frames);
  for (const auto& f : out.frames) out.ids.push_back(f.id);
  out.fov_candidates = std::move(fov_cands);
  return out;
}

}  // namespace

RetrievalResult retrieve_context_detailed(const MemoryStore& store, const CameraPose& target,
                                          const RetrievalConfig& cfg, std::optional<FrameId> most_recent,
                                          std::optional<FrameId> target_frame) {
  cfg.validate();
  if (store.empty()) return {};
  if (!most_recent) most_recent = static_cast<FrameId>(store.size() - 1);
  if (*most_recent >= store.size()) throw ValidationError("most_recent_id", "not present in store");

  Rng rng = Rng::keyed(cfg.seed, store.size());
  Selection sel;
  sel.add(*most_recent, SelectionStage::MostRecent);

  std::vector<FrameId> history;
  history.reserve(store.size());
  for (FrameId id = 0; id < store.size(); ++id) {
    if (id != *most_recent) history.push_back(id);
  }
  std::vector<FrameId> fov_cands;
  if (is_fov_strategy(cfg.strategy)) {
    fov_cands = cfg.use_cached_edges && target_frame ? covisible_from_edges(store, *target_frame)
                                                     : store.query_covisible(target);
    std::erase(fov_cands, *most_recent);
    if (target_frame) std::erase(fov_cands, *target_frame);
  }
  const SpaceTimePoint tgt{target.position(), static_cast<double>(store.records().back().time_index + 1)};
  const SelectionContext ctx{store, history, fov_cands, most_recent, tgt, static_cast<std::size_t>(cfg.k - 1)};
  select_frames(ctx, cfg, sel, rng);
  return finish(std::move(sel), std::move(fov_cands));
}

std::vector<FrameId> retrieve_context(const MemoryStore& store, const CameraPose& target, const RetrievalConfig& cfg,
                                      std::optional<FrameId> most_recent) {
  return retrieve_context_detailed(store, target, cfg, most_recent).ids;
}

TrainingSampler::TrainingSampler(const Trajectory& traj, const WorldModel& world, const OverlapConfig& overlap,
                                 const RetrievalConfig& cfg)
    : store_(overlap, StoreOptions{.cell_size = 0.0, .keep_panoramas = false}),
      cfg_(cfg),
      segment_len_(traj.segment_len) {
  cfg_.validate();
  const auto n = traj.frames.size();
  if (segment_len_ < 1 || n < static_cast<std::size_t>(segment_len_) ||
      n < static_cast<std::size_t>(segment_len_) + static_cast<std::size_t>(cfg_.k - 1)) {
    throw TrajectoryTooShort("trajectory of " + std::to_string(n) + " frames cannot host a " +
                             std::to_string(segment_len_) + "-frame segment plus " + std::to_string(cfg_.k - 1) +
                             " context frames");
  }
  for (const auto& f : traj.frames) {
    FrameRecord r;
    r.time_index = f.time_index;
    r.pose = f.pose;
    r.payload_digest = panorama_digest(render_panorama(world, f.pose, overlap));
    store_.append(std::move(r));
  }
  later_edges_.resize(n);
  for (FrameId i = 0; i < n; ++i) {
    for (FrameId j : store_.edges_from(i)) later_edges_[j].push_back(i);
  }
}

TrainingSample TrainingSampler::sample(std::uint64_t seed) const {
  Rng rng = Rng::keyed(cfg_.seed, seed);
  const auto n = store_.size();
  const auto len = static_cast<std::size_t>(segment_len_);
  const auto first = static_cast<FrameId>(rng.below(n - len + 1));
  const auto last = static_cast<FrameId>(first + len - 1);

  TrainingSample out;
  out.segment_first = first;
  out.segment_last = last;
  if (rng.uniform01() < cfg_.recent_only_prob) {
    out.recent_only = true;
    out.context_ids = {first};
    return out;
  }

  const auto outside = [&](FrameId id) { return id < first || id > last; };
  std::vector<FrameId> history;
  history.reserve(n - len);
  for (FrameId id = 0; id < n; ++id) {
    if (outside(id)) history.push_back(id);
  }
  std::vector<FrameId> fov_cands;
  for (FrameId id : store_.edges_from(last)) {
    if (outside(id)) fov_cands.push_back(id);
  }
  for (FrameId id : later_edges_[last]) {
    if (outside(id)) fov_cands.push_back(id);
  }

  const auto& target_rec = store_.record(last);
  const SpaceTimePoint tgt{target_rec.pose.position(), static_cast<double>(target_rec.time_index)};
  Selection sel;
  sel.add(first, SelectionStage::MostRecent);
  const SelectionContext ctx{store_, history, fov_cands, first, tgt, static_cast<std::size_t>(cfg_.k - 1)};
  select_frames(ctx, cfg_, sel, rng);

  if (sel.frames.size() < static_cast<std::size_t>(cfg_.k)) {
    const auto rest = without(history, sel.chosen);
    for (FrameId id : sample_without_replacement<FrameId>(rest, cfg_.k - sel.frames.size(), rng)) {
      sel.add(id, SelectionStage::Fill);
    }
  }
  for (const auto& f : sel.frames) out.context_ids.push_back(f.id);
  std::sort(out.context_ids.begin(), out.context_ids.end());
  return out;
}

TrainingSample training_sample(const Trajectory& traj, const WorldModel& world, const OverlapConfig& overlap,
                               const RetrievalConfig& cfg, std::uint64_t seed) {
  return TrainingSampler(traj, world, overlap, cfg).sample(seed);
}

}  // namespace ctxmem

#include "ctxmem/eval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "ctxmem/errors.hpp"
#include "ctxmem/rng.hpp"

namespace ctxmem {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

double mean(std::span<const double> xs) {
  if (xs.empty()) return 0.0;
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

// Nearest-rank percentile.
double percentile(std::vector<double> xs, double p) {
  if (xs.empty()) return 0.0;
  std::sort(xs.begin(), xs.end());
  const auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(xs.size())));
  return xs[std::clamp<std::size_t>(rank, 1, xs.size()) - 1];
}

std::string fmt(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

PrecisionRecall pr_from_sets(std::span<const FrameId> returned, std::span<const FrameId> pre_budget,
                             const std::vector<bool>& relevant, std::size_t relevant_count) {
  PrecisionRecall out;
  out.relevant = relevant_count;
  const auto hits = [&](std::span<const FrameId> ids) {
    std::size_t h = 0;
    for (FrameId id : ids) h += relevant[id] ? 1 : 0;
    return h;
  };
  const std::size_t hit = hits(returned);
  out.precision = returned.empty() ? 1.0 : static_cast<double>(hit) / static_cast<double>(returned.size());
  if (relevant_count > 0) {
    out.recall = static_cast<double>(hit) / static_cast<double>(relevant_count);
    out.recall_pre_budget = static_cast<double>(hits(pre_budget)) / static_cast<double>(relevant_count);
  }
  return out;
}

}  // namespace

bool sets_intersect(std::span<const int> a, std::span<const int> b) {
  auto i = a.begin();
  auto j = b.begin();
  while (i != a.end() && j != b.end()) {
    if (*i == *j) return true;
    if (*i < *j) {
      ++i;
    } else {
      ++j;
    }
  }
  return false;
}

double coverage_from_sets(std::span<const int> target_visible, std::span<const std::vector<int>* const> context_sets) {
  if (target_visible.empty()) return 1.0;
  std::size_t covered = 0;
  for (int id : target_visible) {
    for (const auto* set : context_sets) {
      if (std::binary_search(set->begin(), set->end(), id)) {
        ++covered;
        break;
      }
    }
  }
  return static_cast<double>(covered) / static_cast<double>(target_visible.size());
}

double coverage(const WorldModel& world, const CameraPose& target, std::span<const FrameId> context_ids,
                const MemoryStore& store, const OverlapConfig& cfg) {
  const auto target_vis = visible_set(world, target, cfg);
  std::vector<std::vector<int>> sets;
  sets.reserve(context_ids.size());
  for (FrameId id : context_ids) sets.push_back(visible_set(world, store.record(id).pose, cfg));
  std::vector<const std::vector<int>*> ptrs;
  for (const auto& s : sets) ptrs.push_back(&s);
  return coverage_from_sets(target_vis, ptrs);
}

PrecisionRecall retrieval_pr(const MemoryStore& store, const WorldModel& world, const CameraPose& target,
                             std::span<const FrameId> returned_ids, const OverlapConfig& cfg,
                             std::optional<std::span<const FrameId>> pre_budget) {
  const auto target_vis = visible_set(world, target, cfg);
  std::vector<bool> relevant(store.size(), false);
  std::size_t count = 0;
  for (FrameId id = 0; id < store.size(); ++id) {
    if (sets_intersect(target_vis, visible_set(world, store.record(id).pose, cfg))) {
      relevant[id] = true;
      ++count;
    }
  }
  return pr_from_sets(returned_ids, pre_budget.value_or(returned_ids), relevant, count);
}

MemoryStore run_generation_loop(const Trajectory& traj, const WorldModel& world, const OverlapConfig& cfg,
                                const std::function<void(const MemoryStore&, const GenerationStep&)>& on_segment) {
  if (traj.frames.empty()) throw ValidationError("trajectory", "must contain at least one frame");
  if (traj.segment_len < 1) throw ValidationError("segment_len", "must be >= 1");
  MemoryStore store(cfg, StoreOptions{.cell_size = 0.0, .keep_panoramas = false});
  const auto append = [&](const TrajectoryFrame& f) {
    FrameRecord r;
    r.time_index = f.time_index;
    r.pose = f.pose;
    r.payload_digest = panorama_digest(render_panorama(world, f.pose, cfg));
    store.append(std::move(r));
  };
  append(traj.frames.front());
  const auto len = static_cast<std::size_t>(traj.segment_len);
  std::size_t segment = 0;
  for (std::size_t first = 1; first < traj.frames.size(); first += len, ++segment) {
    const std::size_t last = std::min(first + len, traj.frames.size()) - 1;
    if (on_segment) on_segment(store, {segment, first, last, store.size()});
    for (std::size_t i = first; i <= last; ++i) append(traj.frames[i]);
  }
  return store;
}

std::vector<EvalFixture> standard_fixtures(std::uint64_t base_seed, int world_count) {
  std::vector<EvalFixture> out;
  for (int w = 0; w < world_count; ++w) {
    const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(w);
    WorldSpec spec;
    spec.density = 5.0;
    spec.bounds = {0.0, 0.0, 80.0, 80.0};
    spec.occluder_count = 6;
    spec.seed = seed;
    const WorldModel world = generate_world(spec);
    const Vec2 c = spec.bounds.center();
    Rng rng = Rng::keyed(seed, 99);
    const CameraPose start(c.x, c.y, rng.uniform(-kPi, kPi));
    const std::string tag = "w" + std::to_string(seed);

    auto r180 = rotate_and_return(start, 180.0, 616);
    r180.seed = seed;
    auto r360 = rotate_and_return(start, 360.0, 616);
    r360.seed = seed;
    LoopSpec loop;
    loop.center = c;
    loop.seed = seed;
    loop.laps = 2.0;
    out.push_back({tag + "/rotate180", world, std::move(r180)});
    out.push_back({tag + "/rotate360", world, std::move(r360)});
    out.push_back({tag + "/loop", world, generate_loop_roam(loop)});
  }
  return out;
}

void EvalConfig::validate() const {
  overlap.validate();
  retrieval.validate();
  if (strategies.empty()) throw ValidationError("strategies", "must name at least one strategy");
  if (seeds.empty()) throw ValidationError("seeds", "must contain at least one seed");
}

double Confusion::agreement() const {
  const auto n = total();
  return n == 0 ? 1.0 : static_cast<double>(true_positive + true_negative) / static_cast<double>(n);
}

const StrategyStats& EvalReport::stats(StrategyKind kind) const {
  for (const auto& s : strategies) {
    if (s.strategy == kind) return s;
  }
  throw NotFound("strategy " + std::string(to_string(kind)) + " not in report");
}

nlohmann::json to_json(const OverlapConfig& cfg) {
  return {{"d_min", cfg.d_min},
          {"d_max", cfg.d_max},
          {"pairing", to_string(cfg.pairing)},
          {"forward", to_string(cfg.forward)},
          {"require_all_in_range", cfg.require_all_in_range},
          {"oracle_samples", cfg.oracle_samples}};
}

nlohmann::json to_json(const RetrievalConfig& cfg) {
  return {{"k", cfg.k},
          {"strategy", to_string(cfg.strategy)},
          {"far_slots", cfg.far_slots},
          {"time_scale", cfg.time_scale},
          {"seed", cfg.seed},
          {"recent_only_prob", cfg.recent_only_prob},
          {"far_from_all_history", cfg.far_from_all_history},
          {"use_cached_edges", cfg.use_cached_edges}};
}

EvalReport compare_strategies(std::span<const EvalFixture> fixtures, const EvalConfig& cfg) {
  cfg.validate();
  if (fixtures.empty()) throw ValidationError("fixtures", "need at least one world/trajectory");

  struct Acc {
    std::vector<double> coverage, precision, recall, recall_pre, size, latency;
  };
  std::vector<Acc> acc(cfg.strategies.size());
  EvalReport report;

  for (const auto& fx : fixtures) {
    const auto& traj = fx.trajectory;
    std::vector<std::vector<int>> vis(traj.frames.size());
    for (std::size_t i = 0; i < traj.frames.size(); ++i) vis[i] = visible_set(fx.world, traj.frames[i].pose, cfg.overlap);

    run_generation_loop(traj, fx.world, cfg.overlap, [&](const MemoryStore& store, const GenerationStep& step) {
      const CameraPose& target = traj.frames[step.last_frame].pose;
      const auto& target_vis = vis[step.last_frame];

      std::vector<bool> relevant(store.size(), false);
      std::size_t relevant_count = 0;
      for (FrameId id = 0; id < store.size(); ++id) {
        relevant[id] = sets_intersect(target_vis, vis[id]);
        relevant_count += relevant[id] ? 1 : 0;
      }
      const auto accepted = store.query_covisible(target);
      std::vector<bool> heur(store.size(), false);
      for (FrameId id : accepted) heur[id] = true;
      for (FrameId id = 0; id < store.size(); ++id) {
        auto& c = report.calibration;
        if (heur[id]) {
          ++(relevant[id] ? c.true_positive : c.false_positive);
        } else {
          ++(relevant[id] ? c.false_negative : c.true_negative);
        }
      }
      report.calibration_pairs += store.size();

      std::vector<FrameId> all_history(store.size());
      for (FrameId id = 0; id < store.size(); ++id) all_history[id] = id;

      for (std::size_t si = 0; si < cfg.strategies.size(); ++si) {
        for (std::uint64_t seed : cfg.seeds) {
          RetrievalConfig rc = cfg.retrieval;
          rc.strategy = cfg.strategies[si];
          rc.seed = seed;
          const auto t0 = Clock::now();
          const auto result = retrieve_context_detailed(store, target, rc, std::nullopt);
          const double latency_us = cfg.timing ? ms_since(t0) * 1000.0 : 0.0;

          std::vector<const std::vector<int>*> ctx;
          for (FrameId id : result.ids) ctx.push_back(&vis[id]);
          const double cov = coverage_from_sets(target_vis, ctx);

          std::vector<FrameId> pre;
          if (is_fov_strategy(rc.strategy)) {
            pre = result.fov_candidates;
            pre.push_back(static_cast<FrameId>(store.size() - 1));
          }
          const auto pr = pr_from_sets(result.ids, is_fov_strategy(rc.strategy) ? pre : all_history, relevant,
                                       relevant_count);
          auto& a = acc[si];
          a.coverage.push_back(cov);
          a.precision.push_back(pr.precision);
          a.recall.push_back(pr.recall);
          a.recall_pre.push_back(pr.recall_pre_budget);
          a.size.push_back(static_cast<double>(result.ids.size()));
          a.latency.push_back(latency_us);
          if (cfg.keep_series) {
            report.series.push_back({fx.name, rc.strategy, seed, step.segment_index, step.last_frame, cov,
                                     pr.precision, pr.recall, result.ids.size()});
          }
        }
      }
    });
  }

  for (std::size_t si = 0; si < cfg.strategies.size(); ++si) {
    const auto& a = acc[si];
    StrategyStats s;
    s.strategy = cfg.strategies[si];
    s.samples = a.coverage.size();
    s.mean_coverage = mean(a.coverage);
    s.p10_coverage = percentile(a.coverage, 10.0);
    s.mean_precision = mean(a.precision);
    s.mean_recall = mean(a.recall);
    s.mean_recall_pre_budget = mean(a.recall_pre);
    s.mean_context_size = mean(a.size);
    s.mean_latency_us = mean(a.latency);
    report.strategies.push_back(s);
  }

  nlohmann::json names = nlohmann::json::array();
  for (const auto& fx : fixtures) names.push_back({{"name", fx.name}, {"world_seed", fx.world.seed}, {"frames", fx.trajectory.size()}});
  report.metadata = {{"version", kEvalReportVersion},
                     {"note", kCoverageProxyNote},
                     {"overlap", to_json(cfg.overlap)},
                     {"retrieval", to_json(cfg.retrieval)},
                     {"seeds", cfg.seeds},
                     {"timing", cfg.timing},
                     {"fixtures", std::move(names)}};
  return report;
}

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json strategies = nlohmann::json::array();
  for (const auto& s : report.strategies) {
    strategies.push_back({{"strategy", to_string(s.strategy)},
                          {"samples", s.samples},
                          {"mean_coverage", s.mean_coverage},
                          {"p10_coverage", s.p10_coverage},
                          {"mean_precision", s.mean_precision},
                          {"mean_recall", s.mean_recall},
                          {"mean_recall_pre_budget", s.mean_recall_pre_budget},
                          {"mean_context_size", s.mean_context_size},
                          {"mean_latency_us", s.mean_latency_us}});
  }
  const auto& c = report.calibration;
  return {{"version", kEvalReportVersion},
          {"metadata", report.metadata},
          {"strategies", std::move(strategies)},
          {"calibration",
           {{"oracle", "shared-visible-landmark"},
            {"pairs", report.calibration_pairs},
            {"true_positive", c.true_positive},
            {"false_positive", c.false_positive},
            {"false_negative", c.false_negative},
            {"true_negative", c.true_negative},
            {"agreement", c.agreement()}}}};
}

std::string report_table(const EvalReport& report) {
  std::ostringstream out;
  out << "# " << kCoverageProxyNote << "\n";
  out << "strategy              samples  cov_mean  cov_p10  precision  recall  recall_pre  ctx_size  latency_us\n";
  for (const auto& s : report.strategies) {
    std::string name(to_string(s.strategy));
    name.resize(20, ' ');
    char line[256];
    std::snprintf(line, sizeof line, "%s  %7zu  %8.4f  %7.4f  %9.4f  %6.4f  %10.4f  %8.2f  %10.1f\n", name.c_str(),
                  s.samples, s.mean_coverage, s.p10_coverage, s.mean_precision, s.mean_recall,
                  s.mean_recall_pre_budget, s.mean_context_size, s.mean_latency_us);
    out << line;
  }
  const auto& c = report.calibration;
  out << "calibration (heuristic vs shared-landmark oracle): tp=" << c.true_positive << " fp=" << c.false_positive
      << " fn=" << c.false_negative << " tn=" << c.true_negative << " agreement=" << fmt(c.agreement()) << "\n";
  return out.str();
}

std::string report_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "fixture,strategy,seed,segment,target_frame,coverage,precision,recall,context_size\n";
  for (const auto& r : report.series) {
    out << r.fixture << ',' << to_string(r.strategy) << ',' << r.seed << ',' << r.segment << ',' << r.target_frame
        << ',' << fmt(r.coverage, 6) << ',' << fmt(r.precision, 6) << ',' << fmt(r.recall, 6) << ','
        << r.context_size << '\n';
  }
  return out.str();
}

double BenchReport::pair_fraction() const {
  return naive_build_pairs == 0 ? 0.0 : static_cast<double>(grid_build_pairs) / static_cast<double>(naive_build_pairs);
}
double BenchReport::query_speedup() const { return grid_query_ms > 0.0 ? naive_query_ms / grid_query_ms : 0.0; }
double BenchReport::build_speedup() const { return grid_build_ms > 0.0 ? naive_build_ms / grid_build_ms : 0.0; }

BenchReport bench_retrieval(const BenchConfig& cfg) {
  if (cfg.frames < 100) throw ValidationError("frames", "must be >= 100");
  if (!(cfg.world_size > 0.0)) throw ValidationError("world_size", "must be > 0");
  cfg.overlap.validate();

  MemoryStore store(cfg.overlap, StoreOptions{.cell_size = 0.0, .keep_panoramas = false});
  const double extent = cfg.layout == BenchLayout::Uniform ? cfg.world_size : 0.999 * store.cell_size();
  // Single-cell layout sits inside cell (0,0) so every frame shares one bucket.
  const double lo = cfg.layout == BenchLayout::Uniform ? -0.5 * cfg.world_size : 0.0;
  Rng rng = Rng::keyed(cfg.seed, 1);
  const auto random_pose = [&]() {
    return CameraPose(lo + rng.uniform(0.0, extent), lo + rng.uniform(0.0, extent), rng.uniform(-kPi, kPi));
  };

  std::vector<FrameRecord> records(cfg.frames);
  for (std::size_t i = 0; i < cfg.frames; ++i) {
    records[i].frame_id = static_cast<FrameId>(i);
    records[i].time_index = static_cast<std::int64_t>(i);
    records[i].pose = random_pose();
  }
  std::vector<CameraPose> targets;
  for (std::size_t i = 0; i < cfg.queries; ++i) targets.push_back(random_pose());

  BenchReport out;
  out.frames = cfg.frames;
  out.queries = cfg.queries;

  auto t0 = Clock::now();
  const auto naive_edges = build_edges_naive(records, cfg.overlap, &out.naive_build_pairs);
  out.naive_build_ms = ms_since(t0);

  t0 = Clock::now();
  for (const auto& r : records) store.append(r);
  out.grid_build_ms = ms_since(t0);
  out.grid_build_pairs = store.build_pairs_evaluated();
  out.edges_identical = naive_edges == store.edges();

  std::vector<std::vector<FrameId>> naive_results;
  naive_results.reserve(targets.size());
  t0 = Clock::now();
  for (const auto& t : targets) naive_results.push_back(store.query_covisible_naive(t));
  out.naive_query_ms = ms_since(t0);

  std::vector<std::vector<FrameId>> grid_results;
  grid_results.reserve(targets.size());
  QueryStats stats;
  t0 = Clock::now();
  for (const auto& t : targets) grid_results.push_back(store.query_covisible(t, &stats));
  out.grid_query_ms = ms_since(t0);
  out.grid_query_candidates = stats.candidates;
  out.queries_identical = naive_results == grid_results;
  return out;
}

nlohmann::json bench_to_json(const BenchReport& r) {
  return {{"frames", r.frames},
          {"queries", r.queries},
          {"naive_build_ms", r.naive_build_ms},
          {"grid_build_ms", r.grid_build_ms},
          {"naive_build_pairs", r.naive_build_pairs},
          {"grid_build_pairs", r.grid_build_pairs},
          {"pair_fraction", r.pair_fraction()},
          {"build_speedup", r.build_speedup()},
          {"naive_query_ms", r.naive_query_ms},
          {"grid_query_ms", r.grid_query_ms},
          {"grid_query_candidates", r.grid_query_candidates},
          {"query_speedup", r.query_speedup()},
          {"edges_identical", r.edges_identical},
          {"queries_identical", r.queries_identical}};
}

}  // namespace ctxmem

#include <doctest.h>

#include <algorithm>
#include <set>

#include "ctxmem/errors.hpp"
#include "ctxmem/retrieval.hpp"
#include "support.hpp"

using namespace ctxmem;
using ctxmem::testing::deg_pose;

namespace {

MemoryStore store_from(const std::vector<FrameRecord>& records, OverlapConfig cfg = {}) {
  MemoryStore store(cfg);
  for (const auto& r : records) store.append(r);
  return store;
}

// Random walk so that revisits and runs of consecutive co-visible frames occur.
std::vector<FrameRecord> walk_records(Rng& rng, std::size_t n) {
  std::vector<FrameRecord> out(n);
  CameraPose pose(30, 30, 0);
  for (std::size_t i = 0; i < n; ++i) {
    pose = pose.moved(rng.uniform(0.0, 0.6), 0.0, rng.uniform(-0.15, 0.15));
    if (!Bounds{0, 0, 60, 60}.contains(pose.position())) pose = pose.with_position({30, 30});
    out[i].time_index = static_cast<std::int64_t>(i);
    out[i].pose = pose;
  }
  return out;
}

bool has_consecutive(const std::vector<FrameId>& ids) {
  for (std::size_t i = 1; i < ids.size(); ++i) {
    if (ids[i] == ids[i - 1] + 1) return true;
  }
  return false;
}

}  // namespace

TEST_SUITE("retrieval") {
  TEST_CASE("strategy names round trip") {
    for (auto kind : kAllStrategies) CHECK(parse_strategy(to_string(kind)) == kind);
    CHECK_THROWS_AS(parse_strategy("nope"), ValidationError);
    CHECK(is_fov_strategy(StrategyKind::FovRandom));
    CHECK_FALSE(is_fov_strategy(StrategyKind::RecentWindow));
  }

  TEST_CASE("config validation") {
    RetrievalConfig cfg;
    cfg.k = 0;
    try {
      cfg.validate();
      FAIL("expected ValidationError");
    } catch (const ValidationError& e) {
      CHECK(e.field() == "k");
    }
    cfg = {};
    cfg.recent_only_prob = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = {};
    cfg.time_scale = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
  }

  TEST_CASE("dedup examples") {
    const std::vector<FrameId> ids{3, 4, 5, 10, 20, 21};
    std::set<std::vector<FrameId>> outcomes;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      const auto out = dedup_non_adjacent(ids, seed);
      REQUIRE(out.size() == 3);
      CHECK(out[0] >= 3);
      CHECK(out[0] <= 5);
      CHECK(out[1] == 10);
      CHECK((out[2] == 20 || out[2] == 21));
      outcomes.insert(out);
    }
    CHECK(outcomes.size() == 6);
    CHECK(dedup_non_adjacent(std::vector<FrameId>{}, 1).empty());
    CHECK(dedup_non_adjacent(std::vector<FrameId>{1, 5, 9}, 1) == std::vector<FrameId>{1, 5, 9});
  }

  TEST_CASE("dedup keeps one member per run") {
    Rng rng(9);
    for (int trial = 0; trial < 500; ++trial) {
      std::set<FrameId> pool;
      const auto n = rng.below(60);
      for (std::uint64_t i = 0; i < n; ++i) pool.insert(static_cast<FrameId>(rng.below(80)));
      const std::vector<FrameId> ids(pool.begin(), pool.end());
      const auto out = dedup_non_adjacent(ids, rng.next());
      CHECK_FALSE(has_consecutive(out));
      CHECK(std::is_sorted(out.begin(), out.end()));
      // One survivor for each maximal run.
      std::size_t runs = ids.empty() ? 0 : 1;
      for (std::size_t i = 1; i < ids.size(); ++i) runs += ids[i] != ids[i - 1] + 1;
      CHECK(out.size() == runs);
      for (FrameId id : out) CHECK(pool.count(id) == 1);
    }
  }

  TEST_CASE("space time distance") {
    CHECK(space_time_distance({{0, 0}, 0}, {{3, 4}, 0}, 1.0) == doctest::Approx(5.0));
    CHECK(space_time_distance({{0, 0}, 0}, {{0, 0}, 60}, 1.0) == doctest::Approx(2.0));
    CHECK(space_time_distance({{0, 0}, 0}, {{0, 0}, 60}, 2.0) == doctest::Approx(1.0));
  }

  TEST_CASE("far space time selection") {
    MemoryStore line;
    for (int i = 0; i < 10; ++i) {
      FrameRecord r;
      r.time_index = i;
      r.pose = deg_pose(i, 0, 0);
      line.append(r);
    }
    std::vector<FrameId> all(10);
    for (FrameId i = 0; i < 10; ++i) all[i] = i;
    Rng rng(1);
    const SpaceTimePoint target{{4.5, 0}, 10};
    CHECK(far_space_time_select(all, line, target, 0, 1.0, rng).empty());
    auto two = far_space_time_select(all, line, target, 2, 1e12, rng);
    std::sort(two.begin(), two.end());
    CHECK(two == std::vector<FrameId>{0, 9});

    MemoryStore same;
    for (int i = 0; i < 6; ++i) {
      FrameRecord r;
      r.pose = deg_pose(1, 1, 0);
      same.append(r);
    }
    std::vector<FrameId> ids{0, 1, 2, 3, 4, 5};
    std::set<FrameId> picked;
    for (std::uint64_t s = 0; s < 100; ++s) {
      Rng r(s);
      const auto one = far_space_time_select(ids, same, {{1, 1}, 0}, 1, 1.0, r);
      REQUIRE(one.size() == 1);
      picked.insert(one[0]);
    }
    CHECK(picked.size() > 1);
  }

  TEST_CASE("far space time selection matches greedy by hand") {
    Rng rng(4);
    auto records = ctxmem::testing::random_records(rng, 40, 50.0);
    const auto store = store_from(records);
    std::vector<FrameId> cands;
    for (FrameId i = 0; i < 40; i += 2) cands.push_back(i);
    const SpaceTimePoint target{{25, 25}, 40};
    const auto point = [&](FrameId id) {
      return SpaceTimePoint{records[id].pose.position(), static_cast<double>(records[id].time_index)};
    };
    // Independent greedy.
    std::vector<FrameId> expect;
    std::vector<FrameId> left = cands;
    for (int pick = 0; pick < 5; ++pick) {
      double best = -1;
      FrameId best_id = 0;
      for (FrameId id : left) {
        double d = 1e300;
        if (expect.empty()) d = space_time_distance(point(id), target, 0.5);
        for (FrameId e : expect) d = std::min(d, space_time_distance(point(id), point(e), 0.5));
        if (d > best) {
          best = d;
          best_id = id;
        }
      }
      expect.push_back(best_id);
      std::erase(left, best_id);
    }
    Rng r(0);
    CHECK(far_space_time_select(cands, store, target, 5, 0.5, r) == expect);
  }

  TEST_CASE("empty store and small stores") {
    const MemoryStore empty;
    RetrievalConfig cfg;
    CHECK(retrieve_context(empty, deg_pose(0, 0, 0), cfg, std::nullopt).empty());

    MemoryStore three;
    for (int i = 0; i < 3; ++i) {
      FrameRecord r;
      r.time_index = i;
      r.pose = deg_pose(0, 0, 0);
      three.append(r);
    }
    for (auto kind : {StrategyKind::FovRandom, StrategyKind::FirstFramePlusRandom}) {
      cfg.strategy = kind;
      CHECK(retrieve_context(three, deg_pose(0, 0, 0), cfg, 2) == std::vector<FrameId>{0, 1, 2});
    }
    cfg.strategy = StrategyKind::FovNonAdj;
    CHECK(retrieve_context(three, deg_pose(0, 0, 0), cfg, 2) == std::vector<FrameId>{0, 2});
    cfg.strategy = StrategyKind::FirstFrame;
    CHECK(retrieve_context(three, deg_pose(0, 0, 0), cfg, 2) == std::vector<FrameId>{2});
    CHECK_THROWS_AS(retrieve_context(three, deg_pose(0, 0, 0), cfg, 3), ValidationError);
  }

  TEST_CASE("baseline strategies pick the documented frames") {
    MemoryStore store;
    for (int i = 0; i < 100; ++i) {
      FrameRecord r;
      r.time_index = i;
      r.pose = deg_pose(i * 0.1, 0, 0);
      store.append(r);
    }
    RetrievalConfig cfg;
    cfg.k = 5;
    cfg.strategy = StrategyKind::RecentWindow;
    CHECK(retrieve_context(store, deg_pose(0, 0, 0), cfg, 99) == std::vector<FrameId>{95, 96, 97, 98, 99});
    cfg.strategy = StrategyKind::ExponentialTimestamps;
    CHECK(retrieve_context(store, deg_pose(0, 0, 0), cfg, 99) == std::vector<FrameId>{84, 92, 96, 98, 99});
    cfg.k = 20;
    const auto exp = retrieve_context(store, deg_pose(0, 0, 0), cfg, 99);
    CHECK(exp == std::vector<FrameId>{36, 68, 84, 92, 96, 98, 99});
  }

  TEST_CASE("far slots land on FOV candidates far from the target") {
    Rng rng(12);
    const auto records = walk_records(rng, 600);
    const auto store = store_from(records);
    RetrievalConfig cfg;
    cfg.strategy = StrategyKind::FovNonAdjFarSpaceTime;
    const auto target = records.back().pose;
    const auto res = retrieve_context_detailed(store, target, cfg, std::nullopt);
    std::size_t far = 0;
    for (const auto& f : res.frames) {
      if (f.stage == SelectionStage::FarSlot) {
        ++far;
        CHECK(std::binary_search(res.fov_candidates.begin(), res.fov_candidates.end(), f.id));
      }
    }
    CHECK(far == std::min<std::size_t>(2, res.fov_candidates.size()));
  }

  TEST_CASE("budget, anchor, FOV and determinism invariants") {
    Rng rng(31);
    int fov_checked = 0;
    for (int trial = 0; trial < 40; ++trial) {
      const auto records = walk_records(rng, 50 + rng.below(700));
      const auto store = store_from(records);
      for (auto kind : kAllStrategies) {
        RetrievalConfig cfg;
        cfg.strategy = kind;
        cfg.seed = rng.next();
        cfg.k = 1 + static_cast<int>(rng.below(25));
        cfg.far_slots = std::min(2, cfg.k - 1);
        const auto anchor = static_cast<FrameId>(store.size() - 1);
        const auto target = ctxmem::testing::random_pose(rng, 60.0);
        const auto res = retrieve_context_detailed(store, target, cfg, anchor);
        const auto& ids = res.ids;
        CHECK(ids.size() <= static_cast<std::size_t>(cfg.k));
        CHECK(std::adjacent_find(ids.begin(), ids.end(), std::greater_equal<>()) == ids.end());
        CHECK(std::binary_search(ids.begin(), ids.end(), anchor));
        for (FrameId id : ids) CHECK(id < store.size());
        if (is_fov_strategy(kind)) {
          for (FrameId id : ids) {
            if (id == anchor) continue;
            CHECK(fov_overlap_heuristic(target, store.record(id).pose, store.config()).overlaps);
            ++fov_checked;
          }
        }
        if (kind == StrategyKind::FovNonAdj) CHECK_FALSE(has_consecutive(ids));
        CHECK(retrieve_context_detailed(store, target, cfg, anchor).ids == ids);
        REQUIRE(res.frames.size() == ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) CHECK(res.frames[i].id == ids[i]);
      }
    }
    CHECK(fov_checked > 100);
  }

  TEST_CASE("non-adjacent selection stops only when nothing eligible is left") {
    Rng rng(44);
    for (int trial = 0; trial < 30; ++trial) {
      const auto records = walk_records(rng, 400);
      const auto store = store_from(records);
      RetrievalConfig cfg;
      cfg.strategy = StrategyKind::FovNonAdj;
      cfg.seed = rng.next();
      const auto target = records[rng.below(records.size())].pose;
      const auto res = retrieve_context_detailed(store, target, cfg, std::nullopt);
      const auto& ids = res.ids;
      CHECK_FALSE(has_consecutive(ids));
      if (ids.size() == static_cast<std::size_t>(cfg.k)) continue;
      const auto chosen = [&](std::int64_t id) {
        return id >= 0 && std::binary_search(ids.begin(), ids.end(), static_cast<FrameId>(id));
      };
      for (FrameId c : res.fov_candidates) {
        CHECK((chosen(c) || chosen(std::int64_t{c} - 1) || chosen(std::int64_t{c} + 1)));
      }
    }
  }

  TEST_CASE("cached edges agree with a fresh query on earlier frames") {
    Rng rng(55);
    const auto records = walk_records(rng, 300);
    const auto store = store_from(records);
    RetrievalConfig fresh;
    fresh.strategy = StrategyKind::FovRandom;
    RetrievalConfig cached = fresh;
    cached.use_cached_edges = true;
    for (FrameId t = 150; t < 160; ++t) {
      const auto a = retrieve_context_detailed(store, records[t].pose, fresh, 149, t);
      const auto b = retrieve_context_detailed(store, records[t].pose, cached, 149, t);
      // Later frames were tested with themselves as query, so only earlier ones must match.
      const auto earlier = [t](std::vector<FrameId> ids) {
        std::erase_if(ids, [t](FrameId id) { return id >= t; });
        return ids;
      };
      CHECK(earlier(a.fov_candidates) == earlier(b.fov_candidates));
      CHECK(b.fov_candidates.size() > earlier(b.fov_candidates).size());
    }
  }

  TEST_CASE("training sampler") {
    WorldSpec ws;
    ws.seed = 2;
    ws.bounds = {0, 0, 60, 60};
    const auto world = generate_world(ws);
    RoamSpec spec;
    spec.seed = 5;
    const auto traj = generate_roam(spec);
    RetrievalConfig cfg;
    const TrainingSampler sampler(traj, world, OverlapConfig{}, cfg);
    int recent = 0;
    for (std::uint64_t s = 0; s < 2000; ++s) {
      const auto sample = sampler.sample(s);
      CHECK(sample.segment_last - sample.segment_first + 1 == static_cast<FrameId>(kSegmentLen));
      CHECK(sample.segment_last < traj.size());
      CHECK(std::binary_search(sample.context_ids.begin(), sample.context_ids.end(), sample.segment_first));
      if (sample.recent_only) {
        ++recent;
        CHECK(sample.context_ids.size() == 1);
      } else {
        CHECK(sample.context_ids.size() == 20);
        CHECK(std::adjacent_find(sample.context_ids.begin(), sample.context_ids.end()) == sample.context_ids.end());
        for (FrameId id : sample.context_ids) {
          CHECK((id == sample.segment_first || id < sample.segment_first || id > sample.segment_last));
        }
      }
      CHECK(sampler.sample(s).context_ids == sample.context_ids);
    }
    CHECK(recent > 140);
    CHECK(recent < 260);

    cfg.recent_only_prob = 0.0;
    const auto always = training_sample(traj, world, OverlapConfig{}, cfg, 3);
    CHECK(always.context_ids.size() == 20);
    cfg.recent_only_prob = 1.0;
    CHECK(training_sample(traj, world, OverlapConfig{}, cfg, 3).context_ids.size() == 1);
  }

  TEST_CASE("training sampler rejects trajectories that are too short") {
    const auto traj = rotate_and_return(deg_pose(0, 0, 0), 30, kSegmentLen + 1);
    RetrievalConfig cfg;
    CHECK_THROWS_AS(TrainingSampler(traj, WorldModel{}, OverlapConfig{}, cfg), TrajectoryTooShort);
    cfg.k = 1;
    cfg.far_slots = 0;
    CHECK_NOTHROW(TrainingSampler(traj, WorldModel{}, OverlapConfig{}, cfg));
  }
}

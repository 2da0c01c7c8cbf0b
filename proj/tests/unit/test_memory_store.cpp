#include <doctest.h>

#include <fstream>

#include "ctxmem/errors.hpp"
#include "ctxmem/memory_store.hpp"
#include "ctxmem/trajectory.hpp"
#include "support.hpp"

using namespace ctxmem;
using ctxmem::testing::all_pairs_edges;
using ctxmem::testing::deg_pose;
using ctxmem::testing::random_records;
using ctxmem::testing::scan_covisible;

namespace {

MemoryStore store_from(const std::vector<FrameRecord>& records, OverlapConfig cfg = {}, StoreOptions opts = {}) {
  MemoryStore store(cfg, opts);
  for (const auto& r : records) store.append(r);
  return store;
}

std::vector<std::vector<FrameId>> edges_of(const MemoryStore& store) { return store.edges(); }

}  // namespace

TEST_SUITE("memory_store") {
  TEST_CASE("empty and trivial stores") {
    MemoryStore store;
    CHECK(store.empty());
    CHECK(store.query_covisible(deg_pose(0, 0, 0)).empty());

    FrameRecord r;
    r.pose = deg_pose(1, 2, 30);
    CHECK(store.append(r) == 0);
    CHECK(store.edges_from(0).empty());
    CHECK(store.query_covisible(deg_pose(1, 2, 30)) == std::vector<FrameId>{0});

    CHECK(store.append(r) == 1);
    CHECK(store.has_edge(1, 0));
    CHECK(store.has_edge(0, 1));
    CHECK(store.edge_count() == 1);
    CHECK(store.record(1).frame_id == 1);
  }

  TEST_CASE("append rejects decreasing time") {
    MemoryStore store;
    FrameRecord r;
    r.time_index = 5;
    store.append(r);
    r.time_index = 4;
    CHECK_THROWS_AS(store.append(r), OutOfOrder);
    r.time_index = 5;
    CHECK_NOTHROW(store.append(r));
  }

  TEST_CASE("edges equal the all-pairs oracle") {
    Rng rng(77);
    const auto records = random_records(rng, 500, 60.0);
    const OverlapConfig cfg;
    const auto store = store_from(records, cfg);
    CHECK(edges_of(store) == all_pairs_edges(records, cfg));
    CHECK(store.grid_consistent());
    CHECK(store.build_pairs_evaluated() < 500ull * 499 / 2);
    CHECK(build_edges_naive(store.records(), cfg) == all_pairs_edges(records, cfg));
  }

  TEST_CASE("queries equal a linear scan") {
    Rng rng(78);
    const auto records = random_records(rng, 500, 60.0);
    const auto store = store_from(records);
    for (int i = 0; i < 200; ++i) {
      const auto target = ctxmem::testing::random_pose(rng, 60.0);
      const auto expect = scan_covisible(records, target, OverlapConfig{});
      CHECK(store.query_covisible(target) == expect);
      CHECK(store.query_covisible_naive(target) == expect);
    }
  }

  TEST_CASE("equivalence holds for other configs and cell sizes") {
    Rng rng(79);
    auto records = random_records(rng, 300, 40.0);
    for (std::size_t i = 0; i < records.size(); i += 3) {
      records[i].pose = CameraPose(records[i].pose.x(), records[i].pose.y(), records[i].pose.yaw(), rng.uniform(0.2, 2.8));
    }
    OverlapConfig wide;
    wide.d_max = 8.0;
    wide.forward = ForwardRule::Both;
    OverlapConfig loose;
    loose.require_all_in_range = false;
    for (const auto& cfg : {OverlapConfig{}, wide, loose}) {
      for (double cell : {0.0, 1.0, 50.0}) {
        StoreOptions opts;
        opts.cell_size = cell;
        const auto store = store_from(records, cfg, opts);
        CHECK(edges_of(store) == all_pairs_edges(records, cfg));
        const auto target = ctxmem::testing::random_pose(rng, 40.0);
        CHECK(store.query_covisible(target) == scan_covisible(records, target, cfg));
      }
    }
  }

  TEST_CASE("negative coordinates and clustered poses") {
    Rng rng(80);
    std::vector<FrameRecord> records(400);
    for (std::size_t i = 0; i < records.size(); ++i) {
      records[i].time_index = static_cast<std::int64_t>(i);
      records[i].pose = CameraPose(rng.uniform(-30, 3), rng.uniform(-1000.5, -999.5), rng.uniform(-kPi, kPi));
    }
    const auto store = store_from(records);
    CHECK(edges_of(store) == all_pairs_edges(records, OverlapConfig{}));
  }

  TEST_CASE("binary and jsonl snapshots round trip exactly") {
    WorldSpec spec;
    spec.seed = 3;
    const auto world = generate_world(spec);
    Rng rng(81);
    auto records = random_records(rng, 300, 100.0);
    for (std::size_t i = 0; i < records.size(); i += 7) {
      records[i].panorama = render_panorama(world, records[i].pose, OverlapConfig{}, 16);
      records[i].payload_digest = rng.next();
    }
    const auto store = store_from(records);
    for (auto format : {SnapshotFormat::Binary, SnapshotFormat::Jsonl}) {
      const auto path = ctxmem::testing::temp_path("store.snap");
      store.snapshot(path, format);
      const auto back = MemoryStore::load(path);
      CHECK(back == store);
      CHECK(back.records() == store.records());
      CHECK(back.edges() == store.edges());
      CHECK(back.options() == store.options());
      std::filesystem::remove(path);
    }
    CHECK(MemoryStore::from_jsonl(store.to_jsonl()) == store);
  }

  TEST_CASE("empty snapshot loads to an empty store") {
    const MemoryStore empty;
    const auto path = ctxmem::testing::temp_path("empty.snap");
    empty.snapshot(path);
    const auto back = MemoryStore::load(path);
    CHECK(back.empty());
    CHECK(back == empty);
    std::filesystem::remove(path);
  }

  TEST_CASE("truncated snapshots are corrupt") {
    Rng rng(82);
    const auto store = store_from(random_records(rng, 50, 30.0));
    const auto path = ctxmem::testing::temp_path("trunc.snap");
    store.snapshot(path);
    const auto full = std::filesystem::file_size(path);
    for (auto keep : {full - 1, full / 2, std::uintmax_t{9}, std::uintmax_t{0}}) {
      std::filesystem::resize_file(path, keep);
      CHECK_THROWS_AS(MemoryStore::load(path), CorruptFile);
      store.snapshot(path);
    }

    {
      std::ofstream out(path, std::ios::binary | std::ios::trunc);
      out << "not a snapshot at all";
    }
    CHECK_THROWS_AS(MemoryStore::load(path), CorruptFile);
    std::filesystem::remove(path);
  }

  TEST_CASE("snapshots with tampered edges are rejected") {
    Rng rng(83);
    const auto store = store_from(random_records(rng, 40, 10.0));
    REQUIRE(store.edge_count() > 0);
    std::string text = store.to_jsonl();
    const auto pos = text.find("\"edges\":[");
    REQUIRE(pos != std::string::npos);
    const auto close = text.find(']', pos);
    text.insert(close, text[close - 1] == '[' ? "0" : ",0");
    CHECK_THROWS_AS(MemoryStore::from_jsonl(text), CorruptFile);
  }
}

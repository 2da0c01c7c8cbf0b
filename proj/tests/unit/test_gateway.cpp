#include <doctest.h>

#include <algorithm>
#include <sstream>
#include <thread>

#include "ctxmem/errors.hpp"
#include "ctxmem/eval.hpp"
#include "ctxmem/gateway.hpp"
#include "ctxmem/text_io.hpp"

using namespace ctxmem;
using nlohmann::json;

namespace {

std::string field_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ValidationError& e) {
    return e.field();
  }
  return "<no error>";
}

json yaw_step(double degrees) { return {{"delta", {{"yaw", deg_to_rad(degrees)}}}}; }

json without_id(json state) {
  state.erase("session_id");
  return state;
}

}  // namespace

TEST_SUITE("gateway") {
  TEST_CASE("create with defaults") {
    SessionManager mgr;
    const auto state = mgr.create(json::object());
    CHECK(state["session_id"] == "s1");
    CHECK(state["store"]["size"] == 1);
    CHECK(state["step"] == 0);
    CHECK(state["version"] == kApiVersion);
    CHECK(state["pose"]["x"] == 30.0);
    CHECK(mgr.size() == 1);
    CHECK(mgr.create(json::object())["session_id"] == "s2");
  }

  TEST_CASE("config errors name the field") {
    SessionManager mgr;
    CHECK(field_of([&] { mgr.create({{"fov", 0}}); }) == "fov");
    CHECK(field_of([&] { mgr.create({{"fov", "wide"}}); }) == "fov");
    CHECK(field_of([&] { mgr.create({{"retrieval", {{"k", 0}}}}); }) == "retrieval.k");
    CHECK(field_of([&] { mgr.create({{"retrieval", {{"strategy", "psychic"}}}}); }) == "retrieval.strategy");
    CHECK(field_of([&] { mgr.create({{"overlap", {{"d_max", -1}}}}); }) == "overlap.d_max");
    CHECK(field_of([&] { mgr.create({{"start", {{"y", 1}}}}); }) == "start.x");
    CHECK(field_of([&] { mgr.create({{"colour", 1}}); }) == "colour");
    CHECK(field_of([&] { mgr.create({{"world_spec", {{"density", -2}}}}); }) == "world_spec.density");
    CHECK(mgr.size() == 0);
  }

  TEST_CASE("config json round trip") {
    const auto cfg = session_config_from_json(
        {{"fov", 1.0}, {"retrieval", {{"k", 7}, {"strategy", "fov-random"}}}, {"start", {{"x", 3}, {"y", 4}, {"yaw", 0.5}}}});
    CHECK(cfg.retrieval.k == 7);
    CHECK(cfg.start->fov() == 1.0);
    const auto again = session_config_from_json(session_config_to_json(cfg));
    CHECK(again.retrieval == cfg.retrieval);
    CHECK(again.overlap == cfg.overlap);
    CHECK(*again.start == *cfg.start);
    CHECK(again.fov == cfg.fov);
  }

  TEST_CASE("fixed seed gives identical sessions") {
    SessionManager a;
    SessionManager b;
    const json body{{"world_spec", {{"seed", 42}}}};
    CHECK(without_id(a.create(body)) == without_id(b.create(body)));
    for (int i = 0; i < 5; ++i) {
      auto ra = a.step("s1", yaw_step(20));
      auto rb = b.step("s1", yaw_step(20));
      CHECK(dump_json(ra) == dump_json(rb));
    }
  }

  TEST_CASE("step to the initial pose retrieves frame 0") {
    SessionManager mgr;
    const auto state = mgr.create(json::object());
    const auto& p = state["pose"];
    const auto result = mgr.step("s1", {{"pose", {{"x", p["x"]}, {"y", p["y"]}, {"yaw", p["yaw"]}}}});
    CHECK(result["frame_id"] == 1);
    const auto ids = result["retrieved"].get<std::vector<FrameId>>();
    CHECK(std::count(ids.begin(), ids.end(), 0u) == 1);
    REQUIRE(result["diagnostics"].size() == 1);
    CHECK(result["diagnostics"][0]["overlaps"] == true);
    CHECK(result["diagnostics"][0]["retrieved"] == true);
  }

  TEST_CASE("far step keeps only the most recent frame") {
    SessionManager mgr;
    mgr.create({{"world_spec", {{"bounds", {0, 0, 200, 200}}}}, {"start", {{"x", 10}, {"y", 10}}}});
    mgr.step("s1", {{"delta", {{"yaw", 0.3}}}});
    const auto far = mgr.step("s1", {{"pose", {{"x", 150}, {"y", 150}, {"yaw", 0}}}});
    CHECK(far["retrieved"] == json::array({1}));
    for (const auto& d : far["diagnostics"]) CHECK(d["overlaps"] == false);
  }

  TEST_CASE("rotate and return retrieves outbound frames on the way back") {
    SessionManager mgr;
    const auto created = mgr.create({{"world_spec", {{"seed", 3}, {"density", 4}}}});
    const auto cfg = session_config_from_json(created["config"]);
    const auto world = world_from_json(created["world"]);
    json last;
    for (int i = 0; i < 10; ++i) mgr.step("s1", yaw_step(18));
    for (int i = 0; i < 10; ++i) last = mgr.step("s1", yaw_step(-18));
    const auto ids = last["retrieved"].get<std::vector<FrameId>>();
    const auto state = mgr.state("s1");
    const auto target = state["pose"];
    const CameraPose tp(target["x"], target["y"], target["yaw"], cfg.fov);
    const auto tv = visible_set(world, tp, cfg.overlap);
    REQUIRE_FALSE(tv.empty());
    int outbound = 0;
    for (FrameId id : ids) {
      if (id > 10) continue;
      const auto& f = state["store"]["frames"][id]["pose"];
      const CameraPose p(f["x"], f["y"], f["yaw"], cfg.fov);
      CHECK(sets_intersect(tv, visible_set(world, p, cfg.overlap)));
      ++outbound;
    }
    CHECK(outbound >= 1);
  }

  TEST_CASE("state after N steps and error cases") {
    SessionManager mgr;
    mgr.create(json::object());
    for (int i = 0; i < 7; ++i) mgr.step("s1", {{"delta", {{"forward", 0.5}, {"yaw", 0.1}}}});
    const auto state = mgr.state("s1");
    CHECK(state["store"]["size"] == 8);
    CHECK(state["step"] == 7);
    CHECK(state["coverage_history"].size() == 7);
    CHECK_THROWS_AS(mgr.state("nope"), NotFound);
    CHECK_THROWS_AS(mgr.step("nope", yaw_step(1)), NotFound);
    CHECK(field_of([&] { mgr.step("s1", json::object()); }) == "pose");
    CHECK(field_of([&] { mgr.step("s1", {{"pose", {{"x", 1}}}, {"delta", {{"yaw", 1}}}}); }) == "pose");
    CHECK(field_of([&] { mgr.step("s1", {{"delta", {{"yaw", "left"}}}}); }) == "delta.yaw");
    CHECK(mgr.state("s1")["store"]["size"] == 8);
  }

  TEST_CASE("out of bounds poses are clamped with a warning") {
    SessionManager mgr;
    mgr.create(json::object());
    const auto r = mgr.step("s1", {{"pose", {{"x", -5}, {"y", 75}, {"yaw", 0}}}});
    CHECK(r["clamped"] == true);
    CHECK(r["warnings"].size() == 1);
    CHECK(r["pose"]["x"] == 0.0);
    CHECK(r["pose"]["y"] == 60.0);
  }

  TEST_CASE("step results obey the retrieval invariants") {
    SessionManager mgr;
    mgr.create({{"retrieval", {{"k", 6}}}});
    for (int i = 0; i < 40; ++i) {
      const auto r = mgr.step("s1", {{"delta", {{"forward", 0.7}, {"yaw", 0.2 * ((i % 7) - 3)}}}});
      const auto ids = r["retrieved"].get<std::vector<FrameId>>();
      CHECK(ids.size() <= 6);
      CHECK(std::count(ids.begin(), ids.end(), static_cast<FrameId>(i)) == 1);
      for (const auto& d : r["diagnostics"]) {
        if (d["retrieved"] == true && d["id"] != i) CHECK(d["overlaps"] == true);
      }
      CHECK(r["retrieved_frames"].size() == ids.size());
      CHECK(r["target_fan"].size() == 11);
    }
  }

  TEST_CASE("overrides on a step apply from then on") {
    SessionManager mgr;
    mgr.create(json::object());
    mgr.step("s1", {{"delta", {{"yaw", 0.1}}}, {"overlap", {{"d_max", 10}}}, {"retrieval", {{"k", 3}}}});
    const auto state = mgr.state("s1");
    CHECK(state["config"]["overlap"]["d_max"] == 10.0);
    CHECK(state["config"]["retrieval"]["k"] == 3);
    CHECK(field_of([&] { mgr.step("s1", {{"delta", {{"yaw", 0.1}}}, {"retrieval", {{"k", -1}}}}); }) == "retrieval.k");
  }

  TEST_CASE("sessions are isolated") {
    SessionManager mgr;
    mgr.create(json::object());
    mgr.create(json::object());
    const auto before = mgr.state("s2");
    std::thread t([&] {
      for (int i = 0; i < 20; ++i) mgr.step("s1", yaw_step(10));
    });
    for (int i = 0; i < 20; ++i) mgr.state("s2");
    t.join();
    CHECK(mgr.state("s2") == before);
    CHECK(mgr.state("s1")["store"]["size"] == 21);
  }

  TEST_CASE("events mirror step results") {
    SessionManager mgr;
    mgr.create(json::object());
    auto session = mgr.get("s1");
    CHECK(session->events_since(0, std::chrono::milliseconds(0)).empty());
    const auto r = mgr.step("s1", yaw_step(5));
    const auto events = session->events_since(0, std::chrono::milliseconds(0));
    REQUIRE(events.size() == 1);
    CHECK(events[0] == dump_json(r));
    CHECK(session->event_count() == 1);
    mgr.close_all();
    CHECK(session->closed());
  }

  TEST_CASE("replaying a step log reproduces the session") {
    SessionManager mgr;
    mgr.create({{"world_spec", {{"seed", 9}}}, {"retrieval", {{"strategy", "fov-nonadj-fst"}}}});
    std::vector<json> results;
    for (int i = 0; i < 12; ++i) {
      results.push_back(mgr.step("s1", {{"delta", {{"forward", 0.4}, {"yaw", 0.25}}}}));
    }
    results.push_back(mgr.step("s1", {{"pose", {{"x", 30}, {"y", 30}, {"yaw", 0}}}, {"retrieval", {{"k", 4}}}}));
    std::istringstream log(mgr.get("s1")->step_log());
    const auto replay = replay_step_log(log);
    CHECK(without_id(replay.final_state) == without_id(mgr.state("s1")));
    REQUIRE(replay.results.size() == results.size());
    for (std::size_t i = 0; i < results.size(); ++i) {
      CHECK(replay.results[i]["retrieved"] == results[i]["retrieved"]);
      auto a = results[i];
      auto b = replay.results[i];
      a.erase("session_id");
      b.erase("session_id");
      CHECK(dump_json(a) == dump_json(b));
    }

    std::istringstream bad("{\"type\":\"step\",\"body\":{}}\n");
    CHECK_THROWS(replay_step_log(bad));
  }

  TEST_CASE("fan polygon") {
    const auto fan = fan_polygon(CameraPose(1, 2, 0, kPi / 2), 10.0, 3);
    REQUIRE(fan.size() == 5);
    CHECK(fan.front() == Vec2{1, 2});
    CHECK(fan.back() == Vec2{1, 2});
    CHECK(fan[1].x == doctest::Approx(1 + 10 * std::cos(kPi / 4)));
    CHECK(fan[1].y == doctest::Approx(2 + 10 * std::sin(kPi / 4)));
    CHECK(fan[2].x == doctest::Approx(11));
    CHECK(fan[3].y == doctest::Approx(2 - 10 * std::sin(kPi / 4)));
  }
}

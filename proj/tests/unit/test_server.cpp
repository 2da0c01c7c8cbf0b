#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <future>
#include <thread>

#include <httplib.h>

#include "ctxmem/server.hpp"
#include "ctxmem/text_io.hpp"
#include "support.hpp"

using namespace ctxmem;
using nlohmann::json;

namespace {

struct Running {
  std::shared_ptr<SessionManager> sessions = std::make_shared<SessionManager>();
  GatewayServer server{sessions, ServerOptions{"127.0.0.1", 0, LogLevel::Error, {}}};
  int port = server.start();
  httplib::Client client{"127.0.0.1", port};

  Running() { client.set_read_timeout(5, 0); }
  explicit Running(ServerOptions opts) : server{sessions, std::move(opts)} { client.set_read_timeout(5, 0); }
  ~Running() { server.stop(); }

  httplib::Result post(const std::string& path, const json& body) {
    return client.Post(path, body.dump(), "application/json");
  }
};

}  // namespace

TEST_SUITE("server") {
  TEST_CASE("health and session lifecycle") {
    Running srv;
    REQUIRE(srv.port > 0);
    auto health = srv.client.Get("/healthz");
    REQUIRE(health);
    CHECK(health->status == 200);
    CHECK(json::parse(health->body)["status"] == "ok");

    auto created = srv.post("/sessions", json::object());
    REQUIRE(created);
    CHECK(created->status == 201);
    const auto state = json::parse(created->body);
    const std::string id = state["session_id"];
    CHECK(state["store"]["size"] == 1);

    auto step = srv.post("/sessions/" + id + "/step", {{"delta", {{"yaw", 0.2}}}});
    REQUIRE(step);
    CHECK(step->status == 200);
    CHECK(step->get_header_value("Content-Type") == "application/json");
    const auto result = json::parse(step->body);
    CHECK(result["frame_id"] == 1);
    CHECK(step->body == dump_json(result));

    auto got = srv.client.Get("/sessions/" + id + "/state");
    REQUIRE(got);
    CHECK(got->status == 200);
    CHECK(json::parse(got->body)["store"]["size"] == 2);
  }

  TEST_CASE("errors map to status codes") {
    Running srv;
    auto bad = srv.post("/sessions", {{"fov", 0}});
    REQUIRE(bad);
    CHECK(bad->status == 400);
    const auto err = json::parse(bad->body);
    CHECK(err["field"] == "fov");
    CHECK(err.contains("message"));

    auto broken = srv.client.Post("/sessions", "{not json", "application/json");
    REQUIRE(broken);
    CHECK(broken->status == 400);

    auto missing = srv.client.Get("/sessions/zzz/state");
    REQUIRE(missing);
    CHECK(missing->status == 404);
    auto missing_step = srv.post("/sessions/zzz/step", {{"delta", {{"yaw", 1}}}});
    REQUIRE(missing_step);
    CHECK(missing_step->status == 404);

    srv.post("/sessions", json::object());
    auto bad_step = srv.post("/sessions/s1/step", {{"pose", {{"yaw", "north"}}}});
    REQUIRE(bad_step);
    CHECK(bad_step->status == 400);
    CHECK(json::parse(bad_step->body)["field"] == "pose.yaw");

    auto nowhere = srv.client.Get("/nowhere");
    REQUIRE(nowhere);
    CHECK(nowhere->status == 404);
  }

  TEST_CASE("event stream replays and follows") {
    Running srv;
    srv.post("/sessions", json::object());
    srv.post("/sessions/s1/step", {{"delta", {{"yaw", 0.1}}}});
    srv.post("/sessions/s1/step", {{"delta", {{"yaw", 0.1}}}});

    auto listed = srv.client.Get("/sessions/s1/events?follow=0");
    REQUIRE(listed);
    CHECK(listed->status == 200);
    CHECK(listed->get_header_value("Content-Type").find("text/event-stream") == 0);
    CHECK(listed->body.find("id: 0\nevent: step\ndata: {") == 0);
    CHECK(listed->body.find("id: 1\n") != std::string::npos);

    auto tail = srv.client.Get("/sessions/s1/events?follow=0&since=1");
    REQUIRE(tail);
    CHECK(tail->body.find("id: 0\n") == std::string::npos);
    CHECK(tail->body.find("id: 1\n") == 0);

    // Follow mode: open the stream, then step, and read the new event.
    auto followed = std::async(std::launch::async, [&] {
      httplib::Client c("127.0.0.1", srv.port);
      c.set_read_timeout(5, 0);
      std::string seen;
      c.Get("/sessions/s1/events?since=2&follow=1", [&](const char* data, std::size_t n) {
        seen.append(data, n);
        return seen.find("\n\n", seen.find("data:")) == std::string::npos;
      });
      return seen;
    });
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
    auto third = srv.post("/sessions/s1/step", {{"delta", {{"yaw", 0.1}}}});
    REQUIRE(third);
    const std::string seen = followed.get();
    const auto at = seen.find("id: 2\nevent: step\ndata: ");
    REQUIRE(at != std::string::npos);
    const auto data_start = seen.find("data: ", at) + 6;
    CHECK(seen.substr(data_start, seen.find('\n', data_start) - data_start) == third->body);
  }

  TEST_CASE("step logs on disk replay to the live state") {
    const auto dir = ctxmem::testing::temp_path("step_logs");
    std::filesystem::remove_all(dir);
    Running srv(ServerOptions{"127.0.0.1", 0, LogLevel::Error, dir});
    srv.post("/sessions", {{"world_spec", {{"seed", 5}}}});
    CHECK(std::filesystem::exists(dir / "s1.jsonl"));
    for (int i = 0; i < 6; ++i) srv.post("/sessions/s1/step", {{"delta", {{"forward", 0.5}, {"yaw", 0.3}}}});
    srv.post("/sessions/s1/step", {{"delta", {{"yaw", "bad"}}}});
    auto live = srv.client.Get("/sessions/s1/state");
    REQUIRE(live);
    auto state = json::parse(live->body);
    auto replayed = replay_step_log_file(dir / "s1.jsonl").final_state;
    state.erase("session_id");
    replayed.erase("session_id");
    CHECK(dump_json(replayed) == dump_json(state));
    std::filesystem::remove_all(dir);
  }

  TEST_CASE("options from the environment") {
    ::setenv("CTXMEM_BIND", "0.0.0.0", 1);
    ::setenv("CTXMEM_PORT", "9123", 1);
    ::setenv("CTXMEM_LOG_LEVEL", "debug", 1);
    ::setenv("CTXMEM_STEP_LOG_DIR", "/tmp/logs", 1);
    const auto opts = server_options_from_env();
    CHECK(opts.step_log_dir == "/tmp/logs");
    CHECK(opts.host == "0.0.0.0");
    CHECK(opts.port == 9123);
    CHECK(opts.log_level == LogLevel::Debug);
    ::setenv("CTXMEM_PORT", "port", 1);
    CHECK_THROWS(server_options_from_env());
    ::unsetenv("CTXMEM_BIND");
    ::unsetenv("CTXMEM_PORT");
    ::unsetenv("CTXMEM_LOG_LEVEL");
    ::unsetenv("CTXMEM_STEP_LOG_DIR");
    CHECK(server_options_from_env().port == 8080);
  }
}

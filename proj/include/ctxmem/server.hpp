#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <thread>

#include "ctxmem/gateway.hpp"

namespace ctxmem {

enum class LogLevel { Error = 0, Warn = 1, Info = 2, Debug = 3 };

LogLevel parse_log_level(std::string_view text);
std::string_view to_string(LogLevel level);

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  LogLevel log_level = LogLevel::Info;
  std::filesystem::path step_log_dir;  // empty: no step logs on disk
};

/// Overrides `base` from CTXMEM_BIND, CTXMEM_PORT, CTXMEM_LOG_LEVEL and CTXMEM_STEP_LOG_DIR.
ServerOptions server_options_from_env(ServerOptions base = {});

/// HTTP/JSON front end over a SessionManager:
///   POST /sessions, POST /sessions/{id}/step, GET /sessions/{id}/state,
///   GET /sessions/{id}/events (text/event-stream; ?since=N&follow=0|1),
///   GET /healthz
/// With a step_log_dir, each session's replayable log is kept at <dir>/<id>.jsonl.
class GatewayServer {
 public:
  GatewayServer(std::shared_ptr<SessionManager> sessions, ServerOptions options);
  ~GatewayServer();
  GatewayServer(const GatewayServer&) = delete;
  GatewayServer& operator=(const GatewayServer&) = delete;

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  /// Binds and serves on the calling thread until stop().
  void run();
  void stop();
  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::shared_ptr<SessionManager> sessions_;
  ServerOptions options_;
  std::thread thread_;
  std::atomic<bool> stopping_{false};
  int port_ = 0;

  int bind();
};

}  // namespace ctxmem

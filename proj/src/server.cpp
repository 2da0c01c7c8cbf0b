#include "ctxmem/server.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>

#include <httplib.h>

#include "ctxmem/errors.hpp"
#include "ctxmem/text_io.hpp"

namespace ctxmem {

namespace {

using nlohmann::json;

std::mutex log_mutex;

void log(LogLevel threshold, LogLevel level, const std::string& msg) {
  if (level > threshold) return;
  std::lock_guard lock(log_mutex);
  std::fprintf(stderr, "[%s] %s\n", std::string(to_string(level)).c_str(), msg.c_str());
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(dump_json(body), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view kind, const std::string& message,
                const std::string& field = {}) {
  json body = {{"error", kind}, {"message", message}};
  if (!field.empty()) body["field"] = field;
  send_json(res, status, body);
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw ValidationError("body", std::string("malformed JSON: ") + e.what());
  }
}

std::size_t query_size(const httplib::Request& req, const char* key, std::size_t fallback) {
  if (!req.has_param(key)) return fallback;
  const std::string v = req.get_param_value(key);
  try {
    std::size_t used = 0;
    const auto n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return static_cast<std::size_t>(n);
  } catch (const std::exception&) {
    throw ValidationError(key, "expected a non-negative integer");
  }
}

// Rewrites via a temp file so readers never see a half-written log.
void write_step_log(const std::filesystem::path& dir, const Session& session) {
  static std::mutex write_mutex;
  std::lock_guard lock(write_mutex);
  const auto path = dir / (session.id() + ".jsonl");
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    out << session.step_log();
    if (!out) throw Error("cannot write " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string sse_event(std::size_t index, const std::string& data) {
  return "id: " + std::to_string(index) + "\nevent: step\ndata: " + data + "\n\n";
}

}  // namespace

LogLevel parse_log_level(std::string_view text) {
  if (text == "error") return LogLevel::Error;
  if (text == "warn") return LogLevel::Warn;
  if (text == "info") return LogLevel::Info;
  if (text == "debug") return LogLevel::Debug;
  throw ValidationError("log_level", "expected error, warn, info or debug");
}

std::string_view to_string(LogLevel level) {
  switch (level) {
    case LogLevel::Error: return "error";
    case LogLevel::Warn: return "warn";
    case LogLevel::Info: return "info";
    case LogLevel::Debug: return "debug";
  }
  return "?";
}

ServerOptions server_options_from_env(ServerOptions base) {
  if (const char* v = std::getenv("CTXMEM_BIND"); v && *v) base.host = v;
  if (const char* v = std::getenv("CTXMEM_PORT"); v && *v) {
    try {
      std::size_t used = 0;
      base.port = std::stoi(v, &used);
      if (used != std::string_view(v).size() || base.port < 0 || base.port > 65535) throw std::out_of_range(v);
    } catch (const std::exception&) {
      throw ValidationError("CTXMEM_PORT", "expected a port number");
    }
  }
  if (const char* v = std::getenv("CTXMEM_LOG_LEVEL"); v && *v) base.log_level = parse_log_level(v);
  if (const char* v = std::getenv("CTXMEM_STEP_LOG_DIR"); v && *v) base.step_log_dir = v;
  return base;
}

struct GatewayServer::Impl {
  httplib::Server http;
};

GatewayServer::GatewayServer(std::shared_ptr<SessionManager> sessions, ServerOptions options)
    : impl_(std::make_unique<Impl>()), sessions_(std::move(sessions)), options_(std::move(options)) {
  auto& http = impl_->http;
  const LogLevel level = options_.log_level;
  auto sessions_ptr = sessions_;
  const auto log_dir = options_.step_log_dir;
  if (!log_dir.empty()) std::filesystem::create_directories(log_dir);

  // Maps library errors to status codes for every route.
  const auto guarded = [level](auto handler) {
    return [handler, level](const httplib::Request& req, httplib::Response& res) {
      try {
        handler(req, res);
      } catch (const ValidationError& e) {
        send_error(res, 400, "validation", e.what(), e.field());
      } catch (const NotFound& e) {
        send_error(res, 404, "not_found", e.what());
      } catch (const std::exception& e) {
        log(level, LogLevel::Error, req.method + " " + req.path + ": " + e.what());
        send_error(res, 500, "internal", e.what());
      }
    };
  };

  http.Get("/healthz", guarded([](const httplib::Request&, httplib::Response& res) {
    send_json(res, 200, {{"status", "ok"}, {"version", kApiVersion}});
  }));

  http.Post("/sessions", guarded([sessions_ptr, level, log_dir](const httplib::Request& req, httplib::Response& res) {
    json state = sessions_ptr->create(parse_body(req));
    if (!log_dir.empty()) write_step_log(log_dir, *sessions_ptr->get(state.at("session_id").get<std::string>()));
    log(level, LogLevel::Info, "created session " + state.at("session_id").get<std::string>());
    send_json(res, 201, state);
  }));

  http.Post(R"(/sessions/([^/]+)/step)",
            guarded([sessions_ptr, level, log_dir](const httplib::Request& req, httplib::Response& res) {
              const std::string id = req.matches[1];
              json result = sessions_ptr->step(id, parse_body(req));
              if (!log_dir.empty()) write_step_log(log_dir, *sessions_ptr->get(id));
              log(level, LogLevel::Debug, "session " + id + " step " + std::to_string(result.at("step").get<std::uint64_t>()));
              send_json(res, 200, result);
            }));

  http.Get(R"(/sessions/([^/]+)/state)", guarded([sessions_ptr](const httplib::Request& req, httplib::Response& res) {
             send_json(res, 200, sessions_ptr->state(req.matches[1]));
           }));

  http.Get(R"(/sessions/([^/]+)/events)",
           guarded([this, sessions_ptr](const httplib::Request& req, httplib::Response& res) {
             auto session = sessions_ptr->get(req.matches[1]);
             const std::size_t since = query_size(req, "since", 0);
             const bool follow = query_size(req, "follow", 1) != 0;
             if (!follow) {
               std::string body;
               std::size_t index = since;
               for (const auto& e : session->events_since(since, std::chrono::milliseconds(0))) {
                 body += sse_event(index++, e);
               }
               res.set_content(body, "text/event-stream");
               return;
             }
             res.set_header("Cache-Control", "no-cache");
             auto next = std::make_shared<std::size_t>(since);
             res.set_chunked_content_provider(
                 "text/event-stream", [this, session, next](std::size_t, httplib::DataSink& sink) {
                   if (stopping_ || session->closed()) {
                     sink.done();
                     return true;
                   }
                   const auto events = session->events_since(*next, std::chrono::milliseconds(200));
                   if (events.empty()) {
                     const std::string ping = ": keep-alive\n\n";
                     return sink.write(ping.data(), ping.size());
                   }
                   for (const auto& e : events) {
                     const std::string chunk = sse_event((*next)++, e);
                     if (!sink.write(chunk.data(), chunk.size())) return false;
                   }
                   return true;
                 });
           }));

  http.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.body.empty()) send_error(res, res.status, "http", httplib::status_message(res.status));
  });
  http.set_logger([level](const httplib::Request& req, const httplib::Response& res) {
    log(level, LogLevel::Debug, req.method + " " + req.path + " -> " + std::to_string(res.status));
  });
}

GatewayServer::~GatewayServer() { stop(); }

int GatewayServer::bind() {
  auto& http = impl_->http;
  if (options_.port == 0) {
    port_ = http.bind_to_any_port(options_.host);
  } else {
    port_ = http.bind_to_port(options_.host, options_.port) ? options_.port : -1;
  }
  if (port_ <= 0) throw Error("cannot bind " + options_.host + ":" + std::to_string(options_.port));
  log(options_.log_level, LogLevel::Info, "listening on " + options_.host + ":" + std::to_string(port_));
  return port_;
}

int GatewayServer::start() {
  const int port = bind();
  thread_ = std::thread([this] { impl_->http.listen_after_bind(); });
  impl_->http.wait_until_ready();
  return port;
}

void GatewayServer::run() {
  bind();
  impl_->http.listen_after_bind();
}

void GatewayServer::stop() {
  stopping_ = true;
  if (impl_) impl_->http.stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace ctxmem

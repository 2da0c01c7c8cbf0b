#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ctxmem/memory_store.hpp"
#include "ctxmem/retrieval.hpp"
#include "ctxmem/world.hpp"

namespace ctxmem {

inline constexpr int kApiVersion = 1;

/// Everything needed to recreate a session deterministically.
struct SessionConfig {
  OverlapConfig overlap;
  RetrievalConfig retrieval;
  WorldSpec world_spec;
  std::optional<WorldModel> world;  // explicit world; overrides world_spec
  std::optional<CameraPose> start;  // default: world centre, yaw 0
  double fov = deg_to_rad(kDefaultFovDegrees);
  int panorama_columns = kPanoramaColumns;
  int fan_arc_points = 9;
};

SessionConfig default_session_config();

/// Parses a create-session body on top of `base`. Every malformed value is
/// reported as ValidationError naming the JSON field ("fov", "retrieval.k",
/// "overlap.d_max", ...). Angles are radians.
SessionConfig session_config_from_json(const nlohmann::json& body, SessionConfig base = default_session_config());
nlohmann::json session_config_to_json(const SessionConfig& cfg);

/// Applies "retrieval" and "overlap" overrides, validating field by field.
void apply_retrieval_json(const nlohmann::json& j, RetrievalConfig& cfg, const std::string& prefix = "retrieval");
void apply_overlap_json(const nlohmann::json& j, OverlapConfig& cfg, const std::string& prefix = "overlap");

nlohmann::json pose_to_json(const CameraPose& pose);

/// Closed polygon of the pose's sector: apex, arc from the left edge to the
/// right edge at radius d_max, apex.
std::vector<Vec2> fan_polygon(const CameraPose& pose, double radius, int arc_points);

struct CandidateDiagnostic {
  FrameId id = 0;
  OverlapVerdict verdict;
  std::optional<SelectionStage> stage;  // set when retrieved
};

struct StepResult {
  std::uint64_t step = 0;
  FrameId frame_id = 0;
  CameraPose pose;
  bool clamped = false;
  std::vector<std::string> warnings;
  RetrievalResult retrieval;
  std::vector<CandidateDiagnostic> diagnostics;  // one per stored frame before the step
  double coverage = 1.0;
  Panorama panorama;
};

class Session {
 public:
  Session(std::string id, SessionConfig cfg);

  const std::string& id() const { return id_; }

  /// Body: {"pose":{"x","y","yaw"}} or {"delta":{"forward","left","yaw"}},
  /// optionally "retrieval"/"overlap" overrides applied before retrieving.
  /// Returns the StepResult JSON and appends it to the event list.
  nlohmann::json step(const nlohmann::json& body);
  StepResult step_typed(const nlohmann::json& body);

  nlohmann::json state() const;

  /// Events with index >= since; blocks up to `wait` for a new one when none.
  std::vector<std::string> events_since(std::size_t since, std::chrono::milliseconds wait) const;
  std::size_t event_count() const;

  /// Create record followed by every step request, one JSON object per line.
  std::string step_log() const;

  /// Wakes event waiters; used on shutdown.
  void close();
  bool closed() const;

 private:
  std::pair<StepResult, nlohmann::json> do_step(const nlohmann::json& body);
  nlohmann::json state_locked() const;
  nlohmann::json result_to_json(const StepResult& r) const;

  std::string id_;
  SessionConfig cfg_;
  nlohmann::json initial_config_;
  WorldModel world_;
  MemoryStore store_;
  CameraPose pose_;
  std::uint64_t steps_ = 0;
  std::vector<double> coverage_history_;
  std::vector<nlohmann::json> requests_;

  mutable std::shared_mutex mutex_;  // store, pose, config

  mutable std::mutex events_mutex_;
  mutable std::condition_variable events_cv_;
  std::vector<std::string> events_;
  bool closed_ = false;
};

/// Process-wide session registry. Sessions are independent; the registry lock
/// is held only for lookup and insertion.
class SessionManager {
 public:
  /// Returns the new session's state (which carries "session_id").
  nlohmann::json create(const nlohmann::json& body);
  std::shared_ptr<Session> get(const std::string& id) const;  // throws NotFound
  nlohmann::json step(const std::string& id, const nlohmann::json& body) { return get(id)->step(body); }
  nlohmann::json state(const std::string& id) const { return get(id)->state(); }
  std::size_t size() const;
  void close_all();

 private:
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t next_id_ = 1;
};

struct ReplayOutput {
  nlohmann::json final_state;
  std::vector<nlohmann::json> results;
};

/// Re-runs a step log (see Session::step_log) in a fresh session.
ReplayOutput replay_step_log(std::istream& in);
ReplayOutput replay_step_log_file(const std::filesystem::path& path);

}  // namespace ctxmem

#include "ctxmem/gateway.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <sstream>

#include "ctxmem/errors.hpp"
#include "ctxmem/eval.hpp"
#include "ctxmem/text_io.hpp"

namespace ctxmem {

namespace {

using nlohmann::json;

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

void require_object(const json& j, const std::string& path) {
  if (!j.is_object()) throw ValidationError(path.empty() ? "body" : path, "expected a JSON object");
}

void reject_unknown(const json& j, std::initializer_list<std::string_view> allowed, const std::string& prefix) {
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ValidationError(join(prefix, key), "unknown field");
    }
  }
}

bool read(const json& j, const char* key, const std::string& prefix, double& out) {
  if (!j.contains(key)) return false;
  const auto& v = j.at(key);
  if (!v.is_number()) throw ValidationError(join(prefix, key), "expected a number");
  out = v.get<double>();
  if (!std::isfinite(out)) throw ValidationError(join(prefix, key), "must be finite");
  return true;
}

template <typename Int>
bool read_int(const json& j, const char* key, const std::string& prefix, Int& out) {
  if (!j.contains(key)) return false;
  const auto& v = j.at(key);
  if (v.is_number_unsigned() || v.is_number_integer()) {
    if constexpr (std::is_unsigned_v<Int>) {
      if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0) {
        throw ValidationError(join(prefix, key), "must be non-negative");
      }
    }
    out = v.get<Int>();
    return true;
  }
  throw ValidationError(join(prefix, key), "expected an integer");
}

bool read(const json& j, const char* key, const std::string& prefix, bool& out) {
  if (!j.contains(key)) return false;
  if (!j.at(key).is_boolean()) throw ValidationError(join(prefix, key), "expected a boolean");
  out = j.at(key).get<bool>();
  return true;
}

bool read(const json& j, const char* key, const std::string& prefix, std::string& out) {
  if (!j.contains(key)) return false;
  if (!j.at(key).is_string()) throw ValidationError(join(prefix, key), "expected a string");
  out = j.at(key).get<std::string>();
  return true;
}

// Re-raises a validation error from a nested config with its full JSON path.
template <typename Fn>
void with_prefix(const std::string& prefix, Fn&& fn) {
  try {
    fn();
  } catch (const ValidationError& e) {
    if (e.field().starts_with(prefix + ".")) throw;
    const std::string what = e.what();
    const auto colon = what.find(": ");
    throw ValidationError(join(prefix, e.field()), colon == std::string::npos ? what : what.substr(colon + 2));
  }
}

Bounds read_bounds(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 4 || !std::all_of(j.begin(), j.end(), [](const json& v) { return v.is_number(); })) {
    throw ValidationError(path, "expected [min_x, min_y, max_x, max_y]");
  }
  Bounds b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  if (!b.valid()) throw ValidationError(path, "must be a non-degenerate rectangle");
  return b;
}

json bounds_to_json(const Bounds& b) { return json::array({b.min_x, b.min_y, b.max_x, b.max_y}); }

json world_spec_to_json(const WorldSpec& s) {
  return {{"density", s.density},
          {"occluders", s.occluder_count},
          {"bounds", bounds_to_json(s.bounds)},
          {"seed", s.seed},
          {"min_spacing", s.min_spacing},
          {"min_radius", s.min_radius},
          {"max_radius", s.max_radius},
          {"min_occluder_len", s.min_occluder_len},
          {"max_occluder_len", s.max_occluder_len}};
}

void apply_world_spec_json(const json& j, WorldSpec& s) {
  const std::string prefix = "world_spec";
  require_object(j, prefix);
  reject_unknown(j,
                 {"density", "occluders", "bounds", "seed", "min_spacing", "min_radius", "max_radius",
                  "min_occluder_len", "max_occluder_len"},
                 prefix);
  read(j, "density", prefix, s.density);
  read_int(j, "occluders", prefix, s.occluder_count);
  if (j.contains("bounds")) s.bounds = read_bounds(j.at("bounds"), join(prefix, "bounds"));
  read_int(j, "seed", prefix, s.seed);
  read(j, "min_spacing", prefix, s.min_spacing);
  read(j, "min_radius", prefix, s.min_radius);
  read(j, "max_radius", prefix, s.max_radius);
  read(j, "min_occluder_len", prefix, s.min_occluder_len);
  read(j, "max_occluder_len", prefix, s.max_occluder_len);
  with_prefix(prefix, [&] { s.validate(); });
}

json fan_to_json(const CameraPose& pose, double radius, int arc_points) {
  json pts = json::array();
  for (Vec2 p : fan_polygon(pose, radius, arc_points)) pts.push_back({p.x, p.y});
  return pts;
}

json verdict_to_json(const OverlapVerdict& v) {
  json pts = json::array();
  for (const auto& i : v.intersections()) pts.push_back({{"x", i.point.x}, {"y", i.point.y}, {"distance", i.distance}});
  return {{"overlaps", v.overlaps},
          {"reason", v.reason ? json(to_string(*v.reason)) : json(nullptr)},
          {"intersections", std::move(pts)}};
}

}  // namespace

SessionConfig default_session_config() {
  SessionConfig cfg;
  cfg.world_spec.density = 2.0;
  cfg.world_spec.bounds = {0.0, 0.0, 60.0, 60.0};
  cfg.world_spec.occluder_count = 4;
  return cfg;
}

void apply_retrieval_json(const json& j, RetrievalConfig& cfg, const std::string& prefix) {
  require_object(j, prefix);
  reject_unknown(j,
                 {"k", "strategy", "far_slots", "time_scale", "seed", "recent_only_prob", "far_from_all_history",
                  "use_cached_edges"},
                 prefix);
  read_int(j, "k", prefix, cfg.k);
  if (std::string s; read(j, "strategy", prefix, s)) with_prefix(prefix, [&] { cfg.strategy = parse_strategy(s); });
  read_int(j, "far_slots", prefix, cfg.far_slots);
  read(j, "time_scale", prefix, cfg.time_scale);
  read_int(j, "seed", prefix, cfg.seed);
  read(j, "recent_only_prob", prefix, cfg.recent_only_prob);
  read(j, "far_from_all_history", prefix, cfg.far_from_all_history);
  read(j, "use_cached_edges", prefix, cfg.use_cached_edges);
  with_prefix(prefix, [&] { cfg.validate(); });
}

void apply_overlap_json(const json& j, OverlapConfig& cfg, const std::string& prefix) {
  require_object(j, prefix);
  reject_unknown(j, {"d_min", "d_max", "pairing", "forward", "require_all_in_range", "oracle_samples"}, prefix);
  read(j, "d_min", prefix, cfg.d_min);
  read(j, "d_max", prefix, cfg.d_max);
  if (std::string s; read(j, "pairing", prefix, s)) with_prefix(prefix, [&] { cfg.pairing = parse_pairing(s); });
  if (std::string s; read(j, "forward", prefix, s)) with_prefix(prefix, [&] { cfg.forward = parse_forward_rule(s); });
  read(j, "require_all_in_range", prefix, cfg.require_all_in_range);
  read_int(j, "oracle_samples", prefix, cfg.oracle_samples);
  with_prefix(prefix, [&] { cfg.validate(); });
}

SessionConfig session_config_from_json(const json& body, SessionConfig cfg) {
  require_object(body, "");
  reject_unknown(body, {"overlap", "retrieval", "world_spec", "world", "start", "fov", "panorama_columns", "fan_arc_points"},
                 "");
  if (body.contains("overlap")) apply_overlap_json(body.at("overlap"), cfg.overlap);
  if (body.contains("retrieval")) apply_retrieval_json(body.at("retrieval"), cfg.retrieval);
  if (body.contains("world_spec")) apply_world_spec_json(body.at("world_spec"), cfg.world_spec);
  if (body.contains("world") && !body.at("world").is_null()) cfg.world = world_from_json(body.at("world"));
  if (read(body, "fov", "", cfg.fov)) {
    if (!(cfg.fov > 0.0 && cfg.fov < kPi)) throw ValidationError("fov", "must lie in (0, pi) radians");
  }
  read_int(body, "panorama_columns", "", cfg.panorama_columns);
  if (cfg.panorama_columns < 2) throw ValidationError("panorama_columns", "must be >= 2");
  read_int(body, "fan_arc_points", "", cfg.fan_arc_points);
  if (cfg.fan_arc_points < 2) throw ValidationError("fan_arc_points", "must be >= 2");
  if (body.contains("start") && !body.at("start").is_null()) {
    const auto& s = body.at("start");
    require_object(s, "start");
    reject_unknown(s, {"x", "y", "yaw", "fov"}, "start");
    double x = 0.0, y = 0.0, yaw = 0.0;
    if (!read(s, "x", "start", x)) throw ValidationError("start.x", "required");
    if (!read(s, "y", "start", y)) throw ValidationError("start.y", "required");
    read(s, "yaw", "start", yaw);
    if (double fov = cfg.fov; read(s, "fov", "start", fov)) {
      if (!(fov > 0.0 && fov < kPi)) throw ValidationError("fov", "must lie in (0, pi) radians");
      cfg.fov = fov;
    }
    cfg.start = CameraPose(x, y, yaw, cfg.fov);
  } else if (cfg.start) {
    cfg.start = CameraPose(cfg.start->x(), cfg.start->y(), cfg.start->yaw(), cfg.fov);
  }
  return cfg;
}

json session_config_to_json(const SessionConfig& cfg) {
  json j = {{"overlap", to_json(cfg.overlap)},
            {"retrieval", to_json(cfg.retrieval)},
            {"world_spec", world_spec_to_json(cfg.world_spec)},
            {"fov", cfg.fov},
            {"panorama_columns", cfg.panorama_columns},
            {"fan_arc_points", cfg.fan_arc_points}};
  j["world"] = cfg.world ? world_to_json(*cfg.world) : json(nullptr);
  j["start"] = cfg.start ? json{{"x", cfg.start->x()}, {"y", cfg.start->y()}, {"yaw", cfg.start->yaw()}} : json(nullptr);
  return j;
}

json pose_to_json(const CameraPose& pose) {
  return {{"x", pose.x()}, {"y", pose.y()}, {"yaw", pose.yaw()}, {"fov", pose.fov()}};
}

std::vector<Vec2> fan_polygon(const CameraPose& pose, double radius, int arc_points) {
  std::vector<Vec2> out;
  const Vec2 apex = pose.position();
  out.push_back(apex);
  const double left = pose.yaw() + pose.half_fov();
  for (int i = 0; i < arc_points; ++i) {
    out.push_back(apex + radius * unit_from_angle(left - pose.fov() * i / (arc_points - 1)));
  }
  out.push_back(apex);
  return out;
}

Session::Session(std::string id, SessionConfig cfg)
    : id_(std::move(id)),
      cfg_(std::move(cfg)),
      initial_config_(session_config_to_json(cfg_)),
      world_(cfg_.world ? *cfg_.world : generate_world(cfg_.world_spec)),
      store_(cfg_.overlap, StoreOptions{.cell_size = 0.0, .keep_panoramas = true}) {
  cfg_.overlap.validate();
  cfg_.retrieval.validate();
  const CameraPose start = cfg_.start ? *cfg_.start : CameraPose(world_.bounds.center().x, world_.bounds.center().y, 0.0, cfg_.fov);
  pose_ = start.with_position(world_.bounds.clamp(start.position()));
  FrameRecord r;
  r.time_index = 0;
  r.pose = pose_;
  r.panorama = render_panorama(world_, pose_, cfg_.overlap, cfg_.panorama_columns);
  r.payload_digest = panorama_digest(*r.panorama);
  store_.append(std::move(r));
}

StepResult Session::step_typed(const json& body) { return do_step(body).first; }

json Session::step(const json& body) { return do_step(body).second; }

std::pair<StepResult, json> Session::do_step(const json& body) {
  std::unique_lock lock(mutex_);
  require_object(body, "");
  reject_unknown(body, {"pose", "delta", "retrieval", "overlap"}, "");
  const bool has_pose = body.contains("pose");
  const bool has_delta = body.contains("delta");
  if (has_pose == has_delta) throw ValidationError("pose", "exactly one of 'pose' or 'delta' is required");

  RetrievalConfig rcfg = cfg_.retrieval;
  if (body.contains("retrieval")) apply_retrieval_json(body.at("retrieval"), rcfg);
  OverlapConfig ocfg = cfg_.overlap;
  if (body.contains("overlap")) apply_overlap_json(body.at("overlap"), ocfg);

  CameraPose target = pose_;
  if (has_pose) {
    const auto& p = body.at("pose");
    require_object(p, "pose");
    reject_unknown(p, {"x", "y", "yaw"}, "pose");
    double x = pose_.x(), y = pose_.y(), yaw = pose_.yaw();
    read(p, "x", "pose", x);
    read(p, "y", "pose", y);
    read(p, "yaw", "pose", yaw);
    target = CameraPose(x, y, yaw, cfg_.fov);
  } else {
    const auto& d = body.at("delta");
    require_object(d, "delta");
    reject_unknown(d, {"forward", "left", "yaw"}, "delta");
    double forward = 0.0, left = 0.0, dyaw = 0.0;
    read(d, "forward", "delta", forward);
    read(d, "left", "delta", left);
    read(d, "yaw", "delta", dyaw);
    target = pose_.moved(forward, left, dyaw);
  }

  // Everything is validated; from here on the step cannot fail half way.
  if (!(ocfg == cfg_.overlap)) {
    MemoryStore rebuilt(ocfg, store_.options());
    for (const auto& r : store_.records()) rebuilt.append(r);
    store_ = std::move(rebuilt);
  }
  cfg_.overlap = ocfg;
  cfg_.retrieval = rcfg;

  StepResult out;
  if (!world_.bounds.contains(target.position())) {
    target = target.with_position(world_.bounds.clamp(target.position()));
    out.clamped = true;
    out.warnings.push_back("pose outside world bounds; clamped");
  }
  out.pose = target;
  const auto most_recent = static_cast<FrameId>(store_.size() - 1);
  out.retrieval = retrieve_context_detailed(store_, target, cfg_.retrieval, most_recent);

  out.diagnostics.reserve(store_.size());
  std::size_t next = 0;
  for (const auto& r : store_.records()) {
    CandidateDiagnostic d;
    d.id = r.frame_id;
    d.verdict = fov_overlap_heuristic(target, r.pose, cfg_.overlap);
    if (next < out.retrieval.frames.size() && out.retrieval.frames[next].id == r.frame_id) {
      d.stage = out.retrieval.frames[next++].stage;
    }
    out.diagnostics.push_back(d);
  }
  out.coverage = coverage(world_, target, out.retrieval.ids, store_, cfg_.overlap);
  out.panorama = render_panorama(world_, target, cfg_.overlap, cfg_.panorama_columns);

  FrameRecord rec;
  rec.time_index = store_.records().back().time_index + 1;
  rec.pose = target;
  rec.panorama = out.panorama;
  rec.payload_digest = panorama_digest(out.panorama);
  out.frame_id = store_.append(std::move(rec));

  out.step = ++steps_;
  pose_ = target;
  coverage_history_.push_back(out.coverage);
  requests_.push_back(body);

  json result = result_to_json(out);
  {
    std::lock_guard events_lock(events_mutex_);
    events_.push_back(dump_json(result));
  }
  events_cv_.notify_all();
  return {std::move(out), std::move(result)};
}

json Session::result_to_json(const StepResult& r) const {
  const double radius = cfg_.overlap.d_max;
  json retrieved_frames = json::array();
  for (const auto& f : r.retrieval.frames) {
    const auto& pose = store_.record(f.id).pose;
    retrieved_frames.push_back({{"id", f.id},
                                {"stage", to_string(f.stage)},
                                {"pose", pose_to_json(pose)},
                                {"fan", fan_to_json(pose, radius, cfg_.fan_arc_points)}});
  }
  json diagnostics = json::array();
  for (const auto& d : r.diagnostics) {
    const auto& pose = store_.record(d.id).pose;
    json entry = verdict_to_json(d.verdict);
    entry["id"] = d.id;
    entry["retrieved"] = d.stage.has_value();
    entry["stage"] = d.stage ? json(to_string(*d.stage)) : json(nullptr);
    entry["pose"] = pose_to_json(pose);
    entry["fan"] = fan_to_json(pose, radius, cfg_.fan_arc_points);
    diagnostics.push_back(std::move(entry));
  }
  return {{"version", kApiVersion},
          {"type", "step"},
          {"session_id", id_},
          {"step", r.step},
          {"frame_id", r.frame_id},
          {"pose", pose_to_json(r.pose)},
          {"clamped", r.clamped},
          {"warnings", r.warnings},
          {"retrieved", r.retrieval.ids},
          {"retrieved_frames", std::move(retrieved_frames)},
          {"fov_candidates", r.retrieval.fov_candidates},
          {"target_fan", fan_to_json(r.pose, radius, cfg_.fan_arc_points)},
          {"diagnostics", std::move(diagnostics)},
          {"coverage", r.coverage},
          {"panorama", panorama_to_json(r.panorama)},
          {"config", {{"overlap", to_json(cfg_.overlap)}, {"retrieval", to_json(cfg_.retrieval)}}}};
}

json Session::state() const {
  std::shared_lock lock(mutex_);
  return state_locked();
}

json Session::state_locked() const {
  json frames = json::array();
  for (const auto& r : store_.records()) {
    frames.push_back({{"id", r.frame_id}, {"t", r.time_index}, {"pose", pose_to_json(r.pose)}, {"digest", to_hex64(r.payload_digest)}});
  }
  json config = session_config_to_json(cfg_);
  config.erase("world");
  return {{"version", kApiVersion},
          {"session_id", id_},
          {"step", steps_},
          {"pose", pose_to_json(pose_)},
          {"config", std::move(config)},
          {"world", world_to_json(world_)},
          {"store", {{"size", store_.size()}, {"edge_count", store_.edge_count()}, {"frames", std::move(frames)}}},
          {"coverage_history", coverage_history_}};
}

std::vector<std::string> Session::events_since(std::size_t since, std::chrono::milliseconds wait) const {
  std::unique_lock lock(events_mutex_);
  if (events_.size() <= since && !closed_ && wait.count() > 0) {
    events_cv_.wait_for(lock, wait, [&] { return events_.size() > since || closed_; });
  }
  if (since >= events_.size()) return {};
  return {events_.begin() + static_cast<std::ptrdiff_t>(since), events_.end()};
}

std::size_t Session::event_count() const {
  std::lock_guard lock(events_mutex_);
  return events_.size();
}

std::string Session::step_log() const {
  std::shared_lock lock(mutex_);
  std::string out = dump_json({{"type", "create"}, {"version", kApiVersion}, {"config", initial_config_}});
  out += '\n';
  for (const auto& r : requests_) {
    out += dump_json({{"type", "step"}, {"body", r}});
    out += '\n';
  }
  return out;
}

void Session::close() {
  {
    std::lock_guard lock(events_mutex_);
    closed_ = true;
  }
  events_cv_.notify_all();
}

bool Session::closed() const {
  std::lock_guard lock(events_mutex_);
  return closed_;
}

json SessionManager::create(const json& body) {
  SessionConfig cfg = session_config_from_json(body.is_null() ? json::object() : body);
  std::string id;
  {
    std::unique_lock lock(mutex_);
    id = "s" + std::to_string(next_id_++);
  }
  auto session = std::make_shared<Session>(id, std::move(cfg));
  json state = session->state();
  std::unique_lock lock(mutex_);
  sessions_.emplace(id, std::move(session));
  return state;
}

std::shared_ptr<Session> SessionManager::get(const std::string& id) const {
  std::shared_lock lock(mutex_);
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFound("unknown session '" + id + "'");
  return it->second;
}

std::size_t SessionManager::size() const {
  std::shared_lock lock(mutex_);
  return sessions_.size();
}

void SessionManager::close_all() {
  std::shared_lock lock(mutex_);
  for (const auto& [id, s] : sessions_) s->close();
}

ReplayOutput replay_step_log(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  std::optional<Session> session;
  ReplayOutput out;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ValidationError("line " + std::to_string(line_no), e.what());
    }
    const std::string type = j.value("type", "");
    if (type == "create") {
      if (session) throw ValidationError("line " + std::to_string(line_no), "second create record");
      session.emplace("replay", session_config_from_json(j.at("config")));
    } else if (type == "step") {
      if (!session) throw ValidationError("line " + std::to_string(line_no), "step before create");
      out.results.push_back(session->step(j.at("body")));
    } else {
      throw ValidationError("line " + std::to_string(line_no), "unknown record type '" + type + "'");
    }
  }
  if (!session) throw ValidationError("log", "no create record");
  out.final_state = session->state();
  return out;
}

ReplayOutput replay_step_log_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open " + path.string());
  return replay_step_log(in);
}

}  // namespace ctxmem

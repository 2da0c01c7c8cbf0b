#include "ctxmem/trajectory.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "ctxmem/errors.hpp"
#include "ctxmem/rng.hpp"
#include "ctxmem/text_io.hpp"

namespace ctxmem {

namespace {

constexpr int kSamplesPerSpan = 256;

// Clamped uniform cubic B-spline evaluated with de Boor's algorithm.
class ClampedSpline {
 public:
  explicit ClampedSpline(std::span<const Vec2> pts) : pts_(pts.begin(), pts.end()) {
    const int n = static_cast<int>(pts_.size());
    const int spans = n - 3;
    knots_.reserve(static_cast<std::size_t>(n + 4));
    for (int i = 0; i < 4; ++i) knots_.push_back(0.0);
    for (int i = 1; i < spans; ++i) knots_.push_back(i);
    for (int i = 0; i < 4; ++i) knots_.push_back(spans);
  }

  double domain_end() const { return static_cast<double>(pts_.size() - 3); }
  int spans() const { return static_cast<int>(pts_.size()) - 3; }

  Vec2 eval(double u) const {
    const int n = static_cast<int>(pts_.size());
    u = std::clamp(u, 0.0, domain_end());
    int k = std::min(static_cast<int>(u), n - 4) + 3;  // knot span index
    Vec2 d[4];
    for (int j = 0; j < 4; ++j) d[j] = pts_[static_cast<std::size_t>(j + k - 3)];
    for (int r = 1; r < 4; ++r) {
      for (int j = 3; j >= r; --j) {
        const double lo = knots_[static_cast<std::size_t>(j + k - 3)];
        const double hi = knots_[static_cast<std::size_t>(j + 1 + k - r)];
        const double alpha = (hi - lo) > 0.0 ? (u - lo) / (hi - lo) : 0.0;
        d[j] = (1.0 - alpha) * d[j - 1] + alpha * d[j];
      }
    }
    return d[3];
  }

 private:
  std::vector<Vec2> pts_;
  std::vector<double> knots_;
};

// Periodic uniform cubic B-spline over a closed control polygon.
class PeriodicSpline {
 public:
  explicit PeriodicSpline(std::span<const Vec2> pts) : pts_(pts.begin(), pts.end()) {}

  double domain_end() const { return static_cast<double>(pts_.size()); }
  int spans() const { return static_cast<int>(pts_.size()); }

  Vec2 eval(double u) const {
    const int n = static_cast<int>(pts_.size());
    double span_f = std::floor(u);
    const double t = u - span_f;
    int i = static_cast<int>(span_f) % n;
    if (i < 0) i += n;
    const auto p = [&](int j) { return pts_[static_cast<std::size_t>((i + j) % n)]; };
    const double t2 = t * t;
    const double t3 = t2 * t;
    const double b0 = (1 - 3 * t + 3 * t2 - t3) / 6.0;
    const double b1 = (4 - 6 * t2 + 3 * t3) / 6.0;
    const double b2 = (1 + 3 * t + 3 * t2 - 3 * t3) / 6.0;
    const double b3 = t3 / 6.0;
    return b0 * p(0) + b1 * p(1) + b2 * p(2) + b3 * p(3);
  }

 private:
  std::vector<Vec2> pts_;
};

// Cumulative arc-length table over a curve parameter range.
class ArcTable {
 public:
  ArcTable(const std::function<Vec2(double)>& curve, double u_end, int spans) : curve_(curve) {
    const int n = std::max(1, spans) * kSamplesPerSpan;
    params_.reserve(static_cast<std::size_t>(n + 1));
    lengths_.reserve(static_cast<std::size_t>(n + 1));
    Vec2 prev = curve(0.0);
    double total = 0.0;
    params_.push_back(0.0);
    lengths_.push_back(0.0);
    for (int i = 1; i <= n; ++i) {
      const double u = u_end * i / n;
      const Vec2 p = curve(u);
      total += distance(prev, p);
      prev = p;
      params_.push_back(u);
      lengths_.push_back(total);
    }
  }

  double length() const { return lengths_.back(); }

  double param_at(double s) const {
    const auto it = std::lower_bound(lengths_.begin(), lengths_.end(), s);
    if (it == lengths_.begin()) return params_.front();
    if (it == lengths_.end()) return params_.back();
    const auto hi = static_cast<std::size_t>(it - lengths_.begin());
    const std::size_t lo = hi - 1;
    const double span = lengths_[hi] - lengths_[lo];
    const double f = span > 0.0 ? (s - lengths_[lo]) / span : 0.0;
    return params_[lo] + f * (params_[hi] - params_[lo]);
  }

 private:
  std::function<Vec2(double)> curve_;
  std::vector<double> params_;
  std::vector<double> lengths_;
};

std::vector<double> smoothed_headings(std::span<const Vec2> positions, std::span<const double> raw_tangents,
                                      int window) {
  const std::size_t n = positions.size();
  std::vector<double> unwrapped(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i == 0) {
      unwrapped[i] = raw_tangents[i];
    } else {
      unwrapped[i] = unwrapped[i - 1] + normalize_angle(raw_tangents[i] - raw_tangents[i - 1]);
    }
  }
  const int half = std::max(0, window / 2);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t lo = i >= static_cast<std::size_t>(half) ? i - half : 0;
    const std::size_t hi = std::min(n - 1, i + half);
    double sum = 0.0;
    for (std::size_t j = lo; j <= hi; ++j) sum += unwrapped[j];
    out[i] = sum / static_cast<double>(hi - lo + 1);
  }
  return out;
}

template <typename Curve>
Trajectory sample_curve(const Curve& curve, std::uint64_t seed, int num_frames, double speed, double fov,
                        int smoothing_window, bool wrap) {
  const ArcTable table([&](double u) { return curve.eval(u); }, curve.domain_end(), curve.spans());
  const double needed = speed * (num_frames - 1);
  if (!wrap && needed > table.length()) {
    throw ConstraintUnsatisfiable("spline length " + format_double(table.length()) + " m is shorter than the " +
                                  format_double(needed) + " m needed");
  }
  const double lap = table.length();
  std::vector<Vec2> positions(static_cast<std::size_t>(num_frames));
  std::vector<double> tangents(static_cast<std::size_t>(num_frames));
  const double du = 1e-5 * curve.domain_end();
  for (int i = 0; i < num_frames; ++i) {
    double s = speed * i;
    if (wrap) s = std::fmod(s, lap);
    const double u = table.param_at(s);
    positions[static_cast<std::size_t>(i)] = curve.eval(u);
    double u0 = u - du;
    double u1 = u + du;
    if (!wrap) {
      u0 = std::max(0.0, u0);
      u1 = std::min(curve.domain_end(), u1);
    }
    const Vec2 d = curve.eval(u1) - curve.eval(u0);
    tangents[static_cast<std::size_t>(i)] = std::atan2(d.y, d.x);
  }
  const auto yaw = smoothed_headings(positions, tangents, smoothing_window);

  Trajectory traj;
  traj.seed = seed;
  traj.frames.reserve(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    traj.frames.push_back({static_cast<std::int64_t>(i), CameraPose(positions[i].x, positions[i].y, yaw[i], fov)});
  }
  return traj;
}

std::vector<Vec2> random_walk_points(const RoamSpec& spec, Rng& rng) {
  const Bounds& b = spec.bounds;
  const double margin_x = 0.1 * b.width();
  const double margin_y = 0.1 * b.height();
  const Bounds inner{b.min_x + margin_x, b.min_y + margin_y, b.max_x - margin_x, b.max_y - margin_y};
  const double step_scale = std::min(1.0, std::min(inner.width(), inner.height()) / 30.0);
  const double step_lo = 8.0 * step_scale;
  const double step_hi = 14.0 * step_scale;
  const double max_turn = deg_to_rad(45.0);

  std::vector<Vec2> pts;
  pts.push_back({rng.uniform(inner.min_x, inner.max_x), rng.uniform(inner.min_y, inner.max_y)});
  double heading = rng.uniform(-kPi, kPi);
  while (static_cast<int>(pts.size()) < spec.num_control_points) {
    bool placed = false;
    for (int tries = 0; tries < 64 && !placed; ++tries) {
      // Widen the turn range when boxed in so the walk can bounce off walls.
      const double turn = tries < 16 ? max_turn : kPi;
      const double h = heading + rng.uniform(-turn, turn);
      const Vec2 next = pts.back() + rng.uniform(step_lo, step_hi) * unit_from_angle(h);
      if (inner.contains(next)) {
        pts.push_back(next);
        heading = h;
        placed = true;
      }
    }
    if (!placed) return {};
  }
  return pts;
}

}  // namespace

ConstraintReport check_constraints(const Trajectory& traj, const SegmentConstraints& limits) {
  ConstraintReport report;
  const std::size_t len = static_cast<std::size_t>(limits.segment_len);
  for (std::size_t first = 0; len > 0 && first + len <= traj.frames.size(); first += len) {
    SegmentReport seg;
    seg.first_frame = first;
    seg.last_frame = first + len - 1;
    const CameraPose& a = traj.frames[seg.first_frame].pose;
    const CameraPose& b = traj.frames[seg.last_frame].pose;
    seg.displacement = distance(a.position(), b.position());
    seg.net_yaw_deg = rad_to_deg(std::abs(normalize_angle(b.yaw() - a.yaw())));
    double cumulative = 0.0;
    for (std::size_t i = first + 1; i <= seg.last_frame; ++i) {
      cumulative += std::abs(normalize_angle(traj.frames[i].pose.yaw() - traj.frames[i - 1].pose.yaw()));
    }
    seg.cumulative_yaw_deg = rad_to_deg(cumulative);
    seg.pass = seg.displacement >= limits.min_displacement && seg.displacement <= limits.max_displacement &&
               seg.net_yaw_deg < limits.max_net_yaw_deg && seg.cumulative_yaw_deg <= limits.max_cumulative_yaw_deg;
    report.segments.push_back(seg);
  }
  report.pass = !report.segments.empty() &&
                std::all_of(report.segments.begin(), report.segments.end(), [](const auto& s) { return s.pass; });
  return report;
}

void RoamSpec::validate() const {
  if (num_frames < constraints.segment_len) throw ValidationError("num_frames", "must be >= segment_len");
  if (!bounds.valid()) throw ValidationError("bounds", "must be a non-degenerate rectangle");
  if (num_control_points < 4) throw ValidationError("num_control_points", "must be >= 4");
  if (!(segment_arc_length > 0.0)) throw ValidationError("segment_arc_length", "must be > 0");
  if (max_attempts < 1) throw ValidationError("max_attempts", "must be >= 1");
  if (!(fov > 0.0 && fov < kPi)) throw ValidationError("fov", "must lie in (0, pi) radians");
}

Trajectory roam_from_control_points(std::span<const Vec2> control_points, const RoamSpec& spec) {
  if (control_points.size() < 4) throw ValidationError("num_control_points", "must be >= 4");
  const double speed = spec.segment_arc_length / (spec.constraints.segment_len - 1);
  Trajectory traj = sample_curve(ClampedSpline(control_points), spec.seed, spec.num_frames, speed, spec.fov,
                                 spec.yaw_smoothing_window, false);
  traj.segment_len = spec.constraints.segment_len;
  return traj;
}

Trajectory generate_roam(const RoamSpec& spec) {
  spec.validate();
  for (int attempt = 0; attempt < spec.max_attempts; ++attempt) {
    Rng rng = Rng::keyed(spec.seed, static_cast<std::uint64_t>(attempt));
    const auto pts = random_walk_points(spec, rng);
    if (pts.empty()) continue;
    try {
      Trajectory traj = roam_from_control_points(pts, spec);
      if (check_constraints(traj, spec.constraints).pass) return traj;
    } catch (const ConstraintUnsatisfiable&) {
      // spline too short for this draw; resample
    }
  }
  throw ConstraintUnsatisfiable("no roam satisfying the segment constraints after " +
                                std::to_string(spec.max_attempts) + " attempts");
}

Trajectory generate_loop_roam(const LoopSpec& spec) {
  if (spec.num_control_points < 4) throw ValidationError("num_control_points", "must be >= 4");
  if (!(spec.radius > spec.radial_jitter && spec.radial_jitter >= 0.0)) {
    throw ValidationError("radius", "must exceed radial_jitter");
  }
  if (!(spec.laps > 0.0)) throw ValidationError("laps", "must be > 0");
  Rng rng(spec.seed);
  std::vector<Vec2> pts;
  for (int i = 0; i < spec.num_control_points; ++i) {
    const double angle = 2.0 * kPi * i / spec.num_control_points;
    const double r = spec.radius + rng.uniform(-spec.radial_jitter, spec.radial_jitter);
    pts.push_back(spec.center + r * unit_from_angle(angle));
  }
  const PeriodicSpline curve(pts);
  const ArcTable table([&](double u) { return curve.eval(u); }, curve.domain_end(), curve.spans());
  const double speed = spec.segment_arc_length / (kSegmentLen - 1);
  const int frames = static_cast<int>(std::floor(spec.laps * table.length() / speed)) + 1;
  return sample_curve(curve, spec.seed, frames, speed, spec.fov, spec.yaw_smoothing_window, true);
}

Trajectory rotate_and_return(const CameraPose& start, double degrees, int num_frames) {
  if (num_frames < 2 || num_frames % 2 != 0) throw ValidationError("num_frames", "must be even and >= 2");
  const int half = num_frames / 2;
  const double sweep = deg_to_rad(degrees);
  Trajectory traj;
  traj.frames.reserve(static_cast<std::size_t>(num_frames));
  for (int i = 0; i < num_frames; ++i) {
    double frac;
    if (i <= half) {
      frac = static_cast<double>(i) / half;
    } else {
      frac = static_cast<double>(num_frames - 1 - i) / (num_frames - 1 - half);
    }
    const CameraPose pose = frac == 0.0 ? start : start.with_yaw(start.yaw() + sweep * frac);
    traj.frames.push_back({i, pose});
  }
  return traj;
}

void write_trajectory_jsonl(std::ostream& out, const Trajectory& traj) {
  out << "{\"fps\":" << traj.fps << ",\"segment_len\":" << traj.segment_len << ",\"seed\":" << traj.seed << "}\n";
  for (const auto& f : traj.frames) {
    out << "{\"t\":" << f.time_index << ",\"x\":" << format_double(f.pose.x())
        << ",\"y\":" << format_double(f.pose.y()) << ",\"yaw\":" << format_double(f.pose.yaw())
        << ",\"fov\":" << format_double(f.pose.fov()) << "}\n";
  }
}

Trajectory read_trajectory_jsonl(std::istream& in) {
  Trajectory traj;
  std::string line;
  std::uint64_t offset = 0;
  bool header = true;
  while (std::getline(in, line)) {
    const std::uint64_t line_offset = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (header) {
        traj.fps = j.at("fps").get<int>();
        traj.segment_len = j.at("segment_len").get<int>();
        traj.seed = j.at("seed").get<std::uint64_t>();
        header = false;
        continue;
      }
      const std::int64_t t = j.at("t").get<std::int64_t>();
      if (!traj.frames.empty() && t <= traj.frames.back().time_index) {
        throw CorruptFile(line_offset, "time index " + std::to_string(t) + " is not increasing");
      }
      traj.frames.push_back({t, CameraPose(j.at("x").get<double>(), j.at("y").get<double>(),
                                           j.at("yaw").get<double>(), j.at("fov").get<double>())});
    } catch (const CorruptFile&) {
      throw;
    } catch (const std::exception& e) {
      throw CorruptFile(line_offset, e.what());
    }
  }
  if (header) throw CorruptFile(offset, "missing trajectory header");
  return traj;
}

void save_trajectory(const std::filesystem::path& path, const Trajectory& traj) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  write_trajectory_jsonl(out, traj);
  if (!out) throw Error("failed writing " + path.string());
}

Trajectory load_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return read_trajectory_jsonl(in);
}

}  // namespace ctxmem

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctxmem/errors.hpp"
#include "ctxmem/eval.hpp"
#include "ctxmem/gateway.hpp"
#include "ctxmem/server.hpp"
#include "ctxmem/text_io.hpp"
#include "ctxmem/trajectory.hpp"
#include "ctxmem/world.hpp"

using nlohmann::json;
using namespace ctxmem;

namespace {

json load_config_file(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open config file " + path);
  try {
    json j = json::parse(in);
    if (!j.is_object()) throw ValidationError("config", "top level must be an object");
    return j;
  } catch (const json::parse_error& e) {
    throw ValidationError("config", e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
    return;
  }
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  out << text;
}

// Flags shared by commands that build an OverlapConfig / RetrievalConfig.
struct CommonFlags {
  std::string config_path;
  double d_min = 0.0;
  double d_max = 0.0;
  std::string pairing;
  std::string forward;
  int k = 0;
  int far_slots = 0;
  double time_scale = 0.0;
  std::uint64_t seed = 0;
  CLI::Option* d_min_opt = nullptr;
  CLI::Option* d_max_opt = nullptr;
  CLI::Option* pairing_opt = nullptr;
  CLI::Option* forward_opt = nullptr;
  CLI::Option* k_opt = nullptr;
  CLI::Option* far_opt = nullptr;
  CLI::Option* tau_opt = nullptr;
  CLI::Option* seed_opt = nullptr;

  void add(CLI::App* app, bool retrieval) {
    app->add_option("--config", config_path, "JSON config file (flags override it)");
    d_min_opt = app->add_option("--d-min", d_min, "near distance cutoff in metres");
    d_max_opt = app->add_option("--d-max", d_max, "far distance cutoff in metres");
    pairing_opt = app->add_option("--pairing", pairing, "ray pairing: cross or same");
    forward_opt = app->add_option("--forward", forward, "forward rule: both or either");
    seed_opt = app->add_option("--seed", seed, "random seed");
    if (retrieval) {
      k_opt = app->add_option("--k", k, "context size");
      far_opt = app->add_option("--far-slots", far_slots, "far-space-time slots");
      tau_opt = app->add_option("--time-scale", time_scale, "seconds of separation worth one metre");
    }
  }

  // defaults < config file < flags
  void resolve(const json& file, OverlapConfig& overlap, RetrievalConfig& retrieval) const {
    if (file.contains("overlap")) apply_overlap_json(file.at("overlap"), overlap);
    if (file.contains("retrieval")) apply_retrieval_json(file.at("retrieval"), retrieval);
    json o = json::object();
    if (d_min_opt->count()) o["d_min"] = d_min;
    if (d_max_opt->count()) o["d_max"] = d_max;
    if (pairing_opt->count()) o["pairing"] = pairing;
    if (forward_opt->count()) o["forward"] = forward;
    apply_overlap_json(o, overlap);
    json r = json::object();
    if (k_opt && k_opt->count()) r["k"] = k;
    if (far_opt && far_opt->count()) r["far_slots"] = far_slots;
    if (tau_opt && tau_opt->count()) r["time_scale"] = time_scale;
    if (seed_opt->count()) r["seed"] = seed;
    apply_retrieval_json(r, retrieval);
  }
};

std::atomic<GatewayServer*> g_server{nullptr};

extern "C" void handle_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ctxmem: FOV-based memory retrieval engine and steering simulator"};
  app.require_subcommand(1);

  // worldgen
  auto* worldgen = app.add_subcommand("worldgen", "generate a procedural world (JSON)");
  WorldSpec wspec;
  std::vector<double> wbounds;
  std::string world_out;
  worldgen->add_option("--seed", wspec.seed, "world seed");
  worldgen->add_option("--density", wspec.density, "landmarks per 100 m^2");
  worldgen->add_option("--occluders", wspec.occluder_count, "number of occluder segments");
  worldgen->add_option("--bounds", wbounds, "min_x min_y max_x max_y")->expected(4);
  worldgen->add_option("-o,--out", world_out, "output file (default stdout)");

  // trajgen
  auto* trajgen = app.add_subcommand("trajgen", "generate a camera trajectory (JSONL)");
  std::string traj_kind = "roam";
  int traj_frames = 1001;
  std::uint64_t traj_seed = 0;
  double traj_degrees = 180.0;
  double laps = 2.0;
  std::vector<double> traj_bounds;
  std::vector<double> traj_start;
  std::string traj_out;
  trajgen->add_option("--kind", traj_kind, "roam, loop or rotate")->check(CLI::IsMember({"roam", "loop", "rotate"}));
  auto* traj_frames_opt = trajgen->add_option("--frames", traj_frames, "frame count (roam 1001, rotate 616)");
  trajgen->add_option("--seed", traj_seed, "trajectory seed");
  trajgen->add_option("--degrees", traj_degrees, "sweep for rotate");
  trajgen->add_option("--laps", laps, "laps for loop");
  trajgen->add_option("--bounds", traj_bounds, "roam bounds min_x min_y max_x max_y")->expected(4);
  trajgen->add_option("--start", traj_start, "x y yaw_deg (rotate) or centre x y (loop)")->expected(2, 3);
  trajgen->add_option("-o,--out", traj_out, "output file (default stdout)");

  // check-traj
  auto* check = app.add_subcommand("check-traj", "check per-segment motion limits of a trajectory");
  std::string check_path;
  check->add_option("trajectory", check_path, "trajectory JSONL")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "compare retrieval strategies on seeded fixtures");
  CommonFlags eval_flags;
  eval_flags.add(eval, true);
  std::vector<std::string> eval_strategies;
  std::vector<std::uint64_t> eval_seeds;
  int eval_worlds = 5;
  std::uint64_t eval_world_seed = 7;
  std::string eval_format = "table";
  std::string eval_out;
  std::string eval_csv;
  bool eval_timing = false;
  eval->add_option("--strategy", eval_strategies, "strategies to compare (default all)")->delimiter(',');
  eval->add_option("--seeds", eval_seeds, "retrieval seeds (default: --seed, else 7)")->delimiter(',');
  eval->add_option("--worlds", eval_worlds, "number of fixture worlds");
  eval->add_option("--world-seed", eval_world_seed, "first fixture world seed");
  eval->add_option("--format", eval_format, "table or json")->check(CLI::IsMember({"table", "json"}));
  eval->add_option("-o,--out", eval_out, "report file (default stdout)");
  eval->add_option("--csv", eval_csv, "per-segment series CSV file");
  eval->add_flag("--timing", eval_timing, "measure retrieval latency (report no longer reproducible)");

  // bench
  auto* bench = app.add_subcommand("bench", "naive vs grid-pruned retrieval benchmark");
  CommonFlags bench_flags;
  bench_flags.add(bench, false);
  BenchConfig bcfg;
  std::string bench_layout = "uniform";
  bench->add_option("--frames", bcfg.frames, "stored frames (>= 100)");
  bench->add_option("--queries", bcfg.queries, "query count");
  bench->add_option("--world-size", bcfg.world_size, "side of the square world in metres");
  bench->add_option("--layout", bench_layout, "uniform or single-cell")->check(CLI::IsMember({"uniform", "single-cell"}));

  // serve
  auto* serve = app.add_subcommand("serve", "run the HTTP/JSON steering gateway");
  std::string serve_config;
  std::string serve_host;
  int serve_port = -1;
  std::string serve_log;
  std::string serve_log_dir;
  serve->add_option("--config", serve_config, "JSON config file with a \"server\" object");
  serve->add_option("--host", serve_host, "bind address (env CTXMEM_BIND)");
  serve->add_option("--port", serve_port, "port, 0 for any (env CTXMEM_PORT)");
  serve->add_option("--log-level", serve_log, "error, warn, info, debug (env CTXMEM_LOG_LEVEL)");
  serve->add_option("--step-log-dir", serve_log_dir, "keep replayable step logs here (env CTXMEM_STEP_LOG_DIR)");

  // session-replay
  auto* replay = app.add_subcommand("session-replay", "replay a recorded step log deterministically");
  std::string replay_path;
  bool replay_results = false;
  replay->add_option("log", replay_path, "step log JSONL")->required();
  replay->add_flag("--results", replay_results, "print every StepResult before the final state");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*worldgen) {
      if (!wbounds.empty()) wspec.bounds = {wbounds[0], wbounds[1], wbounds[2], wbounds[3]};
      write_text(world_out, dump_json(world_to_json(generate_world(wspec))) + "\n");
      return 0;
    }
    if (*trajgen) {
      Trajectory traj;
      if (traj_kind == "roam") {
        RoamSpec spec;
        spec.num_frames = traj_frames;
        spec.seed = traj_seed;
        if (!traj_bounds.empty()) spec.bounds = {traj_bounds[0], traj_bounds[1], traj_bounds[2], traj_bounds[3]};
        traj = generate_roam(spec);
      } else if (traj_kind == "loop") {
        LoopSpec spec;
        spec.seed = traj_seed;
        spec.laps = laps;
        if (traj_start.size() >= 2) spec.center = {traj_start[0], traj_start[1]};
        traj = generate_loop_roam(spec);
      } else {
        CameraPose start;
        if (traj_start.size() >= 2) {
          start = CameraPose(traj_start[0], traj_start[1], traj_start.size() > 2 ? deg_to_rad(traj_start[2]) : 0.0);
        }
        traj = rotate_and_return(start, traj_degrees, traj_frames_opt->count() ? traj_frames : 616);
        traj.seed = traj_seed;
      }
      std::ostringstream out;
      write_trajectory_jsonl(out, traj);
      write_text(traj_out, out.str());
      return 0;
    }
    if (*check) {
      const auto report = check_constraints(load_trajectory(check_path));
      json segs = json::array();
      for (const auto& s : report.segments) {
        segs.push_back({{"first_frame", s.first_frame},
                        {"last_frame", s.last_frame},
                        {"displacement", s.displacement},
                        {"net_yaw_deg", s.net_yaw_deg},
                        {"cumulative_yaw_deg", s.cumulative_yaw_deg},
                        {"pass", s.pass}});
      }
      std::cout << dump_json({{"pass", report.pass}, {"segments", std::move(segs)}}) << "\n";
      return report.pass ? 0 : 1;
    }
    if (*eval) {
      const json file = load_config_file(eval_flags.config_path);
      EvalConfig cfg;
      eval_flags.resolve(file, cfg.overlap, cfg.retrieval);
      if (file.contains("eval")) {
        const auto& e = file.at("eval");
        if (!eval->get_option("--worlds")->count()) eval_worlds = e.value("worlds", eval_worlds);
        if (!eval->get_option("--world-seed")->count()) eval_world_seed = e.value("world_seed", eval_world_seed);
        if (eval_strategies.empty()) eval_strategies = e.value("strategies", std::vector<std::string>{});
        if (eval_seeds.empty()) eval_seeds = e.value("seeds", std::vector<std::uint64_t>{});
      }
      if (!eval_strategies.empty()) {
        cfg.strategies.clear();
        for (const auto& s : eval_strategies) cfg.strategies.push_back(parse_strategy(s));
      }
      if (!eval_seeds.empty()) {
        cfg.seeds = eval_seeds;
      } else if (eval_flags.seed_opt->count()) {
        cfg.seeds = {cfg.retrieval.seed};
      }
      cfg.timing = eval_timing;
      cfg.keep_series = !eval_csv.empty();
      if (eval_worlds < 1) throw ValidationError("worlds", "must be >= 1");
      cfg.validate();
      const auto fixtures = standard_fixtures(eval_world_seed, eval_worlds);
      auto report = compare_strategies(fixtures, cfg);
      report.metadata["world_seed"] = eval_world_seed;
      report.metadata["worlds"] = eval_worlds;
      if (eval_format == "json") {
        write_text(eval_out, dump_json(report_to_json(report)) + "\n");
      } else {
        write_text(eval_out, "# effective config: " + dump_json(report.metadata) + "\n" + report_table(report));
      }
      if (!eval_csv.empty()) write_text(eval_csv, report_csv(report));
      return 0;
    }
    if (*bench) {
      const json file = load_config_file(bench_flags.config_path);
      RetrievalConfig unused;
      bench_flags.resolve(file, bcfg.overlap, unused);
      if (bench_flags.seed_opt->count()) bcfg.seed = bench_flags.seed;
      bcfg.layout = bench_layout == "uniform" ? BenchLayout::Uniform : BenchLayout::SingleCell;
      const auto r = bench_retrieval(bcfg);
      json out = bench_to_json(r);
      out["config"] = {{"overlap", to_json(bcfg.overlap)},
                       {"layout", bench_layout},
                       {"world_size", bcfg.world_size},
                       {"seed", bcfg.seed}};
      std::cout << dump_json(out) << "\n";
      return r.edges_identical && r.queries_identical ? 0 : 1;
    }
    if (*serve) {
      // defaults < config file < environment < flags
      ServerOptions opts;
      const json file = load_config_file(serve_config);
      if (file.contains("server")) {
        const auto& s = file.at("server");
        opts.host = s.value("host", opts.host);
        opts.port = s.value("port", opts.port);
        if (s.contains("log_level")) opts.log_level = parse_log_level(s.at("log_level").get<std::string>());
        if (s.contains("step_log_dir")) opts.step_log_dir = s.at("step_log_dir").get<std::string>();
      }
      opts = server_options_from_env(opts);
      if (!serve_host.empty()) opts.host = serve_host;
      if (serve_port >= 0) opts.port = serve_port;
      if (!serve_log.empty()) opts.log_level = parse_log_level(serve_log);
      if (!serve_log_dir.empty()) opts.step_log_dir = serve_log_dir;
      auto sessions = std::make_shared<SessionManager>();
      GatewayServer server(sessions, opts);
      g_server = &server;
      std::signal(SIGINT, handle_signal);
      std::signal(SIGTERM, handle_signal);
      std::cerr << "effective config: "
                << dump_json({{"host", opts.host}, {"port", opts.port}, {"log_level", to_string(opts.log_level)},
                              {"step_log_dir", opts.step_log_dir.string()}})
                << "\n";
      server.run();
      g_server = nullptr;
      sessions->close_all();
      return 0;
    }
    if (*replay) {
      const auto out = replay_step_log_file(replay_path);
      if (replay_results) {
        for (const auto& r : out.results) std::cout << dump_json(r) << "\n";
      }
      std::cout << dump_json(out.final_state) << "\n";
      return 0;
    }
  } catch (const ValidationError& e) {
    std::cerr << "invalid " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

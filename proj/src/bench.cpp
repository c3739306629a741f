#include "cslam/bench.hpp"

#include "cslam/errors.hpp"

#include <json.hpp>

#include <array>
#include <limits>
#include <memory>
#include <variant>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace cslam {

const char* to_string(RunMode mode) {
  switch (mode) {
    case RunMode::Baseline:
      return "baseline";
    case RunMode::Temporal:
      return "temporal";
    case RunMode::Spatial:
      return "spatial";
  }
  return "unknown";
}

void RunConfig::validate() const {
  if (mode == RunMode::Baseline && (sparsify || early_lc)) {
    throw ConfigError("baseline mode cannot be combined with sparsification or early loop closure");
  }
  if (separator_budget < 1) throw ConfigError("separator size must be at least 1");
  if (schedule.poses_per_tick < 1 || !(schedule.tick_interval > 0.0)) throw ConfigError("replay schedule must be positive");
  channel.validate();
}

std::string RunConfig::label() const {
  std::string s = to_string(mode);
  if (sparsify) s += "+s";
  if (early_lc) s += "+lc";
  return s;
}

SolverConfig PseudoGroundTruth::default_solver() {
  SolverConfig s;
  s.max_iterations = 50;
  s.relative_error_decrease_tol = 1e-10;
  s.absolute_error_tol = 1e-12;
  return s;
}

namespace {

Pose2 dead_reckon(const Estimates& est, const SensorBatch& batch, VariableKey k) {
  const VariableKey prev{k.id - 1};
  if (est.contains(prev)) {
    for (const Factor& f : batch.factors) {
      if (f.kind() == FactorKind::Between && f.keys()[0] == prev && f.keys()[1] == k) {
        return compose(est.at(prev), f.measurement());
      }
    }
  }
  return batch.initial_estimates.at(k);
}

}  // namespace

PseudoGroundTruth::PseudoGroundTruth(const std::vector<SensorBatch>& batches, const SolverConfig& solver) {
  FactorGraph graph;
  Estimates est;
  per_step_.reserve(batches.size());
  for (const SensorBatch& b : batches) {
    for (VariableKey k : b.new_keys) {
      graph.add_variable(k);
      est.set(k, dead_reckon(est, b, k));
    }
    for (const Factor& f : b.factors) graph.add_factor(f);
    est = optimize(graph, est, solver).estimates;
    per_step_.push_back(est);
  }
}

Estimates pseudo_ground_truth(const std::vector<SensorBatch>& batches, std::size_t upto_step) {
  if (upto_step >= batches.size()) throw std::out_of_range("pseudo ground truth step out of range");
  const std::vector<SensorBatch> prefix(batches.begin(), batches.begin() + static_cast<std::ptrdiff_t>(upto_step) + 1);
  return PseudoGroundTruth(prefix).at(upto_step);
}

std::pair<double, double> step_error(const Estimates& client_est, const Estimates& gt_est, VariableKey key) {
  if (!client_est.contains(key) || !gt_est.contains(key)) {
    throw MissingKey("variable " + std::to_string(key.id) + " missing from an estimate set");
  }
  const Pose2& a = client_est.at(key);
  const Pose2& b = gt_est.at(key);
  return {(a.translation() - b.translation()).norm(), std::abs(angle_diff(a.theta(), b.theta()))};
}

ServerConfig server_config(const RunConfig& cfg) {
  ServerConfig s;
  s.separators.budget = cfg.separator_budget;
  s.separators.mode = cfg.mode == RunMode::Spatial ? SeparatorMode::Spatial : SeparatorMode::Temporal;
  s.baseline = cfg.mode == RunMode::Baseline;
  s.sparsify = cfg.sparsify;
  s.early_lc = cfg.early_lc;
  return s;
}

ClientConfig client_config(const RunConfig& cfg) {
  ClientConfig c;
  c.baseline = cfg.mode == RunMode::Baseline;
  c.early_lc = cfg.early_lc;
  c.budget = cfg.separator_budget;
  return c;
}

namespace {

PoseGraphDataset load_dataset(const RunConfig& cfg) {
  const std::string spec = cfg.dataset.string();
  if (spec.rfind("grid:", 0) == 0) {
    // grid:ROWSxCOLS[:P]
    int rows = 0;
    int cols = 0;
    double p = 0.3;
    char x = 0;
    char colon = 0;
    std::istringstream in(spec.substr(5));
    in >> rows >> x >> cols;
    if (!in || x != 'x') throw ConfigError("grid dataset must look like grid:ROWSxCOLS[:P]");
    if (in >> colon && (colon != ':' || !(in >> p))) throw ConfigError("grid dataset must look like grid:ROWSxCOLS[:P]");
    return generate_grid_world(rows, cols, p, {}, cfg.seed);
  }
  if (!std::filesystem::exists(cfg.dataset)) throw ConfigError("dataset not found: " + spec);
  return load_g2o(cfg.dataset);
}

class CoSimulation {
public:
  CoSimulation(const RunConfig& cfg, const std::vector<SensorBatch>& batches, const PseudoGroundTruth& gt)
      : cfg_(cfg),
        batches_(batches),
        gt_(gt),
        server_(server_config(cfg)),
        client_(client_config(cfg)),
        up_(to_sim_time(cfg.channel.t_s)),
        down_(to_sim_time(cfg.channel.t_r)) {}

  RunResult run() {
    for (const SensorBatch& b : batches_) {
      sched_.schedule(b.time, EventKind::SensorTick, [this, &b](SimTime now) { on_tick(b, now); },
                      "batch " + std::to_string(b.index));
    }
    while (!sched_.empty()) sched_.run_until(std::numeric_limits<SimTime>::max());
    result_.events = sched_.log();
    result_.final_client_estimates = client_.estimates();
    summarize();
    return std::move(result_);
  }

private:
  void after_event() {
    if (cfg_.check_invariants) client_.check_invariants();
  }

  void on_tick(const SensorBatch& b, SimTime now) {
    const Estimates& est = client_.ingest_sensor_batch(b);
    after_event();
    record_step(b, est, now);
    sched_.schedule(up_.delivery_time(now), EventKind::DeliverToServer,
                    [this, &b](SimTime t) {
                      sched_.schedule(t + to_sim_time(cfg_.channel.t_f), EventKind::ServerFrontEndDone,
                                      [this, &b](SimTime t2) { on_front_end(b, t2); }, "batch " + std::to_string(b.index));
                    },
                    "batch " + std::to_string(b.index));
  }

  void on_front_end(const SensorBatch& b, SimTime now) {
    server_.ingest_sensor_batch(b);
    if (auto elc = server_.detect_and_emit_early_lc(now)) {
      const SimTime at = down_.delivery_time(now);
      result_.elc.push_back({b.index, b.time, now, at});
      ++result_.summary.elc_messages;
      result_.summary.elc_floats += elc->float_count();
      auto msg = std::make_shared<EarlyLoopClosureMessage>(std::move(*elc));
      sched_.schedule(at, EventKind::DeliverToClient,
                      [this, msg](SimTime) {
                        client_.apply_early_loop_closure(*msg);
                        after_event();
                      },
                      "early_lc batch " + std::to_string(b.index));
    }
    if (!backend_busy_) start_cycle(now);
  }

  void start_cycle(SimTime now) {
    backend_busy_ = true;
    CycleResult res = server_.run_update_cycle(now);
    tb_wall_.push_back(res.wall_seconds);
    const double tb = cfg_.channel.tb_mode == TbMode::Constant ? cfg_.channel.tb_constant : res.wall_seconds;
    const SimTime done = now + to_sim_time(tb);
    auto msg = std::make_shared<ServerMessage>(std::move(res.message));
    sched_.schedule(done, EventKind::ServerCycleDone, [this, msg, now, tb](SimTime t) { on_cycle_done(msg, now, tb, t); },
                    "cycle");
  }

  void on_cycle_done(const std::shared_ptr<ServerMessage>& msg, SimTime snapshot, double tb, SimTime now) {
    server_.commit_cycle();
    last_tb_ = tb;
    tb_timeline_.push_back(tb);
    const SimTime at = down_.delivery_time(now);
    SummaryTiming timing;
    timing.snapshot_time = snapshot;
    timing.release_time = now;
    timing.delivery_time = at;
    std::visit(
        [&](const auto& m) {
          timing.snapshot_batch = m.snapshot_batch;
          timing.floats = m.float_count();
        },
        *msg);
    const std::size_t index = result_.summaries.size();
    result_.summaries.push_back(timing);
    sched_.schedule(at, EventKind::DeliverToClient, [this, msg, index](SimTime) { on_summary(*msg, index); },
                    "summary batch " + std::to_string(timing.snapshot_batch));
    backend_busy_ = false;
    if (server_.has_cached_batches()) start_cycle(now);
  }

  void on_summary(const ServerMessage& msg, std::size_t index) {
    floats_received_ += result_.summaries[index].floats;
    ++result_.summary.messages;
    summary_arrived_ = true;
    if (const auto* s = std::get_if<SummaryMessage>(&msg)) {
      try {
        client_.apply_summary(*s);
      } catch (const SummaryRejected&) {
        result_.summaries[index].rejected = true;
        ++result_.summary.rejected_summaries;
      }
    } else {
      client_.apply_baseline_reset(std::get<BaselinePoseMessage>(msg));
    }
    after_event();
  }

  void record_step(const SensorBatch& b, const Estimates& est, SimTime now) {
    const Estimates& gt = gt_.at(static_cast<std::size_t>(b.index));
    StepRecord r;
    r.step = b.index;
    r.time = to_seconds(now);
    const auto [te, re] = step_error(est, gt, b.new_keys.back());
    r.trans_err = te;
    r.rot_err = re;
    r.msg_floats_cum = floats_received_;
    r.tb = last_tb_;
    double wt = 0.0;
    double wr = 0.0;
    for (const auto& [k, p] : est) {
      const auto [t, a] = step_error(est, gt, k);
      wt += t;
      wr += a;
    }
    r.window_trans_err = wt / static_cast<double>(est.size());
    r.window_rot_err = wr / static_cast<double>(est.size());
    if (summary_arrived_ && result_.summary.first_summary_step < 0) result_.summary.first_summary_step = b.index;
    result_.steps.push_back(r);
  }

  void summarize() {
    RunSummary& s = result_.summary;
    s.steps = result_.steps.size();
    s.fixed_lag_marginalizations = client_.fixed_lag_marginalizations();
    auto mean = [](const std::vector<double>& v) {
      return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    std::vector<double> te, re, te_all, re_all, wt, wr;
    for (const StepRecord& r : result_.steps) {
      te_all.push_back(r.trans_err);
      re_all.push_back(r.rot_err);
      wt.push_back(r.window_trans_err);
      wr.push_back(r.window_rot_err);
      if (s.first_summary_step >= 0 && r.step >= s.first_summary_step) {
        te.push_back(r.trans_err);
        re.push_back(r.rot_err);
      }
    }
    s.mean_trans_err = mean(te);
    s.mean_rot_err = mean(re);
    s.mean_trans_err_all = mean(te_all);
    s.mean_rot_err_all = mean(re_all);
    s.mean_window_trans_err = mean(wt);
    s.mean_window_rot_err = mean(wr);
    s.mean_tb = mean(tb_timeline_);
    s.mean_tb_wall = mean(tb_wall_);
    s.total_floats = floats_received_;
    s.floats_per_message = s.messages == 0 ? 0.0 : static_cast<double>(floats_received_) / static_cast<double>(s.messages);
  }

  const RunConfig& cfg_;
  const std::vector<SensorBatch>& batches_;
  const PseudoGroundTruth& gt_;
  ServerNode server_;
  ClientNode client_;
  Scheduler sched_;
  Link up_;
  Link down_;
  bool backend_busy_ = false;
  bool summary_arrived_ = false;
  double last_tb_ = 0.0;
  std::size_t floats_received_ = 0;
  std::vector<double> tb_timeline_;
  std::vector<double> tb_wall_;
  RunResult result_;
};

void append_number(std::string& out, double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  out.append(buf.data(), ptr);
}

nlohmann::json config_json(const RunConfig& cfg) {
  return {{"dataset", cfg.dataset.string()},
          {"mode", to_string(cfg.mode)},
          {"sparsify", cfg.sparsify},
          {"early_lc", cfg.early_lc},
          {"separator_size", cfg.separator_budget},
          {"tick_s", cfg.schedule.tick_interval},
          {"poses_per_tick", cfg.schedule.poses_per_tick},
          {"delay_up_s", cfg.channel.t_s},
          {"delay_down_s", cfg.channel.t_r},
          {"frontend_s", cfg.channel.t_f},
          {"tb_mode", cfg.channel.tb_mode == TbMode::Constant ? "constant" : "measured"},
          {"tb_constant_s", cfg.channel.tb_constant},
          {"seed", cfg.seed}};
}

nlohmann::json summary_json(const RunSummary& s) {
  return {{"mean_trans_err", s.mean_trans_err},
          {"mean_rot_err", s.mean_rot_err},
          {"mean_trans_err_all_steps", s.mean_trans_err_all},
          {"mean_rot_err_all_steps", s.mean_rot_err_all},
          {"mean_window_trans_err", s.mean_window_trans_err},
          {"mean_window_rot_err", s.mean_window_rot_err},
          {"mean_tb", s.mean_tb},
          {"mean_tb_wall", s.mean_tb_wall},
          {"total_floats", s.total_floats},
          {"messages", s.messages},
          {"floats_per_message", s.floats_per_message},
          {"elc_messages", s.elc_messages},
          {"elc_floats", s.elc_floats},
          {"rejected_summaries", s.rejected_summaries},
          {"fixed_lag_marginalizations", s.fixed_lag_marginalizations},
          {"first_summary_step", s.first_summary_step},
          {"steps", s.steps},
          {"averaging", "mean_trans_err and mean_rot_err average steps from first_summary_step on"}};
}

}  // namespace

RunResult run_benchmark(const RunConfig& cfg, const std::vector<SensorBatch>& batches, const PseudoGroundTruth& gt) {
  cfg.validate();
  if (gt.steps() != batches.size()) throw ConfigError("pseudo ground truth does not match the batch list");
  RunResult result = CoSimulation(cfg, batches, gt).run();
  if (cfg.out_dir) {
    std::filesystem::create_directories(*cfg.out_dir);
    write_steps_csv(*cfg.out_dir / "steps.csv", result.steps);
    write_summary_json(*cfg.out_dir / "summary.json", cfg, result.summary);
  }
  return result;
}

RunResult run_benchmark(const RunConfig& cfg) {
  cfg.validate();
  const std::vector<SensorBatch> batches = make_batches(load_dataset(cfg), cfg.schedule);
  const PseudoGroundTruth gt(batches);
  return run_benchmark(cfg, batches, gt);
}

void write_steps_csv(const std::filesystem::path& path, const std::vector<StepRecord>& steps) {
  std::string out = "step,time,trans_err,rot_err,msg_floats_cum,tb\n";
  for (const StepRecord& r : steps) {
    out += std::to_string(r.step);
    for (double v : {r.time, r.trans_err, r.rot_err}) {
      out += ',';
      append_number(out, v);
    }
    out += ',';
    out += std::to_string(r.msg_floats_cum);
    out += ',';
    append_number(out, r.tb);
    out += '\n';
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << out;
}

void write_summary_json(const std::filesystem::path& path, const RunConfig& cfg, const RunSummary& summary) {
  nlohmann::json j = summary_json(summary);
  j["config"] = config_json(cfg);
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

std::vector<RunConfig> matrix_configs(MatrixKind kind, const RunConfig& base) {
  auto make = [&](RunMode mode, bool s, bool lc, int budget) {
    RunConfig c = base;
    c.mode = mode;
    c.sparsify = s;
    c.early_lc = lc;
    c.separator_budget = budget;
    return c;
  };
  std::vector<RunConfig> out;
  if (kind == MatrixKind::Table1) {
    const int b = base.separator_budget;
    out.push_back(make(RunMode::Baseline, false, false, b));
    out.push_back(make(RunMode::Temporal, false, false, b));
    out.push_back(make(RunMode::Spatial, false, false, b));
    out.push_back(make(RunMode::Temporal, true, false, b));
    out.push_back(make(RunMode::Temporal, false, true, b));
    out.push_back(make(RunMode::Temporal, true, true, b));
    out.push_back(make(RunMode::Spatial, true, true, b));
  } else {
    for (int b : {100, 200, 300, 400, 500}) {
      out.push_back(make(RunMode::Temporal, false, false, b));
      out.push_back(make(RunMode::Temporal, true, false, b));
      out.push_back(make(RunMode::Temporal, false, true, b));
      out.push_back(make(RunMode::Temporal, true, true, b));
    }
  }
  return out;
}

std::vector<MatrixEntry> run_matrix(MatrixKind kind, const RunConfig& base) {
  base.validate();
  const std::vector<SensorBatch> batches = make_batches(load_dataset(base), base.schedule);
  const PseudoGroundTruth gt(batches);
  std::vector<MatrixEntry> out;
  nlohmann::json combined = nlohmann::json::array();
  for (RunConfig cfg : matrix_configs(kind, base)) {
    const std::string name = cfg.label() + "_" + std::to_string(cfg.separator_budget);
    if (base.out_dir) cfg.out_dir = *base.out_dir / name;
    RunResult r = run_benchmark(cfg, batches, gt);
    nlohmann::json entry = summary_json(r.summary);
    entry["name"] = name;
    entry["config"] = config_json(cfg);
    combined.push_back(entry);
    out.push_back({cfg, r.summary});
  }
  if (base.out_dir) {
    std::filesystem::create_directories(*base.out_dir);
    std::ofstream f(*base.out_dir / (kind == MatrixKind::Table1 ? "table1_summary.json" : "sweep_summary.json"));
    f << combined.dump(2) << '\n';
  }
  return out;
}

}  // namespace cslam

#pragma once

#include "cslam/client.hpp"
#include "cslam/dataset.hpp"
#include "cslam/server.hpp"
#include "cslam/sim_channel.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace cslam {

enum class RunMode { Baseline, Temporal, Spatial };

const char* to_string(RunMode mode);

struct RunConfig {
  std::filesystem::path dataset;
  RunMode mode = RunMode::Temporal;
  bool sparsify = false;
  bool early_lc = false;
  int separator_budget = 300;
  ChannelConfig channel;
  ReplaySchedule schedule;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> out_dir;
  /// Check device invariants after every event (throws on violation).
  bool check_invariants = false;

  /// Throws ConfigError on forbidden or out-of-range settings.
  void validate() const;
  /// Short name such as "temporal+s+lc".
  std::string label() const;
};

struct StepRecord {
  std::int64_t step = 0;
  double time = 0.0;
  double trans_err = 0.0;
  double rot_err = 0.0;
  std::size_t msg_floats_cum = 0;
  double tb = 0.0;
  /// Mean errors over every variable the device holds.
  double window_trans_err = 0.0;
  double window_rot_err = 0.0;
};

struct RunSummary {
  /// Means over steps from the first summary arrival on.
  double mean_trans_err = 0.0;
  double mean_rot_err = 0.0;
  /// Means over every step.
  double mean_trans_err_all = 0.0;
  double mean_rot_err_all = 0.0;
  double mean_window_trans_err = 0.0;
  double mean_window_rot_err = 0.0;
  /// Back-end time as it entered the timeline, and as measured on the wall clock.
  double mean_tb = 0.0;
  double mean_tb_wall = 0.0;
  std::size_t total_floats = 0;
  std::size_t messages = 0;
  double floats_per_message = 0.0;
  std::size_t elc_messages = 0;
  std::size_t elc_floats = 0;
  std::size_t rejected_summaries = 0;
  std::size_t fixed_lag_marginalizations = 0;
  std::int64_t first_summary_step = -1;
  std::size_t steps = 0;
};

struct ElcTiming {
  std::int64_t batch_index = 0;
  SimTime sensor_time = 0;
  SimTime detection_time = 0;
  SimTime delivery_time = 0;
};

struct SummaryTiming {
  std::int64_t snapshot_batch = -1;
  SimTime snapshot_time = 0;
  SimTime release_time = 0;
  SimTime delivery_time = 0;
  std::size_t floats = 0;
  bool rejected = false;
};

struct RunResult {
  std::vector<StepRecord> steps;
  RunSummary summary;
  std::vector<ElcTiming> elc;
  std::vector<SummaryTiming> summaries;
  std::vector<LogEntry> events;
  Estimates final_client_estimates;
};

/**
 * @brief Batch solutions over everything available at each replay step.
 *
 * Step k optimizes all factors from batches 0..k, warm-started from step k-1.
 */
class PseudoGroundTruth {
public:
  PseudoGroundTruth(const std::vector<SensorBatch>& batches, const SolverConfig& solver = default_solver());

  std::size_t steps() const { return per_step_.size(); }
  const Estimates& at(std::size_t step) const { return per_step_.at(step); }

  static SolverConfig default_solver();

private:
  std::vector<Estimates> per_step_;
};

/// Batch solution after `upto_step`. Throws std::out_of_range for a bad step.
Estimates pseudo_ground_truth(const std::vector<SensorBatch>& batches, std::size_t upto_step);

/// Translation distance and absolute shortest angle between two estimates of `key`. Throws MissingKey.
std::pair<double, double> step_error(const Estimates& client_est, const Estimates& gt_est, VariableKey key);

ServerConfig server_config(const RunConfig& cfg);
ClientConfig client_config(const RunConfig& cfg);

/// Runs the full simulated timeline and writes outputs when cfg.out_dir is set.
RunResult run_benchmark(const RunConfig& cfg);
RunResult run_benchmark(const RunConfig& cfg, const std::vector<SensorBatch>& batches, const PseudoGroundTruth& gt);

void write_steps_csv(const std::filesystem::path& path, const std::vector<StepRecord>& steps);
void write_summary_json(const std::filesystem::path& path, const RunConfig& cfg, const RunSummary& summary);

enum class MatrixKind { Table1, Sweep };

/// The seven table configurations, or the four temporal variants over budgets 100..500.
std::vector<RunConfig> matrix_configs(MatrixKind kind, const RunConfig& base);

struct MatrixEntry {
  RunConfig config;
  RunSummary summary;
};

/// Runs every configuration against one shared pseudo ground truth; writes per-run and combined outputs.
std::vector<MatrixEntry> run_matrix(MatrixKind kind, const RunConfig& base);

}  // namespace cslam

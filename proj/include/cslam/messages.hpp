#pragma once

#include "cslam/condense.hpp"
#include "cslam/factor.hpp"

#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

namespace cslam {

/// Simulated time in integer nanoseconds.
using SimTime = std::int64_t;

inline SimTime to_sim_time(double seconds) { return static_cast<SimTime>(std::llround(seconds * 1e9)); }
inline double to_seconds(SimTime t) { return static_cast<double>(t) / 1e9; }

/// One replay step: the poses created during a tick and every factor that became available.
struct SensorBatch {
  std::int64_t index = 0;
  SimTime time = 0;
  std::vector<VariableKey> new_keys;
  /// Open-loop dead reckoning of the new poses from the odometry chain.
  Estimates initial_estimates;
  std::vector<Factor> factors;
};

/// Separator variables and factors the device dropped earlier and needs back.
struct ReloadData {
  Estimates estimates;
  std::vector<Factor> factors;
};

struct SummaryMessage {
  std::vector<VariableKey> separator_keys;
  MarginalPayload payload;
  Estimates separator_estimates;
  std::optional<ReloadData> reload;
  /// Simulated time the server snapshot was taken.
  SimTime generation_stamp = 0;
  /// Highest sensor batch folded into the snapshot; device variables from later batches are new.
  std::int64_t snapshot_batch = -1;

  std::size_t float_count() const { return payload.float_count; }
};

struct EarlyLoopClosureMessage {
  std::vector<VariableKey> lc_keys;
  std::vector<Factor> lc_priors;
  Estimates lc_estimates;
  std::vector<Factor> lc_factors;
  SimTime detection_time = 0;
  /// Batch that carried the loop-closure factors.
  std::int64_t batch_index = -1;

  /// Prior (6 + 3) and estimate (3) per variable, measurement (3) and noise (6) per factor.
  std::size_t float_count() const { return 12 * lc_keys.size() + 9 * lc_factors.size(); }
};

struct BaselinePoseMessage {
  std::vector<VariableKey> keys;
  Estimates estimates;
  SimTime generation_stamp = 0;
  std::int64_t snapshot_batch = -1;

  std::size_t float_count() const { return 3 * keys.size(); }
};

}  // namespace cslam

#pragma once

#include "cslam/factor_graph.hpp"
#include "cslam/messages.hpp"

#include <map>
#include <set>
#include <vector>

namespace cslam {

struct ClientConfig {
  bool baseline = false;
  bool early_lc = false;
  /// Separator budget; also caps how many new variables the device keeps before marginalizing locally.
  int budget = 300;
  SolverConfig solver = [] {
    SolverConfig s;
    s.max_iterations = 5;
    return s;
  }();
};

/// Information of the hard priors that pin baseline reset poses.
inline constexpr double kBaselineHardPrior = 1e8;

/**
 * @brief The device actor: a bounded local graph over separators and new variables.
 *
 * Sensor factors are tracked by id. Summary payloads, loop-closure priors and
 * locally marginalized fixed-lag factors are kept apart so each message can
 * replace exactly the information it supersedes.
 */
class ClientNode {
public:
  explicit ClientNode(ClientConfig cfg);

  /// Adds the batch and re-optimizes; returns the current estimates.
  const Estimates& ingest_sensor_batch(const SensorBatch& batch);

  /// Throws SummaryRejected (state unchanged) when no separator is held.
  void apply_summary(const SummaryMessage& msg);

  void apply_early_loop_closure(const EarlyLoopClosureMessage& msg);

  void apply_baseline_reset(const BaselinePoseMessage& msg);

  const Estimates& estimates() const { return estimates_; }
  std::set<VariableKey> held_variables() const;
  bool holds(VariableKey k) const { return estimates_.contains(k); }

  /// Every factor the local solve uses, in a deterministic order.
  FactorGraph local_graph() const;

  std::size_t deferred_count() const { return deferred_.size(); }
  std::size_t lc_variable_count() const { return lc_vars_.size(); }
  std::size_t fixed_lag_marginalizations() const { return fixed_lag_count_; }
  std::size_t rejected_summaries() const { return rejected_; }
  std::int64_t watermark() const { return watermark_; }
  const std::set<VariableKey>& separators() const { return separators_; }
  /// Held variables created after the last applied summary's snapshot.
  std::set<VariableKey> fresh_variables() const;

  /// Throws Error if a held factor references an unheld variable or the size bound is broken.
  void check_invariants() const;

private:
  void add_sensor_factor(const Factor& f);
  void drop_variables(const std::set<VariableKey>& drop);
  void activate_deferred();
  void enforce_memory_bound();
  void rebuild_fixed_lag();
  void reoptimize();
  bool all_held(const Factor& f) const;

  ClientConfig cfg_;
  Estimates estimates_;
  std::map<VariableKey, std::int64_t> batch_of_;
  std::map<FactorId, Factor> factors_;
  std::map<FactorId, std::int64_t> factor_batch_;
  std::map<FactorId, Factor> deferred_;
  std::vector<Factor> payload_;
  std::map<VariableKey, Factor> lc_priors_;
  std::set<VariableKey> lc_vars_;
  std::vector<Factor> fixed_lag_;
  // sensor factors and last estimates of locally marginalized variables
  std::map<FactorId, Factor> parked_;
  Estimates parked_estimates_;
  std::set<VariableKey> separators_;
  std::int64_t watermark_ = -1;
  std::size_t fixed_lag_count_ = 0;
  std::size_t rejected_ = 0;
};

}  // namespace cslam

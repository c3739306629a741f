#pragma once

#include "cslam/condense.hpp"
#include "cslam/factor_graph.hpp"
#include "cslam/messages.hpp"

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <variant>
#include <vector>

namespace cslam {

enum class SeparatorMode { Temporal, Spatial };

struct SeparatorPolicy {
  SeparatorMode mode = SeparatorMode::Temporal;
  int budget = 300;
};

/// Variable partition as seen by the server between update cycles.
struct PartitionLabels {
  std::set<VariableKey> historic;
  std::set<VariableKey> separator;
  std::set<VariableKey> fresh;  // held by the device, newer than the last summary
  std::set<VariableKey> loop_closure;

  std::set<VariableKey> other_historic() const;
};

enum class MeasurementClass { Historic, Separator, LoopClosure, NewSeparator };

const char* to_string(MeasurementClass c);

/**
 * Loop closure if the factor touches a new and a historic variable, historic if
 * it touches any other historic variable, separator if all keys are separators,
 * new-separator otherwise. Throws UnknownVariable for unlabeled keys.
 */
MeasurementClass classify_factor(const Factor& f, const PartitionLabels& labels);

/**
 * Separator set for a snapshot: the `budget` highest keys (temporal) or the
 * `budget` poses closest in (x, y) to the newest pose (spatial). Sorted by key.
 */
std::vector<VariableKey> select_separators(const Estimates& est, const SeparatorPolicy& policy);

struct ServerConfig {
  SeparatorPolicy separators;
  bool baseline = false;
  bool sparsify = false;
  bool early_lc = false;
  /// Sparsified payload form used when `sparsify` is set.
  PayloadForm sparse_form = PayloadForm::GlobalPriors;
  SolverConfig solver;

  /// Throws ConfigError for forbidden combinations.
  void validate() const;
};

using ServerMessage = std::variant<SummaryMessage, BaselinePoseMessage>;

struct CycleResult {
  ServerMessage message;
  double wall_seconds = 0.0;
  std::size_t folded_batches = 0;
};

/**
 * @brief The server actor: full graph, separator selection, and summaries.
 *
 * A cycle's results become the server's committed view only through
 * commit_cycle(), called when the back-end finishes in simulated time.
 */
class ServerNode {
public:
  explicit ServerNode(ServerConfig cfg);

  /// Adds the batch's variables and caches its factors. Throws DuplicateVariable.
  void ingest_sensor_batch(const SensorBatch& batch);

  /// Loop-closure priors and factors found by the last ingest, if any.
  std::optional<EarlyLoopClosureMessage> detect_and_emit_early_lc(SimTime now);

  bool has_cached_batches() const { return !cached_.empty(); }

  /// Folds cached batches, optimizes, and builds the outgoing message. Throws when nothing is cached.
  CycleResult run_update_cycle(SimTime now);

  /// Makes the last cycle's snapshot the committed view.
  void commit_cycle();

  PartitionLabels labels() const;
  const Estimates& estimates() const { return estimates_; }
  const FactorGraph& graph() const { return graph_; }
  const ServerConfig& config() const { return cfg_; }

private:
  struct Snapshot {
    std::set<VariableKey> separators;
    std::int64_t watermark = -1;
    std::vector<Factor> historic_factors;
    Estimates estimates;
  };

  bool is_historic(VariableKey k) const;
  const CovarianceQuery& historic_covariance();
  MarginalPayload build_payload(const FactorGraph& historic, const std::vector<VariableKey>& separators) const;

  ServerConfig cfg_;
  FactorGraph graph_;
  Estimates estimates_;
  std::map<VariableKey, std::int64_t> batch_of_;
  std::vector<SensorBatch> cached_;
  std::vector<Factor> pending_lc_;
  std::int64_t last_ingested_batch_ = -1;

  Snapshot committed_;
  std::optional<Snapshot> staged_;
  std::set<VariableKey> lc_sent_;
  std::unique_ptr<CovarianceQuery> covariance_;
};

}  // namespace cslam

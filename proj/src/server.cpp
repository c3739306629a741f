#include "cslam/server.hpp"

#include "cslam/errors.hpp"

#include <algorithm>
#include <chrono>
#include <string>

namespace cslam {

std::set<VariableKey> PartitionLabels::other_historic() const {
  std::set<VariableKey> out;
  std::set_difference(historic.begin(), historic.end(), loop_closure.begin(), loop_closure.end(),
                      std::inserter(out, out.end()));
  return out;
}

const char* to_string(MeasurementClass c) {
  switch (c) {
    case MeasurementClass::Historic:
      return "Z_h";
    case MeasurementClass::Separator:
      return "Z_s";
    case MeasurementClass::LoopClosure:
      return "Z_lc";
    case MeasurementClass::NewSeparator:
      return "Z_ns";
  }
  return "unknown";
}

MeasurementClass classify_factor(const Factor& f, const PartitionLabels& labels) {
  bool any_historic = false;
  bool any_new = false;
  bool all_separator = true;
  for (VariableKey k : f.keys()) {
    const bool h = labels.historic.contains(k);
    const bool s = labels.separator.contains(k);
    const bool n = labels.fresh.contains(k);
    if (!h && !s && !n) throw UnknownVariable("classify: variable " + std::to_string(k.id) + " has no label");
    any_historic |= h;
    any_new |= n;
    all_separator &= s;
  }
  if (any_historic && any_new) return MeasurementClass::LoopClosure;
  if (any_historic) return MeasurementClass::Historic;
  if (all_separator) return MeasurementClass::Separator;
  return MeasurementClass::NewSeparator;
}

std::vector<VariableKey> select_separators(const Estimates& est, const SeparatorPolicy& policy) {
  if (policy.budget < 1) throw ConfigError("separator budget must be at least 1");
  const auto budget = static_cast<std::size_t>(policy.budget);
  std::vector<VariableKey> keys;
  keys.reserve(est.size());
  for (const auto& [k, p] : est) keys.push_back(k);
  if (keys.size() <= budget) return keys;

  if (policy.mode == SeparatorMode::Temporal) {
    return {keys.end() - static_cast<std::ptrdiff_t>(budget), keys.end()};
  }
  const Eigen::Vector2d latest = est.at(keys.back()).translation();
  std::vector<std::pair<double, VariableKey>> by_distance;
  by_distance.reserve(keys.size());
  for (VariableKey k : keys) by_distance.emplace_back((est.at(k).translation() - latest).squaredNorm(), k);
  std::partial_sort(by_distance.begin(), by_distance.begin() + static_cast<std::ptrdiff_t>(budget), by_distance.end());
  std::vector<VariableKey> out;
  out.reserve(budget);
  for (std::size_t i = 0; i < budget; ++i) out.push_back(by_distance[i].second);
  std::sort(out.begin(), out.end());
  return out;
}

void ServerConfig::validate() const {
  if (separators.budget < 1) throw ConfigError("separator budget must be at least 1");
  if (baseline && (sparsify || early_lc)) throw ConfigError("baseline mode forbids sparsification and early loop closure");
  if (sparsify && sparse_form == PayloadForm::Dense) throw ConfigError("sparsified payload form cannot be dense");
}

ServerNode::ServerNode(ServerConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

bool ServerNode::is_historic(VariableKey k) const {
  auto it = batch_of_.find(k);
  return it != batch_of_.end() && it->second <= committed_.watermark && !committed_.separators.contains(k);
}

PartitionLabels ServerNode::labels() const {
  PartitionLabels out;
  for (const auto& [k, b] : batch_of_) {
    if (b > committed_.watermark) {
      out.fresh.insert(k);
    } else if (committed_.separators.contains(k)) {
      out.separator.insert(k);
    } else {
      out.historic.insert(k);
    }
  }
  for (const Factor& f : pending_lc_) {
    for (VariableKey k : f.keys()) {
      if (out.historic.contains(k)) out.loop_closure.insert(k);
    }
  }
  return out;
}

void ServerNode::ingest_sensor_batch(const SensorBatch& batch) {
  for (VariableKey k : batch.new_keys) {
    if (batch_of_.contains(k)) throw DuplicateVariable("server already knows variable " + std::to_string(k.id));
  }
  for (VariableKey k : batch.new_keys) {
    batch_of_[k] = batch.index;
    Pose2 init = batch.initial_estimates.at(k);
    const VariableKey prev{k.id - 1};
    if (estimates_.contains(prev)) {
      for (const Factor& f : batch.factors) {
        if (f.kind() == FactorKind::Between && f.keys()[0] == prev && f.keys()[1] == k) {
          init = compose(estimates_.at(prev), f.measurement());
          break;
        }
      }
    }
    estimates_.set(k, init);
  }
  pending_lc_.clear();
  for (const Factor& f : batch.factors) {
    bool historic = false;
    bool fresh = false;
    for (VariableKey k : f.keys()) {
      historic |= is_historic(k);
      fresh |= batch_of_.at(k) > committed_.watermark;
    }
    if (historic && fresh) pending_lc_.push_back(f);
  }
  last_ingested_batch_ = batch.index;
  cached_.push_back(batch);
}

const CovarianceQuery& ServerNode::historic_covariance() {
  if (!covariance_) {
    FactorGraph g;
    for (const Factor& f : committed_.historic_factors) {
      for (VariableKey k : f.keys()) g.add_variable(k);
      g.add_factor(f);
    }
    covariance_ = std::make_unique<CovarianceQuery>(g, committed_.estimates.restricted(
                                                           std::vector<VariableKey>(g.variables().begin(),
                                                                                    g.variables().end())));
  }
  return *covariance_;
}

std::optional<EarlyLoopClosureMessage> ServerNode::detect_and_emit_early_lc(SimTime now) {
  if (!cfg_.early_lc || pending_lc_.empty()) return std::nullopt;
  EarlyLoopClosureMessage msg;
  msg.detection_time = now;
  msg.batch_index = last_ingested_batch_;
  msg.lc_factors = std::move(pending_lc_);
  pending_lc_.clear();

  std::set<VariableKey> lc;
  for (const Factor& f : msg.lc_factors) {
    for (VariableKey k : f.keys()) {
      if (is_historic(k) && !lc_sent_.contains(k)) lc.insert(k);
    }
  }
  if (!lc.empty()) {
    const CovarianceQuery& cq = historic_covariance();
    std::vector<Eigen::Matrix3d> covs;
    std::vector<Eigen::Vector3d> means;
    std::vector<Pose2> lin;
    for (VariableKey k : lc) {
      msg.lc_keys.push_back(k);
      covs.push_back(cq.covariance(k));
      means.push_back(cq.mean(k));
      lin.push_back(committed_.estimates.at(k));
      msg.lc_estimates.set(k, committed_.estimates.at(k));
      lc_sent_.insert(k);
    }
    msg.lc_priors = unary_priors(msg.lc_keys, lin, covs, means);
  }
  return msg;
}

MarginalPayload ServerNode::build_payload(const FactorGraph& historic,
                                          const std::vector<VariableKey>& separators) const {
  const PayloadForm form = cfg_.sparsify ? cfg_.sparse_form : PayloadForm::Dense;
  if (historic.size() == 0) return empty_payload(form);

  std::vector<VariableKey> touched;
  std::map<VariableKey, Eigen::Index> slot;
  for (std::size_t i = 0; i < separators.size(); ++i) slot[separators[i]] = 3 * static_cast<Eigen::Index>(i);
  for (VariableKey k : separators) {
    if (historic.has_variable(k)) touched.push_back(k);
  }
  const Eigen::Index d = 3 * static_cast<Eigen::Index>(separators.size());
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(d);
  if (!touched.empty()) {
    const Marginal m = marginal_on(historic, estimates_, touched);
    for (std::size_t a = 0; a < touched.size(); ++a) {
      const Eigen::Index ra = slot.at(touched[a]);
      const auto ia = 3 * static_cast<Eigen::Index>(a);
      eta.segment<3>(ra) = m.density.information_vector().segment<3>(ia);
      for (std::size_t b = 0; b < touched.size(); ++b) {
        info.block<3, 3>(ra, slot.at(touched[b])) =
            m.density.information_matrix().block<3, 3>(ia, 3 * static_cast<Eigen::Index>(b));
      }
    }
  }
  const DenseGaussian embedded(std::move(info), std::move(eta));
  const Estimates lin = estimates_.restricted(separators);
  switch (form) {
    case PayloadForm::Dense:
      return densify(embedded, lin);
    case PayloadForm::GlobalPriors:
      return global_priors(embedded, lin);
    case PayloadForm::ChowLiuTree:
      return chow_liu_tree(embedded, lin);
  }
  throw ConfigError("unknown payload form");
}

CycleResult ServerNode::run_update_cycle(SimTime now) {
  if (cached_.empty()) throw Error("update cycle started with no cached batches");
  const auto start = std::chrono::steady_clock::now();

  CycleResult result;
  result.folded_batches = cached_.size();
  std::int64_t watermark = committed_.watermark;
  for (const SensorBatch& b : cached_) {
    for (VariableKey k : b.new_keys) graph_.add_variable(k);
    for (const Factor& f : b.factors) graph_.add_factor(f);
    watermark = std::max(watermark, b.index);
  }
  cached_.clear();

  const Estimates init = estimates_.restricted(std::vector<VariableKey>(graph_.variables().begin(), graph_.variables().end()));
  const OptimizeResult opt = optimize(graph_, init, cfg_.solver);
  for (const auto& [k, p] : opt.estimates) estimates_.set(k, p);

  SeparatorPolicy policy = cfg_.separators;
  if (cfg_.baseline) policy.mode = SeparatorMode::Temporal;
  const std::vector<VariableKey> separators = select_separators(opt.estimates, policy);
  const std::set<VariableKey> separator_set(separators.begin(), separators.end());

  Snapshot snap;
  snap.separators = separator_set;
  snap.watermark = watermark;
  snap.estimates = opt.estimates;
  FactorGraph historic;
  for (const Factor& f : graph_.factors()) {
    const bool touches_historic =
        std::any_of(f.keys().begin(), f.keys().end(), [&](VariableKey k) { return !separator_set.contains(k); });
    if (!touches_historic) continue;
    for (VariableKey k : f.keys()) historic.add_variable(k);
    historic.add_factor(f);
    snap.historic_factors.push_back(f);
  }

  if (cfg_.baseline) {
    BaselinePoseMessage msg;
    msg.keys = separators;
    msg.estimates = opt.estimates.restricted(separators);
    msg.generation_stamp = now;
    msg.snapshot_batch = watermark;
    result.message = std::move(msg);
  } else {
    SummaryMessage msg;
    msg.separator_keys = separators;
    msg.payload = build_payload(historic, separators);
    msg.separator_estimates = opt.estimates.restricted(separators);
    msg.generation_stamp = now;
    msg.snapshot_batch = watermark;

    // separators the device is not expected to hold
    std::set<VariableKey> reload;
    for (VariableKey k : separators) {
      const bool held = committed_.separators.contains(k) || batch_of_.at(k) > committed_.watermark ||
                        lc_sent_.contains(k);
      if (!held) reload.insert(k);
    }
    if (!reload.empty()) {
      ReloadData data;
      for (VariableKey k : reload) data.estimates.set(k, opt.estimates.at(k));
      for (const Factor& f : graph_.factors()) {
        const bool inside =
            std::all_of(f.keys().begin(), f.keys().end(), [&](VariableKey k) { return separator_set.contains(k); });
        const bool touches_reload =
            std::any_of(f.keys().begin(), f.keys().end(), [&](VariableKey k) { return reload.contains(k); });
        if (inside && touches_reload) data.factors.push_back(f);
      }
      msg.reload = std::move(data);
    }
    result.message = std::move(msg);
  }

  staged_ = std::move(snap);
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

void ServerNode::commit_cycle() {
  if (!staged_) return;
  committed_ = std::move(*staged_);
  staged_.reset();
  lc_sent_.clear();
  covariance_.reset();
}

}  // namespace cslam

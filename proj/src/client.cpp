#include "cslam/client.hpp"

#include "cslam/errors.hpp"

#include <algorithm>
#include <optional>
#include <string>

namespace cslam {

namespace {

// Moves the device's new variables rigidly so they follow the server's value of the newest shared pose.
void realign(Estimates& est, const std::set<VariableKey>& fresh, const Estimates& server_values, Estimates& parked) {
  std::optional<VariableKey> pivot;
  for (const auto& [k, p] : server_values) {
    if (est.contains(k)) pivot = k;
  }
  if (!pivot) return;
  const Pose2 device = est.at(*pivot);
  const Pose2 server = server_values.at(*pivot);
  for (VariableKey k : fresh) {
    if (server_values.contains(k)) continue;
    est.set(k, compose(server, between(device, est.at(k))));
  }
  for (const auto& [k, p] : Estimates(parked)) parked.set(k, compose(server, between(device, p)));
}

}  // namespace

ClientNode::ClientNode(ClientConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.budget < 1) throw ConfigError("client budget must be at least 1");
}

std::set<VariableKey> ClientNode::held_variables() const {
  std::set<VariableKey> out;
  for (const auto& [k, p] : estimates_) out.insert(k);
  return out;
}

std::set<VariableKey> ClientNode::fresh_variables() const {
  std::set<VariableKey> out;
  for (const auto& [k, p] : estimates_) {
    if (batch_of_.at(k) > watermark_) out.insert(k);
  }
  return out;
}

bool ClientNode::all_held(const Factor& f) const {
  return std::all_of(f.keys().begin(), f.keys().end(), [&](VariableKey k) { return estimates_.contains(k); });
}

void ClientNode::add_sensor_factor(const Factor& f) {
  if (factors_.contains(f.id())) return;
  if (all_held(f)) {
    factors_.emplace(f.id(), f);
    deferred_.erase(f.id());
  } else {
    deferred_.emplace(f.id(), f);
  }
}

FactorGraph ClientNode::local_graph() const {
  FactorGraph g;
  for (const auto& [k, p] : estimates_) g.add_variable(k);
  for (const auto& [id, f] : factors_) g.add_factor(f);
  for (const Factor& f : payload_) g.add_factor(f);
  for (const auto& [k, f] : lc_priors_) g.add_factor(f);
  for (const Factor& f : fixed_lag_) g.add_factor(f);
  return g;
}

void ClientNode::reoptimize() {
  if (estimates_.empty()) return;
  estimates_ = optimize(local_graph(), estimates_, cfg_.solver).estimates;
}

void ClientNode::drop_variables(const std::set<VariableKey>& drop) {
  if (drop.empty()) return;
  for (VariableKey k : drop) {
    estimates_.erase(k);
    lc_vars_.erase(k);
    lc_priors_.erase(k);
  }
  for (auto it = factors_.begin(); it != factors_.end();) {
    const Factor& f = it->second;
    if (std::any_of(f.keys().begin(), f.keys().end(), [&](VariableKey k) { return drop.contains(k); })) {
      if (factor_batch_.at(it->first) > watermark_) deferred_.emplace(it->first, f);
      it = factors_.erase(it);
    } else {
      ++it;
    }
  }
  auto touches_dropped = [&](const Factor& f) {
    return std::any_of(f.keys().begin(), f.keys().end(), [&](VariableKey k) { return drop.contains(k); });
  };
  std::erase_if(payload_, touches_dropped);
  std::erase_if(fixed_lag_, touches_dropped);
}

void ClientNode::activate_deferred() {
  for (auto it = deferred_.begin(); it != deferred_.end();) {
    if (all_held(it->second)) {
      factors_.emplace(it->first, it->second);
      it = deferred_.erase(it);
    } else if (factor_batch_.at(it->first) <= watermark_) {
      it = deferred_.erase(it);
    } else {
      ++it;
    }
  }
}

void ClientNode::enforce_memory_bound() {
  std::set<VariableKey> fresh = fresh_variables();
  const auto cap = static_cast<std::size_t>(cfg_.budget);
  while (fresh.size() > cap) {
    const VariableKey victim = *fresh.begin();
    fresh.erase(fresh.begin());

    // every factor touching the victim is folded into one local marginal
    FactorGraph g;
    std::set<VariableKey> neighbours;
    auto take = [&](const Factor& f) {
      for (VariableKey k : f.keys()) {
        g.add_variable(k);
        if (k != victim) neighbours.insert(k);
      }
      g.add_factor(f);
    };
    for (auto it = factors_.begin(); it != factors_.end();) {
      if (it->second.touches(victim)) {
        take(it->second);
        parked_.insert_or_assign(it->first, it->second);
        it = factors_.erase(it);
      } else {
        ++it;
      }
    }
    for (std::vector<Factor>* bucket : {&payload_, &fixed_lag_}) {
      for (const Factor& f : *bucket) {
        if (f.touches(victim)) take(f);
      }
      std::erase_if(*bucket, [&](const Factor& f) { return f.touches(victim); });
    }
    if (!neighbours.empty()) {
      const std::vector<VariableKey> keep(neighbours.begin(), neighbours.end());
      Marginal m = marginal_on(g, estimates_.restricted(std::vector<VariableKey>(g.variables().begin(), g.variables().end())), keep);
      std::vector<Pose2> lin;
      for (VariableKey k : m.keys) lin.push_back(m.linearization_points.at(k));
      fixed_lag_.push_back(Factor::linear_gaussian(m.keys, std::move(m.density), std::move(lin)));
    }
    parked_estimates_.set(victim, estimates_.at(victim));
    estimates_.erase(victim);
    ++fixed_lag_count_;
  }
}

void ClientNode::rebuild_fixed_lag() {
  // factors among held variables never enter a payload; the rest at or below the watermark do
  for (auto it = parked_.begin(); it != parked_.end();) {
    if (all_held(it->second)) {
      factors_.insert_or_assign(it->first, it->second);
      it = parked_.erase(it);
    } else {
      ++it;
    }
  }
  std::erase_if(parked_, [&](const auto& e) { return factor_batch_.at(e.first) <= watermark_; });
  Estimates kept;
  for (const auto& [k, p] : parked_estimates_) {
    if (batch_of_.at(k) > watermark_ && !estimates_.contains(k)) kept.set(k, p);
  }
  parked_estimates_ = std::move(kept);

  auto usable = [&](const Factor& f) {
    return std::all_of(f.keys().begin(), f.keys().end(),
                       [&](VariableKey k) { return estimates_.contains(k) || parked_estimates_.contains(k); });
  };

  // parked variables reachable from held ones through usable parked factors
  std::set<VariableKey> reached;
  bool grew = true;
  while (grew) {
    grew = false;
    for (const auto& [id, f] : parked_) {
      if (!usable(f)) continue;
      const bool linked = std::any_of(f.keys().begin(), f.keys().end(),
                                      [&](VariableKey k) { return estimates_.contains(k) || reached.contains(k); });
      if (!linked) continue;
      for (VariableKey k : f.keys()) {
        if (!estimates_.contains(k) && reached.insert(k).second) grew = true;
      }
    }
  }
  if (reached.empty()) return;

  FactorGraph g;
  Estimates lin;
  std::set<VariableKey> keep;
  for (const auto& [id, f] : parked_) {
    if (!usable(f)) continue;
    if (!std::any_of(f.keys().begin(), f.keys().end(), [&](VariableKey k) { return reached.contains(k); })) continue;
    for (VariableKey k : f.keys()) {
      g.add_variable(k);
      if (estimates_.contains(k)) {
        keep.insert(k);
        lin.set(k, estimates_.at(k));
      } else {
        lin.set(k, parked_estimates_.at(k));
      }
    }
    g.add_factor(f);
  }
  Marginal m = marginal_on(g, lin, std::vector<VariableKey>(keep.begin(), keep.end()));
  std::vector<Pose2> points;
  for (VariableKey k : m.keys) points.push_back(m.linearization_points.at(k));
  fixed_lag_.push_back(Factor::linear_gaussian(m.keys, std::move(m.density), std::move(points)));
}

const Estimates& ClientNode::ingest_sensor_batch(const SensorBatch& batch) {
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
  for (const Factor& f : batch.factors) {
    factor_batch_.try_emplace(f.id(), batch.index);
    add_sensor_factor(f);
  }
  enforce_memory_bound();
  reoptimize();
  return estimates_;
}

void ClientNode::apply_summary(const SummaryMessage& msg) {
  const bool overlaps = std::any_of(msg.separator_keys.begin(), msg.separator_keys.end(),
                                    [&](VariableKey k) { return estimates_.contains(k); });
  if (!overlaps) {
    ++rejected_;
    throw SummaryRejected("summary shares no separator with the device graph");
  }

  if (msg.reload) {
    for (const auto& [k, p] : msg.reload->estimates) {
      if (!estimates_.contains(k)) estimates_.set(k, p);
      batch_of_.try_emplace(k, msg.snapshot_batch);
    }
    for (const Factor& f : msg.reload->factors) {
      factor_batch_.try_emplace(f.id(), msg.snapshot_batch);
      add_sensor_factor(f);
    }
  }

  watermark_ = msg.snapshot_batch;
  const std::set<VariableKey> separators(msg.separator_keys.begin(), msg.separator_keys.end());
  const std::set<VariableKey> fresh = fresh_variables();
  std::set<VariableKey> drop;
  for (const auto& [k, p] : estimates_) {
    if (!separators.contains(k) && !fresh.contains(k)) drop.insert(k);
  }
  drop_variables(drop);

  payload_.clear();
  lc_priors_.clear();
  lc_vars_.clear();
  fixed_lag_.clear();

  realign(estimates_, fresh, msg.separator_estimates, parked_estimates_);
  for (const auto& [k, p] : msg.separator_estimates) {
    estimates_.set(k, p);
    batch_of_.try_emplace(k, msg.snapshot_batch);
  }
  payload_ = msg.payload.factors;
  separators_ = separators;
  rebuild_fixed_lag();
  activate_deferred();
  reoptimize();
}

void ClientNode::apply_early_loop_closure(const EarlyLoopClosureMessage& msg) {
  bool changed = false;
  for (VariableKey k : msg.lc_keys) {
    if (estimates_.contains(k)) continue;
    estimates_.set(k, msg.lc_estimates.at(k));
    batch_of_.try_emplace(k, msg.batch_index);
    lc_vars_.insert(k);
    for (const Factor& prior : msg.lc_priors) {
      if (prior.keys().front() == k) lc_priors_.insert_or_assign(k, prior);
    }
    changed = true;
  }
  for (const Factor& f : msg.lc_factors) {
    factor_batch_.try_emplace(f.id(), msg.batch_index);
    if (factors_.contains(f.id())) continue;
    add_sensor_factor(f);
    changed |= factors_.contains(f.id());
  }
  const std::size_t before = factors_.size();
  activate_deferred();
  changed |= factors_.size() != before;
  if (changed) reoptimize();
}

void ClientNode::apply_baseline_reset(const BaselinePoseMessage& msg) {
  watermark_ = msg.snapshot_batch;
  const std::set<VariableKey> keys(msg.keys.begin(), msg.keys.end());
  const std::set<VariableKey> fresh = fresh_variables();
  std::set<VariableKey> drop;
  for (const auto& [k, p] : estimates_) {
    if (!keys.contains(k) && !fresh.contains(k)) drop.insert(k);
  }
  drop_variables(drop);
  lc_priors_.clear();
  lc_vars_.clear();
  fixed_lag_.clear();

  realign(estimates_, fresh, msg.estimates, parked_estimates_);
  payload_.clear();
  for (VariableKey k : msg.keys) {
    const Pose2& p = msg.estimates.at(k);
    estimates_.set(k, p);
    batch_of_.try_emplace(k, msg.snapshot_batch);
    payload_.push_back(Factor::prior(k, p, kBaselineHardPrior * Eigen::Matrix3d::Identity()));
  }
  separators_ = keys;
  rebuild_fixed_lag();
  activate_deferred();
  reoptimize();
}

void ClientNode::check_invariants() const {
  const FactorGraph g = local_graph();
  for (const Factor& f : g.factors()) {
    for (VariableKey k : f.keys()) {
      if (!estimates_.contains(k)) {
        throw Error("device factor references unheld variable " + std::to_string(k.id));
      }
    }
  }
  const std::size_t bound = static_cast<std::size_t>(cfg_.budget) + fresh_variables().size() + lc_vars_.size();
  if (estimates_.size() > bound) throw Error("device graph exceeds its size bound");
}

}  // namespace cslam

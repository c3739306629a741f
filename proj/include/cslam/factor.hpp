#pragma once

#include "cslam/gaussian.hpp"
#include "cslam/se2.hpp"

#include <Eigen/Core>

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <vector>

namespace cslam {

/// Variable id, assigned in creation order.
struct VariableKey {
  std::int64_t id = 0;

  auto operator<=>(const VariableKey&) const = default;
};

/// Identity of a measurement across nodes; used to deduplicate. Negative means "anonymous".
using FactorId = std::int64_t;
inline constexpr FactorId kAnonymousFactor = -1;

class Estimates {
public:
  using Map = std::map<VariableKey, Pose2>;

  Estimates() = default;

  bool contains(VariableKey k) const { return values_.contains(k); }
  /// Throws MissingEstimate.
  const Pose2& at(VariableKey k) const;
  void set(VariableKey k, const Pose2& p) { values_[k] = p; }
  void erase(VariableKey k) { values_.erase(k); }
  std::size_t size() const { return values_.size(); }
  bool empty() const { return values_.empty(); }

  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }

  /// Restriction to `keys` (all must be present).
  Estimates restricted(const std::vector<VariableKey>& keys) const;

  bool operator==(const Estimates&) const = default;

private:
  Map values_;
};

enum class FactorKind { Prior, Between, LinearGaussian };

/**
 * @brief A measurement potential over one or more poses.
 *
 * Prior and Between are nonlinear SE(2) factors with residual
 * between(predicted, measured) and a 3x3 information matrix. LinearGaussian
 * factors hold a fixed canonical density over the stacked tangent
 * deltas local(linearization_point, estimate) and are never relinearized.
 */
class Factor {
public:
  struct Linearized {
    Eigen::MatrixXd information;  // d x d, d = 3 * keys
    Eigen::VectorXd vector;       // negative gradient
    double error = 0.0;
  };

  static Factor prior(VariableKey key, const Pose2& mean, const Eigen::Matrix3d& information,
                      FactorId id = kAnonymousFactor);
  static Factor between(VariableKey from, VariableKey to, const Pose2& measured,
                        const Eigen::Matrix3d& information, FactorId id = kAnonymousFactor);
  static Factor linear_gaussian(std::vector<VariableKey> keys, DenseGaussian density,
                                std::vector<Pose2> linearization_points,
                                FactorId id = kAnonymousFactor);

  FactorKind kind() const { return kind_; }
  const std::vector<VariableKey>& keys() const { return keys_; }
  FactorId id() const { return id_; }
  const Pose2& measurement() const { return measurement_; }
  const Eigen::Matrix3d& noise_information() const { return noise_information_; }

  /// LinearGaussian only.
  const DenseGaussian& density() const;
  const std::vector<Pose2>& linearization_points() const;

  bool touches(VariableKey k) const;

  /// Residual for Prior/Between.
  Eigen::Vector3d residual(const Estimates& est) const;
  /// Jacobian of residual() with respect to the additive perturbation of keys()[i].
  Eigen::Matrix3d jacobian(const Estimates& est, std::size_t i) const;

  double error(const Estimates& est) const;
  Linearized linearize(const Estimates& est) const;

private:
  struct LinearData {
    DenseGaussian density;
    std::vector<Pose2> linearization_points;
    double constant = 0.0;
  };

  Eigen::VectorXd stacked_delta(const Estimates& est) const;

  FactorKind kind_ = FactorKind::Prior;
  std::vector<VariableKey> keys_;
  FactorId id_ = kAnonymousFactor;
  Pose2 measurement_;
  Eigen::Matrix3d noise_information_ = Eigen::Matrix3d::Identity();
  std::shared_ptr<const LinearData> linear_;
};

}  // namespace cslam

template <>
struct std::hash<cslam::VariableKey> {
  std::size_t operator()(const cslam::VariableKey& k) const noexcept {
    return std::hash<std::int64_t>{}(k.id);
  }
};

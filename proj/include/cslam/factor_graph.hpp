#pragma once

#include "cslam/factor.hpp"
#include "cslam/gaussian.hpp"

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <vector>

namespace cslam {

/// Factors in insertion order plus the variable set they range over.
class FactorGraph {
public:
  void add_variable(VariableKey k) { variables_.insert(k); }
  bool has_variable(VariableKey k) const { return variables_.contains(k); }
  /// Throws UnknownVariable when the factor references a variable not added yet.
  void add_factor(Factor f);

  const std::vector<Factor>& factors() const { return factors_; }
  const std::set<VariableKey>& variables() const { return variables_; }
  std::size_t size() const { return factors_.size(); }

  /// Sum of factor errors.
  double error(const Estimates& est) const;

private:
  std::vector<Factor> factors_;
  std::set<VariableKey> variables_;
};

/// Gauss-Newton normal equations in tangent coordinates, one 3-block per variable.
struct LinearSystem {
  std::vector<VariableKey> ordering;
  std::map<VariableKey, Eigen::Index> block_of;
  Eigen::SparseMatrix<double> information;  // full symmetric storage
  Eigen::VectorXd vector;                   // negative gradient
  double error = 0.0;

  Eigen::Index dimension() const { return vector.size(); }
};

/// Throws MissingEstimate if a factor references a variable without an estimate.
LinearSystem linearize(const FactorGraph& graph, const Estimates& est);

/// Iteration stops when the accepted error decrease falls below either tolerance.
struct SolverConfig {
  int max_iterations = 10;
  double relative_error_decrease_tol = 1e-6;
  double absolute_error_tol = 1e-8;
  double lm_initial_lambda = 1e-5;
  double lm_lambda_min = 1e-10;
  double lm_lambda_max = 1e6;
};

struct OptimizeResult {
  Estimates estimates;
  double final_error = 0.0;
  int iterations = 0;
};

/**
 * Levenberg-Marquardt around Gauss-Newton steps. Never returns an estimate
 * with higher error than `init`. Throws GaugeFree when no Prior or
 * LinearGaussian factor anchors the graph and LinearSolveFailed when the
 * damped normal equations cannot be factored.
 */
OptimizeResult optimize(const FactorGraph& graph, const Estimates& init, const SolverConfig& cfg = {});

/// Marginal over `keep` (block order as given) of the graph linearized at `est`.
struct Marginal {
  std::vector<VariableKey> keys;
  DenseGaussian density;
  Estimates linearization_points;
};

/**
 * Linearizes `graph` at `est` and eliminates every variable outside `keep`.
 * Variables of `keep` that no factor touches get zero information.
 * Throws SingularBlock when the eliminated block is not invertible after
 * regularization.
 */
Marginal marginal_on(const FactorGraph& graph, const Estimates& est, const std::vector<VariableKey>& keep);

/// Same elimination as marginal_on, applied to an already linearized system.
DenseGaussian marginalize_system(const LinearSystem& sys, const std::vector<VariableKey>& keep);

/// Dense covariance over `keys` (inverse of the marginal information).
Eigen::MatrixXd joint_marginal_covariance(const FactorGraph& graph, const Estimates& est,
                                          const std::vector<VariableKey>& keys);

/**
 * Factors a linearized graph once and answers per-variable mean/covariance
 * queries against it.
 */
class CovarianceQuery {
public:
  CovarianceQuery(const FactorGraph& graph, const Estimates& est);

  bool covers(VariableKey k) const { return system_.block_of.contains(k); }
  /// 3x3 marginal covariance of one variable.
  Eigen::Matrix3d covariance(VariableKey k) const;
  /// Tangent-space mean of one variable relative to the linearization point.
  Eigen::Vector3d mean(VariableKey k) const;

private:
  LinearSystem system_;
  std::unique_ptr<Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>> solver_;
  Eigen::VectorXd mean_;
};

}  // namespace cslam

#pragma once

#include "cslam/factor.hpp"
#include "cslam/factor_graph.hpp"
#include "cslam/gaussian.hpp"

#include <cstddef>
#include <utility>
#include <vector>

namespace cslam {

enum class PayloadForm { Dense, GlobalPriors, ChowLiuTree };

const char* to_string(PayloadForm form);

/**
 * @brief Summarized information ready to send to the device.
 *
 * `factors` are LinearGaussian factors whose linearization points are the
 * covered variables' estimates at summary time. `float_count` is the number
 * of scalars needed to encode the payload, including linearization points.
 */
struct MarginalPayload {
  PayloadForm form = PayloadForm::Dense;
  std::vector<VariableKey> covered_keys;
  std::vector<Factor> factors;
  std::size_t float_count = 0;

  bool empty() const { return covered_keys.empty(); }
};

/// Scalar counts per payload form for n covered poses.
std::size_t dense_float_count(std::size_t n);
std::size_t global_priors_float_count(std::size_t n);
std::size_t chow_liu_float_count(std::size_t n);

/// A payload covering nothing; used before any history exists.
MarginalPayload empty_payload(PayloadForm form);

/**
 * Wraps a marginal (blocks in ascending key order of `lin_points`) as one
 * dense LinearGaussian factor. Throws DimensionMismatch on size disagreement
 * or an empty key set.
 */
MarginalPayload densify(const DenseGaussian& marginal, const Estimates& lin_points);

/**
 * Independent unary priors: each variable's prior information is the inverse
 * of its exact marginal covariance block; cross-covariances are discarded.
 * Variables with no information at all receive zero-information priors.
 */
MarginalPayload global_priors(const DenseGaussian& marginal, const Estimates& lin_points);

/// Maximum mutual-information spanning tree approximation: root prior plus pairwise conditionals.
MarginalPayload chow_liu_tree(const DenseGaussian& marginal, const Estimates& lin_points);

/// Edges (parent, child) of the tree chow_liu_tree() would build, as indices into the key order.
std::vector<std::pair<std::size_t, std::size_t>> chow_liu_edges(const DenseGaussian& marginal);

/**
 * Unary LinearGaussian priors from per-variable marginal covariances and
 * tangent-space means at `lin_points`. Shared by global_priors and the
 * loop-closure priors.
 */
std::vector<Factor> unary_priors(const std::vector<VariableKey>& keys, const std::vector<Pose2>& lin_points,
                                 const std::vector<Eigen::Matrix3d>& covariances,
                                 const std::vector<Eigen::Vector3d>& means);

/// The payload's density over covered_keys, assembled in covered_keys order.
DenseGaussian assemble(const MarginalPayload& payload);

/// Closed-form D(exact || approx). Throws DimensionMismatch or SingularBlock.
double kl_divergence(const MarginalPayload& approx, const DenseGaussian& exact);
double kl_divergence(const DenseGaussian& approx, const DenseGaussian& exact);

}  // namespace cslam

#pragma once

#include <Eigen/Dense>

#include <span>

namespace cslam {

/**
 * @brief Gaussian density in information (canonical) form.
 *
 * Represents exp(-1/2 d^T L d + eta^T d) over a tangent vector d. The
 * information matrix is symmetrized on construction.
 */
class DenseGaussian {
public:
  DenseGaussian() = default;
  DenseGaussian(Eigen::MatrixXd information_matrix, Eigen::VectorXd information_vector);

  static DenseGaussian zero(Eigen::Index dimension);

  Eigen::Index dimension() const { return information_vector_.size(); }
  const Eigen::MatrixXd& information_matrix() const { return information_matrix_; }
  const Eigen::VectorXd& information_vector() const { return information_vector_; }

  /// Mean L^{-1} eta. Throws SingularBlock when L is not invertible after regularization.
  Eigen::VectorXd mean() const;
  /// Covariance L^{-1}, same regularization policy as mean().
  Eigen::MatrixXd covariance() const;

private:
  Eigen::MatrixXd information_matrix_;
  Eigen::VectorXd information_vector_;
};

/// Tikhonov weight used when an information block must be inverted but is singular.
double regularization_weight(const Eigen::MatrixXd& block);

/**
 * Cholesky-factor a symmetric information block, retrying once with
 * regularization_weight() added to the diagonal. Throws SingularBlock when
 * both attempts fail.
 */
Eigen::LLT<Eigen::MatrixXd> factor_information(const Eigen::MatrixXd& block);

/**
 * Schur-complement marginalization onto `keep_indices` (scalar indices, result
 * ordered as given): L_kk - L_ke L_ee^{-1} L_ek, eta_k - L_ke L_ee^{-1} eta_e.
 */
DenseGaussian schur_marginalize(const DenseGaussian& g, std::span<const Eigen::Index> keep_indices);

/// Selects rows/cols `idx` of a square matrix (in the given order).
Eigen::MatrixXd select_block(const Eigen::MatrixXd& m, std::span<const Eigen::Index> rows,
                             std::span<const Eigen::Index> cols);
Eigen::VectorXd select_rows(const Eigen::VectorXd& v, std::span<const Eigen::Index> rows);

}  // namespace cslam

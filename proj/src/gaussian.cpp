#include "cslam/gaussian.hpp"

#include "cslam/errors.hpp"

#include <algorithm>
#include <vector>

namespace cslam {

DenseGaussian::DenseGaussian(Eigen::MatrixXd information_matrix, Eigen::VectorXd information_vector)
    : information_matrix_(std::move(information_matrix)),
      information_vector_(std::move(information_vector)) {
  if (information_matrix_.rows() != information_matrix_.cols() ||
      information_matrix_.rows() != information_vector_.size()) {
    throw DimensionMismatch("DenseGaussian: information matrix and vector sizes disagree");
  }
  information_matrix_ = 0.5 * (information_matrix_ + information_matrix_.transpose()).eval();
}

DenseGaussian DenseGaussian::zero(Eigen::Index dimension) {
  return {Eigen::MatrixXd::Zero(dimension, dimension), Eigen::VectorXd::Zero(dimension)};
}

Eigen::VectorXd DenseGaussian::mean() const {
  if (dimension() == 0) return {};
  return factor_information(information_matrix_).solve(information_vector_);
}

Eigen::MatrixXd DenseGaussian::covariance() const {
  if (dimension() == 0) return {};
  return factor_information(information_matrix_)
      .solve(Eigen::MatrixXd::Identity(dimension(), dimension()));
}

double regularization_weight(const Eigen::MatrixXd& block) {
  if (block.rows() == 0) return 0.0;
  return 1e-9 * block.trace() / static_cast<double>(block.rows());
}

Eigen::LLT<Eigen::MatrixXd> factor_information(const Eigen::MatrixXd& block) {
  Eigen::LLT<Eigen::MatrixXd> llt(block);
  if (llt.info() == Eigen::Success) return llt;
  const double lambda = regularization_weight(block);
  if (lambda > 0.0) {
    Eigen::MatrixXd damped = block;
    damped.diagonal().array() += lambda;
    llt.compute(damped);
    if (llt.info() == Eigen::Success) return llt;
  }
  throw SingularBlock("information block is not invertible after regularization");
}

Eigen::MatrixXd select_block(const Eigen::MatrixXd& m, std::span<const Eigen::Index> rows,
                             std::span<const Eigen::Index> cols) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = 0; j < cols.size(); ++j) {
      out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = m(rows[i], cols[j]);
    }
  }
  return out;
}

Eigen::VectorXd select_rows(const Eigen::VectorXd& v, std::span<const Eigen::Index> rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out(static_cast<Eigen::Index>(i)) = v(rows[i]);
  return out;
}

DenseGaussian schur_marginalize(const DenseGaussian& g, std::span<const Eigen::Index> keep_indices) {
  const Eigen::Index n = g.dimension();
  std::vector<bool> kept(static_cast<std::size_t>(n), false);
  for (Eigen::Index k : keep_indices) {
    if (k < 0 || k >= n || kept[static_cast<std::size_t>(k)]) {
      throw DimensionMismatch("schur_marginalize: keep index out of range or repeated");
    }
    kept[static_cast<std::size_t>(k)] = true;
  }
  std::vector<Eigen::Index> eliminated;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!kept[static_cast<std::size_t>(i)]) eliminated.push_back(i);
  }

  const Eigen::MatrixXd& info = g.information_matrix();
  const Eigen::VectorXd& eta = g.information_vector();
  Eigen::MatrixXd l_kk = select_block(info, keep_indices, keep_indices);
  Eigen::VectorXd eta_k = select_rows(eta, keep_indices);
  if (eliminated.empty()) return {std::move(l_kk), std::move(eta_k)};

  const Eigen::MatrixXd l_ee = select_block(info, eliminated, eliminated);
  const Eigen::MatrixXd l_ek = select_block(info, eliminated, keep_indices);
  const Eigen::VectorXd eta_e = select_rows(eta, eliminated);
  const auto llt = factor_information(l_ee);
  const Eigen::MatrixXd x = llt.solve(l_ek);
  return {l_kk - l_ek.transpose() * x, eta_k - x.transpose() * eta_e};
}

}  // namespace cslam

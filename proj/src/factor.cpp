#include "cslam/factor.hpp"

#include "cslam/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <string>

namespace cslam {

const Pose2& Estimates::at(VariableKey k) const {
  auto it = values_.find(k);
  if (it == values_.end()) throw MissingEstimate("no estimate for variable " + std::to_string(k.id));
  return it->second;
}

Estimates Estimates::restricted(const std::vector<VariableKey>& keys) const {
  Estimates out;
  for (VariableKey k : keys) out.set(k, at(k));
  return out;
}

namespace {

Eigen::Matrix3d checked_information(const Eigen::Matrix3d& info) {
  Eigen::Matrix3d sym = 0.5 * (info + info.transpose());
  if (Eigen::LLT<Eigen::Matrix3d>(sym).info() != Eigen::Success) {
    throw DimensionMismatch("noise information must be symmetric positive-definite");
  }
  return sym;
}

}  // namespace

Factor Factor::prior(VariableKey key, const Pose2& mean, const Eigen::Matrix3d& information, FactorId id) {
  Factor f;
  f.kind_ = FactorKind::Prior;
  f.keys_ = {key};
  f.id_ = id;
  f.measurement_ = mean;
  f.noise_information_ = checked_information(information);
  return f;
}

Factor Factor::between(VariableKey from, VariableKey to, const Pose2& measured,
                       const Eigen::Matrix3d& information, FactorId id) {
  Factor f;
  f.kind_ = FactorKind::Between;
  f.keys_ = {from, to};
  f.id_ = id;
  f.measurement_ = measured;
  f.noise_information_ = checked_information(information);
  return f;
}

Factor Factor::linear_gaussian(std::vector<VariableKey> keys, DenseGaussian density,
                               std::vector<Pose2> linearization_points, FactorId id) {
  if (keys.empty() || linearization_points.size() != keys.size() ||
      density.dimension() != 3 * static_cast<Eigen::Index>(keys.size())) {
    throw DimensionMismatch("linear Gaussian factor: keys, linearization points and density disagree");
  }
  Factor f;
  f.kind_ = FactorKind::LinearGaussian;
  f.keys_ = std::move(keys);
  f.id_ = id;
  // constant offset so that the factor's minimum error is zero
  const Eigen::VectorXd& eta = density.information_vector();
  const double constant =
      eta.isZero(0.0) ? 0.0 : 0.5 * eta.dot(density.information_matrix().ldlt().solve(eta));
  f.linear_ = std::make_shared<const LinearData>(
      LinearData{std::move(density), std::move(linearization_points), constant});
  return f;
}

const DenseGaussian& Factor::density() const {
  if (!linear_) throw Error("density() on a nonlinear factor");
  return linear_->density;
}

const std::vector<Pose2>& Factor::linearization_points() const {
  if (!linear_) throw Error("linearization_points() on a nonlinear factor");
  return linear_->linearization_points;
}

bool Factor::touches(VariableKey k) const {
  return std::find(keys_.begin(), keys_.end(), k) != keys_.end();
}

Eigen::Vector3d Factor::residual(const Estimates& est) const {
  switch (kind_) {
    case FactorKind::Prior:
      return cslam::between(est.at(keys_[0]), measurement_).vector();
    case FactorKind::Between: {
      const Pose2 predicted = cslam::between(est.at(keys_[0]), est.at(keys_[1]));
      return cslam::between(predicted, measurement_).vector();
    }
    case FactorKind::LinearGaussian:
      break;
  }
  throw Error("residual() on a linear Gaussian factor");
}

Eigen::Matrix3d Factor::jacobian(const Estimates& est, std::size_t i) const {
  Eigen::Matrix3d j = Eigen::Matrix3d::Zero();
  if (kind_ == FactorKind::Prior) {
    // r_t = R(-th)(t_z - t), r_th = th_z - th
    const Pose2& x = est.at(keys_[0]);
    const Eigen::Vector2d d = measurement_.translation() - x.translation();
    j.topLeftCorner<2, 2>() = -rot2(-x.theta());
    j.block<2, 1>(0, 2) = -rot2_derivative(-x.theta()) * d;
    j(2, 2) = -1.0;
    return j;
  }
  if (kind_ == FactorKind::Between) {
    // r_t = R(th_i - th_j) t_z - R(-th_j)(t_j - t_i), r_th = th_z - th_j + th_i
    const Pose2& a = est.at(keys_[0]);
    const Pose2& b = est.at(keys_[1]);
    const Eigen::Vector2d tz = measurement_.translation();
    const Eigen::Vector2d dt = b.translation() - a.translation();
    const double rel = a.theta() - b.theta();
    if (i == 0) {
      j.topLeftCorner<2, 2>() = rot2(-b.theta());
      j.block<2, 1>(0, 2) = rot2_derivative(rel) * tz;
      j(2, 2) = 1.0;
    } else {
      j.topLeftCorner<2, 2>() = -rot2(-b.theta());
      j.block<2, 1>(0, 2) = -rot2_derivative(rel) * tz + rot2_derivative(-b.theta()) * dt;
      j(2, 2) = -1.0;
    }
    return j;
  }
  throw Error("jacobian() on a linear Gaussian factor");
}

Eigen::VectorXd Factor::stacked_delta(const Estimates& est) const {
  Eigen::VectorXd delta(3 * static_cast<Eigen::Index>(keys_.size()));
  for (std::size_t i = 0; i < keys_.size(); ++i) {
    delta.segment<3>(3 * static_cast<Eigen::Index>(i)) =
        local(linear_->linearization_points[i], est.at(keys_[i]));
  }
  return delta;
}

double Factor::error(const Estimates& est) const {
  if (kind_ == FactorKind::LinearGaussian) {
    const Eigen::VectorXd delta = stacked_delta(est);
    const DenseGaussian& g = linear_->density;
    return linear_->constant + 0.5 * delta.dot(g.information_matrix() * delta) -
           g.information_vector().dot(delta);
  }
  const Eigen::Vector3d r = residual(est);
  return 0.5 * r.dot(noise_information_ * r);
}

Factor::Linearized Factor::linearize(const Estimates& est) const {
  Linearized out;
  if (kind_ == FactorKind::LinearGaussian) {
    const Eigen::VectorXd delta = stacked_delta(est);
    const DenseGaussian& g = linear_->density;
    out.information = g.information_matrix();
    const Eigen::VectorXd grad = g.information_matrix() * delta - g.information_vector();
    out.vector = -grad;
    out.error = linear_->constant + 0.5 * delta.dot(g.information_matrix() * delta) -
                g.information_vector().dot(delta);
    return out;
  }
  const Eigen::Index n = 3 * static_cast<Eigen::Index>(keys_.size());
  Eigen::MatrixXd jac(3, n);
  for (std::size_t i = 0; i < keys_.size(); ++i) {
    jac.middleCols<3>(3 * static_cast<Eigen::Index>(i)) = jacobian(est, i);
  }
  const Eigen::Vector3d r = residual(est);
  const Eigen::MatrixXd weighted = noise_information_ * jac;
  out.information = jac.transpose() * weighted;
  out.vector = -(weighted.transpose() * r);
  out.error = 0.5 * r.dot(noise_information_ * r);
  return out;
}

}  // namespace cslam

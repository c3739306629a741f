#include "cslam/se2.hpp"

namespace cslam {

Eigen::Matrix2d rot2(double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  Eigen::Matrix2d r;
  r << c, -s, s, c;
  return r;
}

Eigen::Matrix2d rot2_derivative(double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  Eigen::Matrix2d r;
  r << -s, -c, c, -s;
  return r;
}

Eigen::Matrix2d Pose2::rotation() const { return rot2(theta_); }

Eigen::Matrix3d Pose2::matrix() const {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m.topLeftCorner<2, 2>() = rotation();
  m.topRightCorner<2, 1>() = translation();
  return m;
}

Pose2 compose(const Pose2& a, const Pose2& b) {
  const double c = std::cos(a.theta());
  const double s = std::sin(a.theta());
  return {a.x() + c * b.x() - s * b.y(), a.y() + s * b.x() + c * b.y(), a.theta() + b.theta()};
}

Pose2 inverse(const Pose2& p) {
  const double c = std::cos(p.theta());
  const double s = std::sin(p.theta());
  return {-c * p.x() - s * p.y(), s * p.x() - c * p.y(), -p.theta()};
}

Pose2 between(const Pose2& a, const Pose2& b) {
  // R_a^T (t_b - t_a), theta_b - theta_a; avoids the extra rounding of compose(inverse(a), b)
  const double c = std::cos(a.theta());
  const double s = std::sin(a.theta());
  const double dx = b.x() - a.x();
  const double dy = b.y() - a.y();
  return {c * dx + s * dy, -s * dx + c * dy, b.theta() - a.theta()};
}

Pose2 retract(const Pose2& p, const Tangent2& d) {
  if (d.isZero(0.0)) return p;
  return {p.x() + d.x(), p.y() + d.y(), p.theta() + d.z()};
}

Tangent2 local(const Pose2& a, const Pose2& b) {
  return {b.x() - a.x(), b.y() - a.y(), angle_diff(a.theta(), b.theta())};
}

}  // namespace cslam

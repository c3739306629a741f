#pragma once

#include <Eigen/Core>

#include <cmath>
#include <numbers>

namespace cslam {

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a) {
  double r = std::remainder(a, 2.0 * std::numbers::pi);
  if (r <= -std::numbers::pi) r += 2.0 * std::numbers::pi;
  return r;
}

/// Signed shortest angular difference b - a, in (-pi, pi].
inline double angle_diff(double a, double b) { return wrap_angle(b - a); }

/// Tangent-space perturbation (dx, dy, dtheta) at a linearization point.
using Tangent2 = Eigen::Vector3d;

/**
 * @brief Rigid 2D pose (x, y, theta).
 *
 * theta is kept in (-pi, pi] by every constructor and operation.
 */
class Pose2 {
public:
  Pose2() = default;
  Pose2(double x, double y, double theta) : x_(x), y_(y), theta_(wrap_angle(theta)) {}

  static Pose2 identity() { return {}; }
  static Pose2 from_vector(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

  double x() const { return x_; }
  double y() const { return y_; }
  double theta() const { return theta_; }

  Eigen::Vector2d translation() const { return {x_, y_}; }
  Eigen::Matrix2d rotation() const;
  Eigen::Vector3d vector() const { return {x_, y_, theta_}; }

  /// Homogeneous 3x3 matrix.
  Eigen::Matrix3d matrix() const;

  bool operator==(const Pose2&) const = default;

private:
  double x_ = 0.0;
  double y_ = 0.0;
  double theta_ = 0.0;
};

/// Group product a * b.
Pose2 compose(const Pose2& a, const Pose2& b);

Pose2 inverse(const Pose2& p);

/// inverse(a) * b.
Pose2 between(const Pose2& a, const Pose2& b);

/// Additive chart on (x, y, theta), angle re-wrapped. retract(p, 0) == p.
Pose2 retract(const Pose2& p, const Tangent2& d);

/// Inverse of retract: the tangent d with retract(a, d) == b.
Tangent2 local(const Pose2& a, const Pose2& b);

/// Planar rotation matrix and its derivative with respect to the angle.
Eigen::Matrix2d rot2(double angle);
Eigen::Matrix2d rot2_derivative(double angle);

}  // namespace cslam

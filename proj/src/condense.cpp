#include "cslam/condense.hpp"

#include "cslam/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace cslam {

const char* to_string(PayloadForm form) {
  switch (form) {
    case PayloadForm::Dense:
      return "dense";
    case PayloadForm::GlobalPriors:
      return "global_priors";
    case PayloadForm::ChowLiuTree:
      return "chow_liu_tree";
  }
  return "unknown";
}

std::size_t dense_float_count(std::size_t n) {
  const std::size_t d = 3 * n;
  return d * (d + 1) / 2 + d + d;
}

std::size_t global_priors_float_count(std::size_t n) { return n * (6 + 3) + 3 * n; }

std::size_t chow_liu_float_count(std::size_t n) {
  if (n == 0) return 0;
  return (6 + 3) + (n - 1) * (21 + 6) + 3 * n;
}

MarginalPayload empty_payload(PayloadForm form) {
  MarginalPayload p;
  p.form = form;
  return p;
}

namespace {

struct Unpacked {
  std::vector<VariableKey> keys;
  std::vector<Pose2> lin;
};

Unpacked unpack(const DenseGaussian& marginal, const Estimates& lin_points) {
  if (lin_points.empty()) throw DimensionMismatch("marginal payload over an empty key set");
  if (marginal.dimension() != 3 * static_cast<Eigen::Index>(lin_points.size())) {
    throw DimensionMismatch("marginal dimension does not match 3 x linearization points");
  }
  Unpacked u;
  for (const auto& [k, p] : lin_points) {
    u.keys.push_back(k);
    u.lin.push_back(p);
  }
  return u;
}

Eigen::Index block(std::size_t i) { return 3 * static_cast<Eigen::Index>(i); }

// Covariance and mean of the supported part of a marginal; variables with an
// all-zero information row are reported unsupported.
struct Moments {
  std::vector<bool> supported;
  Eigen::MatrixXd covariance;  // full size, zero on unsupported blocks
  Eigen::VectorXd mean;
};

Moments moments(const DenseGaussian& g) {
  const Eigen::Index n = g.dimension() / 3;
  Moments m;
  m.supported.resize(static_cast<std::size_t>(n));
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool s = !g.information_matrix().middleRows(3 * i, 3).isZero(0.0);
    m.supported[static_cast<std::size_t>(i)] = s;
    if (s) {
      for (Eigen::Index r = 0; r < 3; ++r) idx.push_back(3 * i + r);
    }
  }
  m.covariance = Eigen::MatrixXd::Zero(g.dimension(), g.dimension());
  m.mean = Eigen::VectorXd::Zero(g.dimension());
  if (idx.empty()) return m;
  const Eigen::MatrixXd info = select_block(g.information_matrix(), idx, idx);
  const Eigen::VectorXd eta = select_rows(g.information_vector(), idx);
  const auto llt = factor_information(info);
  const Eigen::MatrixXd cov = llt.solve(Eigen::MatrixXd::Identity(info.rows(), info.cols()));
  const Eigen::VectorXd mu = llt.solve(eta);
  for (std::size_t a = 0; a < idx.size(); ++a) {
    m.mean(idx[a]) = mu(static_cast<Eigen::Index>(a));
    for (std::size_t b = 0; b < idx.size(); ++b) {
      m.covariance(idx[a], idx[b]) = cov(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
    }
  }
  return m;
}

Eigen::Matrix3d inverse_spd3(const Eigen::Matrix3d& c) {
  Eigen::Matrix3d inv = factor_information(c).solve(Eigen::Matrix3d::Identity());
  return 0.5 * (inv + inv.transpose());
}

double log_det_spd(const Eigen::MatrixXd& m) {
  const auto llt = factor_information(m);
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace

MarginalPayload densify(const DenseGaussian& marginal, const Estimates& lin_points) {
  Unpacked u = unpack(marginal, lin_points);
  MarginalPayload p;
  p.form = PayloadForm::Dense;
  p.float_count = dense_float_count(u.keys.size());
  p.covered_keys = u.keys;
  p.factors.push_back(Factor::linear_gaussian(std::move(u.keys), marginal, std::move(u.lin)));
  return p;
}

std::vector<Factor> unary_priors(const std::vector<VariableKey>& keys, const std::vector<Pose2>& lin_points,
                                 const std::vector<Eigen::Matrix3d>& covariances,
                                 const std::vector<Eigen::Vector3d>& means) {
  if (keys.size() != lin_points.size() || keys.size() != covariances.size() || keys.size() != means.size()) {
    throw DimensionMismatch("unary_priors: argument sizes disagree");
  }
  std::vector<Factor> out;
  out.reserve(keys.size());
  for (std::size_t i = 0; i < keys.size(); ++i) {
    const Eigen::Matrix3d info = inverse_spd3(covariances[i]);
    out.push_back(Factor::linear_gaussian({keys[i]}, DenseGaussian(info, info * means[i]), {lin_points[i]}));
  }
  return out;
}

MarginalPayload global_priors(const DenseGaussian& marginal, const Estimates& lin_points) {
  Unpacked u = unpack(marginal, lin_points);
  const Moments m = moments(marginal);
  MarginalPayload p;
  p.form = PayloadForm::GlobalPriors;
  p.covered_keys = u.keys;
  p.float_count = global_priors_float_count(u.keys.size());
  for (std::size_t i = 0; i < u.keys.size(); ++i) {
    if (!m.supported[i]) {
      p.factors.push_back(Factor::linear_gaussian({u.keys[i]}, DenseGaussian::zero(3), {u.lin[i]}));
      continue;
    }
    const Eigen::Matrix3d cov = m.covariance.block<3, 3>(block(i), block(i));
    const Eigen::Vector3d mu = m.mean.segment<3>(block(i));
    auto prior = unary_priors({u.keys[i]}, {u.lin[i]}, {cov}, {mu});
    p.factors.push_back(std::move(prior.front()));
  }
  return p;
}

std::vector<std::pair<std::size_t, std::size_t>> chow_liu_edges(const DenseGaussian& marginal) {
  const auto n = static_cast<std::size_t>(marginal.dimension() / 3);
  const Eigen::MatrixXd cov = marginal.covariance();
  std::vector<double> log_det(n);
  for (std::size_t i = 0; i < n; ++i) log_det[i] = log_det_spd(cov.block<3, 3>(block(i), block(i)));
  auto mutual_information = [&](std::size_t i, std::size_t j) {
    Eigen::Matrix<double, 6, 6> joint;
    joint.topLeftCorner<3, 3>() = cov.block<3, 3>(block(i), block(i));
    joint.topRightCorner<3, 3>() = cov.block<3, 3>(block(i), block(j));
    joint.bottomLeftCorner<3, 3>() = cov.block<3, 3>(block(j), block(i));
    joint.bottomRightCorner<3, 3>() = cov.block<3, 3>(block(j), block(j));
    return 0.5 * (log_det[i] + log_det[j] - log_det_spd(joint));
  };

  // Prim's algorithm on the complete graph, rooted at the first variable
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  if (n < 2) return edges;
  std::vector<bool> in_tree(n, false);
  std::vector<double> best(n, -std::numeric_limits<double>::infinity());
  std::vector<std::size_t> parent(n, 0);
  in_tree[0] = true;
  for (std::size_t j = 1; j < n; ++j) best[j] = mutual_information(0, j);
  for (std::size_t step = 1; step < n; ++step) {
    std::size_t next = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (!in_tree[j] && (next == n || best[j] > best[next])) next = j;
    }
    in_tree[next] = true;
    edges.emplace_back(parent[next], next);
    for (std::size_t j = 0; j < n; ++j) {
      if (in_tree[j]) continue;
      const double mi = mutual_information(next, j);
      if (mi > best[j]) {
        best[j] = mi;
        parent[j] = next;
      }
    }
  }
  return edges;
}

MarginalPayload chow_liu_tree(const DenseGaussian& marginal, const Estimates& lin_points) {
  Unpacked u = unpack(marginal, lin_points);
  const Eigen::MatrixXd cov = marginal.covariance();
  const Eigen::VectorXd mu = marginal.mean();

  MarginalPayload p;
  p.form = PayloadForm::ChowLiuTree;
  p.covered_keys = u.keys;
  p.float_count = chow_liu_float_count(u.keys.size());
  auto root = unary_priors({u.keys[0]}, {u.lin[0]}, {cov.block<3, 3>(0, 0)}, {mu.head<3>()});
  p.factors.push_back(std::move(root.front()));

  for (const auto& [a, b] : chow_liu_edges(marginal)) {
    // p(x_b | x_a) = p(x_a, x_b) / p(x_a)
    const std::vector<Eigen::Index> idx{block(a), block(a) + 1, block(a) + 2, block(b), block(b) + 1, block(b) + 2};
    const Eigen::MatrixXd joint_cov = select_block(cov, idx, idx);
    const Eigen::VectorXd joint_mean = select_rows(mu, idx);
    Eigen::MatrixXd info = factor_information(joint_cov).solve(Eigen::MatrixXd::Identity(6, 6));
    Eigen::VectorXd eta = info * joint_mean;
    const Eigen::Matrix3d parent_info = inverse_spd3(joint_cov.topLeftCorner<3, 3>());
    info.topLeftCorner<3, 3>() -= parent_info;
    eta.head<3>() -= parent_info * joint_mean.head<3>();
    p.factors.push_back(Factor::linear_gaussian({u.keys[a], u.keys[b]}, DenseGaussian(info, eta), {u.lin[a], u.lin[b]}));
  }
  return p;
}

DenseGaussian assemble(const MarginalPayload& payload) {
  const Eigen::Index d = 3 * static_cast<Eigen::Index>(payload.covered_keys.size());
  Eigen::MatrixXd info = Eigen::MatrixXd::Zero(d, d);
  Eigen::VectorXd eta = Eigen::VectorXd::Zero(d);
  auto slot = [&](VariableKey k) {
    auto it = std::find(payload.covered_keys.begin(), payload.covered_keys.end(), k);
    if (it == payload.covered_keys.end()) throw DimensionMismatch("payload factor outside covered keys");
    return block(static_cast<std::size_t>(it - payload.covered_keys.begin()));
  };
  for (const Factor& f : payload.factors) {
    const DenseGaussian& g = f.density();
    for (std::size_t a = 0; a < f.keys().size(); ++a) {
      const Eigen::Index ra = slot(f.keys()[a]);
      eta.segment<3>(ra) += g.information_vector().segment<3>(block(a));
      for (std::size_t b = 0; b < f.keys().size(); ++b) {
        info.block<3, 3>(ra, slot(f.keys()[b])) += g.information_matrix().block<3, 3>(block(a), block(b));
      }
    }
  }
  return {info, eta};
}

double kl_divergence(const DenseGaussian& approx, const DenseGaussian& exact) {
  if (approx.dimension() != exact.dimension()) throw DimensionMismatch("KL: dimensions differ");
  const Eigen::Index k = exact.dimension();
  if (k == 0) return 0.0;
  Eigen::MatrixXd la = approx.information_matrix();
  Eigen::MatrixXd le = exact.information_matrix();
  if (Eigen::LLT<Eigen::MatrixXd>(la).info() != Eigen::Success ||
      Eigen::LLT<Eigen::MatrixXd>(le).info() != Eigen::Success) {
    const double lambda = regularization_weight(le);
    la.diagonal().array() += lambda;
    le.diagonal().array() += lambda;
  }
  const auto llt_e = factor_information(le);
  const auto llt_a = factor_information(la);
  const Eigen::MatrixXd cov_e = llt_e.solve(Eigen::MatrixXd::Identity(k, k));
  const Eigen::VectorXd mu_e = llt_e.solve(exact.information_vector());
  const Eigen::VectorXd mu_a = llt_a.solve(approx.information_vector());
  const Eigen::VectorXd dmu = mu_a - mu_e;
  const double log_det_e = 2.0 * llt_e.matrixLLT().diagonal().array().log().sum();
  const double log_det_a = 2.0 * llt_a.matrixLLT().diagonal().array().log().sum();
  const double kl = 0.5 * ((la * cov_e).trace() - static_cast<double>(k) + dmu.dot(la * dmu) + log_det_e - log_det_a);
  return std::max(kl, 0.0);
}

double kl_divergence(const MarginalPayload& approx, const DenseGaussian& exact) {
  return kl_divergence(assemble(approx), exact);
}

}  // namespace cslam

#include "cslam/factor_graph.hpp"

#include "cslam/errors.hpp"

#include <Eigen/OrderingMethods>

#include <algorithm>
#include <cmath>
#include <string>

namespace cslam {

void FactorGraph::add_factor(Factor f) {
  for (VariableKey k : f.keys()) {
    if (!variables_.contains(k)) {
      throw UnknownVariable("factor references unknown variable " + std::to_string(k.id));
    }
  }
  factors_.push_back(std::move(f));
}

double FactorGraph::error(const Estimates& est) const {
  double total = 0.0;
  for (const Factor& f : factors_) total += f.error(est);
  return total;
}

LinearSystem linearize(const FactorGraph& graph, const Estimates& est) {
  LinearSystem sys;
  sys.ordering.assign(graph.variables().begin(), graph.variables().end());
  for (std::size_t i = 0; i < sys.ordering.size(); ++i) {
    if (!est.contains(sys.ordering[i])) {
      throw MissingEstimate("no estimate for variable " + std::to_string(sys.ordering[i].id));
    }
    sys.block_of.emplace(sys.ordering[i], 3 * static_cast<Eigen::Index>(i));
  }
  const Eigen::Index n = 3 * static_cast<Eigen::Index>(sys.ordering.size());
  sys.vector = Eigen::VectorXd::Zero(n);

  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(n) + 36 * graph.size());
  // explicit diagonal keeps the sparsity pattern independent of damping
  for (Eigen::Index i = 0; i < n; ++i) triplets.emplace_back(i, i, 0.0);

  for (const Factor& f : graph.factors()) {
    const Factor::Linearized lin = f.linearize(est);
    sys.error += lin.error;
    const auto& keys = f.keys();
    for (std::size_t a = 0; a < keys.size(); ++a) {
      const Eigen::Index ra = sys.block_of.at(keys[a]);
      const auto ia = 3 * static_cast<Eigen::Index>(a);
      sys.vector.segment<3>(ra) += lin.vector.segment<3>(ia);
      for (std::size_t b = 0; b < keys.size(); ++b) {
        const auto ib = 3 * static_cast<Eigen::Index>(b);
        const auto block = lin.information.block<3, 3>(ia, ib);
        if (a != b && block.isZero(0.0)) continue;
        const Eigen::Index rb = sys.block_of.at(keys[b]);
        for (Eigen::Index r = 0; r < 3; ++r) {
          for (Eigen::Index c = 0; c < 3; ++c) triplets.emplace_back(ra + r, rb + c, block(r, c));
        }
      }
    }
  }
  sys.information.resize(n, n);
  sys.information.setFromTriplets(triplets.begin(), triplets.end());
  return sys;
}

namespace {

using SparseLDLT = Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>>;

bool factor_ok(const SparseLDLT& solver) {
  return solver.info() == Eigen::Success && solver.vectorD().size() > 0 &&
         solver.vectorD().minCoeff() > 0.0;
}

Eigen::SparseMatrix<double> add_diagonal(const Eigen::SparseMatrix<double>& m, double lambda,
                                         Eigen::Index begin, Eigen::Index end) {
  Eigen::SparseMatrix<double> out = m;
  for (Eigen::Index i = begin; i < end; ++i) out.coeffRef(i, i) += lambda;
  return out;
}

double sparse_trace(const Eigen::SparseMatrix<double>& m, Eigen::Index begin, Eigen::Index end) {
  double t = 0.0;
  for (Eigen::Index i = begin; i < end; ++i) t += m.coeff(i, i);
  return t;
}

constexpr double kRoundingSlack = 1e-13;

bool anchored(const FactorGraph& graph) {
  return std::any_of(graph.factors().begin(), graph.factors().end(), [](const Factor& f) {
    return f.kind() == FactorKind::Prior || f.kind() == FactorKind::LinearGaussian;
  });
}

}  // namespace

OptimizeResult optimize(const FactorGraph& graph, const Estimates& init, const SolverConfig& cfg) {
  OptimizeResult result;
  result.estimates = init;
  for (VariableKey k : graph.variables()) {
    if (!init.contains(k)) throw MissingEstimate("no initial estimate for variable " + std::to_string(k.id));
  }
  if (graph.variables().empty()) return result;
  if (!anchored(graph)) throw GaugeFree("graph has no prior or linear Gaussian factor");

  const double initial_err = graph.error(result.estimates);
  double err = initial_err;
  double lambda = cfg.lm_initial_lambda;
  SparseLDLT solver;
  bool analyzed = false;

  while (result.iterations < cfg.max_iterations && err > 0.0) {
    const LinearSystem sys = linearize(graph, result.estimates);
    const Eigen::Index n = sys.dimension();
    if (!analyzed) {
      solver.analyzePattern(sys.information);
      analyzed = true;
    }
    bool accepted = false;
    bool stalled = false;
    const double previous = err;
    while (!accepted) {
      solver.factorize(add_diagonal(sys.information, lambda, 0, n));
      const bool ok = factor_ok(solver);
      if (ok) {
        const Eigen::VectorXd delta = solver.solve(sys.vector);
        Estimates candidate = result.estimates;
        for (std::size_t i = 0; i < sys.ordering.size(); ++i) {
          const VariableKey k = sys.ordering[i];
          candidate.set(k, retract(candidate.at(k), delta.segment<3>(3 * static_cast<Eigen::Index>(i))));
        }
        const double candidate_err = graph.error(candidate);
        // steps within rounding of the current error are taken: they are Gauss-Newton
        // refinements the error comparison can no longer resolve
        if (std::isfinite(candidate_err) && candidate_err <= err + kRoundingSlack * err) {
          result.estimates = std::move(candidate);
          err = candidate_err;
          lambda = std::max(lambda / 10.0, cfg.lm_lambda_min);
          accepted = true;
          break;
        }
      }
      lambda *= 10.0;
      if (lambda > cfg.lm_lambda_max) {
        if (!ok) {
          throw LinearSolveFailed("normal equations are not positive definite after damping");
        }
        stalled = true;
        break;
      }
    }
    if (stalled) break;
    ++result.iterations;
    const double decrease = previous - err;
    if (decrease < cfg.absolute_error_tol || decrease < cfg.relative_error_decrease_tol * previous) break;
  }
  if (err > initial_err) {
    result.estimates = init;
    err = initial_err;
  }
  result.final_error = err;
  return result;
}

DenseGaussian marginalize_system(const LinearSystem& sys, const std::vector<VariableKey>& keep) {
  const Eigen::Index n = sys.dimension();
  std::vector<Eigen::Index> kept_scalars;
  std::vector<bool> is_kept(static_cast<std::size_t>(n), false);
  for (VariableKey k : keep) {
    auto it = sys.block_of.find(k);
    if (it == sys.block_of.end()) throw UnknownVariable("marginal key " + std::to_string(k.id) + " not in system");
    for (Eigen::Index r = 0; r < 3; ++r) {
      if (is_kept[static_cast<std::size_t>(it->second + r)]) throw DimensionMismatch("repeated marginal key");
      is_kept[static_cast<std::size_t>(it->second + r)] = true;
      kept_scalars.push_back(it->second + r);
    }
  }
  std::vector<Eigen::Index> eliminated;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!is_kept[static_cast<std::size_t>(i)]) eliminated.push_back(i);
  }
  const auto m = static_cast<Eigen::Index>(kept_scalars.size());
  const auto ne = static_cast<Eigen::Index>(eliminated.size());

  if (eliminated.empty()) {
    const Eigen::MatrixXd dense = Eigen::MatrixXd(sys.information);
    return {select_block(dense, kept_scalars, kept_scalars), select_rows(sys.vector, kept_scalars)};
  }

  // fill-reducing order on the eliminated block, kept variables last
  std::vector<Eigen::Index> position(static_cast<std::size_t>(n), -1);
  for (Eigen::Index i = 0; i < ne; ++i) position[static_cast<std::size_t>(eliminated[static_cast<std::size_t>(i)])] = i;
  std::vector<Eigen::Triplet<double>> ee;
  for (Eigen::Index col = 0; col < n; ++col) {
    const Eigen::Index pc = position[static_cast<std::size_t>(col)];
    if (pc < 0) continue;
    for (Eigen::SparseMatrix<double>::InnerIterator it(sys.information, col); it; ++it) {
      const Eigen::Index pr = position[static_cast<std::size_t>(it.row())];
      if (pr >= 0) ee.emplace_back(pr, pc, it.value());
    }
  }
  Eigen::SparseMatrix<double> h_ee(ne, ne);
  h_ee.setFromTriplets(ee.begin(), ee.end());
  Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int> pinv;
  Eigen::AMDOrdering<int> amd;
  amd(h_ee, pinv);

  std::vector<Eigen::Index> order;  // new position -> old scalar index
  order.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < ne; ++i) order.push_back(eliminated[static_cast<std::size_t>(pinv.indices()(i))]);
  for (Eigen::Index k : kept_scalars) order.push_back(k);
  std::vector<int> new_pos(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < order.size(); ++i) new_pos[static_cast<std::size_t>(order[i])] = static_cast<int>(i);

  std::vector<Eigen::Triplet<double>> permuted;
  permuted.reserve(static_cast<std::size_t>(sys.information.nonZeros()));
  double kept_diag = 1.0;
  for (Eigen::Index col = 0; col < n; ++col) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(sys.information, col); it; ++it) {
      const int r = new_pos[static_cast<std::size_t>(it.row())];
      const int c = new_pos[static_cast<std::size_t>(col)];
      permuted.emplace_back(r, c, it.value());
      if (r == c && r >= ne) kept_diag = std::max(kept_diag, std::abs(it.value()));
    }
  }
  Eigen::SparseMatrix<double> a(n, n);
  a.setFromTriplets(permuted.begin(), permuted.end());
  Eigen::VectorXd b(n);
  for (Eigen::Index i = 0; i < n; ++i) b(i) = sys.vector(order[static_cast<std::size_t>(i)]);

  // The kept block is shifted so its pivots stay positive even when the
  // marginal itself is singular; the shift is removed from the result.
  const double shift = kept_diag;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::NaturalOrdering<int>> solver;
  auto factor_with = [&](double lambda) {
    Eigen::SparseMatrix<double> shifted = add_diagonal(a, shift, ne, n);
    if (lambda > 0.0) shifted = add_diagonal(shifted, lambda, 0, ne);
    solver.compute(shifted);
    return solver.info() == Eigen::Success && solver.vectorD().head(ne).minCoeff() > 0.0;
  };
  if (!factor_with(0.0)) {
    const double lambda = 1e-9 * sparse_trace(a, 0, ne) / static_cast<double>(ne);
    if (!(lambda > 0.0) || !factor_with(lambda)) {
      throw SingularBlock("eliminated block is not invertible after regularization");
    }
  }

  const Eigen::SparseMatrix<double>& l = solver.matrixL().nestedExpression();
  Eigen::MatrixXd l_kk = Eigen::MatrixXd::Identity(m, m);
  for (Eigen::Index col = ne; col < n; ++col) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(l, col); it; ++it) {
      if (it.row() > col) l_kk(it.row() - ne, col - ne) = it.value();
    }
  }
  const Eigen::VectorXd d_k = solver.vectorD().tail(m);
  Eigen::MatrixXd info = l_kk * d_k.asDiagonal() * l_kk.transpose();
  info.diagonal().array() -= shift;
  const Eigen::VectorXd z = solver.matrixL().solve(b);
  Eigen::VectorXd eta = l_kk * z.tail(m);
  return {std::move(info), std::move(eta)};
}

Marginal marginal_on(const FactorGraph& graph, const Estimates& est, const std::vector<VariableKey>& keep) {
  for (VariableKey k : keep) {
    if (!graph.has_variable(k)) throw UnknownVariable("marginal key " + std::to_string(k.id) + " not in graph");
  }
  const LinearSystem sys = linearize(graph, est);
  return {keep, marginalize_system(sys, keep), est.restricted(keep)};
}

Eigen::MatrixXd joint_marginal_covariance(const FactorGraph& graph, const Estimates& est,
                                          const std::vector<VariableKey>& keys) {
  return marginal_on(graph, est, keys).density.covariance();
}

CovarianceQuery::CovarianceQuery(const FactorGraph& graph, const Estimates& est)
    : system_(linearize(graph, est)), solver_(std::make_unique<SparseLDLT>()) {
  const Eigen::Index n = system_.dimension();
  if (n == 0) return;
  solver_->compute(system_.information);
  if (!factor_ok(*solver_)) {
    const double lambda = 1e-9 * sparse_trace(system_.information, 0, n) / static_cast<double>(n);
    solver_->compute(add_diagonal(system_.information, lambda, 0, n));
    if (!(lambda > 0.0) || !factor_ok(*solver_)) {
      throw SingularBlock("covariance query: system is not invertible after regularization");
    }
  }
  mean_ = solver_->solve(system_.vector);
}

Eigen::Matrix3d CovarianceQuery::covariance(VariableKey k) const {
  auto it = system_.block_of.find(k);
  if (it == system_.block_of.end()) throw UnknownVariable("covariance query: unknown variable " + std::to_string(k.id));
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(system_.dimension(), 3);
  rhs.block<3, 3>(it->second, 0).setIdentity();
  const Eigen::MatrixXd cols = solver_->solve(rhs);
  Eigen::Matrix3d c = cols.block<3, 3>(it->second, 0);
  return 0.5 * (c + c.transpose());
}

Eigen::Vector3d CovarianceQuery::mean(VariableKey k) const {
  auto it = system_.block_of.find(k);
  if (it == system_.block_of.end()) throw UnknownVariable("covariance query: unknown variable " + std::to_string(k.id));
  return mean_.segment<3>(it->second);
}

}  // namespace cslam

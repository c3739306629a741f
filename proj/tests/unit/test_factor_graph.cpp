#include "catch_amalgamated.hpp"

#include "cslam/errors.hpp"
#include "cslam/factor_graph.hpp"
#include "test_support.hpp"

#include <algorithm>

using namespace cslam;
using Catch::Matchers::WithinAbs;

namespace {

FactorGraph chain(int n, const Pose2& step, const Eigen::Matrix3d& info, Estimates* truth) {
  FactorGraph g;
  Pose2 p = Pose2::identity();
  for (int i = 0; i < n; ++i) {
    g.add_variable({i});
    if (truth) truth->set({i}, p);
    p = compose(p, step);
  }
  g.add_factor(Factor::prior({0}, Pose2::identity(), info, 0));
  for (int i = 1; i < n; ++i) g.add_factor(Factor::between({i - 1}, {i}, step, info, i));
  return g;
}

Eigen::VectorXd solve_dense(const LinearSystem& sys) {
  return Eigen::MatrixXd(sys.information).ldlt().solve(sys.vector);
}

}  // namespace

TEST_CASE("analytic Jacobians match central differences", "[factor][property]") {
  std::mt19937 rng(5);
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Estimates est;
    est.set({0}, test::random_pose(rng));
    est.set({1}, test::random_pose(rng));
    const Factor prior = Factor::prior({0}, test::random_pose(rng), Eigen::Matrix3d::Identity());
    const Factor edge = Factor::between({0}, {1}, test::random_pose(rng), Eigen::Matrix3d::Identity());
    for (const Factor* f : {&prior, &edge}) {
      for (std::size_t i = 0; i < f->keys().size(); ++i) {
        const Eigen::Matrix3d analytic = f->jacobian(est, i);
        const Eigen::Matrix3d numeric = test::numeric_jacobian(*f, est, i);
        const double scale = std::max(1.0, analytic.cwiseAbs().maxCoeff());
        REQUIRE((analytic - numeric).cwiseAbs().maxCoeff() / scale < 1e-5);
        ++checked;
      }
    }
  }
  CHECK(checked == 300);
}

TEST_CASE("linearize examples", "[factor_graph]") {
  SECTION("prior at its own mean has zero information vector") {
    FactorGraph g;
    g.add_variable({0});
    const Pose2 mean{1.0, -2.0, 0.7};
    g.add_factor(Factor::prior({0}, mean, 5.0 * Eigen::Matrix3d::Identity()));
    Estimates est;
    est.set({0}, mean);
    const LinearSystem sys = linearize(g, est);
    CHECK(sys.vector.isZero(1e-15));
    CHECK(sys.error == 0.0);
  }
  SECTION("consistent chain has zero gradient and SPD information") {
    Estimates truth;
    const FactorGraph g = chain(2, Pose2{1.0, 0.2, 0.3}, Eigen::Matrix3d::Identity(), &truth);
    const LinearSystem sys = linearize(g, truth);
    CHECK(sys.vector.isZero(1e-12));
    const Eigen::MatrixXd h(sys.information);
    CHECK(h.llt().info() == Eigen::Success);
  }
  SECTION("gradient matches finite differences of the total error") {
    Estimates truth;
    const FactorGraph g = chain(3, Pose2{1.0, 0.2, 0.3}, 2.0 * Eigen::Matrix3d::Identity(), &truth);
    Estimates est = truth;
    est.set({1}, retract(truth.at({1}), Tangent2(0.1, -0.05, 0.08)));
    const LinearSystem sys = linearize(g, est);
    const Eigen::VectorXd numeric = test::numeric_gradient(g, est, sys);
    CHECK((-sys.vector - numeric).cwiseAbs().maxCoeff() < 1e-5);
  }
  SECTION("missing estimate is reported") {
    FactorGraph g;
    g.add_variable({0});
    g.add_factor(Factor::prior({0}, Pose2{}, Eigen::Matrix3d::Identity()));
    CHECK_THROWS_AS(linearize(g, Estimates{}), MissingEstimate);
  }
}

TEST_CASE("factor graph rejects unknown variables", "[factor_graph]") {
  FactorGraph g;
  g.add_variable({0});
  CHECK_THROWS_AS(g.add_factor(Factor::between({0}, {1}, Pose2{}, Eigen::Matrix3d::Identity())), UnknownVariable);
}

TEST_CASE("optimize examples", "[solver]") {
  SECTION("prior-only graph lands on the prior mean") {
    FactorGraph g;
    g.add_variable({0});
    const Pose2 mean{3.0, -1.0, 2.5};
    g.add_factor(Factor::prior({0}, mean, Eigen::Matrix3d::Identity()));
    Estimates init;
    init.set({0}, Pose2{-4.0, 2.0, -2.0});
    const OptimizeResult r = optimize(g, init);
    const Tangent2 d = local(r.estimates.at({0}), mean);
    CHECK(d.norm() < 1e-9);
    CHECK(r.final_error < 1e-12);
  }
  SECTION("noiseless odometry chain recovers composed trajectory") {
    Estimates truth;
    const FactorGraph g = chain(5, Pose2{1.0, 0.1, 0.25}, Eigen::Matrix3d::Identity(), &truth);
    Estimates init;
    std::mt19937 rng(1);
    std::normal_distribution<double> noise(0.0, 0.1);
    for (const auto& [k, p] : truth) init.set(k, retract(p, Tangent2(noise(rng), noise(rng), noise(rng))));
    const OptimizeResult r = optimize(g, init);
    for (const auto& [k, p] : truth) CHECK(local(r.estimates.at(k), p).norm() < 1e-8);
    CHECK(r.final_error < 1e-12);
  }
  SECTION("unanchored graph is rejected") {
    FactorGraph g;
    g.add_variable({0});
    g.add_variable({1});
    g.add_factor(Factor::between({0}, {1}, Pose2{1, 0, 0}, Eigen::Matrix3d::Identity()));
    Estimates init;
    init.set({0}, Pose2{});
    init.set({1}, Pose2{});
    CHECK_THROWS_AS(optimize(g, init), GaugeFree);
  }
}

TEST_CASE("optimize never increases the error", "[solver][property]") {
  std::mt19937 rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    auto [g, est] = test::random_graph(rng, 6, 5);
    const double before = g.error(est);
    const OptimizeResult r = optimize(g, est);
    REQUIRE(r.final_error <= before);
    REQUIRE_THAT(r.final_error, WithinAbs(g.error(r.estimates), 1e-9 * std::max(1.0, before)));
  }
}

TEST_CASE("factor insertion order does not change the solution", "[solver][property]") {
  std::mt19937 rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    // consistent measurements with small noise: a unique, well-conditioned optimum
    FactorGraph g;
    Estimates truth;
    Estimates init;
    std::normal_distribution<double> noise(0.0, 0.05);
    const int n = 8;
    for (int i = 0; i < n; ++i) {
      g.add_variable({i});
      truth.set({i}, test::random_pose(rng, 4.0));
    }
    std::vector<Factor> factors{Factor::prior({0}, truth.at({0}), Eigen::Matrix3d::Identity() * 100)};
    for (int i = 1; i < n; ++i) {
      factors.push_back(Factor::between({i - 1}, {i}, between(truth.at({i - 1}), truth.at({i})),
                                        Eigen::Matrix3d::Identity() * 10));
    }
    for (int e = 0; e < 6; ++e) {
      const int a = std::uniform_int_distribution<int>(0, n - 1)(rng);
      const int b = (a + 2) % n;
      const Pose2 z = retract(between(truth.at({a}), truth.at({b})), Tangent2(noise(rng), noise(rng), noise(rng)));
      factors.push_back(Factor::between({a}, {b}, z, Eigen::Matrix3d::Identity() * 10));
    }
    for (const auto& [k, p] : truth) init.set(k, retract(p, Tangent2(noise(rng), noise(rng), noise(rng))));

    SolverConfig tight;
    tight.max_iterations = 50;
    tight.relative_error_decrease_tol = 1e-14;
    tight.absolute_error_tol = 1e-20;
    FactorGraph a = g;
    for (const Factor& f : factors) a.add_factor(f);
    std::shuffle(factors.begin(), factors.end(), rng);
    FactorGraph b = g;
    for (const Factor& f : factors) b.add_factor(f);
    const OptimizeResult ra = optimize(a, init, tight);
    const OptimizeResult rb = optimize(b, init, tight);
    for (const auto& [k, p] : ra.estimates) REQUIRE(local(p, rb.estimates.at(k)).norm() < 1e-9);
  }
}

TEST_CASE("marginal_on examples", "[marginal]") {
  SECTION("keeping every variable returns the dense linearized system") {
    std::mt19937 rng(4);
    auto [g, est] = test::random_graph(rng, 4, 2);
    const std::vector<VariableKey> keep{{0}, {1}, {2}, {3}};
    const Marginal m = marginal_on(g, est, keep);
    const LinearSystem sys = linearize(g, est);
    CHECK((m.density.information_matrix() - Eigen::MatrixXd(sys.information)).norm() < 1e-12);
    CHECK((m.density.information_vector() - sys.vector).norm() < 1e-12);
  }
  SECTION("3-pose chain marginal equals the inverse oracle covariance block") {
    Estimates truth;
    std::mt19937 rng(8);
    FactorGraph g;
    for (int i = 0; i < 3; ++i) {
      g.add_variable({i});
      truth.set({i}, test::random_pose(rng, 2.0));
    }
    g.add_factor(Factor::prior({0}, Pose2{}, test::random_info3(rng)));
    g.add_factor(Factor::between({0}, {1}, Pose2{1, 0, 0.2}, test::random_info3(rng)));
    g.add_factor(Factor::between({1}, {2}, Pose2{1, 0.3, -0.1}, test::random_info3(rng)));
    const Marginal m = marginal_on(g, truth, {{2}});
    const LinearSystem sys = linearize(g, truth);
    const Eigen::MatrixXd cov = Eigen::MatrixXd(sys.information).inverse();
    const Eigen::Matrix3d expected = cov.block<3, 3>(sys.block_of.at({2}), sys.block_of.at({2})).inverse();
    CHECK((m.density.information_matrix() - expected).norm() < 1e-9);
    const Eigen::VectorXd mean = cov * sys.vector;
    const Eigen::Vector3d expected_eta = expected * mean.segment<3>(sys.block_of.at({2}));
    CHECK((m.density.information_vector() - expected_eta).norm() < 1e-9);
  }
  SECTION("disconnected components stay independent") {
    std::mt19937 rng(12);
    FactorGraph g;
    Estimates est;
    for (int i = 0; i < 4; ++i) {
      g.add_variable({i});
      est.set({i}, test::random_pose(rng));
    }
    g.add_factor(Factor::prior({0}, Pose2{}, test::random_info3(rng)));
    g.add_factor(Factor::between({0}, {1}, Pose2{1, 0, 0}, test::random_info3(rng)));
    g.add_factor(Factor::prior({2}, Pose2{}, test::random_info3(rng)));
    g.add_factor(Factor::between({2}, {3}, Pose2{1, 0, 0}, test::random_info3(rng)));
    // keep component {0,1} plus one variable of the other component
    const Marginal m = marginal_on(g, est, {{0}, {1}, {3}});
    const LinearSystem sys = linearize(g, est);
    const Eigen::MatrixXd h(sys.information);
    CHECK((m.density.information_matrix().topLeftCorner(6, 6) - h.topLeftCorner(6, 6)).norm() < 1e-12);
    CHECK(m.density.information_matrix().block(0, 6, 6, 3).norm() < 1e-12);
  }
}

TEST_CASE("joint_marginal_covariance examples", "[marginal]") {
  SECTION("single prior with identity information") {
    FactorGraph g;
    g.add_variable({0});
    g.add_factor(Factor::prior({0}, Pose2{}, Eigen::Matrix3d::Identity()));
    Estimates est;
    est.set({0}, Pose2{});
    CHECK((joint_marginal_covariance(g, est, {{0}}) - Eigen::MatrixXd::Identity(3, 3)).norm() < 1e-12);
  }
  SECTION("two-pose chain doubles the covariance") {
    FactorGraph g;
    g.add_variable({0});
    g.add_variable({1});
    g.add_factor(Factor::prior({0}, Pose2{}, Eigen::Matrix3d::Identity()));
    g.add_factor(Factor::between({0}, {1}, Pose2{}, Eigen::Matrix3d::Identity()));
    Estimates est;
    est.set({0}, Pose2{});
    est.set({1}, Pose2{});
    const Eigen::MatrixXd c = joint_marginal_covariance(g, est, {{1}});
    CHECK((c - 2.0 * Eigen::MatrixXd::Identity(3, 3)).norm() < 1e-12);
  }
  SECTION("key order permutes blocks") {
    std::mt19937 rng(21);
    auto [g, est] = test::random_graph(rng, 5, 3);
    const Eigen::MatrixXd ab = joint_marginal_covariance(g, est, {{1}, {3}});
    const Eigen::MatrixXd ba = joint_marginal_covariance(g, est, {{3}, {1}});
    CHECK((ab.topLeftCorner(3, 3) - ba.bottomRightCorner(3, 3)).norm() < 1e-10);
    CHECK((ab.topRightCorner(3, 3) - ba.bottomLeftCorner(3, 3)).norm() < 1e-10);
  }
}

TEST_CASE("condensed sub-graph reproduces the kept solution", "[marginal][property]") {
  std::mt19937 rng(2718);
  for (int trial = 0; trial < 50; ++trial) {
    auto [g, est] = test::random_graph(rng, 8, 6);
    // split: variables 0..3 condensed onto their boundary, 4..7 kept
    auto condensed = [](const Factor& f) {
      return std::any_of(f.keys().begin(), f.keys().end(), [](VariableKey k) { return k.id < 4; });
    };
    FactorGraph sub;
    FactorGraph rest;
    for (VariableKey k : g.variables()) {
      sub.add_variable(k);
      if (k.id >= 4) rest.add_variable(k);
    }
    std::set<VariableKey> boundary;
    for (const Factor& f : g.factors()) {
      if (condensed(f)) {
        sub.add_factor(f);
        for (VariableKey k : f.keys()) {
          if (k.id >= 4) boundary.insert(k);
        }
      } else {
        rest.add_factor(f);
      }
    }
    FactorGraph sub_touched;
    for (const Factor& f : sub.factors()) {
      for (VariableKey k : f.keys()) sub_touched.add_variable(k);
    }
    for (const Factor& f : sub.factors()) sub_touched.add_factor(f);
    const std::vector<VariableKey> keep(boundary.begin(), boundary.end());
    if (keep.empty()) continue;
    const Marginal m = marginal_on(sub_touched, est, keep);
    std::vector<Pose2> lin;
    for (VariableKey k : keep) lin.push_back(est.at(k));
    rest.add_factor(Factor::linear_gaussian(keep, m.density, lin));

    const LinearSystem full = linearize(g, est);
    const LinearSystem reduced = linearize(rest, est);
    const Eigen::VectorXd dx_full = solve_dense(full);
    const Eigen::VectorXd dx_reduced = solve_dense(reduced);
    for (const auto& [k, off] : reduced.block_of) {
      REQUIRE((dx_full.segment<3>(full.block_of.at(k)) - dx_reduced.segment<3>(off)).norm() < 1e-9);
    }
  }
}

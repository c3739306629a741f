#include "catch_amalgamated.hpp"

#include "cslam/dataset.hpp"
#include "cslam/errors.hpp"
#include "cslam/server.hpp"

#include <algorithm>
#include <random>
#include <set>

using namespace cslam;

namespace {

const Eigen::Matrix3d kInfo = 100.0 * Eigen::Matrix3d::Identity();

// Straight-line odometry batch over ids [first, first + count) plus extra edges.
SensorBatch chain_batch(std::int64_t index, std::int64_t first, std::int64_t count,
                        const std::vector<std::pair<std::int64_t, std::int64_t>>& extra = {}) {
  SensorBatch b;
  b.index = index;
  FactorId id = 1000 * index;
  for (std::int64_t i = first; i < first + count; ++i) {
    b.new_keys.push_back({i});
    b.initial_estimates.set({i}, Pose2(static_cast<double>(i), 0.0, 0.0));
    if (i == 0) {
      b.factors.push_back(Factor::prior({0}, Pose2::identity(), 1e6 * Eigen::Matrix3d::Identity(), id++));
    } else {
      b.factors.push_back(Factor::between({i - 1}, {i}, Pose2(1.0, 0.0, 0.0), kInfo, id++));
    }
  }
  for (auto [from, to] : extra) {
    b.factors.push_back(Factor::between({from}, {to}, Pose2(static_cast<double>(to - from), 0.0, 0.0), kInfo, id++));
  }
  return b;
}

ServerConfig temporal(int budget) {
  ServerConfig c;
  c.separators.budget = budget;
  return c;
}

SolverConfig tight_solver() {
  SolverConfig s;
  s.max_iterations = 100;
  s.relative_error_decrease_tol = 1e-14;
  s.absolute_error_tol = 1e-16;
  return s;
}

}  // namespace

TEST_CASE("classify_factor examples", "[server]") {
  PartitionLabels l;
  l.historic = {{0}, {1}};
  l.separator = {{2}, {3}};
  l.fresh = {{4}, {5}};
  auto between = [](std::int64_t a, std::int64_t b) { return Factor::between({a}, {b}, Pose2::identity(), kInfo); };
  CHECK(classify_factor(between(0, 1), l) == MeasurementClass::Historic);
  CHECK(classify_factor(between(1, 2), l) == MeasurementClass::Historic);
  CHECK(classify_factor(between(2, 3), l) == MeasurementClass::Separator);
  CHECK(classify_factor(between(3, 4), l) == MeasurementClass::NewSeparator);
  CHECK(classify_factor(between(4, 5), l) == MeasurementClass::NewSeparator);
  CHECK(classify_factor(between(5, 0), l) == MeasurementClass::LoopClosure);
  CHECK_THROWS_AS(classify_factor(between(5, 9), l), UnknownVariable);
  CHECK(std::string(to_string(MeasurementClass::LoopClosure)) == "Z_lc");
}

TEST_CASE("temporal separators are the newest poses", "[server]") {
  Estimates est;
  for (int i = 0; i < 400; ++i) est.set({i}, Pose2(i, 0, 0));
  const auto sep = select_separators(est, {SeparatorMode::Temporal, 300});
  REQUIRE(sep.size() == 300);
  CHECK(sep.front() == VariableKey{100});
  CHECK(sep.back() == VariableKey{399});

  const auto all = select_separators(est, {SeparatorMode::Temporal, 500});
  CHECK(all.size() == 400);
  CHECK_THROWS_AS(select_separators(est, {SeparatorMode::Temporal, 0}), ConfigError);
}

TEST_CASE("spatial separators are the poses nearest the newest one", "[server]") {
  Estimates est;
  est.set({0}, Pose2(10, 0, 0));
  for (int i = 1; i <= 4; ++i) est.set({i}, Pose2(i - 1, 0, 0));
  est.set({5}, Pose2(10.5, 0, 0));
  const auto sep = select_separators(est, {SeparatorMode::Spatial, 2});
  CHECK(sep == std::vector<VariableKey>{{0}, {5}});
  const auto three = select_separators(est, {SeparatorMode::Spatial, 3});
  CHECK(three == std::vector<VariableKey>{{0}, {4}, {5}});
}

TEST_CASE("first cycle below budget sends estimates only", "[server]") {
  ServerNode server(temporal(300));
  server.ingest_sensor_batch(chain_batch(0, 0, 10));
  CHECK_FALSE(server.detect_and_emit_early_lc(0).has_value());
  const CycleResult r = server.run_update_cycle(0);
  const auto& msg = std::get<SummaryMessage>(r.message);
  CHECK(msg.separator_keys.size() == 10);
  CHECK(msg.payload.empty());
  CHECK(msg.float_count() == 0);
  CHECK(msg.separator_estimates.size() == 10);
  CHECK(msg.snapshot_batch == 0);
  CHECK_FALSE(msg.reload.has_value());
  CHECK(r.folded_batches == 1);
  CHECK_THROWS_AS(server.run_update_cycle(0), Error);
}

TEST_CASE("empty batch is a no-op", "[server]") {
  ServerNode server(temporal(5));
  SensorBatch empty;
  server.ingest_sensor_batch(empty);
  CHECK(server.graph().size() == 0);
  CHECK(server.estimates().empty());
}

TEST_CASE("duplicate variables are rejected", "[server]") {
  ServerNode server(temporal(5));
  server.ingest_sensor_batch(chain_batch(0, 0, 3));
  CHECK_THROWS_AS(server.ingest_sensor_batch(chain_batch(1, 2, 3)), DuplicateVariable);
}

TEST_CASE("config validation", "[server]") {
  ServerConfig c;
  c.baseline = true;
  c.early_lc = true;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.early_lc = false;
  c.sparsify = true;
  CHECK_THROWS_AS(ServerNode{c}, ConfigError);
}

TEST_CASE("loop closures to historic variables are labeled and sent early", "[server]") {
  ServerConfig cfg = temporal(5);
  cfg.early_lc = true;
  ServerNode server(cfg);
  server.ingest_sensor_batch(chain_batch(0, 0, 10));
  server.run_update_cycle(0);
  server.commit_cycle();

  SECTION("one factor to one historic pose") {
    server.ingest_sensor_batch(chain_batch(1, 10, 10, {{3, 12}}));
    const PartitionLabels l = server.labels();
    CHECK(l.loop_closure == std::set<VariableKey>{{3}});
    CHECK(l.historic.size() == 5);
    CHECK(l.separator.size() == 5);
    CHECK(l.fresh.size() == 10);
    CHECK(l.other_historic().size() == 4);

    const auto msg = server.detect_and_emit_early_lc(42);
    REQUIRE(msg.has_value());
    CHECK(msg->lc_keys == std::vector<VariableKey>{{3}});
    CHECK(msg->lc_priors.size() == 1);
    CHECK(msg->lc_factors.size() == 1);
    CHECK(msg->lc_estimates.size() == 1);
    CHECK(msg->float_count() == 21);
    CHECK(msg->detection_time == 42);
    CHECK(msg->batch_index == 1);
    CHECK_FALSE(server.detect_and_emit_early_lc(43).has_value());
  }

  SECTION("two factors to the same historic pose share one prior") {
    server.ingest_sensor_batch(chain_batch(1, 10, 10, {{3, 12}, {3, 15}}));
    const auto msg = server.detect_and_emit_early_lc(0);
    REQUIRE(msg.has_value());
    CHECK(msg->lc_keys.size() == 1);
    CHECK(msg->lc_priors.size() == 1);
    CHECK(msg->lc_factors.size() == 2);
  }

  SECTION("factors among new and separator poses are not loop closures") {
    server.ingest_sensor_batch(chain_batch(1, 10, 10, {{7, 14}}));
    CHECK_FALSE(server.detect_and_emit_early_lc(0).has_value());
  }
}

TEST_CASE("early loop closure priors match the historic marginal", "[server]") {
  ServerConfig cfg = temporal(5);
  cfg.early_lc = true;
  ServerNode server(cfg);
  server.ingest_sensor_batch(chain_batch(0, 0, 10));
  server.run_update_cycle(0);
  server.commit_cycle();
  server.ingest_sensor_batch(chain_batch(1, 10, 10, {{2, 12}}));
  const auto msg = server.detect_and_emit_early_lc(0);
  REQUIRE(msg.has_value());

  // oracle: a prior-anchored chain 0..4 plus the 4-5 link, with 5.. as loose ends
  FactorGraph g;
  for (int i = 0; i <= 5; ++i) g.add_variable({i});
  g.add_factor(Factor::prior({0}, Pose2::identity(), 1e6 * Eigen::Matrix3d::Identity()));
  for (int i = 1; i <= 5; ++i) g.add_factor(Factor::between({i - 1}, {i}, Pose2(1, 0, 0), kInfo));
  Estimates est;
  for (int i = 0; i <= 5; ++i) est.set({i}, server.estimates().at({i}));
  const Eigen::MatrixXd cov = joint_marginal_covariance(g, est, {{2}});
  const Eigen::Matrix3d info = msg->lc_priors[0].density().information_matrix();
  CHECK((info - cov.inverse()).norm() < 1e-6 * info.norm());
}

TEST_CASE("temporal window after budget is exceeded", "[server]") {
  ServerNode server(temporal(300));
  for (int b = 0; b < 40; ++b) server.ingest_sensor_batch(chain_batch(b, 10 * b, 10));
  const CycleResult r = server.run_update_cycle(0);
  const auto& msg = std::get<SummaryMessage>(r.message);
  REQUIRE(msg.separator_keys.size() == 300);
  CHECK(msg.separator_keys.front() == VariableKey{100});
  CHECK(msg.payload.covered_keys == msg.separator_keys);
  CHECK(msg.float_count() == dense_float_count(300));
  CHECK(msg.float_count() == 407250);
}

TEST_CASE("baseline cycle sends the separator poses", "[server]") {
  ServerConfig cfg = temporal(300);
  cfg.baseline = true;
  ServerNode server(cfg);
  for (int b = 0; b < 40; ++b) server.ingest_sensor_batch(chain_batch(b, 10 * b, 10));
  const auto msg = std::get<BaselinePoseMessage>(server.run_update_cycle(0).message);
  CHECK(msg.keys.size() == 300);
  CHECK(msg.float_count() == 900);
  CHECK(msg.estimates.size() == 300);
}

TEST_CASE("payload plus separator factors reproduce the server solution", "[server]") {
  const auto batches = make_batches(generate_grid_world(6, 8, 0.4, GridNoise{}, 5), ReplaySchedule{0.02, 8});
  for (SeparatorMode mode : {SeparatorMode::Temporal, SeparatorMode::Spatial}) {
    ServerConfig cfg;
    cfg.separators = {mode, 12};
    cfg.solver = tight_solver();
    ServerNode server(cfg);
    for (const auto& b : batches) server.ingest_sensor_batch(b);
    const auto msg = std::get<SummaryMessage>(server.run_update_cycle(0).message);
    const std::set<VariableKey> sep(msg.separator_keys.begin(), msg.separator_keys.end());

    FactorGraph device;
    for (VariableKey k : sep) device.add_variable(k);
    for (const Factor& f : msg.payload.factors) device.add_factor(f);
    std::size_t inside = 0;
    for (const Factor& f : server.graph().factors()) {
      if (std::all_of(f.keys().begin(), f.keys().end(), [&](VariableKey k) { return sep.contains(k); })) {
        device.add_factor(f);
        ++inside;
      }
    }
    CHECK(inside > 0);

    Estimates init = msg.separator_estimates;
    std::mt19937 rng(3);
    std::normal_distribution<double> n(0.0, 0.02);
    for (VariableKey k : sep) {
      const Pose2 p = init.at(k);
      init.set(k, Pose2(p.x() + n(rng), p.y() + n(rng), p.theta() + n(rng)));
    }
    const Estimates solved = optimize(device, init, tight_solver()).estimates;
    double worst = 0.0;
    for (VariableKey k : sep) {
      const Pose2& a = solved.at(k);
      const Pose2& b = msg.separator_estimates.at(k);
      worst = std::max({worst, (a.translation() - b.translation()).norm(), std::abs(angle_diff(a.theta(), b.theta()))});
    }
    INFO("mode " << static_cast<int>(mode));
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("spatial reload carries previously dropped separators", "[server]") {
  const auto batches = make_batches(generate_grid_world(6, 8, 0.0, GridNoise{}, 1), ReplaySchedule{0.02, 8});
  ServerConfig cfg;
  cfg.separators = {SeparatorMode::Spatial, 6};
  ServerNode server(cfg);
  for (int b = 0; b <= 3; ++b) server.ingest_sensor_batch(batches[static_cast<std::size_t>(b)]);
  server.run_update_cycle(0);
  server.commit_cycle();
  const PartitionLabels before = server.labels();
  server.ingest_sensor_batch(batches[4]);
  const auto msg = std::get<SummaryMessage>(server.run_update_cycle(0).message);
  REQUIRE(msg.reload.has_value());
  const std::set<VariableKey> sep(msg.separator_keys.begin(), msg.separator_keys.end());
  CHECK_FALSE(msg.reload->estimates.empty());
  for (const auto& [k, p] : msg.reload->estimates) {
    CHECK(sep.contains(k));
    CHECK(before.historic.contains(k));
  }
  for (const Factor& f : msg.reload->factors) {
    for (VariableKey k : f.keys()) CHECK(sep.contains(k));
    CHECK(std::any_of(f.keys().begin(), f.keys().end(), [&](VariableKey k) { return msg.reload->estimates.contains(k); }));
  }
}

TEST_CASE("commit makes the cycle's snapshot visible", "[server]") {
  ServerNode server(temporal(5));
  server.ingest_sensor_batch(chain_batch(0, 0, 10));
  server.run_update_cycle(0);
  CHECK(server.labels().fresh.size() == 10);
  server.commit_cycle();
  const PartitionLabels l = server.labels();
  CHECK(l.fresh.empty());
  CHECK(l.separator.size() == 5);
  CHECK(l.historic.size() == 5);
}

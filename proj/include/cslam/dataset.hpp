#pragma once

#include "cslam/messages.hpp"
#include "cslam/se2.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace cslam {

struct DatasetVertex {
  std::int64_t id = 0;
  Pose2 pose;

  bool operator==(const DatasetVertex&) const = default;
};

struct DatasetEdge {
  std::int64_t from = 0;
  std::int64_t to = 0;
  Pose2 measurement;
  Eigen::Matrix3d information = Eigen::Matrix3d::Identity();

  bool operator==(const DatasetEdge& o) const {
    return from == o.from && to == o.to && measurement == o.measurement && information == o.information;
  }
};

/// 2D pose graph as stored on disk; vertex poses are initial values only.
struct PoseGraphDataset {
  std::vector<DatasetVertex> poses;
  std::vector<DatasetEdge> edges;

  bool operator==(const PoseGraphDataset&) const = default;
};

/// Replay pacing: how many poses arrive per tick and how far apart ticks are.
struct ReplaySchedule {
  double tick_interval = 0.020;
  int poses_per_tick = 10;
};

/// Information of the gauge prior placed on the first pose.
inline constexpr double kAnchorInformation = 1e6;

/**
 * Parses g2o SE2 text. Unknown tags are skipped and counted in
 * `unknown_tags` when given. Throws ParseError on malformed lines, edges to
 * unknown vertices, duplicate vertex ids, or non-positive-definite information.
 */
PoseGraphDataset parse_g2o(std::string_view text, std::size_t* unknown_tags = nullptr);

/// Reads a file, transparently decompressing names ending in ".gz".
PoseGraphDataset load_g2o(const std::filesystem::path& path, std::size_t* unknown_tags = nullptr);

/// Writes g2o text that parses back to an identical dataset.
std::string serialize_g2o(const PoseGraphDataset& ds);

/**
 * Splits a dataset into timed sensor batches in id order. Every edge goes in
 * the batch where its larger endpoint first appears; the first batch also
 * carries the gauge prior on the first pose. Factor ids are 0 for the prior
 * and edge index + 1 for edges.
 */
std::vector<SensorBatch> make_batches(const PoseGraphDataset& ds, const ReplaySchedule& sched);

struct GridNoise {
  double translation = 0.05;
  double rotation = 0.01;
};

/**
 * Serpentine walk over a rows x cols grid with 1 m spacing. Consecutive poses
 * get odometry edges; each earlier pose on a 4-neighbouring cell gets a revisit
 * edge with probability `loop_edge_probability`. Vertex poses are the ground truth.
 */
PoseGraphDataset generate_grid_world(int rows, int cols, double loop_edge_probability, const GridNoise& noise,
                                     std::uint64_t seed);

}  // namespace cslam

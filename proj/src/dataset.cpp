#include "cslam/dataset.hpp"

#include "cslam/errors.hpp"

#include <Eigen/Cholesky>
#include <zlib.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <fstream>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace cslam {

namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

template <typename T>
T parse_number(std::string_view tok, std::size_t line) {
  T value{};
  const char* end = tok.data() + tok.size();
  auto [ptr, ec] = std::from_chars(tok.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ParseError(line, "malformed numeric field '" + std::string(tok) + "'");
  return value;
}

void append_number(std::string& out, double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  out.append(buf.data(), ptr);
}

void append_number(std::string& out, std::int64_t v) {
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  out.append(buf.data(), ptr);
}

std::string read_gzip(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (f == nullptr) throw Error("cannot open " + path.string());
  std::string out;
  std::array<char, 1 << 16> buf{};
  int n = 0;
  while ((n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()))) > 0) out.append(buf.data(), static_cast<std::size_t>(n));
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw Error("decompression failed for " + path.string());
  return out;
}

}  // namespace

PoseGraphDataset parse_g2o(std::string_view text, std::size_t* unknown_tags) {
  PoseGraphDataset ds;
  std::size_t unknown = 0;
  std::set<std::int64_t> ids;
  std::vector<std::size_t> edge_lines;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t nl = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    const auto tok = split_ws(line);
    if (tok.empty()) continue;

    if (tok[0] == "VERTEX_SE2") {
      if (tok.size() != 5) throw ParseError(line_no, "VERTEX_SE2 expects 4 fields");
      DatasetVertex v;
      v.id = parse_number<std::int64_t>(tok[1], line_no);
      v.pose = Pose2(parse_number<double>(tok[2], line_no), parse_number<double>(tok[3], line_no),
                     parse_number<double>(tok[4], line_no));
      if (!ids.insert(v.id).second) throw ParseError(line_no, "duplicate vertex id " + std::to_string(v.id));
      ds.poses.push_back(v);
    } else if (tok[0] == "EDGE_SE2") {
      if (tok.size() != 12) throw ParseError(line_no, "EDGE_SE2 expects 11 fields");
      DatasetEdge e;
      e.from = parse_number<std::int64_t>(tok[1], line_no);
      e.to = parse_number<std::int64_t>(tok[2], line_no);
      e.measurement = Pose2(parse_number<double>(tok[3], line_no), parse_number<double>(tok[4], line_no),
                            parse_number<double>(tok[5], line_no));
      double u[6];
      for (int k = 0; k < 6; ++k) u[k] = parse_number<double>(tok[6 + static_cast<std::size_t>(k)], line_no);
      e.information << u[0], u[1], u[2], u[1], u[3], u[4], u[2], u[4], u[5];
      if (Eigen::LLT<Eigen::Matrix3d>(e.information).info() != Eigen::Success) {
        throw ParseError(line_no, "edge information is not positive-definite");
      }
      ds.edges.push_back(e);
      edge_lines.push_back(line_no);
    } else {
      ++unknown;
    }
  }
  for (std::size_t i = 0; i < ds.edges.size(); ++i) {
    if (!ids.contains(ds.edges[i].from) || !ids.contains(ds.edges[i].to)) {
      throw ParseError(edge_lines[i], "edge references an unknown vertex");
    }
  }
  if (unknown_tags != nullptr) *unknown_tags = unknown;
  return ds;
}

PoseGraphDataset load_g2o(const std::filesystem::path& path, std::size_t* unknown_tags) {
  if (path.extension() == ".gz") return parse_g2o(read_gzip(path), unknown_tags);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_g2o(ss.str(), unknown_tags);
}

std::string serialize_g2o(const PoseGraphDataset& ds) {
  std::string out;
  for (const DatasetVertex& v : ds.poses) {
    out += "VERTEX_SE2 ";
    append_number(out, v.id);
    for (double x : {v.pose.x(), v.pose.y(), v.pose.theta()}) {
      out += ' ';
      append_number(out, x);
    }
    out += '\n';
  }
  for (const DatasetEdge& e : ds.edges) {
    out += "EDGE_SE2 ";
    append_number(out, e.from);
    out += ' ';
    append_number(out, e.to);
    const Eigen::Matrix3d& m = e.information;
    for (double x : {e.measurement.x(), e.measurement.y(), e.measurement.theta(), m(0, 0), m(0, 1), m(0, 2), m(1, 1),
                     m(1, 2), m(2, 2)}) {
      out += ' ';
      append_number(out, x);
    }
    out += '\n';
  }
  return out;
}

std::vector<SensorBatch> make_batches(const PoseGraphDataset& ds, const ReplaySchedule& sched) {
  if (sched.poses_per_tick <= 0 || sched.tick_interval <= 0.0) throw ConfigError("replay schedule must be positive");
  std::vector<std::int64_t> ids;
  for (const DatasetVertex& v : ds.poses) ids.push_back(v.id);
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) return {};

  const auto per_tick = static_cast<std::size_t>(sched.poses_per_tick);
  std::vector<SensorBatch> batches((ids.size() + per_tick - 1) / per_tick);
  std::map<std::int64_t, std::size_t> batch_of;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    SensorBatch& b = batches[i / per_tick];
    b.new_keys.push_back({ids[i]});
    batch_of[ids[i]] = i / per_tick;
  }
  for (std::size_t k = 0; k < batches.size(); ++k) {
    batches[k].index = static_cast<std::int64_t>(k);
    batches[k].time = static_cast<SimTime>(k) * to_sim_time(sched.tick_interval);
  }

  Pose2 anchor;
  for (const DatasetVertex& v : ds.poses) {
    if (v.id == ids.front()) anchor = v.pose;
  }
  batches.front().factors.push_back(
      Factor::prior({ids.front()}, anchor, kAnchorInformation * Eigen::Matrix3d::Identity(), 0));

  // odometry lookup for open-loop dead reckoning
  std::map<std::pair<std::int64_t, std::int64_t>, Pose2> odometry;
  for (std::size_t e = 0; e < ds.edges.size(); ++e) {
    const DatasetEdge& edge = ds.edges[e];
    odometry.try_emplace({edge.from, edge.to}, edge.measurement);
    batches[batch_of.at(std::max(edge.from, edge.to))].factors.push_back(Factor::between(
        {edge.from}, {edge.to}, edge.measurement, edge.information, static_cast<FactorId>(e) + 1));
  }

  Pose2 previous = anchor;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    Pose2 current = anchor;
    if (i > 0) {
      current = previous;
      if (auto it = odometry.find({ids[i - 1], ids[i]}); it != odometry.end()) {
        current = compose(previous, it->second);
      } else if (auto rev = odometry.find({ids[i], ids[i - 1]}); rev != odometry.end()) {
        current = compose(previous, inverse(rev->second));
      }
    }
    batches[i / per_tick].initial_estimates.set({ids[i]}, current);
    previous = current;
  }
  return batches;
}

PoseGraphDataset generate_grid_world(int rows, int cols, double loop_edge_probability, const GridNoise& noise,
                                     std::uint64_t seed) {
  if (rows < 1 || cols < 1 || rows * cols < 2) throw ConfigError("grid world needs at least two cells");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> unit;
  std::uniform_real_distribution<double> coin(0.0, 1.0);

  // serpentine cell order
  std::vector<std::pair<int, int>> cells;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) cells.emplace_back(r, r % 2 == 0 ? c : cols - 1 - c);
  }
  const auto n = static_cast<std::int64_t>(cells.size());
  std::map<std::pair<int, int>, std::int64_t> id_of;
  PoseGraphDataset ds;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto [r, c] = cells[static_cast<std::size_t>(i)];
    const auto& next = cells[static_cast<std::size_t>(std::min(i + 1, n - 1))];
    const auto& prev = cells[static_cast<std::size_t>(std::max<std::int64_t>(i - 1, 0))];
    const auto [nr, nc] = i + 1 < n ? next : std::pair{2 * r - prev.first, 2 * c - prev.second};
    const double heading = std::atan2(static_cast<double>(nr - r), static_cast<double>(nc - c));
    ds.poses.push_back({i, Pose2(static_cast<double>(c), static_cast<double>(r), heading)});
    id_of[{r, c}] = i;
  }

  Eigen::Matrix3d info = Eigen::Matrix3d::Zero();
  info.diagonal() << 1.0 / (noise.translation * noise.translation), 1.0 / (noise.translation * noise.translation),
      1.0 / (noise.rotation * noise.rotation);
  auto noisy_edge = [&](std::int64_t a, std::int64_t b) {
    const Pose2 truth = between(ds.poses[static_cast<std::size_t>(a)].pose, ds.poses[static_cast<std::size_t>(b)].pose);
    const double nx = noise.translation * unit(rng);
    const double ny = noise.translation * unit(rng);
    const double nt = noise.rotation * unit(rng);
    ds.edges.push_back({a, b, Pose2(truth.x() + nx, truth.y() + ny, truth.theta() + nt), info});
  };

  for (std::int64_t j = 1; j < n; ++j) {
    noisy_edge(j - 1, j);
    const auto [r, c] = cells[static_cast<std::size_t>(j)];
    for (const auto& [dr, dc] : {std::pair{-1, 0}, std::pair{1, 0}, std::pair{0, -1}, std::pair{0, 1}}) {
      auto it = id_of.find({r + dr, c + dc});
      if (it == id_of.end() || it->second >= j - 1) continue;
      if (coin(rng) < loop_edge_probability) noisy_edge(it->second, j);
    }
  }
  return ds;
}

}  // namespace cslam

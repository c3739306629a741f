#pragma once

#include "cslam/messages.hpp"

#include <cstdint>
#include <functional>
#include <queue>
#include <string>
#include <vector>

namespace cslam {

enum class TbMode { Measured, Constant };

/// Link latencies and back-end timing, all in seconds.
struct ChannelConfig {
  double t_s = 0.010;
  double t_r = 0.010;
  double t_f = 0.0;
  TbMode tb_mode = TbMode::Constant;
  double tb_constant = 0.08;

  /// Throws ConfigError when a latency is negative.
  void validate() const;
};

enum class EventKind { SensorTick, DeliverToServer, ServerFrontEndDone, ServerCycleDone, DeliverToClient };

const char* to_string(EventKind kind);

struct LogEntry {
  SimTime time = 0;
  std::uint64_t sequence = 0;
  EventKind kind = EventKind::SensorTick;
  std::string detail;

  bool operator==(const LogEntry&) const = default;
};

/**
 * @brief Discrete-event scheduler owning simulated time.
 *
 * Events fire in (fire_time, sequence) order; sequence is the scheduling
 * order, so same-time events run first-come first-served.
 */
class Scheduler {
public:
  using Handler = std::function<void(SimTime)>;

  /// Throws TimeTravel when fire_time precedes the current time.
  void schedule(SimTime fire_time, EventKind kind, Handler handler, std::string detail = {});

  /// Processes every event with fire_time <= t_end and returns the entries processed by this call.
  std::vector<LogEntry> run_until(SimTime t_end);

  SimTime now() const { return now_; }
  bool empty() const { return queue_.empty(); }
  const std::vector<LogEntry>& log() const { return log_; }

private:
  struct Pending {
    SimTime fire_time;
    std::uint64_t sequence;
    EventKind kind;
    Handler handler;
    std::string detail;
  };
  struct Later {
    bool operator()(const Pending& a, const Pending& b) const {
      return a.fire_time != b.fire_time ? a.fire_time > b.fire_time : a.sequence > b.sequence;
    }
  };

  std::priority_queue<Pending, std::vector<Pending>, Later> queue_;
  std::uint64_t next_sequence_ = 0;
  SimTime now_ = 0;
  std::vector<LogEntry> log_;
};

/// One direction of the channel: fixed latency, FIFO delivery.
class Link {
public:
  explicit Link(SimTime latency) : latency_(latency) {}

  /// Delivery time of a message sent at `now`; never earlier than a previously sent message.
  SimTime delivery_time(SimTime now);

private:
  SimTime latency_;
  SimTime last_delivery_ = 0;
};

}  // namespace cslam

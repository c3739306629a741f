#include "cslam/sim_channel.hpp"

#include "cslam/errors.hpp"

#include <algorithm>

namespace cslam {

void ChannelConfig::validate() const {
  if (t_s < 0.0 || t_r < 0.0 || t_f < 0.0) throw ConfigError("channel latencies must be non-negative");
  if (tb_mode == TbMode::Constant && tb_constant < 0.0) throw ConfigError("constant back-end time must be non-negative");
}

const char* to_string(EventKind kind) {
  switch (kind) {
    case EventKind::SensorTick:
      return "sensor_tick";
    case EventKind::DeliverToServer:
      return "deliver_to_server";
    case EventKind::ServerFrontEndDone:
      return "server_front_end_done";
    case EventKind::ServerCycleDone:
      return "server_cycle_done";
    case EventKind::DeliverToClient:
      return "deliver_to_client";
  }
  return "unknown";
}

void Scheduler::schedule(SimTime fire_time, EventKind kind, Handler handler, std::string detail) {
  if (fire_time < now_) {
    throw TimeTravel("event scheduled at " + std::to_string(fire_time) + " ns before current time " +
                     std::to_string(now_) + " ns");
  }
  queue_.push({fire_time, next_sequence_++, kind, std::move(handler), std::move(detail)});
}

std::vector<LogEntry> Scheduler::run_until(SimTime t_end) {
  std::vector<LogEntry> processed;
  while (!queue_.empty() && queue_.top().fire_time <= t_end) {
    Pending ev = queue_.top();
    queue_.pop();
    now_ = ev.fire_time;
    LogEntry entry{ev.fire_time, ev.sequence, ev.kind, std::move(ev.detail)};
    log_.push_back(entry);
    processed.push_back(std::move(entry));
    if (ev.handler) ev.handler(now_);
  }
  return processed;
}

SimTime Link::delivery_time(SimTime now) {
  last_delivery_ = std::max(now + latency_, last_delivery_);
  return last_delivery_;
}

}  // namespace cslam

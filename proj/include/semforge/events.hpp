#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "semforge/value.hpp"

namespace semforge {

enum class EventKind {
  OpStarted,
  DocDone,
  OpDone,
  OpCached,
  Error,
  RunDone,
  JudgeVerdict,
  Notification,
  OptimizeLog,
};

std::string_view to_string(EventKind k);

struct ProgressEvent {
  std::uint64_t seq = 0;  // 1-based position in the run's stream
  std::string run_id;
  EventKind kind = EventKind::OpStarted;
  std::string op_name;
  std::size_t done = 0;
  std::size_t total = 0;
  std::int64_t timestamp_ms = 0;
  Value payload;  // message, verdict, log line...
};

Value to_json(const ProgressEvent& e);

/// Append-only, totally ordered event stream of one run. Readers resume from a
/// cursor (the last seq they saw) and may block until more events arrive.
class EventLog {
 public:
  explicit EventLog(std::string run_id = {}) : run_id_(std::move(run_id)) {}

  const std::string& run_id() const { return run_id_; }

  ProgressEvent emit(EventKind kind, std::string op_name = {}, std::size_t done = 0, std::size_t total = 0,
                     Value payload = {});

  /// Events with seq > cursor.
  std::vector<ProgressEvent> since(std::uint64_t cursor) const;

  /// Blocks until there are events past `cursor`, the log closes, or the timeout expires.
  std::vector<ProgressEvent> wait(std::uint64_t cursor, std::chrono::milliseconds timeout) const;

  /// No more events will follow.
  void close();
  bool closed() const;
  std::size_t size() const;

 private:
  std::string run_id_;
  mutable std::mutex mu_;
  mutable std::condition_variable cv_;
  std::vector<ProgressEvent> events_;
  bool closed_ = false;
};

}  // namespace semforge

#include "semforge/events.hpp"

namespace semforge {

std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::OpStarted: return "op_started";
    case EventKind::DocDone: return "doc_done";
    case EventKind::OpDone: return "op_done";
    case EventKind::OpCached: return "op_cached";
    case EventKind::Error: return "error";
    case EventKind::RunDone: return "run_done";
    case EventKind::JudgeVerdict: return "judge_verdict";
    case EventKind::Notification: return "notification";
    case EventKind::OptimizeLog: return "optimize_log";
  }
  return "unknown";
}

Value to_json(const ProgressEvent& e) {
  Value v = Value::object();
  v["seq"] = e.seq;
  v["run_id"] = e.run_id;
  v["kind"] = std::string(to_string(e.kind));
  v["op_name"] = e.op_name;
  v["done"] = e.done;
  v["total"] = e.total;
  v["timestamp_ms"] = e.timestamp_ms;
  if (!e.payload.is_null()) v["payload"] = e.payload;
  return v;
}

ProgressEvent EventLog::emit(EventKind kind, std::string op_name, std::size_t done, std::size_t total,
                             Value payload) {
  ProgressEvent e;
  e.run_id = run_id_;
  e.kind = kind;
  e.op_name = std::move(op_name);
  e.done = done;
  e.total = total;
  e.payload = std::move(payload);
  e.timestamp_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                       std::chrono::system_clock::now().time_since_epoch())
                       .count();
  {
    std::lock_guard lock(mu_);
    e.seq = events_.size() + 1;
    events_.push_back(e);
  }
  cv_.notify_all();
  return e;
}

std::vector<ProgressEvent> EventLog::since(std::uint64_t cursor) const {
  std::lock_guard lock(mu_);
  if (cursor >= events_.size()) return {};
  return {events_.begin() + static_cast<std::ptrdiff_t>(cursor), events_.end()};
}

std::vector<ProgressEvent> EventLog::wait(std::uint64_t cursor, std::chrono::milliseconds timeout) const {
  std::unique_lock lock(mu_);
  cv_.wait_for(lock, timeout, [&] { return closed_ || events_.size() > cursor; });
  if (cursor >= events_.size()) return {};
  return {events_.begin() + static_cast<std::ptrdiff_t>(cursor), events_.end()};
}

void EventLog::close() {
  {
    std::lock_guard lock(mu_);
    closed_ = true;
  }
  cv_.notify_all();
}

bool EventLog::closed() const {
  std::lock_guard lock(mu_);
  return closed_;
}

std::size_t EventLog::size() const {
  std::lock_guard lock(mu_);
  return events_.size();
}

}  // namespace semforge

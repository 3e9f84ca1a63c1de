#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <queue>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace tilepress {

// Run-relative monotonic time. Integer microseconds keep virtual-clock
// arithmetic exact.
using Duration = std::chrono::microseconds;
using UtcTime = std::chrono::sys_time<std::chrono::milliseconds>;
using Task = std::function<void()>;

inline double to_seconds(Duration d) {
  return std::chrono::duration<double>(d).count();
}

inline Duration from_seconds(double s) {
  return std::chrono::duration_cast<Duration>(std::chrono::duration<double>(s));
}

// RFC 3339, UTC, millisecond precision: 2024-01-01T00:00:00.000Z
std::string format_rfc3339(UtcTime t);
// Accepts the format produced by format_rfc3339 (fraction optional, 'Z' only).
// Throws std::invalid_argument on anything else.
UtcTime parse_rfc3339(std::string_view text);

// "250ms", "2s", "1.5s", "10m", "1h", "30d" or a bare number of seconds.
Duration parse_duration(std::string_view text);
std::string format_duration(Duration d);

class Clock {
 public:
  virtual ~Clock() = default;
  virtual Duration now() const = 0;
  virtual UtcTime utc_now() const = 0;
};

class SystemClock final : public Clock {
 public:
  SystemClock();
  Duration now() const override;
  UtcTime utc_now() const override;

 private:
  std::chrono::steady_clock::time_point start_;
};

// Runs callbacks at (run-relative) points in time. Callbacks posted for the
// same instant run in posting order.
class Executor : public Clock {
 public:
  virtual void post_at(Duration when, Task task) = 0;
  virtual bool is_virtual() const = 0;

  void post(Task task) { post_at(now(), std::move(task)); }
  void post_after(Duration delay, Task task) { post_at(now() + delay, std::move(task)); }
};

// Re-arms `tick` every `period` starting at `first` until it returns false.
void schedule_every(Executor& executor, Duration first, Duration period,
                    std::function<bool(Duration)> tick);

namespace detail {
struct TimedTask {
  Duration when;
  std::uint64_t seq;
  Task task;
};
struct LaterFirst {
  bool operator()(const TimedTask& a, const TimedTask& b) const {
    return a.when != b.when ? a.when > b.when : a.seq > b.seq;
  }
};
using TaskHeap = std::priority_queue<TimedTask, std::vector<TimedTask>, LaterFirst>;
}  // namespace detail

// Discrete-event executor. Time only moves when the next event is popped, so
// a run of any simulated length finishes as fast as its callbacks execute.
class VirtualExecutor final : public Executor {
 public:
  // UTC timestamps are derived from `epoch` + virtual time, which keeps every
  // emitted timestamp reproducible.
  explicit VirtualExecutor(UtcTime epoch = default_epoch());

  Duration now() const override;
  UtcTime utc_now() const override;
  void post_at(Duration when, Task task) override;
  bool is_virtual() const override { return true; }

  // Pops and runs one event. Returns false when the queue is empty.
  bool run_one();
  void run_until_idle();
  // Runs until `done()` holds (checked after every event) or the queue
  // empties or virtual time would pass `limit`. Returns done().
  bool run_until(const std::function<bool()>& done, Duration limit = Duration::max());
  std::size_t pending() const;

  static UtcTime default_epoch();

 private:
  mutable std::mutex mu_;
  detail::TaskHeap heap_;
  std::uint64_t next_seq_ = 0;
  Duration now_{0};
  UtcTime epoch_;
};

// Wall-clock executor: a single loop thread runs callbacks serially.
class ThreadExecutor final : public Executor {
 public:
  ThreadExecutor();
  ~ThreadExecutor() override;
  ThreadExecutor(const ThreadExecutor&) = delete;
  ThreadExecutor& operator=(const ThreadExecutor&) = delete;

  Duration now() const override;
  UtcTime utc_now() const override;
  void post_at(Duration when, Task task) override;
  bool is_virtual() const override { return false; }

  // Drops queued callbacks and joins the loop thread. Idempotent.
  void shutdown();

 private:
  void loop();

  SystemClock clock_;
  std::mutex mu_;
  std::condition_variable cv_;
  detail::TaskHeap heap_;
  std::uint64_t next_seq_ = 0;
  bool stopping_ = false;
  std::thread thread_;
};

}  // namespace tilepress

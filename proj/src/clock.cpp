#include "tilepress/clock.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace tilepress {

namespace {

int parse_fixed(std::string_view text, std::size_t pos, std::size_t width) {
  if (pos + width > text.size()) throw std::invalid_argument("timestamp too short");
  int value = 0;
  for (std::size_t i = pos; i < pos + width; ++i) {
    const char c = text[i];
    if (c < '0' || c > '9') throw std::invalid_argument(fmt::format("bad digit in timestamp '{}'", text));
    value = value * 10 + (c - '0');
  }
  return value;
}

void expect_char(std::string_view text, std::size_t pos, char c) {
  if (pos >= text.size() || text[pos] != c) {
    throw std::invalid_argument(fmt::format("malformed timestamp '{}'", text));
  }
}

}  // namespace

std::string format_rfc3339(UtcTime t) {
  using namespace std::chrono;
  const auto day = floor<days>(t);
  const year_month_day ymd{day};
  const hh_mm_ss hms{t - day};
  return fmt::format("{:04}-{:02}-{:02}T{:02}:{:02}:{:02}.{:03}Z", static_cast<int>(ymd.year()),
                     static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                     hms.hours().count(), hms.minutes().count(), hms.seconds().count(),
                     hms.subseconds().count());
}

UtcTime parse_rfc3339(std::string_view text) {
  using namespace std::chrono;
  const int y = parse_fixed(text, 0, 4);
  expect_char(text, 4, '-');
  const int mo = parse_fixed(text, 5, 2);
  expect_char(text, 7, '-');
  const int d = parse_fixed(text, 8, 2);
  expect_char(text, 10, 'T');
  const int h = parse_fixed(text, 11, 2);
  expect_char(text, 13, ':');
  const int mi = parse_fixed(text, 14, 2);
  expect_char(text, 16, ':');
  const int s = parse_fixed(text, 17, 2);
  std::size_t pos = 19;
  int millis = 0;
  if (pos < text.size() && text[pos] == '.') {
    ++pos;
    int digits = 0;
    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
      if (digits < 3) millis = millis * 10 + (text[pos] - '0');
      ++digits;
      ++pos;
    }
    if (digits == 0) throw std::invalid_argument(fmt::format("empty fraction in '{}'", text));
    for (; digits < 3; ++digits) millis *= 10;
  }
  expect_char(text, pos, 'Z');
  if (pos + 1 != text.size()) throw std::invalid_argument(fmt::format("trailing data in '{}'", text));

  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || h > 23 || mi > 59 || s > 59) {
    throw std::invalid_argument(fmt::format("out-of-range timestamp '{}'", text));
  }
  return sys_days{ymd} + hours{h} + minutes{mi} + seconds{s} + milliseconds{millis};
}

Duration parse_duration(std::string_view text) {
  if (text.empty()) throw std::invalid_argument("empty duration");
  std::size_t split = text.size();
  while (split > 0 && std::isalpha(static_cast<unsigned char>(text[split - 1]))) --split;
  const std::string number(text.substr(0, split));
  const std::string_view unit = text.substr(split);
  std::size_t used = 0;
  double value = 0;
  try {
    value = std::stod(number, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument(fmt::format("bad duration '{}'", text));
  }
  if (used != number.size() || value < 0 || !std::isfinite(value)) {
    throw std::invalid_argument(fmt::format("bad duration '{}'", text));
  }
  double scale = 1.0;
  if (unit.empty() || unit == "s") {
    scale = 1.0;
  } else if (unit == "ms") {
    scale = 1e-3;
  } else if (unit == "us") {
    scale = 1e-6;
  } else if (unit == "m" || unit == "min") {
    scale = 60.0;
  } else if (unit == "h") {
    scale = 3600.0;
  } else if (unit == "d") {
    scale = 86400.0;
  } else {
    throw std::invalid_argument(fmt::format("unknown duration unit in '{}'", text));
  }
  return Duration{static_cast<Duration::rep>(std::llround(value * scale * 1e6))};
}

std::string format_duration(Duration d) {
  const auto us = d.count();
  if (us % 1'000'000 == 0) return fmt::format("{}s", us / 1'000'000);
  if (us % 1'000 == 0) return fmt::format("{}ms", us / 1'000);
  return fmt::format("{}us", us);
}

SystemClock::SystemClock() : start_(std::chrono::steady_clock::now()) {}

Duration SystemClock::now() const {
  return std::chrono::duration_cast<Duration>(std::chrono::steady_clock::now() - start_);
}

UtcTime SystemClock::utc_now() const {
  return std::chrono::floor<std::chrono::milliseconds>(std::chrono::system_clock::now());
}

void schedule_every(Executor& executor, Duration first, Duration period,
                    std::function<bool(Duration)> tick) {
  auto shared = std::make_shared<std::function<bool(Duration)>>(std::move(tick));
  // The re-arming closure holds itself only through the posted task, so the
  // chain is released as soon as tick returns false.
  struct Rearm {
    Executor* executor;
    Duration at;
    Duration period;
    std::shared_ptr<std::function<bool(Duration)>> tick;
    void operator()() const {
      if (!(*tick)(at)) return;
      executor->post_at(at + period, Rearm{executor, at + period, period, tick});
    }
  };
  executor.post_at(first, Rearm{&executor, first, period, shared});
}

// ---------------------------------------------------------------------------

VirtualExecutor::VirtualExecutor(UtcTime epoch) : epoch_(epoch) {}

UtcTime VirtualExecutor::default_epoch() {
  using namespace std::chrono;
  return sys_days{year{2024} / January / 1};
}

Duration VirtualExecutor::now() const {
  std::lock_guard lock(mu_);
  return now_;
}

UtcTime VirtualExecutor::utc_now() const {
  std::lock_guard lock(mu_);
  return epoch_ + std::chrono::floor<std::chrono::milliseconds>(now_);
}

void VirtualExecutor::post_at(Duration when, Task task) {
  std::lock_guard lock(mu_);
  heap_.push({std::max(when, now_), next_seq_++, std::move(task)});
}

bool VirtualExecutor::run_one() {
  Task task;
  {
    std::lock_guard lock(mu_);
    if (heap_.empty()) return false;
    // priority_queue::top is const; the task is moved out before pop.
    auto& top = const_cast<detail::TimedTask&>(heap_.top());
    now_ = top.when;
    task = std::move(top.task);
    heap_.pop();
  }
  task();
  return true;
}

void VirtualExecutor::run_until_idle() {
  while (run_one()) {
  }
}

bool VirtualExecutor::run_until(const std::function<bool()>& done, Duration limit) {
  while (!done()) {
    {
      std::lock_guard lock(mu_);
      if (heap_.empty() || heap_.top().when > limit) return false;
    }
    run_one();
  }
  return true;
}

std::size_t VirtualExecutor::pending() const {
  std::lock_guard lock(mu_);
  return heap_.size();
}

// ---------------------------------------------------------------------------

ThreadExecutor::ThreadExecutor() : thread_([this] { loop(); }) {}

ThreadExecutor::~ThreadExecutor() { shutdown(); }

Duration ThreadExecutor::now() const { return clock_.now(); }

UtcTime ThreadExecutor::utc_now() const { return clock_.utc_now(); }

void ThreadExecutor::post_at(Duration when, Task task) {
  {
    std::lock_guard lock(mu_);
    if (stopping_) return;
    heap_.push({when, next_seq_++, std::move(task)});
  }
  cv_.notify_one();
}

void ThreadExecutor::shutdown() {
  {
    std::lock_guard lock(mu_);
    stopping_ = true;
  }
  cv_.notify_all();
  if (thread_.joinable() && thread_.get_id() != std::this_thread::get_id()) thread_.join();
  std::lock_guard lock(mu_);
  heap_ = {};
}

void ThreadExecutor::loop() {
  std::unique_lock lock(mu_);
  while (!stopping_) {
    if (heap_.empty()) {
      cv_.wait(lock);
      continue;
    }
    const Duration due = heap_.top().when;
    const Duration current = clock_.now();
    if (due > current) {
      cv_.wait_for(lock, due - current);
      continue;
    }
    auto& top = const_cast<detail::TimedTask&>(heap_.top());
    Task task = std::move(top.task);
    heap_.pop();
    lock.unlock();
    task();
    lock.lock();
  }
}

}  // namespace tilepress

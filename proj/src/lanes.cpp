#include "tilepress/lanes.hpp"

#include <condition_variable>
#include <deque>
#include <mutex>
#include <thread>

namespace tilepress {

namespace {

class SimulatedLane final : public WorkLane {
 public:
  SimulatedLane(Executor& executor, Duration cost) : executor_(executor), cost_(cost) {}

  void submit(Task work, Task done) override {
    executor_.post_after(cost_, [work = std::move(work), done = std::move(done)] {
      work();
      done();
    });
  }

 private:
  Executor& executor_;
  Duration cost_;
};

class ThreadLane final : public WorkLane {
 public:
  explicit ThreadLane(Executor& executor) : executor_(executor), thread_([this] { loop(); }) {}

  ~ThreadLane() override {
    {
      std::lock_guard lock(mu_);
      stopping_ = true;
    }
    cv_.notify_one();
    thread_.join();
  }

  void submit(Task work, Task done) override {
    {
      std::lock_guard lock(mu_);
      queue_.emplace_back(std::move(work), std::move(done));
    }
    cv_.notify_one();
  }

 private:
  void loop() {
    for (;;) {
      std::pair<Task, Task> job;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
        if (queue_.empty()) return;
        job = std::move(queue_.front());
        queue_.pop_front();
      }
      job.first();
      executor_.post(std::move(job.second));
    }
  }

  Executor& executor_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::pair<Task, Task>> queue_;
  bool stopping_ = false;
  std::thread thread_;
};

}  // namespace

std::unique_ptr<WorkLane> make_simulated_lane(Executor& executor, Duration cost) {
  return std::make_unique<SimulatedLane>(executor, cost);
}

std::unique_ptr<WorkLane> make_thread_lane(Executor& executor) { return std::make_unique<ThreadLane>(executor); }

bool wait_until(Executor& executor, const std::function<bool()>& done, Duration limit) {
  if (executor.is_virtual()) {
    return static_cast<VirtualExecutor&>(executor).run_until(done, limit);
  }
  const bool bounded = limit < Duration::max() / 2;
  const Duration stop_at = bounded ? executor.now() + limit : Duration::max();
  while (!done()) {
    if (bounded && executor.now() >= stop_at) return done();
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  return true;
}

}  // namespace tilepress

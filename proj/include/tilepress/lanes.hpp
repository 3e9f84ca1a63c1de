#pragma once

#include <functional>
#include <memory>

#include "tilepress/clock.hpp"

namespace tilepress {

// Where a unit of work executes. `done` always runs on the executor.
class WorkLane {
 public:
  virtual ~WorkLane() = default;
  virtual void submit(Task work, Task done) = 0;
};

using LaneFactory = std::function<std::unique_ptr<WorkLane>()>;

// SIMWORK: the job is charged a fixed virtual cost. `work` runs when that cost
// has elapsed, immediately followed by `done`, so its side effects land at the
// simulated completion time.
std::unique_ptr<WorkLane> make_simulated_lane(Executor& executor, Duration cost);

// REAL: a dedicated worker thread runs `work`, then posts `done`.
std::unique_ptr<WorkLane> make_thread_lane(Executor& executor);

// Blocks until `done()` holds. A virtual executor is driven inline up to
// `limit` of virtual time; otherwise the caller polls. Returns done().
bool wait_until(Executor& executor, const std::function<bool()>& done, Duration limit);

}  // namespace tilepress

#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tilepress/clock.hpp"
#include "tilepress/http.hpp"
#include "tilepress/lanes.hpp"

namespace tilepress {

struct ScalerConfig {
  std::uint32_t min_instances = 0;
  std::uint32_t max_instances = 16;
  Duration cold_start = std::chrono::seconds(2);
  Duration idle_timeout = std::chrono::seconds(60);
  std::uint32_t concurrency_per_instance = 1;
  double cost_rate = 1.0;                // cost units per instance-second
  std::optional<std::size_t> max_queue;  // unbounded when empty
  Duration sample_period = std::chrono::seconds(1);
};

enum class ScalerErrc { kInvalidConfig, kOverload, kShutdownInProgress };

std::string_view to_string(ScalerErrc code);

class ScalerError : public std::runtime_error {
 public:
  ScalerError(ScalerErrc code, const std::string& detail);
  ScalerErrc code() const noexcept { return code_; }

 private:
  ScalerErrc code_;
};

void validate(const ScalerConfig& config);

// key = value lines; '#' starts a comment, [section] headers are ignored and
// string values may be quoted. Durations take parse_duration syntax.
//   min_instances = 0
//   max_instances = 16
//   cold_start = "2s"
//   idle_timeout = "60s"
//   cost_rate = 1.0
//   max_queue = "unbounded"
ScalerConfig parse_scaler_config(std::string_view text, ScalerConfig base = {});
ScalerConfig load_scaler_config(const std::string& path, ScalerConfig base = {});

struct ScalingSample {
  double t_seconds = 0;
  std::uint32_t active = 0;
  std::uint32_t busy = 0;
  std::uint64_t queued = 0;

  bool operator==(const ScalingSample&) const = default;
};

// Header `t_seconds,active,busy,queued`, one row per sample.
std::string metrics_csv(const std::vector<ScalingSample>& series);

// One served request: arrival at the runtime, start on an instance (after
// any cold start or queueing) and completion. Times are executor time.
struct RequestTrace {
  std::uint64_t instance = 0;
  Duration arrived{};
  Duration started{};
  Duration finished{};
};

// Each instance hosts its own handler built by the factory.
using HandlerFactory = std::function<RequestHandler()>;

// Serverless runtime emulator. One request per instance at a time. A request
// that finds no idle instance creates a new one (up to max_instances) and is
// served by it after the cold start; past the cap it waits in a FIFO queue.
// Every sample_period the fleet retires instances idle for idle_timeout
// (oldest idle first, never below min_instances) and records a sample.
class Autoscaler {
 public:
  Autoscaler(Executor& executor, ScalerConfig config, HandlerFactory handlers, LaneFactory lanes);
  ~Autoscaler();
  Autoscaler(const Autoscaler&) = delete;
  Autoscaler& operator=(const Autoscaler&) = delete;

  // Creates the min_instances warm pool and starts sampling.
  void start();
  // Stops sampling. Instances are left as they are.
  void stop();
  // New requests are refused with 503 from now on; queued ones still run.
  void begin_shutdown();

  // The response arrives through `respond`: 429 when the bounded queue is
  // full, 503 during shutdown, otherwise the handler's answer.
  void dispatch_async(HttpRequest request, ResponseCallback respond);
  // Blocks until served. Not usable with a virtual executor.
  HttpResponse dispatch(HttpRequest request);
  AsyncRequestHandler as_handler();

  // Retires idle instances; returns how many. Called by the sampling cadence.
  std::size_t scale_down_tick();

  std::vector<ScalingSample> metrics_series() const;
  // Σ (retire - create) × cost_rate, counting live instances up to now.
  double metered_cost() const;

  std::uint32_t active() const;
  std::uint32_t busy() const;
  std::size_t queued() const;
  std::uint32_t peak_active() const;
  std::uint64_t served() const;
  std::uint64_t instances_created() const;
  // Completed requests in completion order.
  std::vector<RequestTrace> traces() const;
  const ScalerConfig& config() const noexcept { return config_; }

 private:
  struct Pending {
    HttpRequest request;
    ResponseCallback respond;
    Duration arrived{};
  };
  struct Instance {
    std::uint64_t id = 0;
    Duration created{};
    Duration idle_since{};
    bool warm = false;
    bool busy = false;
    RequestHandler handler;
    std::unique_ptr<WorkLane> lane;
  };

  void on_arrival(Pending pending);
  void on_warm(std::uint64_t id, Pending pending);
  void on_done(std::uint64_t id, RequestTrace trace, std::shared_ptr<HttpResponse> response,
               ResponseCallback respond);
  // Requires mu_.
  Instance& create_locked(bool warm);
  void start_work_locked(Instance& instance, Pending pending);
  void sample_locked();

  Executor& executor_;
  ScalerConfig config_;
  HandlerFactory handlers_;
  LaneFactory lanes_;
  mutable std::mutex mu_;
  std::map<std::uint64_t, Instance> instances_;
  std::deque<Pending> queue_;
  std::vector<ScalingSample> series_;
  std::vector<RequestTrace> traces_;
  std::uint64_t next_instance_ = 1;
  std::uint64_t ticks_ = 0;
  std::uint64_t served_ = 0;
  std::uint64_t created_ = 0;
  std::uint32_t peak_ = 0;
  Duration retired_lifetime_{};
  bool started_ = false;
  bool stopped_ = false;
  bool shutting_down_ = false;
  std::shared_ptr<bool> alive_;
};

}  // namespace tilepress

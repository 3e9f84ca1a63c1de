#include "tilepress/autoscaler.hpp"

#include <algorithm>
#include <charconv>
#include <future>

#include <fmt/format.h>

#include "tilepress/log.hpp"
#include "tilepress/util.hpp"

namespace tilepress {

std::string_view to_string(ScalerErrc code) {
  switch (code) {
    case ScalerErrc::kInvalidConfig: return "InvalidConfig";
    case ScalerErrc::kOverload: return "Overload";
    case ScalerErrc::kShutdownInProgress: return "ShutdownInProgress";
  }
  return "Unknown";
}

ScalerError::ScalerError(ScalerErrc code, const std::string& detail)
    : std::runtime_error(fmt::format("{}: {}", to_string(code), detail)), code_(code) {}

void validate(const ScalerConfig& c) {
  const auto bad = [](const std::string& what) { throw ScalerError(ScalerErrc::kInvalidConfig, what); };
  if (c.max_instances == 0) bad("max_instances must be >= 1");
  if (c.min_instances > c.max_instances) {
    bad(fmt::format("min_instances ({}) exceeds max_instances ({})", c.min_instances, c.max_instances));
  }
  if (c.cold_start < Duration::zero()) bad("cold_start must be >= 0");
  if (c.idle_timeout < Duration::zero()) bad("idle_timeout must be >= 0");
  if (c.concurrency_per_instance != 1) bad("concurrency_per_instance is fixed at 1");
  if (c.cost_rate < 0) bad("cost_rate must be >= 0");
  if (c.sample_period <= Duration::zero()) bad("sample_period must be positive");
}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_number(std::string_view text, const std::string& key) {
  T value{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ScalerError(ScalerErrc::kInvalidConfig, fmt::format("{}: '{}' is not a valid number", key, text));
  }
  return value;
}

Duration parse_duration_value(std::string_view text, const std::string& key) {
  try {
    return parse_duration(text);
  } catch (const std::exception& e) {
    throw ScalerError(ScalerErrc::kInvalidConfig, fmt::format("{}: {}", key, e.what()));
  }
}

}  // namespace

ScalerConfig parse_scaler_config(std::string_view text, ScalerConfig config) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const std::size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;

    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty() || line.front() == '[') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ScalerError(ScalerErrc::kInvalidConfig, fmt::format("line {}: expected key = value", line_no));
    }
    const std::string key(trim(line.substr(0, eq)));
    std::string_view value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && (value.front() == '"' || value.front() == '\'') && value.back() == value.front()) {
      value = value.substr(1, value.size() - 2);
    }

    if (key == "min_instances") {
      config.min_instances = parse_number<std::uint32_t>(value, key);
    } else if (key == "max_instances") {
      config.max_instances = parse_number<std::uint32_t>(value, key);
    } else if (key == "cold_start") {
      config.cold_start = parse_duration_value(value, key);
    } else if (key == "idle_timeout") {
      config.idle_timeout = parse_duration_value(value, key);
    } else if (key == "sample_period") {
      config.sample_period = parse_duration_value(value, key);
    } else if (key == "concurrency_per_instance") {
      config.concurrency_per_instance = parse_number<std::uint32_t>(value, key);
    } else if (key == "cost_rate") {
      config.cost_rate = parse_number<double>(value, key);
    } else if (key == "max_queue") {
      if (value == "unbounded") {
        config.max_queue.reset();
      } else {
        config.max_queue = parse_number<std::size_t>(value, key);
      }
    } else {
      throw ScalerError(ScalerErrc::kInvalidConfig, fmt::format("line {}: unknown key '{}'", line_no, key));
    }
  }
  validate(config);
  return config;
}

ScalerConfig load_scaler_config(const std::string& path, ScalerConfig base) {
  Bytes raw;
  try {
    raw = read_file(path);
  } catch (const std::exception& e) {
    throw ScalerError(ScalerErrc::kInvalidConfig, e.what());
  }
  return parse_scaler_config(std::string_view(reinterpret_cast<const char*>(raw.data()), raw.size()), base);
}

std::string metrics_csv(const std::vector<ScalingSample>& series) {
  std::string out = "t_seconds,active,busy,queued\n";
  for (const auto& s : series) out += fmt::format("{:g},{},{},{}\n", s.t_seconds, s.active, s.busy, s.queued);
  return out;
}

// ---------------------------------------------------------------------------

Autoscaler::Autoscaler(Executor& executor, ScalerConfig config, HandlerFactory handlers, LaneFactory lanes)
    : executor_(executor),
      config_(std::move(config)),
      handlers_(std::move(handlers)),
      lanes_(std::move(lanes)),
      alive_(std::make_shared<bool>(true)) {
  validate(config_);
}

Autoscaler::~Autoscaler() {
  std::map<std::uint64_t, Instance> doomed;
  {
    std::lock_guard lock(mu_);
    alive_.reset();
    stopped_ = true;
    doomed.swap(instances_);
  }
}

void Autoscaler::start() {
  std::lock_guard lock(mu_);
  if (started_) return;
  started_ = true;
  for (std::uint32_t i = 0; i < config_.min_instances; ++i) create_locked(true);
  sample_locked();
  std::weak_ptr<bool> alive = alive_;
  schedule_every(executor_, executor_.now() + config_.sample_period, config_.sample_period,
                 [this, alive](Duration) {
                   if (alive.expired()) return false;
                   scale_down_tick();
                   std::lock_guard lock(mu_);
                   if (stopped_) return false;
                   sample_locked();
                   return true;
                 });
}

void Autoscaler::stop() {
  std::lock_guard lock(mu_);
  stopped_ = true;
}

void Autoscaler::begin_shutdown() {
  std::lock_guard lock(mu_);
  shutting_down_ = true;
}

void Autoscaler::dispatch_async(HttpRequest request, ResponseCallback respond) {
  std::weak_ptr<bool> alive = alive_;
  executor_.post([this, alive, p = Pending{std::move(request), std::move(respond), {}}]() mutable {
    if (alive.expired()) return;
    on_arrival(std::move(p));
  });
}

HttpResponse Autoscaler::dispatch(HttpRequest request) {
  if (executor_.is_virtual()) throw std::logic_error("blocking dispatch needs a real-time executor");
  auto promise = std::make_shared<std::promise<HttpResponse>>();
  auto future = promise->get_future();
  dispatch_async(std::move(request), [promise](HttpResponse r) { promise->set_value(std::move(r)); });
  return future.get();
}

AsyncRequestHandler Autoscaler::as_handler() {
  return [this](HttpRequest request, ResponseCallback respond) {
    dispatch_async(std::move(request), std::move(respond));
  };
}

Autoscaler::Instance& Autoscaler::create_locked(bool warm) {
  const std::uint64_t id = next_instance_++;
  Instance& inst = instances_[id];
  inst.id = id;
  inst.created = executor_.now();
  inst.idle_since = inst.created;
  inst.warm = warm;
  inst.handler = handlers_();
  inst.lane = lanes_();
  ++created_;
  peak_ = std::max<std::uint32_t>(peak_, static_cast<std::uint32_t>(instances_.size()));
  return inst;
}

void Autoscaler::on_arrival(Pending pending) {
  std::unique_lock lock(mu_);
  pending.arrived = executor_.now();
  if (shutting_down_) {
    lock.unlock();
    pending.respond(error_response(503, std::string(to_string(ScalerErrc::kShutdownInProgress)),
                                   "runtime is shutting down"));
    return;
  }
  // Most recently idled instance first, so the rest can age out.
  Instance* idle = nullptr;
  for (auto& [id, inst] : instances_) {
    if (!inst.warm || inst.busy) continue;
    if (idle == nullptr || inst.idle_since >= idle->idle_since) idle = &inst;
  }
  if (idle != nullptr) {
    start_work_locked(*idle, std::move(pending));
    return;
  }
  if (instances_.size() < config_.max_instances) {
    Instance& inst = create_locked(false);
    inst.busy = true;
    logger("autoscaler")->debug("instance={} created active={}", inst.id, instances_.size());
    std::weak_ptr<bool> alive = alive_;
    executor_.post_after(config_.cold_start, [this, alive, id = inst.id, p = std::move(pending)]() mutable {
      if (alive.expired()) return;
      on_warm(id, std::move(p));
    });
    return;
  }
  if (config_.max_queue && queue_.size() >= *config_.max_queue) {
    lock.unlock();
    pending.respond(error_response(429, std::string(to_string(ScalerErrc::kOverload)),
                                   fmt::format("queue bound {} reached", *config_.max_queue)));
    return;
  }
  queue_.push_back(std::move(pending));
}

void Autoscaler::on_warm(std::uint64_t id, Pending pending) {
  std::lock_guard lock(mu_);
  auto it = instances_.find(id);
  if (it == instances_.end()) return;
  it->second.warm = true;
  start_work_locked(it->second, std::move(pending));
}

void Autoscaler::start_work_locked(Instance& inst, Pending pending) {
  inst.busy = true;
  auto response = std::make_shared<HttpResponse>();
  std::weak_ptr<bool> alive = alive_;
  const RequestTrace trace{inst.id, pending.arrived, executor_.now(), {}};
  inst.lane->submit(
      [handler = inst.handler, request = std::move(pending.request), response] {
        try {
          *response = handler(request);
        } catch (const std::exception& e) {
          *response = error_response(500, "HandlerFailed", e.what());
        }
      },
      [this, alive, id = inst.id, trace, response, respond = std::move(pending.respond)]() mutable {
        if (alive.expired()) return;
        on_done(id, trace, response, std::move(respond));
      });
}

void Autoscaler::on_done(std::uint64_t id, RequestTrace trace, std::shared_ptr<HttpResponse> response,
                         ResponseCallback respond) {
  {
    std::lock_guard lock(mu_);
    ++served_;
    trace.finished = executor_.now();
    traces_.push_back(trace);
    auto it = instances_.find(id);
    if (it != instances_.end()) {
      if (!queue_.empty()) {
        Pending next = std::move(queue_.front());
        queue_.pop_front();
        start_work_locked(it->second, std::move(next));
      } else {
        it->second.busy = false;
        it->second.idle_since = executor_.now();
      }
    }
  }
  respond(std::move(*response));
}

std::vector<RequestTrace> Autoscaler::traces() const {
  std::lock_guard lock(mu_);
  return traces_;
}

std::size_t Autoscaler::scale_down_tick() {
  std::vector<std::unique_ptr<WorkLane>> retired;
  {
    std::lock_guard lock(mu_);
    const Duration now = executor_.now();
    std::vector<Instance*> candidates;
    for (auto& [id, inst] : instances_) {
      if (inst.warm && !inst.busy && now - inst.idle_since >= config_.idle_timeout) candidates.push_back(&inst);
    }
    std::sort(candidates.begin(), candidates.end(), [](const Instance* a, const Instance* b) {
      return a->idle_since != b->idle_since ? a->idle_since < b->idle_since : a->id < b->id;
    });
    for (Instance* inst : candidates) {
      if (instances_.size() <= config_.min_instances) break;
      retired_lifetime_ += now - inst->created;
      retired.push_back(std::move(inst->lane));
      logger("autoscaler")->debug("instance={} retired active={}", inst->id, instances_.size() - 1);
      instances_.erase(inst->id);
    }
  }
  return retired.size();
}

void Autoscaler::sample_locked() {
  ScalingSample s;
  s.t_seconds = to_seconds(config_.sample_period) * static_cast<double>(ticks_++);
  s.active = static_cast<std::uint32_t>(instances_.size());
  s.busy = static_cast<std::uint32_t>(
      std::count_if(instances_.begin(), instances_.end(), [](const auto& kv) { return kv.second.busy; }));
  s.queued = queue_.size();
  series_.push_back(s);
}

std::vector<ScalingSample> Autoscaler::metrics_series() const {
  std::lock_guard lock(mu_);
  return series_;
}

double Autoscaler::metered_cost() const {
  std::lock_guard lock(mu_);
  Duration total = retired_lifetime_;
  const Duration now = executor_.now();
  for (const auto& [id, inst] : instances_) total += now - inst.created;
  return to_seconds(total) * config_.cost_rate;
}

std::uint32_t Autoscaler::active() const {
  std::lock_guard lock(mu_);
  return static_cast<std::uint32_t>(instances_.size());
}

std::uint32_t Autoscaler::busy() const {
  std::lock_guard lock(mu_);
  return static_cast<std::uint32_t>(
      std::count_if(instances_.begin(), instances_.end(), [](const auto& kv) { return kv.second.busy; }));
}

std::size_t Autoscaler::queued() const {
  std::lock_guard lock(mu_);
  return queue_.size();
}

std::uint32_t Autoscaler::peak_active() const {
  std::lock_guard lock(mu_);
  return peak_;
}

std::uint64_t Autoscaler::served() const {
  std::lock_guard lock(mu_);
  return served_;
}

std::uint64_t Autoscaler::instances_created() const {
  std::lock_guard lock(mu_);
  return created_;
}

}  // namespace tilepress

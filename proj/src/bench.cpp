#include "tilepress/bench.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>

#include "tilepress/dicom_store.hpp"
#include "tilepress/lanes.hpp"
#include "tilepress/log.hpp"
#include "tilepress/object_store.hpp"
#include "tilepress/util.hpp"

namespace fs = std::filesystem;

namespace tilepress {

std::string_view to_string(Workflow workflow) {
  switch (workflow) {
    case Workflow::kSerial: return "serial";
    case Workflow::kParallel: return "parallel";
    case Workflow::kEventDriven: return "event";
  }
  return "unknown";
}

std::string_view to_string(WorkMode mode) { return mode == WorkMode::kReal ? "real" : "simwork"; }

Workflow parse_workflow(std::string_view text) {
  if (text == "serial") return Workflow::kSerial;
  if (text == "parallel") return Workflow::kParallel;
  if (text == "event" || text == "event-driven") return Workflow::kEventDriven;
  throw std::invalid_argument(fmt::format("unknown workflow '{}'", text));
}

WorkMode parse_work_mode(std::string_view text) {
  if (text == "real") return WorkMode::kReal;
  if (text == "simwork") return WorkMode::kSimwork;
  throw std::invalid_argument(fmt::format("unknown mode '{}'", text));
}

void validate(const BenchConfig& c) {
  if (c.batch == 0) throw std::invalid_argument("batch must be >= 1");
  if (c.width == 0) throw std::invalid_argument("width must be >= 1");
  if (c.tile != 256 && c.tile != 512) throw std::invalid_argument("tile must be 256 or 512");
  if (c.workers == 0) throw std::invalid_argument("workers must be >= 1");
  if (c.work_cost < Duration::zero()) throw std::invalid_argument("work cost must be >= 0");
  if (c.fault_rate < 0 || c.fault_rate > 1) throw std::invalid_argument("fault rate must be in [0, 1]");
  if (c.ack_deadline <= c.conversion.request_timeout) {
    throw std::invalid_argument(fmt::format("ack deadline {} must exceed the request timeout {}",
                                            format_duration(c.ack_deadline),
                                            format_duration(c.conversion.request_timeout)));
  }
  validate(c.scaler);
  validate(c.conversion);
}

std::vector<std::size_t> checkpoints_for(std::size_t batch) {
  std::vector<std::size_t> out;
  for (std::size_t k : {1, 10, 25, 50}) {
    if (k < batch) out.push_back(k);
  }
  out.push_back(batch);
  return out;
}

std::vector<std::string> prepare_batch(const BenchConfig& config, std::string target) {
  validate(config);
  const fs::path dir = target.empty() ? fs::path(config.out_dir) / "batch" : fs::path(target);
  if (target.empty()) fs::remove_all(dir);
  fs::create_directories(dir);
  const int digits = std::max<int>(3, static_cast<int>(fmt::format("{}", config.batch).size()));
  std::vector<std::string> paths;
  for (std::size_t i = 0; i < config.batch; ++i) {
    const std::string id = fmt::format("slide-{:0{}}", i, digits);
    const Bytes spyr = generate_slide(id, config.width, config.slide_height(), config.tile,
                                      mix64(config.seed + i), config.layout);
    const fs::path path = dir / (id + ".spyr");
    write_file_atomic(path.string(), spyr);
    paths.push_back(path.string());
  }
  return paths;
}

namespace {

std::unique_ptr<Executor> make_executor(WorkMode mode) {
  if (mode == WorkMode::kSimwork) return std::make_unique<VirtualExecutor>();
  return std::make_unique<ThreadExecutor>();
}

LaneFactory lane_factory(const BenchConfig& config, Executor& executor) {
  if (config.mode == WorkMode::kSimwork) {
    return [&executor, cost = config.work_cost] { return make_simulated_lane(executor, cost); };
  }
  return [&executor] { return make_thread_lane(executor); };
}

void finish(Executor& executor) {
  if (!executor.is_virtual()) static_cast<ThreadExecutor&>(executor).shutdown();
}

fs::path fresh_dir(const BenchConfig& config, Workflow workflow) {
  const fs::path dir = fs::path(config.out_dir) / std::string(to_string(workflow));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::pair<std::string, std::string>> snapshot(const BenchConfig& c, Workflow workflow) {
  std::vector<std::pair<std::string, std::string>> out = {
      {"workflow", std::string(to_string(workflow))},
      {"mode", std::string(to_string(c.mode))},
      {"batch", fmt::format("{}", c.batch)},
      {"width", fmt::format("{}", c.width)},
      {"height", fmt::format("{}", c.slide_height())},
      {"tile", fmt::format("{}", c.tile)},
  };
  if (c.mode == WorkMode::kSimwork) out.emplace_back("work_cost", format_duration(c.work_cost));
  if (workflow == Workflow::kParallel) out.emplace_back("workers", fmt::format("{}", c.workers));
  if (workflow == Workflow::kEventDriven) {
    out.emplace_back("min_instances", fmt::format("{}", c.scaler.min_instances));
    out.emplace_back("max_instances", fmt::format("{}", c.scaler.max_instances));
    out.emplace_back("cold_start", format_duration(c.scaler.cold_start));
    out.emplace_back("idle_timeout", format_duration(c.scaler.idle_timeout));
    out.emplace_back("ack_deadline", format_duration(c.ack_deadline));
    if (c.fault_rate > 0) out.emplace_back("fault_rate", fmt::format("{:g}", c.fault_rate));
  }
  return out;
}

void fill_checkpoints(WorkflowReport& report, std::vector<double> completions) {
  std::sort(completions.begin(), completions.end());
  for (std::size_t k : checkpoints_for(report.images)) {
    if (k <= completions.size()) report.checkpoints[k] = completions[k - 1];
  }
  report.total_seconds = completions.empty() ? 0.0 : completions.back();
}

// Fixed pool of `lanes` workers pulling slides in batch order.
WorkflowReport run_pool(const BenchConfig& config, const std::vector<std::string>& batch, Workflow workflow,
                        std::uint32_t lanes) {
  validate(config);
  const auto wall_start = std::chrono::steady_clock::now();
  const fs::path dir = fresh_dir(config, workflow);
  auto executor = make_executor(config.mode);
  DicomStore store((dir / "dicom").string(), *executor);
  const LaneFactory factory = lane_factory(config, *executor);
  std::vector<std::unique_ptr<WorkLane>> pool;
  for (std::uint32_t i = 0; i < lanes; ++i) pool.push_back(factory());

  WorkflowReport report;
  report.workflow = workflow;
  report.mode = config.mode;
  report.images = batch.size();
  report.store_root = store.root();
  report.config = snapshot(config, workflow);
  report.per_image_seconds.assign(batch.size(), 0.0);

  std::mutex mu;
  std::size_t next = 0;
  std::atomic<std::size_t> finished{0};
  std::vector<double> completions;
  const Duration t0 = executor->now();
  auto log = logger("bench");

  std::function<void(std::size_t)> launch = [&](std::size_t lane) {
    std::size_t index;
    {
      std::lock_guard lock(mu);
      if (next >= batch.size()) return;
      index = next++;
    }
    const Duration started = executor->now();
    pool[lane]->submit(
        [&, index] {
          try {
            const Bytes spyr = read_file(batch[index]);
            convert_and_store(spyr, slide_id_from_key(batch[index]), store, config.conversion);
            std::lock_guard lock(mu);
            ++report.converted;
          } catch (const std::exception& e) {
            log->error("workflow={} file={} error={}", to_string(workflow), batch[index], e.what());
            std::lock_guard lock(mu);
            ++report.failures;
          }
        },
        [&, lane, index, started] {
          const Duration now = executor->now();
          {
            std::lock_guard lock(mu);
            report.per_image_seconds[index] = to_seconds(now - started);
            completions.push_back(to_seconds(now - t0));
          }
          ++finished;
          launch(lane);
        });
  };
  for (std::uint32_t i = 0; i < lanes; ++i) executor->post([&launch, i] { launch(i); });

  const bool done = wait_until(*executor, [&] { return finished.load() == batch.size(); }, config.run_limit);
  finish(*executor);
  pool.clear();
  if (!done) throw std::runtime_error(fmt::format("{} workflow did not finish", to_string(workflow)));
  fill_checkpoints(report, completions);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  return report;
}

}  // namespace

WorkflowReport run_serial(const BenchConfig& config, const std::vector<std::string>& batch) {
  return run_pool(config, batch, Workflow::kSerial, 1);
}

WorkflowReport run_parallel(const BenchConfig& config, const std::vector<std::string>& batch) {
  return run_pool(config, batch, Workflow::kParallel, config.workers);
}

WorkflowReport run_event_driven(const BenchConfig& config, const std::vector<std::string>& batch) {
  validate(config);
  const auto wall_start = std::chrono::steady_clock::now();
  const fs::path dir = fresh_dir(config, Workflow::kEventDriven);
  auto executor = make_executor(config.mode);

  WorkflowReport report;
  report.workflow = Workflow::kEventDriven;
  report.mode = config.mode;
  report.images = batch.size();
  report.config = snapshot(config, Workflow::kEventDriven);
  report.per_image_seconds.assign(batch.size(), 0.0);

  ObjectStore objects((dir / "objects").string(), *executor);
  objects.create_bucket(std::string(kLandingBucket));
  DicomStore store((dir / "dicom").string(), *executor);
  report.store_root = store.root();

  InprocTransport inproc;
  std::unique_ptr<FaultInjectingTransport> faults;
  PushTransport* transport = &inproc;
  if (config.fault_rate > 0) {
    faults = std::make_unique<FaultInjectingTransport>(inproc, config.fault_rate, config.fault_seed);
    transport = faults.get();
  }
  Broker broker(*executor, *transport);
  broker.create_topic(std::string(kConversionTopic));
  broker.create_topic(std::string(kDefaultDeadLetterTopic));
  SubscriptionConfig sub;
  sub.name = kConverterSubscription;
  sub.topic = kConversionTopic;
  sub.endpoint = kConverterEndpoint;
  sub.ack_deadline = config.ack_deadline;
  sub.max_delivery_attempts = config.max_delivery_attempts;
  broker.create_subscription(sub);
  objects.set_notification(std::string(kLandingBucket), make_topic_sink(broker, std::string(kConversionTopic)));

  // Study UID -> batch index, to attribute commits to slides.
  std::map<std::string, std::size_t> study_to_index;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    study_to_index[make_uids(slide_id_from_key(batch[i]), 0, config.conversion.uid_root).study] = i;
  }
  std::mutex mu;
  std::vector<double> completions;
  std::vector<Duration> uploaded(batch.size());
  std::atomic<std::size_t> committed{0};
  Duration t0{};
  store.set_commit_listener([&](const CommitEvent& e) {
    if (!e.newly_visible) return;
    {
      std::lock_guard lock(mu);
      completions.push_back(to_seconds(e.at - t0));
      if (auto it = study_to_index.find(e.study_uid); it != study_to_index.end()) {
        report.per_image_seconds[it->second] = to_seconds(e.at - uploaded[it->second]);
      }
    }
    ++committed;
  });

  ConversionService service(objects, store, *executor, config.conversion);
  Autoscaler scaler(
      *executor, config.scaler,
      [&service] { return RequestHandler([&service](const HttpRequest& r) { return service.handle(r); }); },
      lane_factory(config, *executor));
  inproc.bind(std::string(kConverterEndpoint), scaler.as_handler());
  const Duration origin = executor->now();
  scaler.start();

  // Burst upload.
  t0 = executor->now();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Bytes spyr = read_file(batch[i]);
    {
      std::lock_guard lock(mu);
      uploaded[i] = executor->now();
    }
    objects.put_object(std::string(kLandingBucket), fs::path(batch[i]).filename().string(), spyr);
  }

  const std::string sub_name(kConverterSubscription);
  const auto settled = [&] {
    const SubscriptionStats s = broker.stats(sub_name);
    return committed.load() + s.dead_lettered >= batch.size() && s.pending == 0 && s.in_flight == 0 &&
           scaler.active() == config.scaler.min_instances && scaler.queued() == 0;
  };
  const bool done = wait_until(*executor, settled, config.run_limit);
  scaler.stop();
  finish(*executor);
  if (!done) throw std::runtime_error("event workflow did not settle");

  report.converted = committed.load();
  report.delivery = broker.stats(sub_name);
  report.failures = report.delivery.dead_lettered;
  report.published = broker.published_count();
  report.series = scaler.metrics_series();
  report.metered_cost = scaler.metered_cost();
  report.peak_instances = scaler.peak_active();
  report.requests = scaler.traces();
  for (auto& r : report.requests) {
    r.arrived -= origin;
    r.started -= origin;
    r.finished -= origin;
  }
  report.faults_injected = faults ? faults->injected() : 0;
  fill_checkpoints(report, completions);
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_start).count();
  return report;
}

WorkflowReport run_workflow(Workflow workflow, const BenchConfig& config, const std::vector<std::string>& batch) {
  switch (workflow) {
    case Workflow::kSerial: return run_serial(config, batch);
    case Workflow::kParallel: return run_parallel(config, batch);
    case Workflow::kEventDriven: return run_event_driven(config, batch);
  }
  throw std::invalid_argument("unknown workflow");
}

// ---- reporting -------------------------------------------------------------------

std::string timings_csv(const std::vector<WorkflowReport>& reports) {
  std::string out = "workflow,images,elapsed_seconds\n";
  for (const auto& r : reports) {
    for (const auto& [k, seconds] : r.checkpoints) out += fmt::format("{},{},{:.3f}\n", to_string(r.workflow), k, seconds);
  }
  return out;
}

std::string format_report(const std::vector<WorkflowReport>& reports) {
  std::set<std::size_t> columns;
  for (const auto& r : reports) {
    for (const auto& [k, s] : r.checkpoints) columns.insert(k);
  }
  std::string out;
  if (!reports.empty()) {
    out += "tilepress benchmark\n";
    for (const auto& [key, value] : reports.front().config) {
      if (key != "workflow") out += fmt::format("  {} = {}\n", key, value);
    }
    out += "\n";
  }
  out += fmt::format("{:<10}{:>8}{:>10}", "workflow", "images", "failures");
  for (std::size_t k : columns) out += fmt::format("{:>12}", fmt::format("t@{}", k));
  out += fmt::format("{:>12}\n", "total_s");
  for (const auto& r : reports) {
    out += fmt::format("{:<10}{:>8}{:>10}", to_string(r.workflow), r.images, r.failures);
    for (std::size_t k : columns) {
      auto it = r.checkpoints.find(k);
      out += it == r.checkpoints.end() ? fmt::format("{:>12}", "-") : fmt::format("{:>12.3f}", it->second);
    }
    out += fmt::format("{:>12.3f}\n", r.total_seconds);
  }
  for (const auto& r : reports) {
    if (r.workflow != Workflow::kEventDriven) continue;
    out += fmt::format(
        "\nevent workflow: peak_instances={} metered_cost={:.3f} published={} acked={} dead_lettered={} "
        "deliveries={} failures={} faults_injected={}\n",
        r.peak_instances, r.metered_cost, r.published, r.delivery.acked, r.delivery.dead_lettered,
        r.delivery.deliveries, r.delivery.failures, r.faults_injected);
    for (const auto& [key, value] : r.config) {
      if (key.find("instances") != std::string::npos || key == "cold_start" || key == "idle_timeout" ||
          key == "ack_deadline" || key == "fault_rate") {
        out += fmt::format("  {} = {}\n", key, value);
      }
    }
  }
  return out;
}

void emit_report(const std::vector<WorkflowReport>& reports, const std::string& out_dir, std::ostream& table) {
  fs::create_directories(out_dir);
  const fs::path dir(out_dir);
  write_file_atomic((dir / "timings.csv").string(), timings_csv(reports));
  std::vector<ScalingSample> series;
  for (const auto& r : reports) {
    if (r.workflow == Workflow::kEventDriven) series = r.series;
  }
  write_file_atomic((dir / "instances.csv").string(), metrics_csv(series));
  const std::string text = format_report(reports);
  write_file_atomic((dir / "report.txt").string(), text);
  table << text;
}

// ---- fault injection ----------------------------------------------------------

FaultInjectingTransport::FaultInjectingTransport(PushTransport& inner, double rate, std::uint64_t seed)
    : inner_(inner), rate_(rate), seed_(seed) {}

bool FaultInjectingTransport::selected(const std::string& message_id) const {
  const double u = static_cast<double>(mix64(fnv1a64(message_id) ^ seed_) >> 11) * 0x1.0p-53;
  return u < rate_;
}

void FaultInjectingTransport::post(const std::string& endpoint, std::string body, Duration timeout,
                                   StatusCallback done) {
  bool sabotage = false;
  try {
    const PushEnvelope envelope = decode_push_envelope(body);
    std::lock_guard lock(mu_);
    const bool first = seen_.insert(envelope.message.message_id).second;
    sabotage = first && selected(envelope.message.message_id);
    if (sabotage) ++injected_;
  } catch (const PubSubError&) {
  }
  if (!sabotage) {
    inner_.post(endpoint, std::move(body), timeout, std::move(done));
    return;
  }
  inner_.post(endpoint, std::move(body), timeout, [done = std::move(done)](int) { done(500); });
}

std::uint64_t FaultInjectingTransport::injected() const {
  std::lock_guard lock(mu_);
  return injected_;
}

}  // namespace tilepress

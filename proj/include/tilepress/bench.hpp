#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "tilepress/autoscaler.hpp"
#include "tilepress/conversion.hpp"
#include "tilepress/pubsub.hpp"
#include "tilepress/wsi.hpp"

namespace tilepress {

inline constexpr std::string_view kLandingBucket = "landing";
inline constexpr std::string_view kConversionTopic = "wsi-dicom-conversion";
inline constexpr std::string_view kConverterSubscription = "converter";
inline constexpr std::string_view kConverterEndpoint = "inproc://converter";

enum class Workflow { kSerial, kParallel, kEventDriven };
enum class WorkMode { kReal, kSimwork };

std::string_view to_string(Workflow workflow);  // serial, parallel, event
std::string_view to_string(WorkMode mode);      // real, simwork
Workflow parse_workflow(std::string_view text);
WorkMode parse_work_mode(std::string_view text);

struct BenchConfig {
  std::size_t batch = 50;
  std::uint32_t width = 4096;
  std::uint32_t height = 0;  // 0: square
  std::uint32_t tile = 256;
  SlideLayout layout = SlideLayout::kFullPyramid;
  std::uint64_t seed = 1;
  WorkMode mode = WorkMode::kReal;
  Duration work_cost = std::chrono::seconds(10);  // per slide, SIMWORK only
  std::uint32_t workers = 4;
  ScalerConfig scaler;
  ConversionConfig conversion;
  // Must exceed conversion.request_timeout.
  Duration ack_deadline = std::chrono::seconds(660);
  std::uint32_t max_delivery_attempts = 5;
  // Event workflow: share of messages whose first delivery is answered with
  // 500 after the handler has run.
  double fault_rate = 0;
  std::uint64_t fault_seed = 7;
  std::string out_dir = "out";
  Duration run_limit = std::chrono::hours(24 * 30);

  std::uint32_t slide_height() const { return height == 0 ? width : height; }
};

// Throws std::invalid_argument.
void validate(const BenchConfig& config);

// {1, 10, 25, 50} clipped to the batch, always ending with the batch size.
std::vector<std::size_t> checkpoints_for(std::size_t batch);

struct WorkflowReport {
  Workflow workflow = Workflow::kSerial;
  WorkMode mode = WorkMode::kSimwork;
  std::size_t images = 0;
  std::size_t converted = 0;
  std::size_t failures = 0;
  std::map<std::size_t, double> checkpoints;  // k -> seconds until the k-th slide finished
  double total_seconds = 0;
  std::vector<double> per_image_seconds;  // in batch order
  double wall_seconds = 0;
  std::string store_root;
  std::vector<std::pair<std::string, std::string>> config;

  // Event workflow only.
  std::vector<ScalingSample> series;
  double metered_cost = 0;
  std::uint32_t peak_instances = 0;
  std::vector<RequestTrace> requests;  // relative to the scaler start
  std::uint64_t published = 0;
  SubscriptionStats delivery;
  std::uint64_t faults_injected = 0;
};

// Writes slide-NNN.spyr files into `dir` (default <out>/batch) and returns
// the paths in batch order.
std::vector<std::string> prepare_batch(const BenchConfig& config, std::string dir = {});

// Each workflow converts into its own fresh store under <out>/<workflow>/.
WorkflowReport run_serial(const BenchConfig& config, const std::vector<std::string>& batch);
WorkflowReport run_parallel(const BenchConfig& config, const std::vector<std::string>& batch);
WorkflowReport run_event_driven(const BenchConfig& config, const std::vector<std::string>& batch);
WorkflowReport run_workflow(Workflow workflow, const BenchConfig& config, const std::vector<std::string>& batch);

// `workflow,images,elapsed_seconds`, one row per checkpoint.
std::string timings_csv(const std::vector<WorkflowReport>& reports);
std::string format_report(const std::vector<WorkflowReport>& reports);
// timings.csv, instances.csv (the event workflow's series, header only when
// absent) and report.txt into `out_dir`; the table also goes to `table`.
void emit_report(const std::vector<WorkflowReport>& reports, const std::string& out_dir, std::ostream& table);

// Forwards every push, but answers 500 to the first delivery of a seeded,
// hash-selected share of messages. The handler still runs, so the broker's
// redelivery exercises idempotent re-commit.
class FaultInjectingTransport final : public PushTransport {
 public:
  FaultInjectingTransport(PushTransport& inner, double rate, std::uint64_t seed);
  void post(const std::string& endpoint, std::string body, Duration timeout, StatusCallback done) override;
  std::uint64_t injected() const;
  // Whether the first delivery of `message_id` is sabotaged.
  bool selected(const std::string& message_id) const;

 private:
  PushTransport& inner_;
  double rate_;
  std::uint64_t seed_;
  mutable std::mutex mu_;
  std::set<std::string> seen_;
  std::uint64_t injected_ = 0;
};

}  // namespace tilepress

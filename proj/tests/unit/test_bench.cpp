#include <gtest/gtest.h>

#include <fmt/format.h>

#include <fstream>
#include <sstream>

#include "../oracle/oracles.hpp"
#include "../support.hpp"
#include "tilepress/bench.hpp"

using namespace tilepress;
using namespace std::chrono_literals;
using testing_support::TempDir;

namespace {

BenchConfig small(const TempDir& dir, std::size_t batch = 12) {
  BenchConfig c;
  c.batch = batch;
  c.width = 300;
  c.mode = WorkMode::kSimwork;
  c.out_dir = dir.str();
  return c;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Checkpoints, ClippedToBatch) {
  EXPECT_EQ(checkpoints_for(50), (std::vector<std::size_t>{1, 10, 25, 50}));
  EXPECT_EQ(checkpoints_for(12), (std::vector<std::size_t>{1, 10, 12}));
  EXPECT_EQ(checkpoints_for(10), (std::vector<std::size_t>{1, 10}));
  EXPECT_EQ(checkpoints_for(1), (std::vector<std::size_t>{1}));
  EXPECT_EQ(checkpoints_for(80), (std::vector<std::size_t>{1, 10, 25, 50, 80}));
}

TEST(BenchConfigCheck, Rejects) {
  TempDir dir("bench");
  BenchConfig c = small(dir);
  c.ack_deadline = c.conversion.request_timeout;
  EXPECT_THROW(validate(c), std::invalid_argument);
  c = small(dir);
  c.batch = 0;
  EXPECT_THROW(validate(c), std::invalid_argument);
  c = small(dir);
  c.fault_rate = 1.5;
  EXPECT_THROW(validate(c), std::invalid_argument);
  EXPECT_EQ(parse_workflow("event"), Workflow::kEventDriven);
  EXPECT_THROW(parse_workflow("batch"), std::invalid_argument);
  EXPECT_EQ(parse_work_mode("simwork"), WorkMode::kSimwork);
}

TEST(Bench, SimworkMakespans) {
  TempDir dir("bench");
  BenchConfig c = small(dir, 50);
  const auto batch = prepare_batch(c);
  ASSERT_EQ(batch.size(), 50u);
  const auto serial = run_serial(c, batch);
  const auto parallel = run_parallel(c, batch);
  const auto event = run_event_driven(c, batch);
  EXPECT_DOUBLE_EQ(serial.total_seconds, 500.0);
  EXPECT_DOUBLE_EQ(parallel.total_seconds, 130.0);
  EXPECT_DOUBLE_EQ(event.total_seconds, 42.0);
  EXPECT_EQ(event.peak_instances, 16u);
  EXPECT_DOUBLE_EQ(event.metered_cost, 14 * 92.0 + 2 * 102.0);
  for (const auto* r : {&serial, &parallel, &event}) {
    EXPECT_EQ(r->converted, 50u);
    EXPECT_EQ(r->failures, 0u);
    EXPECT_EQ(r->checkpoints.size(), 4u);
    EXPECT_DOUBLE_EQ(r->checkpoints.at(50), r->total_seconds);
  }
  EXPECT_DOUBLE_EQ(serial.checkpoints.at(1), 10.0);
  EXPECT_DOUBLE_EQ(serial.checkpoints.at(25), 250.0);
  EXPECT_DOUBLE_EQ(event.checkpoints.at(1), 12.0);
}

TEST(Bench, ParallelMatchesPoolOracle) {
  TempDir dir("bench");
  for (std::uint32_t workers : {1u, 3u, 7u, 16u}) {
    BenchConfig c = small(dir, 20);
    c.workers = workers;
    c.work_cost = 3s;
    const auto report = run_parallel(c, prepare_batch(c));
    const auto want = oracle::simulate_pool(workers, std::vector<std::int64_t>(20, 3000));
    for (const auto& [k, seconds] : report.checkpoints) {
      EXPECT_EQ(std::llround(seconds * 1000), want[k - 1]) << "workers " << workers << " k " << k;
    }
  }
}

TEST(Bench, EventMatchesScalerOracle) {
  TempDir dir("bench");
  BenchConfig c = small(dir, 30);
  c.scaler.max_instances = 7;
  c.scaler.cold_start = 1500ms;
  c.scaler.idle_timeout = 20s;
  c.work_cost = 4s;
  const auto report = run_event_driven(c, prepare_batch(c));
  oracle::ScalerParams p;
  p.max_instances = 7;
  p.cold_ms = 1500;
  p.idle_ms = 20000;
  const auto want = oracle::simulate_scaler(p, std::vector<oracle::Job>(30, {0, 4000}));
  EXPECT_EQ(std::llround(report.total_seconds * 1000), want.makespan_ms);
  EXPECT_EQ(report.peak_instances, want.peak);
  EXPECT_NEAR(report.metered_cost, want.cost, 1.0);
  for (const auto& [k, seconds] : report.checkpoints) EXPECT_EQ(std::llround(seconds * 1000), want.completion_ms[k - 1]);
}

TEST(Bench, CheckpointsAreOrdered) {
  TempDir dir("bench");
  BenchConfig c = small(dir, 25);
  const auto batch = prepare_batch(c);
  for (Workflow w : {Workflow::kSerial, Workflow::kParallel, Workflow::kEventDriven}) {
    const auto r = run_workflow(w, c, batch);
    double prev = 0;
    for (const auto& [k, seconds] : r.checkpoints) {
      if (w == Workflow::kEventDriven) {
        EXPECT_GE(seconds, prev);  // simultaneous completions tie
      } else {
        EXPECT_GT(seconds, prev);
      }
      prev = seconds;
    }
  }
}

TEST(Bench, StoresAgreeAcrossWorkflows) {
  TempDir dir("bench");
  BenchConfig c = small(dir, 6);
  c.width = 600;
  const auto batch = prepare_batch(c);
  std::vector<std::map<std::string, std::string>> snaps;
  for (Workflow w : {Workflow::kSerial, Workflow::kParallel, Workflow::kEventDriven}) {
    const auto r = run_workflow(w, c, batch);
    VirtualExecutor clock;
    DicomStore store(r.store_root, clock);
    EXPECT_EQ(store.committed_series_count(), 6u);
    EXPECT_EQ(store.committed_instance_count(), 6u * 3);
    snaps.push_back(store.snapshot());
  }
  EXPECT_EQ(snaps[0], snaps[1]);
  EXPECT_EQ(snaps[0], snaps[2]);
}

TEST(Bench, FaultsCauseRedeliveryNotDuplicates) {
  TempDir dir("bench");
  BenchConfig c = small(dir, 20);
  c.fault_rate = 0.3;
  const auto r = run_event_driven(c, prepare_batch(c));
  EXPECT_GT(r.faults_injected, 0u);
  EXPECT_EQ(r.converted, 20u);
  EXPECT_EQ(r.delivery.acked, 20u);
  EXPECT_EQ(r.delivery.deliveries, 20u + r.faults_injected);
  VirtualExecutor clock;
  EXPECT_EQ(DicomStore(r.store_root, clock).committed_series_count(), 20u);
}

TEST(FaultSelection, RateIsRespected) {
  InprocTransport inner;
  FaultInjectingTransport none(inner, 0.0, 7), all(inner, 1.0, 7), some(inner, 0.25, 7);
  int picked = 0;
  for (int i = 0; i < 4000; ++i) {
    const std::string id = fmt::format("{:016}", i);
    EXPECT_FALSE(none.selected(id));
    EXPECT_TRUE(all.selected(id));
    picked += some.selected(id) ? 1 : 0;
  }
  EXPECT_NEAR(picked / 4000.0, 0.25, 0.03);
}

TEST(Bench, RunsAreReproducible) {
  TempDir a("bench"), b("bench");
  std::vector<std::string> outputs;
  for (const TempDir* dir : {&a, &b}) {
    BenchConfig c = small(*dir, 12);
    const auto batch = prepare_batch(c);
    std::vector<WorkflowReport> reports;
    for (Workflow w : {Workflow::kSerial, Workflow::kParallel, Workflow::kEventDriven}) reports.push_back(run_workflow(w, c, batch));
    std::ostringstream table;
    emit_report(reports, dir->str(), table);
    outputs.push_back(slurp(dir->str() + "/timings.csv") + "|" + slurp(dir->str() + "/instances.csv"));
  }
  EXPECT_EQ(outputs[0], outputs[1]);
}

TEST(Bench, ReportFiles) {
  TempDir dir("bench");
  BenchConfig c = small(dir, 3);
  const auto batch = prepare_batch(c);
  const auto serial = run_serial(c, batch);
  std::ostringstream table;
  emit_report({serial}, dir.str(), table);
  EXPECT_EQ(slurp(dir.str() + "/timings.csv"), "workflow,images,elapsed_seconds\nserial,1,10.000\nserial,3,30.000\n");
  EXPECT_EQ(slurp(dir.str() + "/instances.csv"), "t_seconds,active,busy,queued\n");
  const std::string report = slurp(dir.str() + "/report.txt");
  EXPECT_NE(report.find("serial"), std::string::npos);
  EXPECT_NE(table.str().find("serial"), std::string::npos);

  const auto event = run_event_driven(c, batch);
  emit_report({serial, event}, dir.str(), table);
  const std::string csv = slurp(dir.str() + "/instances.csv");
  EXPECT_EQ(csv, metrics_csv(event.series));
  EXPECT_GT(std::count(csv.begin(), csv.end(), '\n'), 10);
}

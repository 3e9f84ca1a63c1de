// tilepress: benchmark harness and standalone entry points for the pipeline.
#include <atomic>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <httplib.h>

#include "tilepress/autoscaler.hpp"
#include "tilepress/bench.hpp"
#include "tilepress/conversion.hpp"
#include "tilepress/dicom_store.hpp"
#include "tilepress/log.hpp"
#include "tilepress/object_store.hpp"

using namespace tilepress;
namespace fs = std::filesystem;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

Duration duration_arg(const std::string& text, const char* flag) {
  try {
    return parse_duration(text);
  } catch (const std::exception& e) {
    throw CLI::ValidationError(flag, e.what());
  }
}

SlideLayout layout_arg(const std::string& text) {
  if (text == "full") return SlideLayout::kFullPyramid;
  if (text == "base") return SlideLayout::kBaseOnly;
  throw CLI::ValidationError("--layout", "expected full or base");
}

httplib::Server::Handler adapt(std::function<HttpResponse(const HttpRequest&)> handler) {
  return [handler](const httplib::Request& req, httplib::Response& res) {
    HttpRequest request;
    request.method = req.method;
    request.path = req.target.empty() ? req.path : req.target;
    for (const auto& [k, v] : req.headers) request.headers[k] = v;
    request.body = req.body;
    const HttpResponse response = handler(request);
    res.status = response.status;
    res.set_content(response.body, response.content_type);
  };
}

int serve_until_signal(httplib::Server& server, const std::string& host, int port, std::function<void()> on_drain) {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  if (!server.bind_to_port(host, port)) {
    std::cerr << fmt::format("cannot bind {}:{}\n", host, port);
    return 1;
  }
  std::thread watcher([&] {
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    if (on_drain) on_drain();
    std::this_thread::sleep_for(std::chrono::milliseconds(500));
    server.stop();
  });
  std::cerr << fmt::format("listening on {}:{}\n", host, port);
  server.listen_after_bind();
  g_stop = true;
  watcher.join();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tilepress: event-driven WSI to DICOM conversion pipeline"};
  app.require_subcommand(1);
  std::string log_level;
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error")->envname("TILEPRESS_LOG_LEVEL");

  // ---- bench
  BenchConfig bench;
  std::string workflow = "all";
  std::string mode = "real";
  std::string layout = "full";
  std::string work_cost = "10s", cold_start = "2s", idle_timeout = "60s", ack_deadline = "660s",
              request_timeout = "10m";
  std::string scaler_file;
  auto* bench_cmd = app.add_subcommand("bench", "Run serial / parallel / event-driven workflows");
  bench_cmd->add_option("--workflow", workflow, "serial|parallel|event|all")
      ->check(CLI::IsMember({"serial", "parallel", "event", "all"}));
  bench_cmd->add_option("--batch", bench.batch, "Slides in the batch")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--width", bench.width, "Slide width in pixels")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--height", bench.height, "Slide height (default: width)");
  bench_cmd->add_option("--tile", bench.tile, "Tile size")->check(CLI::IsMember({256, 512}));
  bench_cmd->add_option("--layout", layout, "full|base input pyramids");
  bench_cmd->add_option("--seed", bench.seed, "Pixel seed");
  bench_cmd->add_option("--mode", mode, "real|simwork")->check(CLI::IsMember({"real", "simwork"}));
  bench_cmd->add_option("--work-cost", work_cost, "Per-slide work in simwork mode");
  auto* cold_opt = bench_cmd->add_option("--cold-start", cold_start, "Instance cold start");
  auto* idle_opt = bench_cmd->add_option("--idle-timeout", idle_timeout, "Idle time before an instance is retired");
  auto* max_opt = bench_cmd->add_option("--max-instances", bench.scaler.max_instances, "Autoscaler cap");
  auto* min_opt = bench_cmd->add_option("--min-instances", bench.scaler.min_instances, "Always-on instances");
  bench_cmd->add_option("--scaler-config", scaler_file, "key=value autoscaler config; flags override it")
      ->check(CLI::ExistingFile);
  bench_cmd->add_option("--workers", bench.workers, "Parallel pool size")->check(CLI::PositiveNumber);
  bench_cmd->add_option("--ack-deadline", ack_deadline, "Push ack deadline");
  bench_cmd->add_option("--request-timeout", request_timeout, "Per-conversion budget");
  bench_cmd->add_option("--fault-rate", bench.fault_rate, "Share of messages whose first delivery fails")
      ->check(CLI::Range(0.0, 1.0));
  bench_cmd->add_option("--out", bench.out_dir, "Output directory");

  // ---- gen
  BenchConfig gen;
  std::string gen_layout = "full";
  std::string gen_out = "slides";
  auto* gen_cmd = app.add_subcommand("gen", "Generate synthetic SPYR slides");
  gen_cmd->add_option("--batch", gen.batch, "Number of slides")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--width", gen.width, "Slide width")->check(CLI::PositiveNumber);
  gen_cmd->add_option("--height", gen.height, "Slide height (default: width)");
  gen_cmd->add_option("--tile", gen.tile, "Tile size")->check(CLI::IsMember({256, 512}));
  gen_cmd->add_option("--layout", gen_layout, "full|base");
  gen_cmd->add_option("--seed", gen.seed, "Pixel seed");
  gen_cmd->add_option("--out", gen_out, "Output directory");

  // ---- convert
  std::string convert_file, dicom_root = "dicom", dicom_url, slide_id;
  ConversionConfig convert_cfg;
  auto* convert_cmd = app.add_subcommand("convert", "Convert one SPYR file into a DICOM store");
  convert_cmd->add_option("file", convert_file, "SPYR input")->required()->check(CLI::ExistingFile);
  convert_cmd->add_option("--dicom-root", dicom_root, "Filesystem DICOM store")->envname("TILEPRESS_DICOM_ROOT");
  convert_cmd->add_option("--dicom-url", dicom_url, "HTTP DICOM store instead of --dicom-root")
      ->envname("TILEPRESS_DICOM_URL");
  convert_cmd->add_option("--slide-id", slide_id, "Slide id for UIDs (default: file stem)");
  convert_cmd->add_option("--tile", convert_cfg.tile_size, "Retile base-only input (0 keeps it)")
      ->envname("TILEPRESS_TILE_SIZE");
  convert_cmd->add_option("--uid-root", convert_cfg.uid_root, "UID root")->envname("TILEPRESS_UID_ROOT");

  // ---- serve
  std::string component = "converter", host = "127.0.0.1", objects_root = "objects", serve_timeout = "10m";
  std::string serve_dicom_root = "dicom", serve_dicom_url;
  int port = 8080;
  ConversionConfig serve_cfg;
  auto* serve_cmd = app.add_subcommand("serve", "Run one component as an HTTP service");
  serve_cmd->add_option("--component", component, "converter|dicom-store")
      ->check(CLI::IsMember({"converter", "dicom-store"}));
  serve_cmd->add_option("--host", host, "Bind address");
  serve_cmd->add_option("--port", port, "Port")->envname("PORT");
  serve_cmd->add_option("--objects", objects_root, "Object store root")->envname("TILEPRESS_OBJECTS");
  serve_cmd->add_option("--dicom-root", serve_dicom_root, "Filesystem DICOM store")->envname("TILEPRESS_DICOM_ROOT");
  serve_cmd->add_option("--dicom-url", serve_dicom_url, "Remote DICOM store facade (converter only)")
      ->envname("TILEPRESS_DICOM_URL");
  serve_cmd->add_option("--tile", serve_cfg.tile_size, "Retile base-only input (0 keeps it)")
      ->envname("TILEPRESS_TILE_SIZE");
  serve_cmd->add_option("--uid-root", serve_cfg.uid_root, "UID root")->envname("TILEPRESS_UID_ROOT");
  serve_cmd->add_option("--request-timeout", serve_timeout, "Per-conversion budget");

  CLI11_PARSE(app, argc, argv);
  if (!log_level.empty()) set_log_level(log_level);

  try {
    if (*bench_cmd) {
      bench.mode = parse_work_mode(mode);
      bench.layout = layout_arg(layout);
      bench.work_cost = duration_arg(work_cost, "--work-cost");
      bench.ack_deadline = duration_arg(ack_deadline, "--ack-deadline");
      bench.conversion.request_timeout = duration_arg(request_timeout, "--request-timeout");
      if (!scaler_file.empty()) {
        const ScalerConfig flags = bench.scaler;
        bench.scaler = load_scaler_config(scaler_file, bench.scaler);
        if (max_opt->count() > 0) bench.scaler.max_instances = flags.max_instances;
        if (min_opt->count() > 0) bench.scaler.min_instances = flags.min_instances;
        if (cold_opt->count() > 0) bench.scaler.cold_start = duration_arg(cold_start, "--cold-start");
        if (idle_opt->count() > 0) bench.scaler.idle_timeout = duration_arg(idle_timeout, "--idle-timeout");
      } else {
        bench.scaler.cold_start = duration_arg(cold_start, "--cold-start");
        bench.scaler.idle_timeout = duration_arg(idle_timeout, "--idle-timeout");
      }
      validate(bench);
      std::vector<Workflow> workflows;
      if (workflow == "all") {
        workflows = {Workflow::kSerial, Workflow::kParallel, Workflow::kEventDriven};
      } else {
        workflows = {parse_workflow(workflow)};
      }
      const auto batch = prepare_batch(bench);
      std::vector<WorkflowReport> reports;
      bool failed = false;
      for (Workflow w : workflows) {
        reports.push_back(run_workflow(w, bench, batch));
        failed = failed || reports.back().failures > 0;
      }
      emit_report(reports, bench.out_dir, std::cout);
      return failed ? 2 : 0;
    }

    if (*gen_cmd) {
      gen.layout = layout_arg(gen_layout);
      gen.out_dir = gen_out;
      fs::create_directories(gen_out);
      for (const auto& path : prepare_batch(gen, gen_out)) std::cout << path << "\n";
      return 0;
    }

    if (*convert_cmd) {
      validate(convert_cfg);
      const std::string id = slide_id.empty() ? slide_id_from_key(convert_file) : slide_id;
      const Bytes spyr = read_file(convert_file);
      SystemClock clock;
      std::unique_ptr<DicomSink> sink;
      if (dicom_url.empty()) {
        sink = std::make_unique<DicomStore>(dicom_root, clock);
      } else {
        sink = std::make_unique<HttpDicomStoreClient>(dicom_url);
      }
      const std::size_t n = convert_and_store(spyr, id, *sink, convert_cfg);
      const UidTriple uids = make_uids(id, 0, convert_cfg.uid_root);
      std::cout << fmt::format("slide={} instances={} study={} series={}\n", id, n, uids.study, uids.series);
      return 0;
    }

    if (*serve_cmd) {
      SystemClock clock;
      httplib::Server server;
      if (component == "dicom-store") {
        DicomStore store(serve_dicom_root, clock);
        const auto handler = adapt([&store](const HttpRequest& r) { return handle_dicom_store_request(store, r); });
        server.Post(R"(/.*)", handler);
        server.Get(R"(/.*)", handler);
        server.Delete(R"(/.*)", handler);
        return serve_until_signal(server, host, port, nullptr);
      }
      serve_cfg.request_timeout = duration_arg(serve_timeout, "--request-timeout");
      ObjectStore objects(objects_root, clock);
      std::unique_ptr<DicomSink> sink;
      if (serve_dicom_url.empty()) {
        sink = std::make_unique<DicomStore>(serve_dicom_root, clock);
      } else {
        sink = std::make_unique<HttpDicomStoreClient>(serve_dicom_url);
      }
      ConversionService service(objects, *sink, clock, serve_cfg);
      const auto handler = adapt([&service](const HttpRequest& r) { return service.handle(r); });
      server.Post(R"(/.*)", handler);
      server.Get(R"(/.*)", handler);
      return serve_until_signal(server, host, port, [&service] { service.begin_shutdown(); });
    }
  } catch (const CLI::Error& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

#include "tilepress/log.hpp"

#include <cstdlib>
#include <mutex>

#include <spdlog/pattern_formatter.h>
#include <spdlog/sinks/basic_file_sink.h>
#include <spdlog/sinks/stdout_color_sinks.h>

namespace tilepress {

namespace {

struct SharedSink {
  std::mutex mu;
  spdlog::sink_ptr sink;
  spdlog::level::level_enum level = spdlog::level::warn;

  SharedSink() {
    if (const char* path = std::getenv("TILEPRESS_LOG_FILE"); path != nullptr && *path != '\0') {
      sink = std::make_shared<spdlog::sinks::basic_file_sink_mt>(path);
    } else {
      sink = std::make_shared<spdlog::sinks::stderr_color_sink_mt>();
    }
    sink->set_formatter(std::make_unique<spdlog::pattern_formatter>("%Y-%m-%dT%H:%M:%S.%eZ %l component=%n %v",
                                                                    spdlog::pattern_time_type::utc));
    if (const char* lvl = std::getenv("TILEPRESS_LOG_LEVEL"); lvl != nullptr && *lvl != '\0') {
      level = spdlog::level::from_str(lvl);
    }
  }
};

SharedSink& shared() {
  static SharedSink s;
  return s;
}

}  // namespace

std::shared_ptr<spdlog::logger> logger(const std::string& component) {
  auto& s = shared();
  std::lock_guard lock(s.mu);
  if (auto existing = spdlog::get(component)) return existing;
  auto created = std::make_shared<spdlog::logger>(component, s.sink);
  created->set_level(s.level);
  spdlog::register_logger(created);
  return created;
}

void set_log_level(const std::string& level) {
  auto& s = shared();
  std::lock_guard lock(s.mu);
  s.level = spdlog::level::from_str(level);
  spdlog::apply_all([&](const std::shared_ptr<spdlog::logger>& l) { l->set_level(s.level); });
}

}  // namespace tilepress

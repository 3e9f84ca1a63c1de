#pragma once

#include <memory>
#include <string>

#include <spdlog/spdlog.h>

namespace tilepress {

// All components log through one shared sink (stderr, or the file named by
// TILEPRESS_LOG_FILE). Level comes from TILEPRESS_LOG_LEVEL, default "warn".
std::shared_ptr<spdlog::logger> logger(const std::string& component);

void set_log_level(const std::string& level);

}  // namespace tilepress

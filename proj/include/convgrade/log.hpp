#pragma once

#include <string_view>

namespace convgrade {

enum class LogLevel { Quiet = 0, Warn = 1, Info = 2 };

void set_log_level(LogLevel level);
LogLevel log_level();

/// Writes "warning: <msg>" to stderr unless quieted. Thread-safe.
void log_warn(std::string_view msg);
void log_info(std::string_view msg);

}  // namespace convgrade

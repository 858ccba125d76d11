#include "convgrade/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace convgrade {

namespace {
std::atomic<int> g_level{static_cast<int>(LogLevel::Warn)};
std::mutex g_mu;
}  // namespace

void set_log_level(LogLevel level) { g_level = static_cast<int>(level); }
LogLevel log_level() { return static_cast<LogLevel>(g_level.load()); }

void log_warn(std::string_view msg) {
  if (g_level < static_cast<int>(LogLevel::Warn)) return;
  std::lock_guard<std::mutex> lock(g_mu);
  std::cerr << "warning: " << msg << '\n';
}

void log_info(std::string_view msg) {
  if (g_level < static_cast<int>(LogLevel::Info)) return;
  std::lock_guard<std::mutex> lock(g_mu);
  std::cerr << msg << '\n';
}

}  // namespace convgrade

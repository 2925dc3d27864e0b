#pragma once

#include <atomic>
#include <cstdlib>
#include <iostream>
#include <string_view>

namespace mkg {

enum class LogLevel { Quiet = 0, Warn = 1, Info = 2 };

inline std::atomic<int>& log_level_storage() {
  static std::atomic<int> level = [] {
    const char* env = std::getenv("MKG_LOG");
    if (env == nullptr) return static_cast<int>(LogLevel::Warn);
    const std::string_view v(env);
    if (v == "quiet") return static_cast<int>(LogLevel::Quiet);
    if (v == "info") return static_cast<int>(LogLevel::Info);
    return static_cast<int>(LogLevel::Warn);
  }();
  return level;
}

inline void set_log_level(LogLevel level) { log_level_storage() = static_cast<int>(level); }

inline bool log_enabled(LogLevel level) {
  return static_cast<int>(level) <= log_level_storage().load();
}

inline void log_warn(std::string_view msg) {
  if (log_enabled(LogLevel::Warn)) std::clog << "[mkg] warning: " << msg << '\n';
}

inline void log_info(std::string_view msg) {
  if (log_enabled(LogLevel::Info)) std::clog << "[mkg] " << msg << '\n';
}

}  // namespace mkg

#pragma once

#include <iostream>
#include <mutex>
#include <sstream>
#include <string>

namespace fedqot {

inline std::mutex& log_mutex() {
  static std::mutex m;
  return m;
}

inline void log_line(const char* level, const std::string& msg) {
  std::lock_guard<std::mutex> lock(log_mutex());
  std::cerr << "[" << level << "] " << msg << "\n";
}

inline void log_info(const std::string& msg) { log_line("info", msg); }
inline void log_warn(const std::string& msg) { log_line("warn", msg); }

}  // namespace fedqot

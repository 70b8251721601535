#pragma once

#include <cstdlib>
#include <iostream>
#include <string>

namespace trackpool {

enum class LogLevel { kQuiet = 0, kWarn = 1, kInfo = 2, kDebug = 3 };

// Verbosity comes from the TRACKPOOL_LOG env var: quiet|warn|info|debug.
inline LogLevel log_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("TRACKPOOL_LOG");
        if (!env) return LogLevel::kWarn;
        const std::string v(env);
        if (v == "quiet") return LogLevel::kQuiet;
        if (v == "info") return LogLevel::kInfo;
        if (v == "debug") return LogLevel::kDebug;
        return LogLevel::kWarn;
    }();
    return level;
}

inline void log_warn(const std::string& msg) {
    if (log_level() >= LogLevel::kWarn) std::cerr << "[trackpool] warning: " << msg << "\n";
}

inline void log_info(const std::string& msg) {
    if (log_level() >= LogLevel::kInfo) std::cerr << "[trackpool] " << msg << "\n";
}

inline void log_debug(const std::string& msg) {
    if (log_level() >= LogLevel::kDebug) std::cerr << "[trackpool] debug: " << msg << "\n";
}

}  // namespace trackpool

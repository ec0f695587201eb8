#include "mega/common.hpp"

#include <cstdlib>
#include <cstring>

namespace mega {

LogLevel log_level() {
    static LogLevel lvl = [] {
        const char* env = std::getenv("MEGA_LOG");
        if (env == nullptr) return LogLevel::error;
        if (std::strcmp(env, "debug") == 0) return LogLevel::debug;
        if (std::strcmp(env, "info") == 0) return LogLevel::info;
        return LogLevel::error;
    }();
    return lvl;
}

void log_msg(LogLevel lvl, const std::string& msg) {
    if (!log_enabled(lvl)) return;
    const char* tag = lvl == LogLevel::error ? "error" : (lvl == LogLevel::info ? "info" : "debug");
    std::fprintf(stderr, "[%s] %s\n", tag, msg.c_str());
}

}  // namespace mega

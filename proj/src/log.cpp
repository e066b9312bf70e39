#include "raimkit/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>
#include <set>
#include <string>

namespace raimkit::log {

namespace {
std::atomic<Level> g_level{Level::kInfo};
std::mutex g_mutex;
std::set<std::string, std::less<>> g_seen;

void emit(Level lvl, const char* tag, std::string_view message) {
  if (lvl < g_level.load()) return;
  std::lock_guard lock(g_mutex);
  std::cerr << '[' << tag << "] " << message << '\n';
}
}  // namespace

void set_level(Level lvl) { g_level.store(lvl); }
Level level() { return g_level.load(); }

void info(std::string_view message) { emit(Level::kInfo, "info", message); }
void warn(std::string_view message) { emit(Level::kWarn, "warn", message); }

void warn_once(std::string_view message) {
  {
    std::lock_guard lock(g_mutex);
    if (!g_seen.emplace(message).second) return;
  }
  warn(message);
}

}  // namespace raimkit::log

#pragma once

#include <string_view>

namespace raimkit::log {

enum class Level { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3, kOff = 4 };

void set_level(Level level);
Level level();

void info(std::string_view message);
void warn(std::string_view message);
/// Emits a given message at most once per process.
void warn_once(std::string_view message);

}  // namespace raimkit::log

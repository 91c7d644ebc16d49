#pragma once

// Minimal leveled logging to stderr. libtorch bundles its own fmt, which
// clashes with the system spdlog build, so messages are formatted with that
// fmt and written directly.

#include <cstdio>
#include <utility>

#include <fmt/format.h>

namespace iagn::log {

enum class Level { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3, kOff = 4 };

/// Initialised from IAGN_LOG_LEVEL (debug|info|warn|error|off), default info.
Level level();
void set_level(Level l);

void write(Level l, std::string_view message);

template <typename... Args>
void info(fmt::format_string<Args...> f, Args&&... args) {
  if (level() <= Level::kInfo) write(Level::kInfo, fmt::format(f, std::forward<Args>(args)...));
}
template <typename... Args>
void warn(fmt::format_string<Args...> f, Args&&... args) {
  if (level() <= Level::kWarn) write(Level::kWarn, fmt::format(f, std::forward<Args>(args)...));
}
template <typename... Args>
void error(fmt::format_string<Args...> f, Args&&... args) {
  if (level() <= Level::kError) write(Level::kError, fmt::format(f, std::forward<Args>(args)...));
}

}  // namespace iagn::log

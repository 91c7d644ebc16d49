#include "iagn/log.hpp"

#include <atomic>
#include <cstdlib>
#include <mutex>
#include <string>

namespace iagn::log {

namespace {

Level from_env() {
  const char* env = std::getenv("IAGN_LOG_LEVEL");
  if (env == nullptr) return Level::kInfo;
  const std::string v(env);
  if (v == "debug") return Level::kDebug;
  if (v == "warn") return Level::kWarn;
  if (v == "error") return Level::kError;
  if (v == "off") return Level::kOff;
  return Level::kInfo;
}

std::atomic<Level>& current() {
  static std::atomic<Level> l{from_env()};
  return l;
}

}  // namespace

Level level() { return current().load(); }
void set_level(Level l) { current() = l; }

void write(Level l, std::string_view message) {
  static std::mutex mu;
  static constexpr const char* kTags[] = {"debug", "info", "warn", "error"};
  std::lock_guard lock(mu);
  std::fprintf(stderr, "[iagn %s] %.*s\n", kTags[static_cast<int>(l)], static_cast<int>(message.size()), message.data());
}

}  // namespace iagn::log

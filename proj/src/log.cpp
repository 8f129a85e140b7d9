#include "rrg/log.h"

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <optional>

namespace rrg::log {

namespace {

std::optional<Level> g_level;
std::mutex g_mu;

Level from_env() {
  const char* v = std::getenv("RRG_LOG");
  if (!v) return Level::kInfo;
  const std::string s(v);
  if (s == "quiet") return Level::kQuiet;
  if (s == "debug") return Level::kDebug;
  if (s != "info") std::cerr << "warning: unknown RRG_LOG value '" << s << "', using info\n";
  return Level::kInfo;
}

void emit(const char* tag, const std::string& msg) {
  std::lock_guard lock(g_mu);
  std::cerr << '[' << tag << "] " << msg << '\n';
}

}  // namespace

Level level() {
  std::lock_guard lock(g_mu);
  if (!g_level) g_level = from_env();
  return *g_level;
}

void set_level(Level l) {
  std::lock_guard lock(g_mu);
  g_level = l;
}

void info(const std::string& msg) {
  if (level() >= Level::kInfo) emit("info", msg);
}

void debug(const std::string& msg) {
  if (level() >= Level::kDebug) emit("debug", msg);
}

void warn(const std::string& msg) {
  if (level() >= Level::kInfo) emit("warn", msg);
}

}  // namespace rrg::log

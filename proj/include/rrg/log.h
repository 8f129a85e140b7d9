#pragma once

#include <string>

namespace rrg::log {

enum class Level { kQuiet = 0, kInfo = 1, kDebug = 2 };

/// Read once from RRG_LOG (quiet|info|debug); defaults to info.
Level level();
void set_level(Level l);

void info(const std::string& msg);
void debug(const std::string& msg);
/// Always printed unless quiet.
void warn(const std::string& msg);

}  // namespace rrg::log

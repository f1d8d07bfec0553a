#pragma once

#include <initializer_list>
#include <string>
#include <string_view>
#include <utility>

namespace cante::log {

enum class Level { kDebug = 0, kInfo = 1, kWarn = 2, kError = 3 };

using Field = std::pair<std::string_view, std::string>;

void set_level(Level level);
Level level();

// Structured line on stderr: `level stage key=value ...`.
void write(Level level, std::string_view stage, std::initializer_list<Field> fields);

inline void debug(std::string_view stage, std::initializer_list<Field> fields) {
  write(Level::kDebug, stage, fields);
}
inline void info(std::string_view stage, std::initializer_list<Field> fields) {
  write(Level::kInfo, stage, fields);
}
inline void warn(std::string_view stage, std::initializer_list<Field> fields) {
  write(Level::kWarn, stage, fields);
}

/// Number of warnings emitted since start (tests use this to observe warnings).
long warning_count();

}  // namespace cante::log

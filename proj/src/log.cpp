#include "cante/log.hpp"

#include <atomic>
#include <cstdio>
#include <mutex>

namespace cante::log {
namespace {

std::atomic<int> g_level{static_cast<int>(Level::kInfo)};
std::atomic<long> g_warnings{0};
std::mutex g_mutex;

const char* name(Level level) {
  switch (level) {
    case Level::kDebug: return "debug";
    case Level::kInfo: return "info";
    case Level::kWarn: return "warn";
    case Level::kError: return "error";
  }
  return "info";
}

bool needs_quotes(std::string_view v) {
  for (char c : v) {
    if (c == ' ' || c == '"' || c == '=') return true;
  }
  return v.empty();
}

}  // namespace

void set_level(Level level) { g_level = static_cast<int>(level); }
Level level() { return static_cast<Level>(g_level.load()); }

void write(Level lvl, std::string_view stage, std::initializer_list<Field> fields) {
  if (lvl == Level::kWarn) ++g_warnings;
  if (static_cast<int>(lvl) < g_level.load()) return;
  std::string line = name(lvl);
  line += ' ';
  line += stage;
  for (const auto& [key, value] : fields) {
    line += ' ';
    line += key;
    line += '=';
    if (needs_quotes(value)) {
      line += '"';
      for (char c : value) {
        if (c == '"') line += '\\';
        line += c;
      }
      line += '"';
    } else {
      line += value;
    }
  }
  line += '\n';
  std::lock_guard<std::mutex> lock(g_mutex);
  std::fputs(line.c_str(), stderr);
}

long warning_count() { return g_warnings.load(); }

}  // namespace cante::log

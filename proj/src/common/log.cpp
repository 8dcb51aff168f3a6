#include "yolod/log.hpp"

#include <iostream>
#include <mutex>
#include <utility>

namespace yolod::log {
namespace {

std::mutex g_mutex;

void default_sink(Level level, const std::string& msg) {
  std::cerr << (level == Level::warning ? "warning: " : "") << msg << '\n';
}

Sink& current() {
  static Sink sink = default_sink;
  return sink;
}

void emit(Level level, const std::string& msg) {
  std::lock_guard lock(g_mutex);
  if (current()) current()(level, msg);
}

}  // namespace

Sink set_sink(Sink sink) {
  std::lock_guard lock(g_mutex);
  return std::exchange(current(), std::move(sink));
}

void info(const std::string& msg) { emit(Level::info, msg); }
void warn(const std::string& msg) { emit(Level::warning, msg); }

ScopedCapture::ScopedCapture() {
  previous_ = set_sink([this](Level level, const std::string& msg) {
    if (level == Level::warning) {
      ++warnings_;
      last_ = msg;
    }
  });
}

ScopedCapture::~ScopedCapture() { set_sink(std::move(previous_)); }

}  // namespace yolod::log

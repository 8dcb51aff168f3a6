#pragma once

#include <functional>
#include <string>

namespace yolod::log {

enum class Level { info, warning };

using Sink = std::function<void(Level, const std::string&)>;

// Replaces the process-wide sink and returns the previous one. The default
// sink writes to stderr.
Sink set_sink(Sink sink);

void info(const std::string& msg);
void warn(const std::string& msg);

// Captures warnings for the lifetime of the object (used by tests).
class ScopedCapture {
 public:
  ScopedCapture();
  ~ScopedCapture();
  ScopedCapture(const ScopedCapture&) = delete;
  ScopedCapture& operator=(const ScopedCapture&) = delete;

  int warnings() const { return warnings_; }
  const std::string& last() const { return last_; }

 private:
  Sink previous_;
  int warnings_ = 0;
  std::string last_;
};

}  // namespace yolod::log

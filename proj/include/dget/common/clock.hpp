#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>

namespace dget {

/// Seconds since the Unix epoch. Identity validity windows and overlay
/// expiries are expressed in this unit.
using Timestamp = std::int64_t;

class Clock {
 public:
  virtual ~Clock() = default;
  virtual Timestamp now() const = 0;
};

class SystemClock final : public Clock {
 public:
  Timestamp now() const override {
    using namespace std::chrono;
    return duration_cast<seconds>(system_clock::now().time_since_epoch()).count();
  }
};

/// Manually advanced clock for tests and the simulated overlay.
class VirtualClock final : public Clock {
 public:
  explicit VirtualClock(Timestamp start = 0) : now_(start) {}
  Timestamp now() const override { return now_.load(); }
  void set(Timestamp t) { now_.store(t); }
  void advance(Timestamp dt) { now_.fetch_add(dt); }

 private:
  std::atomic<Timestamp> now_;
};

}  // namespace dget

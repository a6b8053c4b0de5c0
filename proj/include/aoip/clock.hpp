#pragma once

#include <algorithm>
#include <chrono>
#include <memory>
#include <mutex>
#include <thread>

namespace aoip {

// Injected time source.  Milliseconds since the clock's epoch.  Everything
// that waits or timestamps goes through one of these; nothing in the library
// reads global time directly.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual double now_ms() = 0;
  // Blocks (wall clock) or advances time (virtual clock) by `ms`.
  virtual void sleep_ms(double ms) = 0;

  void advance_to(double t_ms) {
    double now = now_ms();
    if (t_ms > now) sleep_ms(t_ms - now);
  }
};

// Deterministic simulated time.  sleep_ms() returns immediately after
// advancing, so multi-minute lifecycles run in microseconds of wall time.
class VirtualClock final : public Clock {
 public:
  explicit VirtualClock(double start_ms = 0.0) : t_ms_(start_ms) {}

  double now_ms() override {
    std::lock_guard<std::mutex> lock(mu_);
    return t_ms_;
  }

  void sleep_ms(double ms) override {
    std::lock_guard<std::mutex> lock(mu_);
    t_ms_ += std::max(0.0, ms);
  }

 private:
  std::mutex mu_;
  double t_ms_;
};

class WallClock final : public Clock {
 public:
  WallClock() : epoch_(std::chrono::steady_clock::now()) {}

  double now_ms() override {
    auto d = std::chrono::steady_clock::now() - epoch_;
    return std::chrono::duration<double, std::milli>(d).count();
  }

  void sleep_ms(double ms) override {
    if (ms > 0) {
      std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(ms));
    }
  }

 private:
  std::chrono::steady_clock::time_point epoch_;
};

}  // namespace aoip

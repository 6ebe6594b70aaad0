#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>

namespace edif {

inline constexpr std::int64_t kMillisPerDay = 86'400'000;

// Wall-clock source in unix milliseconds. Telemetry days, quota days and
// job timestamps all read from one of these so a simulated day can be
// compressed for workload replays.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual std::int64_t now_ms() const = 0;
};

class SystemClock final : public Clock {
 public:
  std::int64_t now_ms() const override {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
  }
};

// Only moves when told to.
class ManualClock final : public Clock {
 public:
  explicit ManualClock(std::int64_t start_ms = 0) : now_(start_ms) {}
  std::int64_t now_ms() const override { return now_.load(); }
  void set(std::int64_t ms) { now_.store(ms); }
  void advance(std::int64_t ms) { now_.fetch_add(ms); }

 private:
  std::atomic<std::int64_t> now_;
};

// Simulated time running `factor` times faster than the steady clock,
// starting at `origin_ms`.
class ScaledClock final : public Clock {
 public:
  ScaledClock(std::int64_t origin_ms, double factor)
      : origin_ms_(origin_ms), factor_(factor), start_(std::chrono::steady_clock::now()) {}

  std::int64_t now_ms() const override {
    const auto elapsed = std::chrono::duration<double, std::milli>(
                             std::chrono::steady_clock::now() - start_)
                             .count();
    return origin_ms_ + static_cast<std::int64_t>(elapsed * factor_);
  }

 private:
  std::int64_t origin_ms_;
  double factor_;
  std::chrono::steady_clock::time_point start_;
};

inline std::int64_t day_index(std::int64_t unix_ms) {
  return unix_ms >= 0 ? unix_ms / kMillisPerDay : (unix_ms - kMillisPerDay + 1) / kMillisPerDay;
}

}  // namespace edif

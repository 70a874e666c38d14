#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <mutex>
#include <stop_token>
#include <string>

namespace burstq {

using Duration = std::chrono::milliseconds;
using Timestamp = std::chrono::sys_time<std::chrono::milliseconds>;

inline std::int64_t to_millis(Timestamp t) { return t.time_since_epoch().count(); }
inline Timestamp from_millis(std::int64_t ms) { return Timestamp{Duration{ms}}; }

inline Duration seconds(double s) {
  return Duration{static_cast<std::int64_t>(s * 1000.0 + (s >= 0 ? 0.5 : -0.5))};
}
inline double to_seconds(Duration d) { return static_cast<double>(d.count()) / 1000.0; }

/// ISO-8601 UTC rendering with millisecond precision.
std::string format_time(Timestamp t);

/// Source of "now" for every policy decision in the system. Live services use
/// a scaled wall clock; the simulator owns a manual one.
class Clock {
 public:
  virtual ~Clock() = default;
  virtual Timestamp now() const = 0;

  /// Blocks for `d` of clock time. Returns false if `stop` was requested first.
  virtual bool sleep_for(Duration d, std::stop_token stop = {}) = 0;
};

/// Wall clock running `acceleration` times faster than real time, starting at
/// the real current time.
class ScaledClock final : public Clock {
 public:
  explicit ScaledClock(double acceleration = 1.0);

  Timestamp now() const override;
  bool sleep_for(Duration d, std::stop_token stop = {}) override;

  double acceleration() const { return acceleration_; }
  std::chrono::nanoseconds to_real(Duration d) const;

 private:
  double acceleration_;
  std::chrono::steady_clock::time_point real_origin_;
  Timestamp virtual_origin_;
};

/// Virtual clock advanced explicitly by its owner. sleep_for never blocks: it
/// is only meaningful inside deterministic simulation where waits are modelled.
class ManualClock final : public Clock {
 public:
  explicit ManualClock(Timestamp start) : now_(start) {}

  Timestamp now() const override;
  bool sleep_for(Duration d, std::stop_token stop = {}) override;

  void advance(Duration d);
  void set(Timestamp t);

 private:
  mutable std::mutex mu_;
  Timestamp now_;
};

}  // namespace burstq

#include "burstq/clock.hpp"

#include <condition_variable>
#include <cstdio>
#include <ctime>
#include <mutex>
#include <thread>

namespace burstq {

std::string format_time(Timestamp t) {
  const auto ms = to_millis(t);
  std::time_t secs = static_cast<std::time_t>(ms / 1000);
  long frac = static_cast<long>(ms % 1000);
  if (frac < 0) {
    frac += 1000;
    --secs;
  }
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03ldZ", buf, frac);
  return out;
}

ScaledClock::ScaledClock(double acceleration)
    : acceleration_(acceleration > 0 ? acceleration : 1.0),
      real_origin_(std::chrono::steady_clock::now()),
      virtual_origin_(std::chrono::floor<Duration>(std::chrono::system_clock::now())) {}

Timestamp ScaledClock::now() const {
  const auto real = std::chrono::steady_clock::now() - real_origin_;
  const auto scaled = std::chrono::duration<double, std::nano>(real) * acceleration_;
  return virtual_origin_ + std::chrono::duration_cast<Duration>(scaled);
}

std::chrono::nanoseconds ScaledClock::to_real(Duration d) const {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(
      std::chrono::duration<double, std::nano>(d) / acceleration_);
}

bool ScaledClock::sleep_for(Duration d, std::stop_token stop) {
  if (d.count() <= 0) return !stop.stop_requested();
  std::mutex mu;
  std::condition_variable_any cv;
  std::unique_lock lock(mu);
  return !cv.wait_for(lock, stop, to_real(d), [] { return false; }) && !stop.stop_requested();
}

Timestamp ManualClock::now() const {
  std::lock_guard lock(mu_);
  return now_;
}

bool ManualClock::sleep_for(Duration d, std::stop_token stop) {
  if (stop.stop_requested()) return false;
  advance(d);
  return true;
}

void ManualClock::advance(Duration d) {
  std::lock_guard lock(mu_);
  now_ += d;
}

void ManualClock::set(Timestamp t) {
  std::lock_guard lock(mu_);
  now_ = t;
}

}  // namespace burstq

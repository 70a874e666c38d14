#pragma once

// Bounded work slots shared by the agent, the local run pool, the grid
// preparation pool and the simulated grid. A unit of work is a body that may
// wait on the clock and returns an effect to apply when it finishes.
//
// ThreadExecutor runs bodies on their own threads against a live clock.
// VirtualExecutor runs bodies synchronously at submission, accumulating their
// waits in virtual time, and applies effects when the owner advances the
// clock past the due time. Both expose the same slot accounting.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stop_token>
#include <thread>

#include "burstq/clock.hpp"

namespace burstq {

class WorkContext {
 public:
  virtual ~WorkContext() = default;
  /// Waits `d` of clock time; false once the work has been cancelled.
  virtual bool wait(Duration d) = 0;
  virtual bool cancelled() const = 0;
  virtual Timestamp now() const = 0;
};

using Effect = std::function<void()>;
using WorkBody = std::function<Effect(WorkContext&)>;
using WorkId = std::uint64_t;

class Executor {
 public:
  virtual ~Executor() = default;

  /// Starts `body` if a slot is free. Capacity 0 means unbounded.
  virtual std::optional<WorkId> try_submit(WorkBody body) = 0;

  /// Requests cancellation. The work's effect is dropped; the slot is freed
  /// once the body returns (immediately for virtual work).
  virtual bool cancel(WorkId id) = 0;

  virtual std::size_t in_flight() const = 0;
  std::size_t capacity() const { return capacity_; }
  bool has_free_slot() const { return capacity_ == 0 || in_flight() < capacity_; }

  /// Applies effects due at or before `now` (virtual executors only).
  virtual void advance(Timestamp /*now*/) {}

  /// Cancels everything and waits for bodies to return.
  virtual void shutdown() {}

 protected:
  explicit Executor(std::size_t capacity) : capacity_(capacity) {}
  std::size_t capacity_;
};

class ThreadExecutor final : public Executor {
 public:
  ThreadExecutor(Clock& clock, std::size_t capacity);
  ~ThreadExecutor() override;

  std::optional<WorkId> try_submit(WorkBody body) override;
  bool cancel(WorkId id) override;
  std::size_t in_flight() const override;
  void shutdown() override;

 private:
  struct Slot {
    std::stop_source stop;
    std::jthread thread;
    bool done = false;
  };
  void reap_locked();

  Clock& clock_;
  mutable std::mutex mu_;
  std::map<WorkId, std::unique_ptr<Slot>> slots_;
  std::size_t running_ = 0;
  WorkId next_id_ = 1;
  bool shut_down_ = false;
};

class VirtualExecutor final : public Executor {
 public:
  VirtualExecutor(Clock& clock, std::size_t capacity);

  std::optional<WorkId> try_submit(WorkBody body) override;
  bool cancel(WorkId id) override;
  std::size_t in_flight() const override;
  void advance(Timestamp now) override;
  void shutdown() override;

  /// Earliest pending due time, if any work is in flight.
  std::optional<Timestamp> next_due() const;

 private:
  struct Pending {
    Timestamp due;
    Effect effect;
  };
  Clock& clock_;
  mutable std::mutex mu_;
  std::map<WorkId, Pending> pending_;
  WorkId next_id_ = 1;
};

}  // namespace burstq

#include "burstq/executor.hpp"

#include <algorithm>
#include <vector>

namespace burstq {
namespace {

class LiveContext final : public WorkContext {
 public:
  LiveContext(Clock& clock, std::stop_token stop) : clock_(clock), stop_(std::move(stop)) {}
  bool wait(Duration d) override { return clock_.sleep_for(d, stop_); }
  bool cancelled() const override { return stop_.stop_requested(); }
  Timestamp now() const override { return clock_.now(); }

 private:
  Clock& clock_;
  std::stop_token stop_;
};

class VirtualContext final : public WorkContext {
 public:
  explicit VirtualContext(Timestamp start) : now_(start) {}
  bool wait(Duration d) override {
    if (d.count() > 0) now_ += d;
    return true;
  }
  bool cancelled() const override { return false; }
  Timestamp now() const override { return now_; }

 private:
  Timestamp now_;
};

}  // namespace

// ---------------------------------------------------------------------------

ThreadExecutor::ThreadExecutor(Clock& clock, std::size_t capacity)
    : Executor(capacity), clock_(clock) {}

ThreadExecutor::~ThreadExecutor() { shutdown(); }

void ThreadExecutor::reap_locked() {
  for (auto it = slots_.begin(); it != slots_.end();) {
    if (it->second->done) {
      if (it->second->thread.joinable()) it->second->thread.join();
      it = slots_.erase(it);
    } else {
      ++it;
    }
  }
}

std::optional<WorkId> ThreadExecutor::try_submit(WorkBody body) {
  std::lock_guard lock(mu_);
  if (shut_down_) return std::nullopt;
  if (capacity_ != 0 && running_ >= capacity_) return std::nullopt;
  reap_locked();
  const WorkId id = next_id_++;
  auto slot = std::make_unique<Slot>();
  Slot* raw = slot.get();
  ++running_;
  auto token = raw->stop.get_token();
  slots_.emplace(id, std::move(slot));
  raw->thread = std::jthread([this, raw, token, body = std::move(body)]() mutable {
    LiveContext ctx(clock_, token);
    Effect effect;
    try {
      effect = body(ctx);
    } catch (...) {
      effect = nullptr;
    }
    if (effect && !token.stop_requested()) {
      try {
        effect();
      } catch (...) {
      }
    }
    std::lock_guard lock(mu_);
    raw->done = true;
    --running_;
  });
  return id;
}

bool ThreadExecutor::cancel(WorkId id) {
  std::lock_guard lock(mu_);
  auto it = slots_.find(id);
  if (it == slots_.end() || it->second->done) return false;
  it->second->stop.request_stop();
  return true;
}

std::size_t ThreadExecutor::in_flight() const {
  std::lock_guard lock(mu_);
  return running_;
}

void ThreadExecutor::shutdown() {
  std::vector<std::unique_ptr<Slot>> slots;
  {
    std::lock_guard lock(mu_);
    shut_down_ = true;
    for (auto& [id, s] : slots_) {
      s->stop.request_stop();
      slots.push_back(std::move(s));
    }
    slots_.clear();
  }
  for (auto& s : slots) {
    if (s->thread.joinable()) s->thread.join();
  }
}

// ---------------------------------------------------------------------------

VirtualExecutor::VirtualExecutor(Clock& clock, std::size_t capacity)
    : Executor(capacity), clock_(clock) {}

std::optional<WorkId> VirtualExecutor::try_submit(WorkBody body) {
  {
    std::lock_guard lock(mu_);
    if (capacity_ != 0 && pending_.size() >= capacity_) return std::nullopt;
  }
  VirtualContext ctx(clock_.now());
  Effect effect = body(ctx);
  std::lock_guard lock(mu_);
  const WorkId id = next_id_++;
  pending_.emplace(id, Pending{ctx.now(), std::move(effect)});
  return id;
}

bool VirtualExecutor::cancel(WorkId id) {
  std::lock_guard lock(mu_);
  return pending_.erase(id) > 0;
}

std::size_t VirtualExecutor::in_flight() const {
  std::lock_guard lock(mu_);
  return pending_.size();
}

std::optional<Timestamp> VirtualExecutor::next_due() const {
  std::lock_guard lock(mu_);
  std::optional<Timestamp> best;
  for (const auto& [id, p] : pending_) {
    if (!best || p.due < *best) best = p.due;
  }
  return best;
}

void VirtualExecutor::advance(Timestamp now) {
  // Effects may submit new work, so pick one due item at a time in
  // (due, submission) order.
  for (;;) {
    Effect effect;
    {
      std::lock_guard lock(mu_);
      auto best = pending_.end();
      for (auto it = pending_.begin(); it != pending_.end(); ++it) {
        if (it->second.due > now) continue;
        if (best == pending_.end() || it->second.due < best->second.due) best = it;
      }
      if (best == pending_.end()) return;
      effect = std::move(best->second.effect);
      pending_.erase(best);
    }
    if (effect) effect();
  }
}

void VirtualExecutor::shutdown() {
  std::lock_guard lock(mu_);
  pending_.clear();
}

}  // namespace burstq

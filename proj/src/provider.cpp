#include "burstq/provider.hpp"

#include <algorithm>

#include "burstq/error.hpp"

namespace burstq {

std::string_view to_string(InstanceStatus s) {
  switch (s) {
    case InstanceStatus::Pending: return "pending";
    case InstanceStatus::Running: return "running";
    case InstanceStatus::Terminated: return "terminated";
    case InstanceStatus::Error: return "error";
  }
  return "?";
}

// ---------------------------------------------------------------------------

HttpAgentHost::HttpAgentHost(Clock& clock, std::filesystem::path work_root, PushPolicy push)
    : clock_(clock), work_root_(std::move(work_root)), push_(push) {}

HttpAgentHost::~HttpAgentHost() {
  std::map<std::string, Hosted> agents;
  {
    std::lock_guard lock(mu_);
    agents.swap(agents_);
  }
  for (auto& [ep, h] : agents) {
    h.server->stop();
    h.executor->shutdown();
  }
}

std::string HttpAgentHost::spawn(const std::string& name) {
  Hosted h;
  h.executor = std::make_unique<ThreadExecutor>(clock_, 0);
  h.core = std::make_unique<AgentCore>(name, *h.executor, sink_, clock_,
                                       AgentOptions{work_root_ / name, push_});
  h.server = std::make_unique<AgentServer>(*h.core);
  const int port = h.server->start("127.0.0.1", 0);
  const std::string endpoint = "http://127.0.0.1:" + std::to_string(port);
  std::lock_guard lock(mu_);
  agents_.emplace(endpoint, std::move(h));
  return endpoint;
}

void HttpAgentHost::kill(const std::string& endpoint) {
  Hosted h;
  {
    std::lock_guard lock(mu_);
    auto it = agents_.find(endpoint);
    if (it == agents_.end()) return;
    h = std::move(it->second);
    agents_.erase(it);
  }
  h.server->stop();
  h.executor->shutdown();
}

AgentCore* HttpAgentHost::find(const std::string& endpoint) {
  std::lock_guard lock(mu_);
  auto it = agents_.find(endpoint);
  return it == agents_.end() ? nullptr : it->second.core.get();
}

// ---------------------------------------------------------------------------

InProcessAgentHost::InProcessAgentHost(Clock& clock, Executor& executor, ResultSink& sink,
                                       InProcessAgentTransport& transport,
                                       std::filesystem::path work_root)
    : clock_(clock),
      executor_(executor),
      sink_(sink),
      transport_(transport),
      work_root_(std::move(work_root)) {}

InProcessAgentHost::~InProcessAgentHost() {
  std::lock_guard lock(mu_);
  for (auto& [ep, core] : agents_) transport_.detach(ep);
}

std::string InProcessAgentHost::spawn(const std::string& name) {
  const std::string endpoint = "inproc://" + name;
  auto core = std::make_unique<AgentCore>(name, executor_, sink_, clock_,
                                          AgentOptions{work_root_ / name, {}});
  transport_.attach(endpoint, core.get());
  std::lock_guard lock(mu_);
  agents_[endpoint] = std::move(core);
  return endpoint;
}

void InProcessAgentHost::kill(const std::string& endpoint) {
  std::unique_ptr<AgentCore> core;
  {
    std::lock_guard lock(mu_);
    auto it = agents_.find(endpoint);
    if (it == agents_.end()) return;
    core = std::move(it->second);
    agents_.erase(it);
  }
  transport_.detach(endpoint);
  if (auto st = core->status(); st.job_id) {
    try {
      core->abort(*st.job_id);
    } catch (const Error&) {
    }
  }
}

AgentCore* InProcessAgentHost::find(const std::string& endpoint) {
  std::lock_guard lock(mu_);
  auto it = agents_.find(endpoint);
  return it == agents_.end() ? nullptr : it->second.get();
}

// ---------------------------------------------------------------------------

SimCloud::SimCloud(Clock& clock, AgentHost& host, SimCloudConfig config)
    : clock_(clock), host_(host), config_(config), rng_(config.seed) {}

std::string SimCloud::launch(const std::string& /*image_ref*/, const std::string& /*size*/) {
  std::lock_guard lock(mu_);
  Instance inst;
  Duration delay = config_.boot_delay;
  if (config_.boot_jitter.count() > 0) {
    std::uniform_int_distribution<std::int64_t> jitter(0, config_.boot_jitter.count());
    delay += Duration{jitter(rng_)};
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double draw = unit(rng_);
  inst.will_fail = draw < config_.launch_failure_rate;
  if (forced_failures_ > 0) {
    --forced_failures_;
    inst.will_fail = true;
  }
  inst.ready_at = clock_.now() + delay;
  const std::string handle = "sim-i-" + std::to_string(next_++);
  instances_.emplace(handle, inst);
  return handle;
}

void SimCloud::terminate(const std::string& handle) {
  std::string endpoint;
  {
    std::lock_guard lock(mu_);
    auto it = instances_.find(handle);
    if (it == instances_.end()) return;
    if (it->second.status == InstanceStatus::Terminated) return;
    endpoint = it->second.endpoint;
    it->second.status = InstanceStatus::Terminated;
    it->second.endpoint.clear();
  }
  if (!endpoint.empty()) host_.kill(endpoint);
}

InstanceInfo SimCloud::describe(const std::string& handle) {
  std::unique_lock lock(mu_);
  auto it = instances_.find(handle);
  if (it == instances_.end()) return InstanceInfo{InstanceStatus::Terminated, {}};
  Instance& inst = it->second;
  if (inst.status == InstanceStatus::Pending && clock_.now() >= inst.ready_at) {
    if (inst.will_fail) {
      inst.status = InstanceStatus::Error;
    } else {
      lock.unlock();
      const std::string endpoint = host_.spawn(handle);
      lock.lock();
      it = instances_.find(handle);
      if (it->second.status == InstanceStatus::Pending) {
        it->second.status = InstanceStatus::Running;
        it->second.endpoint = endpoint;
      } else {
        lock.unlock();
        host_.kill(endpoint);
        lock.lock();
        it = instances_.find(handle);
      }
    }
  }
  return InstanceInfo{it->second.status, it->second.endpoint};
}

void SimCloud::kill_instance(const std::string& handle) {
  std::string endpoint;
  {
    std::lock_guard lock(mu_);
    auto it = instances_.find(handle);
    if (it == instances_.end()) return;
    endpoint = it->second.endpoint;
    it->second.status = InstanceStatus::Error;
    it->second.endpoint.clear();
  }
  if (!endpoint.empty()) host_.kill(endpoint);
}

void SimCloud::fail_next_launches(int n) {
  std::lock_guard lock(mu_);
  forced_failures_ += n;
}

std::size_t SimCloud::launched_count() const {
  std::lock_guard lock(mu_);
  return instances_.size();
}

std::vector<std::string> SimCloud::handles() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [h, i] : instances_) out.push_back(h);
  return out;
}

// ---------------------------------------------------------------------------

ExternalStubProvider::ExternalStubProvider(std::vector<std::string> endpoints)
    : endpoints_(std::move(endpoints)) {}

std::string ExternalStubProvider::launch(const std::string&, const std::string&) {
  std::lock_guard lock(mu_);
  for (std::size_t i = 0; i < endpoints_.size(); ++i) {
    const bool taken = std::any_of(in_use_.begin(), in_use_.end(), [&](const auto& kv) {
      return kv.second == i && !terminated_[kv.first];
    });
    if (taken) continue;
    const std::string handle = "ext-" + std::to_string(next_++);
    in_use_[handle] = i;
    terminated_[handle] = false;
    return handle;
  }
  throw Error(ErrorCode::Unavailable, "no free external agent endpoint");
}

void ExternalStubProvider::terminate(const std::string& handle) {
  std::lock_guard lock(mu_);
  if (terminated_.contains(handle)) terminated_[handle] = true;
}

InstanceInfo ExternalStubProvider::describe(const std::string& handle) {
  std::lock_guard lock(mu_);
  auto it = in_use_.find(handle);
  if (it == in_use_.end() || terminated_[handle]) return {InstanceStatus::Terminated, {}};
  return {InstanceStatus::Running, endpoints_[it->second]};
}

}  // namespace burstq

#pragma once

// The portable subset of an EC2-like provider, plus the simulated cloud that
// implements it in-process.

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "burstq/agent.hpp"
#include "burstq/clock.hpp"
#include "burstq/executor.hpp"
#include "burstq/transport.hpp"

namespace burstq {

enum class InstanceStatus { Pending, Running, Terminated, Error };
std::string_view to_string(InstanceStatus s);

struct InstanceInfo {
  InstanceStatus status = InstanceStatus::Pending;
  std::string endpoint;  // set once Running
};

class ProviderInterface {
 public:
  virtual ~ProviderInterface() = default;
  /// Throws Error(Unavailable) when the provider refuses the launch.
  virtual std::string launch(const std::string& image_ref, const std::string& size) = 0;
  /// Idempotent.
  virtual void terminate(const std::string& handle) = 0;
  virtual InstanceInfo describe(const std::string& handle) = 0;
};

/// Starts and stops agents on behalf of SimCloud.
class AgentHost {
 public:
  virtual ~AgentHost() = default;
  /// Starts an agent and returns its endpoint.
  virtual std::string spawn(const std::string& name) = 0;
  virtual void kill(const std::string& endpoint) = 0;
  virtual AgentCore* find(const std::string& endpoint) = 0;
};

/// Agents behind real loopback HTTP servers, each on its own threads.
class HttpAgentHost final : public AgentHost {
 public:
  HttpAgentHost(Clock& clock, std::filesystem::path work_root, PushPolicy push = {});
  ~HttpAgentHost() override;

  std::string spawn(const std::string& name) override;
  void kill(const std::string& endpoint) override;
  AgentCore* find(const std::string& endpoint) override;

 private:
  struct Hosted {
    std::unique_ptr<ThreadExecutor> executor;
    std::unique_ptr<AgentCore> core;
    std::unique_ptr<AgentServer> server;
  };
  Clock& clock_;
  std::filesystem::path work_root_;
  PushPolicy push_;
  HttpResultSink sink_;
  std::mutex mu_;
  std::map<std::string, Hosted> agents_;
};

/// Agents addressed through an InProcessAgentTransport, sharing one executor
/// (virtual in simulation).
class InProcessAgentHost final : public AgentHost {
 public:
  InProcessAgentHost(Clock& clock, Executor& executor, ResultSink& sink,
                     InProcessAgentTransport& transport, std::filesystem::path work_root);
  ~InProcessAgentHost() override;

  std::string spawn(const std::string& name) override;
  void kill(const std::string& endpoint) override;
  AgentCore* find(const std::string& endpoint) override;

 private:
  Clock& clock_;
  Executor& executor_;
  ResultSink& sink_;
  InProcessAgentTransport& transport_;
  std::filesystem::path work_root_;
  std::mutex mu_;
  std::map<std::string, std::unique_ptr<AgentCore>> agents_;
};

struct SimCloudConfig {
  Duration boot_delay = std::chrono::seconds(5);
  Duration boot_jitter{0};  // uniform extra delay in [0, jitter]
  double launch_failure_rate = 0.0;
  std::uint64_t seed = 1;
};

/// In-process provider. Instances become Running once their boot delay has
/// elapsed and the agent has been spawned; failed launches surface as Error.
class SimCloud final : public ProviderInterface {
 public:
  SimCloud(Clock& clock, AgentHost& host, SimCloudConfig config);

  std::string launch(const std::string& image_ref, const std::string& size) override;
  void terminate(const std::string& handle) override;
  InstanceInfo describe(const std::string& handle) override;

  /// Test hook: the instance dies abruptly (agent gone, status Error).
  void kill_instance(const std::string& handle);
  /// Test hook: the next `n` launches fail.
  void fail_next_launches(int n);

  std::size_t launched_count() const;
  std::vector<std::string> handles() const;

 private:
  struct Instance {
    Timestamp ready_at;
    bool will_fail = false;
    InstanceStatus status = InstanceStatus::Pending;
    std::string endpoint;
  };
  Clock& clock_;
  AgentHost& host_;
  SimCloudConfig config_;
  mutable std::mutex mu_;
  std::mt19937_64 rng_;
  std::map<std::string, Instance> instances_;
  std::int64_t next_ = 1;
  int forced_failures_ = 0;
};

/// Hands out pre-started agents listed in configuration, one per launch.
class ExternalStubProvider final : public ProviderInterface {
 public:
  explicit ExternalStubProvider(std::vector<std::string> endpoints);

  std::string launch(const std::string& image_ref, const std::string& size) override;
  void terminate(const std::string& handle) override;
  InstanceInfo describe(const std::string& handle) override;

 private:
  std::mutex mu_;
  std::vector<std::string> endpoints_;
  std::map<std::string, std::size_t> in_use_;  // handle -> endpoint index
  std::map<std::string, bool> terminated_;
  std::int64_t next_ = 1;
};

}  // namespace burstq

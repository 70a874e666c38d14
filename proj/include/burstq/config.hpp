#pragma once

// Flat key=value configuration shared by `serve` and `simulate`. Lines are
// `key = value`; `#` starts a comment. Durations are in seconds (reals).
// Every key is listed in docs/configuration.md.

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "burstq/agent.hpp"
#include "burstq/local_grid.hpp"
#include "burstq/provider.hpp"
#include "burstq/queue_manager.hpp"
#include "burstq/vm_pool.hpp"

namespace burstq {

struct ServiceConfig {
  std::string bind_address = "127.0.0.1";
  int port = 8080;
  bool lockdown = true;
  std::filesystem::path data_dir = "burstq-data";
  std::int64_t max_upload_bytes = 256LL * 1024 * 1024;
  double time_acceleration = 1.0;
  // Callback base handed to agents; empty: http://<bind_address>:<port>.
  std::string public_url;

  std::string provider = "sim";  // sim | external-stub
  std::vector<std::string> external_endpoints;
  SimCloudConfig sim_cloud;
  PushPolicy push;

  ScalingConfig scaling;
  Duration scaling_interval = std::chrono::seconds(5);
  DispatchConfig dispatch;
  RoutingConfig routing;
  bool reject_oversize = true;

  LocalSchedulerConfig local;
  SimGridConfig grid;

  bool sync_writes = true;
  std::int64_t snapshot_every = 500;
  std::int64_t max_attempts = 2;

  std::string callback_url() const;
};

/// Applies one key; throws Error(ConfigError) for unknown keys or bad values.
void apply_config_entry(ServiceConfig& cfg, std::string_view key, std::string_view value);

ServiceConfig parse_config(std::string_view text, ServiceConfig base = {});
ServiceConfig load_config(const std::filesystem::path& path, ServiceConfig base = {});

/// The explicit path if given, else $BURSTQ_CONFIG, else none.
std::optional<std::filesystem::path> resolve_config_path(const std::optional<std::string>& flag);

/// Every recognised key, for documentation and `--help`.
std::vector<std::string> config_keys();

/// Cross-field checks; throws Error(ConfigError).
void validate(const ServiceConfig& cfg);

}  // namespace burstq

#include "burstq/config.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "burstq/error.hpp"

namespace burstq {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void bad(std::string_view key, std::string_view value) {
  throw Error(ErrorCode::ConfigError,
              "bad value '" + std::string(value) + "' for " + std::string(key));
}

double as_real(std::string_view key, std::string_view v) {
  try {
    std::size_t used = 0;
    const std::string s(v);
    const double d = std::stod(s, &used);
    if (used == s.size()) return d;
  } catch (const std::exception&) {
  }
  bad(key, v);
}

std::int64_t as_int(std::string_view key, std::string_view v) {
  try {
    std::size_t used = 0;
    const std::string s(v);
    const auto i = std::stoll(s, &used);
    if (used == s.size()) return i;
  } catch (const std::exception&) {
  }
  bad(key, v);
}

bool as_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "on" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "off" || v == "no" || v == "0") return false;
  bad(key, v);
}

Duration as_seconds(std::string_view key, std::string_view v) {
  const double s = as_real(key, v);
  if (s < 0) bad(key, v);
  return seconds(s);
}

using Setter = std::function<void(ServiceConfig&, std::string_view, std::string_view)>;

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = [] {
    std::map<std::string, Setter, std::less<>> t;
    auto add = [&](const char* key, Setter s) { t.emplace(key, std::move(s)); };
    add("bind_address", [](auto& c, auto, auto v) { c.bind_address = std::string(v); });
    add("port", [](auto& c, auto k, auto v) { c.port = static_cast<int>(as_int(k, v)); });
    add("lockdown", [](auto& c, auto k, auto v) { c.lockdown = as_bool(k, v); });
    add("data_dir", [](auto& c, auto, auto v) { c.data_dir = std::string(v); });
    add("max_upload_bytes", [](auto& c, auto k, auto v) { c.max_upload_bytes = as_int(k, v); });
    add("time_acceleration", [](auto& c, auto k, auto v) { c.time_acceleration = as_real(k, v); });
    add("public_url", [](auto& c, auto, auto v) { c.public_url = std::string(v); });

    add("provider", [](auto& c, auto k, auto v) {
      if (v != "sim" && v != "external-stub") bad(k, v);
      c.provider = std::string(v);
    });
    add("external_endpoints", [](auto& c, auto, auto v) {
      c.external_endpoints.clear();
      std::stringstream ss{std::string(v)};
      std::string item;
      while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) c.external_endpoints.push_back(item);
      }
    });
    add("sim.boot_delay_s", [](auto& c, auto k, auto v) { c.sim_cloud.boot_delay = as_seconds(k, v); });
    add("sim.boot_jitter_s", [](auto& c, auto k, auto v) { c.sim_cloud.boot_jitter = as_seconds(k, v); });
    add("sim.launch_failure_rate",
        [](auto& c, auto k, auto v) { c.sim_cloud.launch_failure_rate = as_real(k, v); });
    add("sim.seed", [](auto& c, auto k, auto v) { c.sim_cloud.seed = static_cast<std::uint64_t>(as_int(k, v)); });

    add("push.initial_delay_s", [](auto& c, auto k, auto v) { c.push.initial_delay = as_seconds(k, v); });
    add("push.factor", [](auto& c, auto k, auto v) { c.push.factor = as_real(k, v); });
    add("push.max_delay_s", [](auto& c, auto k, auto v) { c.push.max_delay = as_seconds(k, v); });
    add("push.max_attempts",
        [](auto& c, auto k, auto v) { c.push.max_attempts = static_cast<int>(as_int(k, v)); });

    add("scaling.min_vms", [](auto& c, auto k, auto v) { c.scaling.min_vms = as_int(k, v); });
    add("scaling.max_vms", [](auto& c, auto k, auto v) { c.scaling.max_vms = as_int(k, v); });
    add("scaling.idle_grace_s", [](auto& c, auto k, auto v) { c.scaling.idle_grace = as_seconds(k, v); });
    add("scaling.terminate_window_s",
        [](auto& c, auto k, auto v) { c.scaling.terminate_window = as_seconds(k, v); });
    add("scaling.billing_period_s",
        [](auto& c, auto k, auto v) { c.scaling.billing_period = as_seconds(k, v); });
    add("scaling.boot_budget_s", [](auto& c, auto k, auto v) { c.scaling.boot_budget = as_seconds(k, v); });
    add("scaling.launch_backoff_cap_s",
        [](auto& c, auto k, auto v) { c.scaling.launch_backoff_cap = as_seconds(k, v); });
    add("scaling.stale_reservation_s",
        [](auto& c, auto k, auto v) { c.scaling.stale_reservation = as_seconds(k, v); });
    add("scaling.unit_price", [](auto& c, auto k, auto v) { c.scaling.unit_price = as_real(k, v); });
    add("scaling.image_ref", [](auto& c, auto, auto v) { c.scaling.image_ref = std::string(v); });
    add("scaling.instance_size", [](auto& c, auto, auto v) { c.scaling.instance_size = std::string(v); });
    add("scaling.interval_s", [](auto& c, auto k, auto v) { c.scaling_interval = as_seconds(k, v); });

    add("dispatch.poll_interval_s",
        [](auto& c, auto k, auto v) { c.dispatch.poll_interval = as_seconds(k, v); });
    add("dispatch.timeout_s", [](auto& c, auto k, auto v) { c.dispatch.dispatch_timeout = as_seconds(k, v); });
    add("dispatch.max_retries",
        [](auto& c, auto k, auto v) { c.dispatch.max_dispatch_retries = static_cast<int>(as_int(k, v)); });

    add("routing.local_marker_threshold",
        [](auto& c, auto k, auto v) { c.routing.local_marker_threshold = as_int(k, v); });
    add("routing.big_memory_marker_threshold",
        [](auto& c, auto k, auto v) { c.routing.big_memory_marker_threshold = as_int(k, v); });
    add("routing.max_marker_capacity",
        [](auto& c, auto k, auto v) { c.routing.max_marker_capacity = as_int(k, v); });
    add("routing.gb_per_core", [](auto& c, auto k, auto v) { c.routing.gb_per_core = as_real(k, v); });
    add("routing.gb_at_threshold", [](auto& c, auto k, auto v) { c.routing.gb_at_threshold = as_real(k, v); });
    add("routing.cloud_enabled", [](auto& c, auto k, auto v) { c.routing.cloud_enabled = as_bool(k, v); });
    add("routing.reject_oversize", [](auto& c, auto k, auto v) { c.reject_oversize = as_bool(k, v); });

    add("local.cores", [](auto& c, auto k, auto v) { c.local.cores = as_int(k, v); });
    add("local.max_local_jobs", [](auto& c, auto k, auto v) { c.local.max_local_jobs = as_int(k, v); });
    add("local.prepare_pool_size", [](auto& c, auto k, auto v) { c.local.prepare_pool_size = as_int(k, v); });
    add("local.remote_poll_interval_s",
        [](auto& c, auto k, auto v) { c.local.remote_poll_interval = as_seconds(k, v); });
    add("grid.latency_small_s", [](auto& c, auto k, auto v) { c.local.latency.small = as_seconds(k, v); });
    add("grid.latency_large_s", [](auto& c, auto k, auto v) { c.local.latency.large = as_seconds(k, v); });
    add("grid.size_cutoff_bytes",
        [](auto& c, auto k, auto v) { c.local.latency.size_cutoff_bytes = as_int(k, v); });
    add("grid.queue_wait_min_s", [](auto& c, auto k, auto v) { c.grid.queue_wait_min = as_seconds(k, v); });
    add("grid.queue_wait_max_s", [](auto& c, auto k, auto v) { c.grid.queue_wait_max = as_seconds(k, v); });
    add("grid.max_concurrent_submissions",
        [](auto& c, auto k, auto v) { c.grid.max_concurrent_submissions = as_int(k, v); });
    add("grid.seed", [](auto& c, auto k, auto v) { c.grid.seed = static_cast<std::uint64_t>(as_int(k, v)); });

    add("store.sync_writes", [](auto& c, auto k, auto v) { c.sync_writes = as_bool(k, v); });
    add("store.snapshot_every", [](auto& c, auto k, auto v) { c.snapshot_every = as_int(k, v); });
    add("max_attempts", [](auto& c, auto k, auto v) { c.max_attempts = as_int(k, v); });
    return t;
  }();
  return table;
}

}  // namespace

std::string ServiceConfig::callback_url() const {
  if (!public_url.empty()) return public_url;
  return "http://" + bind_address + ":" + std::to_string(port);
}

void apply_config_entry(ServiceConfig& cfg, std::string_view key, std::string_view value) {
  const auto& table = setters();
  auto it = table.find(key);
  if (it == table.end()) throw Error(ErrorCode::ConfigError, "unknown config key " + std::string(key));
  it->second(cfg, key, value);
}

ServiceConfig parse_config(std::string_view text, ServiceConfig base) {
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorCode::ConfigError, "line " + std::to_string(lineno) + ": expected key = value");
    apply_config_entry(base, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return base;
}

ServiceConfig load_config(const std::filesystem::path& path, ServiceConfig base) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::optional<std::filesystem::path> resolve_config_path(const std::optional<std::string>& flag) {
  if (flag && !flag->empty()) return std::filesystem::path(*flag);
  if (const char* env = std::getenv("BURSTQ_CONFIG"); env && *env) return std::filesystem::path(env);
  return std::nullopt;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, s] : setters()) keys.push_back(k);
  return keys;
}

void validate(const ServiceConfig& cfg) {
  if (!cfg.scaling.valid()) throw Error(ErrorCode::ConfigError, "scaling: need 0 <= min_vms <= max_vms and terminate_window < billing_period");
  if (!cfg.dispatch.valid()) throw Error(ErrorCode::ConfigError, "dispatch: poll_interval must be > 0");
  if (!cfg.routing.valid()) throw Error(ErrorCode::ConfigError, "routing: thresholds must increase and gb_per_core > 0");
  if (cfg.time_acceleration < 1.0) throw Error(ErrorCode::ConfigError, "time_acceleration must be >= 1");
  if (cfg.local.cores < 1) throw Error(ErrorCode::ConfigError, "local.cores must be >= 1");
  if (cfg.local.remote_poll_interval.count() <= 0)
    throw Error(ErrorCode::ConfigError, "local.remote_poll_interval_s must be > 0");
  if (cfg.scaling_interval.count() <= 0) throw Error(ErrorCode::ConfigError, "scaling.interval_s must be > 0");
  if (cfg.max_upload_bytes <= 0) throw Error(ErrorCode::ConfigError, "max_upload_bytes must be > 0");
  if (cfg.sim_cloud.launch_failure_rate < 0 || cfg.sim_cloud.launch_failure_rate > 1)
    throw Error(ErrorCode::ConfigError, "sim.launch_failure_rate must be in [0,1]");
  if (cfg.provider == "external-stub" && cfg.external_endpoints.empty())
    throw Error(ErrorCode::ConfigError, "external-stub provider needs external_endpoints");
}

}  // namespace burstq

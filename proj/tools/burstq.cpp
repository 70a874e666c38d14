// burstq: service, agent, client and simulator entry points.

#include <CLI11.hpp>
#include <httplib.h>
#include <signal.h>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "burstq/agent.hpp"
#include "burstq/archive.hpp"
#include "burstq/codec.hpp"
#include "burstq/config.hpp"
#include "burstq/error.hpp"
#include "burstq/service.hpp"
#include "burstq/simulator.hpp"
#include "burstq/store.hpp"
#include "burstq/workload.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace burstq;

namespace {

struct CliFailure {
  std::string code;
  std::string message;
  int status = 1;
};

[[noreturn]] void fail(std::string code, std::string message) {
  throw CliFailure{std::move(code), std::move(message)};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail("ValidationError", "cannot read " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void wait_for_signal() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  int sig = 0;
  sigwait(&set, &sig);
}

void block_signals() {
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
}

class ApiClient {
 public:
  explicit ApiClient(const std::string& server) : client_(server) {
    client_.set_connection_timeout(10);
    client_.set_read_timeout(300);
  }

  std::string get(const std::string& path) { return check(client_.Get(path)); }
  std::string del(const std::string& path) { return check(client_.Delete(path)); }
  std::string post(const std::string& path, const httplib::MultipartFormDataItems& items) {
    return check(client_.Post(path, items));
  }

 private:
  std::string check(const httplib::Result& res) {
    if (!res) fail("Unavailable", "cannot reach server: " + httplib::to_string(res.error()));
    if (res->status >= 200 && res->status < 300) return res->body;
    try {
      const auto j = json::parse(res->body);
      fail(j.value("error", "HttpError"), j.value("message", res->body));
    } catch (const json::exception&) {
      fail("HttpError", "status " + std::to_string(res->status));
    }
  }
  httplib::Client client_;
};

ServiceConfig load_service_config(const std::optional<std::string>& flag) {
  ServiceConfig cfg;
  if (auto path = resolve_config_path(flag)) cfg = load_config(*path);
  return cfg;
}

int cmd_serve(const std::optional<std::string>& config_path, std::optional<int> port,
              std::optional<std::string> data_dir) {
  ServiceConfig cfg = load_service_config(config_path);
  if (port) cfg.port = *port;
  if (data_dir) cfg.data_dir = *data_dir;
  block_signals();
  Service service(cfg);
  service.start();
  std::cout << json{{"listening", service.port()}, {"data_dir", cfg.data_dir.string()}}.dump()
            << std::endl;
  wait_for_signal();
  log_line("shutting down");
  service.stop();
  return 0;
}

int cmd_agent(const std::string& host, int port, const std::string& work_dir, double accel) {
  block_signals();
  ScaledClock clock(accel);
  ThreadExecutor executor(clock, 1);
  HttpResultSink sink;
  AgentCore core("agent-" + std::to_string(port), executor, sink, clock,
                 AgentOptions{work_dir, PushPolicy{}});
  AgentServer server(core);
  const int bound = server.start(host, port);
  std::cout << json{{"agent", bound}}.dump() << std::endl;
  wait_for_signal();
  server.stop();
  executor.shutdown();
  return 0;
}

json simulate(const std::string& profile_arg, double days, double accel, std::uint64_t seed,
              const std::optional<std::string>& config_path) {
  ServiceConfig cfg = load_service_config(config_path);
  WorkloadProfile profile;
  if (profile_arg != "paper-daily") {
    std::istringstream in(read_file(profile_arg));
    std::string line;
    while (std::getline(in, line)) {
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto trim = [](std::string s) {
        s.erase(0, s.find_first_not_of(" \t\r"));
        s.erase(s.find_last_not_of(" \t\r") + 1);
        return s;
      };
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.rfind("workload.", 0) == 0) {
        apply_workload_entry(profile, key.substr(9), value);
      } else {
        apply_config_entry(cfg, key, value);
      }
    }
  }
  cfg.sim_cloud.seed = seed;
  cfg.grid.seed = seed;
  SimulationOptions opts;
  opts.config = cfg;
  opts.horizon = seconds(days * 86400.0);
  opts.time_acceleration = accel;
  const auto schedule = generate_workload(profile, opts.start, opts.horizon, seed);
  return run_simulation(schedule, opts).metrics.to_json();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"burstq: elastic batch job service"};
  app.require_subcommand(1);
  std::string server = std::getenv("BURSTQ_SERVER") ? std::getenv("BURSTQ_SERVER")
                                                    : "http://127.0.0.1:8080";
  app.add_option("--server", server, "Service base URL (env BURSTQ_SERVER)");

  // serve
  auto* serve = app.add_subcommand("serve", "Run the manager service");
  std::optional<std::string> config_path;
  std::optional<int> serve_port;
  std::optional<std::string> serve_data;
  serve->add_option("--config", config_path, "Config file (env BURSTQ_CONFIG)");
  serve->add_option("--port", serve_port, "Override port");
  serve->add_option("--data-dir", serve_data, "Override data_dir");

  // agent
  auto* agent = app.add_subcommand("agent", "Run a single-job execution agent");
  std::string agent_host = "127.0.0.1";
  int agent_port = 0;
  std::string agent_work = (fs::temp_directory_path() / "burstq-agent").string();
  double agent_accel = 1.0;
  agent->add_option("--host", agent_host);
  agent->add_option("--port", agent_port)->required();
  agent->add_option("--work-dir", agent_work);
  agent->add_option("--accel", agent_accel, "Clock acceleration for push backoff");

  // submit
  auto* submit = app.add_subcommand("submit", "Submit a job");
  std::string type;
  std::vector<std::string> files, params;
  std::optional<std::string> backend, derive_from, owner;
  std::optional<std::int64_t> markers, samples;
  submit->add_option("--type", type, "sleep | regression-scan")->required();
  submit->add_option("--file", files, "name=path input file");
  submit->add_option("--param", params, "k=v parameter");
  submit->add_option("--backend", backend, "Local | Grid | Cloud | auto");
  submit->add_option("--derive-from", derive_from, "Reuse a completed job's outputs");
  submit->add_option("--owner", owner);
  submit->add_option("--markers", markers, "Declared max markers per chromosome");
  submit->add_option("--samples", samples, "Declared sample size");

  std::string job_id;
  auto* status = app.add_subcommand("status", "Show a job");
  status->add_option("id", job_id)->required();
  auto* results = app.add_subcommand("results", "Download a job's outputs");
  std::string out_dir = ".";
  results->add_option("id", job_id)->required();
  results->add_option("--out", out_dir, "Directory to extract into");
  results->add_flag("--tar", "Write the raw archive as <id>.tar instead of extracting");
  auto* cancel = app.add_subcommand("cancel", "Cancel a job");
  cancel->add_option("id", job_id)->required();
  auto* jobs = app.add_subcommand("jobs", "List jobs");
  std::optional<std::string> state_filter, backend_filter;
  jobs->add_option("--state", state_filter);
  jobs->add_option("--backend", backend_filter);
  auto* vms = app.add_subcommand("vms", "List VMs");
  auto* accounting = app.add_subcommand("accounting", "Show the cost ledger");

  auto* sim = app.add_subcommand("simulate", "Run the accelerated workload simulator");
  std::string profile = "paper-daily";
  double days = 1.0, accel = 0.0;
  std::uint64_t seed = 1;
  std::string metrics_out;
  std::optional<std::string> sim_config;
  sim->add_option("--profile", profile, "Profile file or paper-daily");
  sim->add_option("--days", days);
  sim->add_option("--accel", accel, "Virtual seconds per wall second (0: unpaced)");
  sim->add_option("--seed", seed);
  sim->add_option("--out", metrics_out, "Metrics JSON path");
  sim->add_option("--config", sim_config, "System config file");

  auto* store = app.add_subcommand("store", "Store maintenance");
  auto* dump = store->add_subcommand("dump", "Print the stored state as JSON");
  store->require_subcommand(1);
  std::optional<std::string> dump_config;
  std::optional<std::string> dump_data;
  dump->add_option("--config", dump_config);
  dump->add_option("--data-dir", dump_data);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve) return cmd_serve(config_path, serve_port, serve_data);
    if (*agent) return cmd_agent(agent_host, agent_port, agent_work, agent_accel);
    if (*sim) {
      if (accel != 0.0 && accel < 1.0) fail("ConfigError", "--accel must be >= 1 or 0");
      const json metrics = simulate(profile, days, accel, seed, sim_config);
      const std::string text = metrics.dump(2) + "\n";
      if (metrics_out.empty()) {
        std::cout << text;
      } else {
        std::ofstream out(metrics_out, std::ios::binary | std::ios::trunc);
        out << text;
        if (!out) fail("StorageFailure", "cannot write " + metrics_out);
      }
      return 0;
    }
    if (*store) {
      fs::path data_dir;
      if (dump_data) {
        data_dir = *dump_data;
      } else {
        data_dir = load_service_config(dump_config).data_dir;
      }
      std::cout << Store::replay_journal(data_dir / "store").to_json().dump(2) << "\n";
      return 0;
    }

    ApiClient api(server);
    if (*submit) {
      httplib::MultipartFormDataItems items;
      items.push_back({"type", type, "", ""});
      json p = json::object();
      for (const auto& kv : params) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) fail("ValidationError", "--param expects k=v");
        p[kv.substr(0, eq)] = kv.substr(eq + 1);
      }
      if (!p.empty()) items.push_back({"params", p.dump(), "", ""});
      for (const auto& f : files) {
        const auto eq = f.find('=');
        if (eq == std::string::npos) fail("ValidationError", "--file expects name=path");
        const std::string name = f.substr(0, eq);
        items.push_back({name, read_file(f.substr(eq + 1)), name, "application/octet-stream"});
      }
      if (backend) items.push_back({"backend", *backend, "", ""});
      if (derive_from) items.push_back({"derive_from", *derive_from, "", ""});
      if (owner) items.push_back({"owner", *owner, "", ""});
      if (markers) items.push_back({"markers", std::to_string(*markers), "", ""});
      if (samples) items.push_back({"samples", std::to_string(*samples), "", ""});
      const auto reply = json::parse(api.post("/jobs", items));
      std::cout << reply.at("id").get<std::string>() << "\n";
      return 0;
    }
    if (*status) {
      std::cout << json::parse(api.get("/jobs/" + job_id)).dump(2) << "\n";
      return 0;
    }
    if (*results) {
      const std::string archive = api.get("/jobs/" + job_id + "/results");
      fs::create_directories(out_dir);
      if (results->count("--tar")) {
        std::ofstream(fs::path(out_dir) / (job_id + ".tar"), std::ios::binary) << archive;
      } else {
        for (const auto& [name, body] : read_tar(archive)) {
          std::ofstream out(fs::path(out_dir) / name, std::ios::binary | std::ios::trunc);
          out << body;
          std::cout << (fs::path(out_dir) / name).string() << "\n";
        }
      }
      return 0;
    }
    if (*cancel) {
      std::cout << json::parse(api.del("/jobs/" + job_id)).dump() << "\n";
      return 0;
    }
    if (*jobs) {
      std::string path = "/jobs";
      std::string sep = "?";
      if (state_filter) { path += sep + "state=" + *state_filter; sep = "&"; }
      if (backend_filter) path += sep + "backend=" + *backend_filter;
      std::cout << json::parse(api.get(path)).dump(2) << "\n";
      return 0;
    }
    if (*vms) {
      std::cout << json::parse(api.get("/vms")).dump(2) << "\n";
      return 0;
    }
    if (*accounting) {
      std::cout << json::parse(api.get("/accounting")).dump(2) << "\n";
      return 0;
    }
  } catch (const CliFailure& f) {
    std::cerr << json{{"error", f.code}, {"message", f.message}}.dump() << "\n";
    return f.status;
  } catch (const Error& e) {
    std::cerr << json{{"error", to_string(e.code())}, {"message", e.what()}}.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "InternalError"}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }
  return 0;
}

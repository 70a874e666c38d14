#include "burstq/codec.hpp"

#include "burstq/error.hpp"

namespace burstq {
namespace {

using nlohmann::json;

template <typename T>
void put_opt(json& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
}

void put_time(json& j, const char* key, Timestamp t) { j[key] = to_millis(t); }

void put_opt_time(json& j, const char* key, const std::optional<Timestamp>& t) {
  if (t) j[key] = to_millis(*t);
}

Timestamp get_time(const json& j, const char* key) {
  return from_millis(j.at(key).get<std::int64_t>());
}

std::optional<Timestamp> get_opt_time(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return from_millis(it->get<std::int64_t>());
}

std::optional<std::string> get_opt_string(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return std::nullopt;
  return it->get<std::string>();
}

template <typename E, typename Parser>
E get_enum(const json& j, const char* key, Parser parse) {
  const auto s = j.at(key).get<std::string>();
  auto v = parse(s);
  if (!v) throw Error(ErrorCode::MalformedPayload, std::string("bad ") + key + ": " + s);
  return *v;
}

}  // namespace

void to_json(json& j, const DatasetProfile& p) {
  j = json{{"max_markers", p.max_markers},
           {"sample_size", p.sample_size},
           {"input_bytes", p.input_bytes}};
}

void from_json(const json& j, DatasetProfile& p) {
  p.max_markers = j.at("max_markers").get<std::int64_t>();
  p.sample_size = j.at("sample_size").get<std::int64_t>();
  p.input_bytes = j.value("input_bytes", std::int64_t{0});
}

void to_json(json& j, const JobSpec& s) {
  j = json{{"kind", to_string(s.kind)},
           {"params", s.params},
           {"inputs", s.inputs},
           {"profile", s.profile},
           {"owner", s.owner}};
  if (s.backend_override) j["backend_override"] = to_string(*s.backend_override);
  put_opt(j, "derive_from", s.derive_from);
}

void from_json(const json& j, JobSpec& s) {
  s.kind = get_enum<JobKind>(j, "kind", parse_job_kind);
  s.params = j.value("params", std::map<std::string, std::string>{});
  s.inputs = j.value("inputs", std::vector<std::string>{});
  s.profile = j.at("profile").get<DatasetProfile>();
  s.owner = j.value("owner", std::string{});
  s.backend_override.reset();
  if (j.contains("backend_override"))
    s.backend_override = get_enum<Backend>(j, "backend_override", parse_backend);
  s.derive_from = get_opt_string(j, "derive_from");
}

void to_json(json& j, const JobRecord& r) {
  j = json{{"id", r.id},
           {"seq", r.seq},
           {"spec", r.spec},
           {"state", to_string(r.state)},
           {"backend", to_string(r.backend)},
           {"attempt_count", r.attempt_count},
           {"est_memory_gb", r.est_memory_gb},
           {"core_group", r.core_group}};
  put_time(j, "submitted_at", r.submitted_at);
  put_opt_time(j, "queued_at", r.queued_at);
  put_opt_time(j, "started_at", r.started_at);
  put_opt_time(j, "finished_at", r.finished_at);
  put_opt(j, "assigned_vm", r.assigned_vm);
  put_opt(j, "remote_id", r.remote_id);
  j["workspace"] = r.workspace;
  put_opt(j, "result_ref", r.result_ref);
  put_opt(j, "error", r.error);
}

void from_json(const json& j, JobRecord& r) {
  r.id = j.at("id").get<std::string>();
  r.seq = j.at("seq").get<std::int64_t>();
  r.spec = j.at("spec").get<JobSpec>();
  r.state = get_enum<JobState>(j, "state", parse_job_state);
  r.backend = get_enum<Backend>(j, "backend", parse_backend);
  r.attempt_count = j.value("attempt_count", std::int64_t{0});
  r.est_memory_gb = j.value("est_memory_gb", 0.0);
  r.core_group = j.value("core_group", std::int64_t{1});
  r.submitted_at = get_time(j, "submitted_at");
  r.queued_at = get_opt_time(j, "queued_at");
  r.started_at = get_opt_time(j, "started_at");
  r.finished_at = get_opt_time(j, "finished_at");
  r.assigned_vm = get_opt_string(j, "assigned_vm");
  r.remote_id = get_opt_string(j, "remote_id");
  r.workspace = j.value("workspace", std::string{});
  r.result_ref = get_opt_string(j, "result_ref");
  r.error = get_opt_string(j, "error");
}

void to_json(json& j, const VmRecord& r) {
  j = json{{"id", r.id},
           {"provider_handle", r.provider_handle},
           {"endpoint", r.endpoint},
           {"state", to_string(r.state)},
           {"jobs_executed", r.jobs_executed},
           {"token", r.token},
           {"unit_price", r.unit_price},
           {"busy_ms", r.busy_ms}};
  put_time(j, "launched_at", r.launched_at);
  put_time(j, "billing_anchor", r.billing_anchor);
  put_time(j, "token_issued_at", r.token_issued_at);
  put_opt_time(j, "idle_since", r.idle_since);
  put_opt_time(j, "busy_since", r.busy_since);
  put_opt_time(j, "terminated_at", r.terminated_at);
  put_opt(j, "note", r.note);
}

void from_json(const json& j, VmRecord& r) {
  r.id = j.at("id").get<std::string>();
  r.provider_handle = j.value("provider_handle", std::string{});
  r.endpoint = j.value("endpoint", std::string{});
  r.state = get_enum<VmState>(j, "state", parse_vm_state);
  r.jobs_executed = j.value("jobs_executed", std::int64_t{0});
  r.token = j.value("token", std::string{});
  r.unit_price = j.value("unit_price", 0.0);
  r.launched_at = get_time(j, "launched_at");
  r.billing_anchor = get_time(j, "billing_anchor");
  r.token_issued_at = get_time(j, "token_issued_at");
  r.idle_since = get_opt_time(j, "idle_since");
  r.busy_since = get_opt_time(j, "busy_since");
  r.busy_ms = j.value("busy_ms", std::int64_t{0});
  r.terminated_at = get_opt_time(j, "terminated_at");
  r.note = get_opt_string(j, "note");
}

json public_view(const VmRecord& r) {
  json j = r;
  j.erase("token");
  j["launched"] = format_time(r.launched_at);
  return j;
}

}  // namespace burstq

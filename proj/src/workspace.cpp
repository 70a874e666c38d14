#include "burstq/workspace.hpp"

#include <cstdio>
#include <fstream>
#include <random>

#include <json.hpp>

#include "burstq/error.hpp"

namespace burstq {

namespace fs = std::filesystem;

namespace {

void write_file(const fs::path& p, const std::string& body) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  out.flush();
  if (!out) throw Error(ErrorCode::StorageFailure, "cannot write " + p.string());
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error(ErrorCode::StorageFailure, "cannot read " + p.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::string random_suffix() {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(rng()));
  return buf;
}

}  // namespace

Workspace::Workspace(fs::path root) : root_(std::move(root)) {
  fs::create_directories(root_ / "inputs");
  fs::create_directories(root_ / "results");
}

std::string Workspace::stage_inputs(const std::map<std::string, std::string>& files) {
  const std::string key = "ws-" + random_suffix();
  const fs::path dir = input_dir(key);
  try {
    fs::create_directories(dir);
    for (const auto& [name, body] : files) write_file(dir / name, body);
  } catch (const fs::filesystem_error& e) {
    throw Error(ErrorCode::StorageFailure, e.what());
  }
  return key;
}

fs::path Workspace::input_dir(const std::string& key) const { return root_ / "inputs" / key; }

std::map<std::string, std::string> Workspace::load_inputs(const std::string& key) const {
  std::map<std::string, std::string> files;
  if (key.empty()) return files;
  const fs::path dir = input_dir(key);
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    if (entry.is_regular_file()) files[entry.path().filename().string()] = read_file(entry.path());
  }
  return files;
}

void Workspace::discard_inputs(const std::string& key) {
  if (key.empty()) return;
  std::error_code ec;
  fs::remove_all(input_dir(key), ec);
}

std::string Workspace::write_results(const ResultBundle& bundle) {
  const fs::path final_dir = root_ / "results" / bundle.job_id;
  const fs::path tmp = root_ / "results" / (".tmp-" + bundle.job_id + "-" + random_suffix());
  try {
    fs::create_directories(tmp / "files");
    nlohmann::json manifest{{"ok", bundle.ok}, {"log", bundle.log_text}};
    manifest["files"] = nlohmann::json::array();
    for (const auto& [name, body] : bundle.outputs) {
      write_file(tmp / "files" / name, body);
      manifest["files"].push_back(name);
    }
    write_file(tmp / "manifest.json", manifest.dump());
    std::error_code ec;
    fs::remove_all(final_dir, ec);
    fs::rename(tmp, final_dir);
  } catch (const fs::filesystem_error& e) {
    std::error_code ec;
    fs::remove_all(tmp, ec);
    throw Error(ErrorCode::StorageFailure, e.what());
  }
  return "results/" + bundle.job_id;
}

std::optional<ResultBundle> Workspace::read_results(const JobId& id) const {
  const fs::path dir = root_ / "results" / id;
  if (!fs::exists(dir / "manifest.json")) return std::nullopt;
  const auto manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
  ResultBundle b;
  b.job_id = id;
  b.ok = manifest.at("ok").get<bool>();
  b.log_text = manifest.at("log").get<std::string>();
  for (const auto& name : manifest.at("files")) {
    const auto n = name.get<std::string>();
    b.outputs[n] = read_file(dir / "files" / n);
  }
  return b;
}

bool same_results(const ResultBundle& a, const ResultBundle& b) {
  return a.job_id == b.job_id && a.ok == b.ok && a.outputs == b.outputs && a.log_text == b.log_text;
}

}  // namespace burstq

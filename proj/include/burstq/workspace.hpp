#pragma once

// Per-job file areas: staged inputs before execution and stored results after.
//
//   <root>/inputs/<key>/<file>
//   <root>/results/<job-id>/manifest.json   {"ok", "log", "files": [...]}
//   <root>/results/<job-id>/files/<file>

#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "burstq/transport.hpp"

namespace burstq {

class Workspace {
 public:
  explicit Workspace(std::filesystem::path root);

  /// Writes the files under a fresh key and returns it.
  std::string stage_inputs(const std::map<std::string, std::string>& files);
  std::filesystem::path input_dir(const std::string& key) const;
  std::map<std::string, std::string> load_inputs(const std::string& key) const;
  void discard_inputs(const std::string& key);

  /// Replaces any earlier results for the job in one rename. Returns the
  /// result reference recorded on the job.
  std::string write_results(const ResultBundle& bundle);
  std::optional<ResultBundle> read_results(const JobId& id) const;

  const std::filesystem::path& root() const { return root_; }

 private:
  std::filesystem::path root_;
};

/// Same outcome, log and output bytes.
bool same_results(const ResultBundle& a, const ResultBundle& b);

}  // namespace burstq

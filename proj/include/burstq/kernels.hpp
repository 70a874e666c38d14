#pragma once

// Preinstalled job kernels. Dispatch payloads carry only inputs and metadata;
// the code that runs them lives here, identical on every executor.

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "burstq/executor.hpp"
#include "burstq/model.hpp"

namespace burstq {

/// Stand-in for an infinite F when the regression fits exactly (SSE = 0).
inline constexpr double kFCap = 1e12;

struct KernelResult {
  bool ok = false;
  std::map<std::string, std::string> outputs;  // file name -> bytes
  std::string log_text;
};

using Params = std::map<std::string, std::string>;

/// Runs `kind` over the inputs staged in `workdir`. Never throws: crashes
/// become exit_status=error with the reason in the log.
KernelResult run_kernel(JobKind kind, const Params& params, const std::filesystem::path& workdir,
                        WorkContext& ctx);

/// Validates a job's inputs at submission and derives its dataset profile.
/// Throws Error(ValidationError).
DatasetProfile validate_inputs(JobKind kind, const Params& params,
                               const std::map<std::string, std::string>& files);

// --- regression scan -------------------------------------------------------

struct ScanResult {
  std::vector<double> f;       // one per marker, index 0 = marker 1
  std::size_t peak_marker = 0; // 1-based
  double f_max = 0.0;
};

/// genotypes[i][j]: additive code of individual i at marker j.
std::vector<std::vector<int>> parse_genotypes(std::string_view csv);
std::vector<double> parse_phenotypes(std::string_view text);

/// Per-marker simple linear regression F statistic, y = a + b*g_j.
/// Constant markers score 0; exact fits score kFCap.
ScanResult regression_scan(const std::vector<std::vector<int>>& genotypes,
                           const std::vector<double>& phenotypes);

std::string format_fprofile(const ScanResult& r);
std::string format_peak(const ScanResult& r);

/// Reads back an fprofile.tsv body (comment and header lines skipped).
std::vector<double> parse_fprofile(std::string_view text);

}  // namespace burstq

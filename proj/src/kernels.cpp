#include "burstq/kernels.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "burstq/error.hpp"

namespace burstq {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? s.size() - start : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("missing input " + p.filename().string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

bool param_true(const Params& params, const std::string& key) {
  auto it = params.find(key);
  return it != params.end() && (it->second == "true" || it->second == "1" || it->second == "yes");
}

std::int64_t param_int(const Params& params, const std::string& key, std::int64_t fallback) {
  auto it = params.find(key);
  if (it == params.end() || it->second.empty()) return fallback;
  std::size_t used = 0;
  const auto v = std::stoll(it->second, &used);
  if (used != it->second.size()) throw std::invalid_argument(key + " is not an integer");
  return v;
}

KernelResult run_sleep(const Params& params, WorkContext& ctx) {
  KernelResult r;
  const auto ms = param_int(params, "duration_ms", 0);
  if (ms < 0) throw std::invalid_argument("duration_ms must be >= 0");
  if (!ctx.wait(Duration{ms})) {
    r.log_text = "aborted";
    return r;
  }
  if (param_true(params, "fail")) {
    r.log_text = "sleep kernel asked to fail after " + std::to_string(ms) + " ms";
    return r;
  }
  r.ok = true;
  r.outputs["done.txt"] = "slept " + std::to_string(ms) + " ms\n";
  r.log_text = "ok";
  return r;
}

KernelResult run_scan(const std::filesystem::path& workdir) {
  KernelResult r;
  const auto geno = parse_genotypes(read_file(workdir / "geno.csv"));
  const auto pheno = parse_phenotypes(read_file(workdir / "pheno.csv"));
  const auto scan = regression_scan(geno, pheno);
  r.outputs["fprofile.tsv"] = format_fprofile(scan);
  r.outputs["peak.json"] = format_peak(scan);
  r.ok = true;
  r.log_text = "scanned " + std::to_string(scan.f.size()) + " markers over " +
               std::to_string(pheno.size()) + " individuals";
  return r;
}

}  // namespace

std::vector<std::vector<int>> parse_genotypes(std::string_view csv) {
  std::vector<std::vector<int>> rows;
  for (auto line : split(csv, '\n')) {
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    std::vector<int> row;
    for (auto cell : split(line, ',')) {
      cell = trim(cell);
      if (cell.size() != 1 || cell[0] < '0' || cell[0] > '2')
        throw Error(ErrorCode::ValidationError,
                    "genotype codes must be 0, 1 or 2, got '" + std::string(cell) + "'");
      row.push_back(cell[0] - '0');
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw Error(ErrorCode::ValidationError, "ragged genotype matrix");
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<double> parse_phenotypes(std::string_view text) {
  std::vector<double> out;
  for (auto line : split(text, '\n')) {
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    std::string s(line);
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != s.size() || !std::isfinite(v))
      throw Error(ErrorCode::ValidationError, "bad phenotype value '" + s + "'");
    out.push_back(v);
  }
  return out;
}

ScanResult regression_scan(const std::vector<std::vector<int>>& genotypes,
                           const std::vector<double>& phenotypes) {
  const std::size_t n = phenotypes.size();
  if (n < 3) throw Error(ErrorCode::ValidationError, "regression scan needs at least 3 individuals");
  if (genotypes.size() != n)
    throw Error(ErrorCode::ValidationError, "genotype rows do not match phenotype count");
  const std::size_t m = genotypes.front().size();

  double ybar = 0;
  for (double y : phenotypes) ybar += y;
  ybar /= static_cast<double>(n);
  double syy = 0;
  for (double y : phenotypes) syy += (y - ybar) * (y - ybar);

  ScanResult out;
  out.f.resize(m, 0.0);
  for (std::size_t j = 0; j < m; ++j) {
    double gbar = 0;
    for (std::size_t i = 0; i < n; ++i) gbar += genotypes[i][j];
    gbar /= static_cast<double>(n);
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dg = genotypes[i][j] - gbar;
      sxx += dg * dg;
      sxy += dg * (phenotypes[i] - ybar);
    }
    if (sxx == 0.0) continue;  // constant marker
    const double slope = sxy / sxx;
    const double intercept = ybar - slope * gbar;
    double sse = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double resid = phenotypes[i] - intercept - slope * genotypes[i][j];
      sse += resid * resid;
    }
    const double ssr = slope * sxy;
    if (ssr <= 0.0) continue;
    double f;
    if (sse <= 1e-12 * syy) {
      f = kFCap;
    } else {
      f = std::min(kFCap, ssr / (sse / static_cast<double>(n - 2)));
    }
    out.f[j] = f;
  }
  for (std::size_t j = 0; j < m; ++j) {
    if (j == 0 || out.f[j] > out.f_max) {
      out.f_max = out.f[j];
      out.peak_marker = j + 1;
    }
  }
  return out;
}

std::string format_fprofile(const ScanResult& r) {
  std::string out =
      "# regression-scan F profile; F=1e+12 marks an exact fit (SSE=0), F=0 a constant marker\n"
      "marker_index\tF\n";
  char buf[64];
  for (std::size_t j = 0; j < r.f.size(); ++j) {
    std::snprintf(buf, sizeof buf, "%zu\t%.12g\n", j + 1, r.f[j]);
    out += buf;
  }
  return out;
}

std::string format_peak(const ScanResult& r) {
  return nlohmann::json{{"marker", r.peak_marker}, {"f", r.f_max}}.dump() + "\n";
}

std::vector<double> parse_fprofile(std::string_view text) {
  std::vector<double> out;
  for (auto line : split(text, '\n')) {
    line = trim(line);
    if (line.empty() || line.front() == '#' || line.starts_with("marker_index")) continue;
    const auto cols = split(line, '\t');
    if (cols.size() != 2) throw Error(ErrorCode::ValidationError, "bad fprofile line");
    out.push_back(std::stod(std::string(cols[1])));
  }
  return out;
}

KernelResult run_kernel(JobKind kind, const Params& params, const std::filesystem::path& workdir,
                        WorkContext& ctx) {
  try {
    switch (kind) {
      case JobKind::Sleep:
        return run_sleep(params, ctx);
      case JobKind::RegressionScan:
        return run_scan(workdir);
    }
    return KernelResult{false, {}, "unknown kernel"};
  } catch (const std::exception& e) {
    return KernelResult{false, {}, std::string("kernel crashed: ") + e.what()};
  }
}

DatasetProfile validate_inputs(JobKind kind, const Params& params,
                               const std::map<std::string, std::string>& files) {
  DatasetProfile profile;
  std::int64_t bytes = 0;
  for (const auto& [name, body] : files) bytes += static_cast<std::int64_t>(body.size());
  profile.input_bytes = bytes;

  switch (kind) {
    case JobKind::Sleep: {
      try {
        if (param_int(params, "duration_ms", 0) < 0)
          throw Error(ErrorCode::ValidationError, "duration_ms must be >= 0");
      } catch (const std::invalid_argument& e) {
        throw Error(ErrorCode::ValidationError, e.what());
      } catch (const std::out_of_range& e) {
        throw Error(ErrorCode::ValidationError, "duration_ms out of range");
      }
      break;
    }
    case JobKind::RegressionScan: {
      auto g = files.find("geno.csv");
      auto p = files.find("pheno.csv");
      if (g == files.end() || p == files.end())
        throw Error(ErrorCode::ValidationError,
                    "regression-scan requires geno.csv and pheno.csv inputs");
      const auto geno = parse_genotypes(g->second);
      const auto pheno = parse_phenotypes(p->second);
      if (pheno.size() < 3)
        throw Error(ErrorCode::ValidationError, "regression-scan needs n >= 3 individuals");
      if (geno.size() != pheno.size())
        throw Error(ErrorCode::ValidationError, "geno.csv rows must match pheno.csv values");
      if (geno.front().empty()) throw Error(ErrorCode::ValidationError, "no markers");
      profile.max_markers = static_cast<std::int64_t>(geno.front().size());
      profile.sample_size = static_cast<std::int64_t>(pheno.size());
      break;
    }
  }
  return profile;
}

}  // namespace burstq
